#!/usr/bin/env python3
"""
GF(2) linear algebra and linear block codes for the decoder lab.
- Binary matrix products, rank and row-space checks over GF(2)
- Systematic and complementary parity-check matrices
- Code registry (BCH / Hamming / LDPC) addressed as "class_n_k"
- alist and dense-text PCM files
- Attention mask builders for CrossMPT and ECCT
"""

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

import galois
import numpy as np

GF2 = galois.GF(2)

# Additive mask sentinel; exp(NEG_INF) is exactly 0.0
NEG_INF = float("-inf")


class LabError(Exception):
    """Base class for every error raised by the lab modules"""


class DimensionError(LabError):
    """Matrix or vector shapes do not line up"""


class RankError(LabError):
    """A parity-check matrix is not of full row rank"""


class CodeFormatError(LabError):
    """A PCM file could not be parsed"""


class NotCyclicError(LabError):
    """Shift-based construction requested for a non-cyclic code"""


class ShiftRangeError(LabError):
    """Complementary shift index outside 0..ceil(n/(n-k))-1"""


class NotACodewordError(LabError):
    """A vector is not in the null space of the code's PCM"""


class ConfigError(LabError):
    """Invalid configuration key or value"""


class CodeClass(str, Enum):
    BCH = "bch"
    HAMMING = "hamming"
    POLAR = "polar"
    LDPC = "ldpc"
    CCSDS = "ccsds"
    WRAN = "wran"
    TURBO = "turbo"
    OTHER = "other"


# ---------------------------------------------------------------------------
# Binary matrices
# ---------------------------------------------------------------------------

def as_bits(a, name="matrix"):
    """Return `a` as a uint8 array, rejecting entries outside {0,1}"""
    arr = np.asarray(a)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DimensionError(f"{name} has entries outside {{0,1}}")
    return arr.astype(np.uint8)


def gf2_matmul(a, b):
    """Matrix product over GF(2)"""
    a = as_bits(a, "left operand")
    b = as_bits(b, "right operand")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return np.asarray(GF2(a) @ GF2(b), dtype=np.uint8)


def gf2_rank(a):
    """Rank over GF(2)"""
    a = as_bits(a)
    if a.size == 0:
        return 0
    return int(np.linalg.matrix_rank(GF2(a)))


def same_row_space(a, b):
    """True when both matrices span the same row space"""
    ra, rb = gf2_rank(a), gf2_rank(b)
    return ra == rb == gf2_rank(np.vstack([as_bits(a), as_bits(b)]))


def full_rank_rows(h):
    """Keep the rows of `h` that increase the rank, in order"""
    h = as_bits(h)
    kept = []
    rank = 0
    for row in h:
        candidate = kept + [row]
        new_rank = gf2_rank(np.array(candidate))
        if new_rank > rank:
            kept = candidate
            rank = new_rank
    return np.array(kept, dtype=np.uint8)


@dataclass(frozen=True)
class SystematicForm:
    """Row-reduced PCM and the number of target columns that became unit vectors"""
    matrix: np.ndarray
    identity_columns: int
    target_columns: tuple

    @property
    def complete(self):
        return self.identity_columns == len(self.target_columns)

    @property
    def covered_columns(self):
        """Target columns whose column equals the matching unit vector"""
        covered = []
        for row, col in enumerate(self.target_columns):
            column = self.matrix[:, col]
            if column[row] == 1 and column.sum() == 1:
                covered.append(col)
        return tuple(covered)


def diagonalize(h, columns):
    """
    Row-reduce `h` so that column columns[i] becomes the unit vector e_i,
    for as many i as row operations allow. Column order is never changed.
    """
    h = as_bits(h).copy()
    m, n = h.shape
    columns = tuple(int(c) % n for c in columns)
    if len(columns) != m:
        raise DimensionError(f"need {m} target columns, got {len(columns)}")

    assigned = np.zeros(m, dtype=bool)
    for row, col in enumerate(columns):
        candidates = np.flatnonzero((h[:, col] == 1) & ~assigned)
        if candidates.size == 0:
            continue
        pivot = candidates[0]
        if pivot != row:
            h[[row, pivot]] = h[[pivot, row]]
        others = np.flatnonzero(h[:, col] == 1)
        others = others[others != row]
        h[others] ^= h[row]
        assigned[row] = True

    # Leftover rows pivot on the remaining columns so the result stays reduced
    free_rows = [r for r in range(m) if not assigned[r]]
    for col in range(n):
        if not free_rows:
            break
        if col in columns and assigned[columns.index(col)]:
            continue
        candidates = [r for r in free_rows if h[r, col] == 1]
        if not candidates:
            continue
        pivot = candidates[0]
        others = np.flatnonzero(h[:, col] == 1)
        others = others[others != pivot]
        h[others] ^= h[pivot]
        free_rows.remove(pivot)

    result = SystematicForm(h, 0, columns)
    return SystematicForm(h, len(result.covered_columns), columns)


def systematic_form(h):
    """H_sys = [I_{n-k} P] by row operations only (best effort when impossible)"""
    h = as_bits(h)
    if h.ndim != 2:
        raise DimensionError("PCM must be a 2-D matrix")
    m = h.shape[0]
    if gf2_rank(h) != m:
        raise RankError(f"PCM has rank {gf2_rank(h)} < {m} rows")
    return diagonalize(h, range(m))


def complementary_pcm(h_sys, p, cyclic=True):
    """H_c^p(i, j) = H_sys(i, (j - p(n-k)) mod n)"""
    if not cyclic:
        raise NotCyclicError("complementary PCM by column shift needs a cyclic code; "
                             "use diagonalize() on the target columns instead")
    h_sys = as_bits(h_sys)
    m, n = h_sys.shape
    p_max = math.ceil(n / m) - 1
    if not 0 <= p <= p_max:
        raise ShiftRangeError(f"shift index p={p} outside 0..{p_max} for n={n}, n-k={m}")
    return np.roll(h_sys, p * m, axis=1)


def shift_identity_columns(m, n, p):
    """Columns occupied by the identity block after shift p"""
    return tuple((p * m + i) % n for i in range(m))


def generator_from_pcm(h):
    """G with G·Hᵀ = 0: [Pᵀ I_k] against [I P] when H is fully systematic"""
    h = as_bits(h)
    m, n = h.shape
    sys = systematic_form(h)
    if sys.complete:
        parity = sys.matrix[:, m:]
        g = np.hstack([parity.T, np.eye(n - m, dtype=np.uint8)])
    else:
        g = np.asarray(GF2(h).null_space(), dtype=np.uint8)
    if gf2_matmul(g, h.T).any():
        raise RankError("derived generator is not orthogonal to the PCM")
    return g


# ---------------------------------------------------------------------------
# Codes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Code:
    """A linear block code with one or more row-space-equivalent PCMs"""
    name: str
    n: int
    k: int
    generator: np.ndarray
    pcms: tuple
    code_class: CodeClass = CodeClass.OTHER
    cyclic: bool = False

    @property
    def pcm(self):
        return self.pcms[0]

    @property
    def m(self):
        return self.n - self.k

    @property
    def rate(self):
        return self.k / self.n

    def with_pcms(self, pcms, name=None):
        """Same code, different PCM list"""
        code = Code(name or self.name, self.n, self.k, self.generator,
                    tuple(as_bits(h) for h in pcms), self.code_class, self.cyclic)
        code.validate()
        return code

    def validate(self):
        """Check G·Hᵀ = 0, full rank and row-space equivalence of every PCM"""
        if self.generator.shape != (self.k, self.n):
            raise DimensionError(f"{self.name}: generator shape {self.generator.shape} "
                                 f"!= ({self.k}, {self.n})")
        for idx, h in enumerate(self.pcms):
            if h.shape != (self.m, self.n):
                raise DimensionError(f"{self.name}: PCM {idx} shape {h.shape} "
                                     f"!= ({self.m}, {self.n})")
            if gf2_rank(h) != self.m:
                raise RankError(f"{self.name}: PCM {idx} has rank {gf2_rank(h)} < {self.m}")
            if gf2_matmul(self.generator, h.T).any():
                raise RankError(f"{self.name}: G·Hᵀ != 0 for PCM {idx}")
            if idx and not same_row_space(self.pcms[0], h):
                raise RankError(f"{self.name}: PCM {idx} spans a different row space")
        return self


def make_code(name, h, code_class=CodeClass.OTHER, cyclic=False):
    """Build and validate a Code from a single full-rank PCM"""
    h = as_bits(h)
    if h.ndim != 2:
        raise DimensionError("PCM must be a 2-D matrix")
    m, n = h.shape
    if gf2_rank(h) != m:
        raise RankError(f"{name}: PCM has rank {gf2_rank(h)} < {m} rows")
    code = Code(name, n, n - m, generator_from_pcm(h), (h,), CodeClass(code_class), cyclic)
    return code.validate()


def code_fingerprint(code):
    """sha256 over the PCM list, used in run manifests"""
    digest = hashlib.sha256()
    for h in code.pcms:
        digest.update(np.asarray(h.shape, dtype=np.int64).tobytes())
        digest.update(np.ascontiguousarray(h, dtype=np.uint8).tobytes())
    return digest.hexdigest()


def cyclic_pcm(n, generator_poly):
    """PCM whose rows are cyclic shifts of the reciprocal parity polynomial"""
    x_n_1 = galois.Poly.Degrees([n, 0], field=GF2)
    parity_poly = x_n_1 // generator_poly
    k = parity_poly.degree
    reciprocal = np.asarray(parity_poly.coeffs, dtype=np.uint8)
    h = np.zeros((n - k, n), dtype=np.uint8)
    for i in range(n - k):
        h[i, i:i + k + 1] = reciprocal
    return h


def bch_code(n, k, code_class=CodeClass.BCH):
    """Narrow-sense binary BCH code with its cyclic PCM"""
    bch = galois.BCH(n, k)
    h = cyclic_pcm(n, bch.generator_poly)
    return make_code(f"{CodeClass(code_class).value}_{n}_{k}", h, code_class, cyclic=True)


def circulant(size, shift):
    """Identity matrix with its columns cyclically shifted by `shift`"""
    return np.roll(np.eye(size, dtype=np.uint8), shift % size, axis=1)


def array_ldpc_pcm(q, column_weight):
    """Array LDPC PCM: block (i, j) is the circulant with shift i·j (mod q)"""
    blocks = [[circulant(q, i * j) for j in range(q)] for i in range(column_weight)]
    return np.block(blocks)


def array_ldpc_code(q, column_weight, k):
    """Array LDPC code with the redundant check rows removed"""
    h = full_rank_rows(array_ldpc_pcm(q, column_weight))
    name = f"ldpc_{q * q}_{k}"
    if q * q - h.shape[0] != k:
        raise RankError(f"{name}: array construction gives k={q * q - h.shape[0]}")
    return make_code(name, h, CodeClass.LDPC)


def dual_diagonal_ldpc_code(n, k, shifts):
    """QC LDPC code H = [A | B]: A sums circulants, B is lower bidiagonal"""
    m = n - k
    if k != m:
        raise ConfigError(f"dual-diagonal construction needs k = n-k, got n={n} k={k}")
    info = np.zeros((m, k), dtype=np.uint8)
    for shift in shifts:
        info ^= circulant(m, shift)
    parity = np.eye(m, dtype=np.uint8) | np.eye(m, k=-1, dtype=np.uint8)
    return make_code(f"ldpc_{n}_{k}", np.hstack([info, parity]), CodeClass.LDPC)


REGISTRY = {
    "hamming_7_4": lambda: bch_code(7, 4, CodeClass.HAMMING),
    "bch_15_7": lambda: bch_code(15, 7),
    "bch_31_16": lambda: bch_code(31, 16),
    "bch_31_21": lambda: bch_code(31, 21),
    "bch_63_30": lambda: bch_code(63, 30),
    "bch_63_45": lambda: bch_code(63, 45),
    "ldpc_32_16": lambda: dual_diagonal_ldpc_code(32, 16, (1, 6, 11)),
    "ldpc_49_24": lambda: array_ldpc_code(7, 4, 24),
    "ldpc_121_60": lambda: array_ldpc_code(11, 6, 60),
    "ldpc_121_70": lambda: array_ldpc_code(11, 5, 70),
    "ldpc_121_80": lambda: array_ldpc_code(11, 4, 80),
}


def list_codes():
    return sorted(REGISTRY)


@lru_cache(maxsize=None)
def get_code(name):
    """Look up a bundled code by registry name"""
    if name not in REGISTRY:
        raise ConfigError(f"unknown code '{name}' (known: {', '.join(list_codes())})")
    return REGISTRY[name]()


# ---------------------------------------------------------------------------
# PCM files
# ---------------------------------------------------------------------------

def _numbered_lines(path):
    """Non-empty lines of a file with their 1-based line numbers"""
    with open(path, "r", encoding="utf-8") as f:
        return [(no, line.split()) for no, line in enumerate(f, 1) if line.strip()]


def _ints(path, no, tokens):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise CodeFormatError(f"{path}:{no}: expected integers, got '{' '.join(tokens)}'")


def parse_alist(path):
    """Read an alist file into a dense PCM"""
    lines = _numbered_lines(path)
    if len(lines) < 4:
        raise CodeFormatError(f"{path}: truncated alist header")

    (no, header) = lines[0]
    dims = _ints(path, no, header)
    if len(dims) != 2:
        raise CodeFormatError(f"{path}:{no}: expected 'n m'")
    n, m = dims
    col_weights = _ints(path, lines[2][0], lines[2][1])
    row_weights = _ints(path, lines[3][0], lines[3][1])
    if len(col_weights) != n:
        raise CodeFormatError(f"{path}:{lines[2][0]}: {len(col_weights)} column weights for n={n}")
    if len(row_weights) != m:
        raise CodeFormatError(f"{path}:{lines[3][0]}: {len(row_weights)} row weights for m={m}")
    if len(lines) < 4 + n + m:
        raise CodeFormatError(f"{path}: expected {n} column and {m} row lists")

    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        no, tokens = lines[4 + j]
        entries = [e for e in _ints(path, no, tokens) if e != 0]
        if len(entries) != col_weights[j]:
            raise CodeFormatError(f"{path}:{no}: column {j + 1} lists {len(entries)} checks, "
                                  f"weight says {col_weights[j]}")
        for e in entries:
            if not 1 <= e <= m:
                raise CodeFormatError(f"{path}:{no}: check index {e} outside 1..{m}")
            h[e - 1, j] = 1

    for i in range(m):
        no, tokens = lines[4 + n + i]
        entries = [e for e in _ints(path, no, tokens) if e != 0]
        if len(entries) != row_weights[i]:
            raise CodeFormatError(f"{path}:{no}: row {i + 1} lists {len(entries)} bits, "
                                  f"weight says {row_weights[i]}")
        if sorted(entries) != list(np.flatnonzero(h[i]) + 1):
            raise CodeFormatError(f"{path}:{no}: row {i + 1} disagrees with the column lists")
    return h


def parse_dense(path):
    """Read a dense-text PCM: 'n-k n' then n-k rows of 0/1"""
    lines = _numbered_lines(path)
    if not lines:
        raise CodeFormatError(f"{path}: empty file")
    no, header = lines[0]
    dims = _ints(path, no, header)
    if len(dims) != 2:
        raise CodeFormatError(f"{path}:{no}: expected 'n-k n'")
    m, n = dims
    if len(lines) - 1 != m:
        raise CodeFormatError(f"{path}: header says {m} rows, found {len(lines) - 1}")
    rows = []
    for no, tokens in lines[1:]:
        row = _ints(path, no, tokens)
        if len(row) != n:
            raise CodeFormatError(f"{path}:{no}: {len(row)} entries, expected {n}")
        if any(v not in (0, 1) for v in row):
            raise CodeFormatError(f"{path}:{no}: entries must be 0 or 1")
        rows.append(row)
    return np.array(rows, dtype=np.uint8)


def load_code(path, fmt=None, code_class=CodeClass.OTHER, cyclic=False, drop_redundant_rows=False):
    """Load a PCM file (alist or dense-text) into a Code"""
    path = Path(path)
    fmt = fmt or ("alist" if path.suffix == ".alist" else "dense")
    if fmt == "alist":
        h = parse_alist(path)
    elif fmt == "dense":
        h = parse_dense(path)
    else:
        raise ConfigError(f"unknown PCM format '{fmt}' (use alist or dense)")
    if drop_redundant_rows:
        h = full_rank_rows(h)
    m, n = h.shape
    return make_code(f"{CodeClass(code_class).value}_{n}_{n - m}", h, code_class, cyclic)


def save_code(code, path, fmt="dense", pcm_index=0):
    """Write one PCM of `code` as alist or dense-text"""
    h = code.pcms[pcm_index]
    m, n = h.shape
    with open(path, "w", encoding="utf-8") as f:
        if fmt == "dense":
            f.write(f"{m} {n}\n")
            for row in h:
                f.write(" ".join(str(int(v)) for v in row) + "\n")
        elif fmt == "alist":
            col_lists = [np.flatnonzero(h[:, j]) + 1 for j in range(n)]
            row_lists = [np.flatnonzero(h[i]) + 1 for i in range(m)]
            max_col = max(len(c) for c in col_lists)
            max_row = max(len(r) for r in row_lists)
            f.write(f"{n} {m}\n{max_col} {max_row}\n")
            f.write(" ".join(str(len(c)) for c in col_lists) + "\n")
            f.write(" ".join(str(len(r)) for r in row_lists) + "\n")
            for entries, width in [(c, max_col) for c in col_lists] + [(r, max_row) for r in row_lists]:
                padded = list(entries) + [0] * (width - len(entries))
                f.write(" ".join(str(int(v)) for v in padded) + "\n")
        else:
            raise ConfigError(f"unknown PCM format '{fmt}' (use alist or dense)")


# ---------------------------------------------------------------------------
# Attention masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskMatrix:
    """Additive attention mask: 0 where attention is allowed, NEG_INF elsewhere"""
    values: np.ndarray

    @classmethod
    def from_bits(cls, allowed):
        allowed = as_bits(allowed)
        return cls(np.where(allowed == 1, 0.0, NEG_INF))

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def allowed(self):
        return self.values == 0.0

    @property
    def unmasked_count(self):
        return int(self.allowed.sum())

    @property
    def density(self):
        return self.unmasked_count / self.values.size


def _check_pcm(h):
    h = as_bits(h)
    if h.ndim != 2 or h.shape[0] >= h.shape[1]:
        raise DimensionError(f"PCM must be (n-k) x n with n-k < n, got {h.shape}")
    return h


def build_crossmpt_masks(h):
    """(g(Hᵀ), g(H)): magnitude->syndrome and syndrome->magnitude masks"""
    h = _check_pcm(h)
    return MaskMatrix.from_bits(h.T), MaskMatrix.from_bits(h)


def _self_mask(h, magnitude_block):
    m, n = h.shape
    allowed = np.zeros((n + m, n + m), dtype=np.uint8)
    allowed[:n, :n] = magnitude_block
    allowed[:n, n:] = h.T
    allowed[n:, :n] = h
    allowed[n:, n:] = np.eye(m, dtype=np.uint8)
    np.fill_diagonal(allowed, 1)
    return MaskMatrix.from_bits(allowed)


def build_ecct_mask(h):
    """ECCT self-attention mask: bits sharing a check (depth 2), PCM edges, diagonal"""
    h = _check_pcm(h)
    shared = (h.T.astype(np.int64) @ h.astype(np.int64)) > 0
    return _self_mask(h, shared.astype(np.uint8))


def build_ecct_masked_mask(h):
    """ECCT mask with magnitude-magnitude and syndrome-syndrome pairs masked off"""
    h = _check_pcm(h)
    return _self_mask(h, np.eye(h.shape[1], dtype=np.uint8))
