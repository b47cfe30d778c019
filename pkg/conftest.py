"""Shared fixtures; the lab modules live at the repository root."""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT))

from decoder_models import ModelConfig, Variant, build_model  # noqa: E402
from gf2_codes import get_code  # noqa: E402

CODES_DIR = ROOT / "codes"


@pytest.fixture(autouse=True)
def _float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    torch.manual_seed(0)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def codes_dir():
    return CODES_DIR


@pytest.fixture
def hamming():
    return get_code("hamming_7_4")


@pytest.fixture
def bch_31_21():
    return get_code("bch_31_21")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(variant=Variant.CROSSMPT, n_layers=1, dim=8, seed=7)


@pytest.fixture
def tiny_crossmpt(hamming, tiny_config):
    return build_model(tiny_config, hamming.pcm, dtype=torch.float64)
