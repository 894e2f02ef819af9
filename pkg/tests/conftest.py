import math

import pytest

from cooling_pipeline.tools.fbc_cfTwa import ProtocolSchedule, default_tau
from cooling_pipeline.tools.fbc_field1d import FieldParams, Grid1D
from cooling_pipeline.tools.fbc_spinSystem import TwoModeParams

BETA0 = math.sqrt(1e7)


@pytest.fixture
def two_mode_params():
    """Benchmark couplings at N = 20."""
    return TwoModeParams(chi=0.01, kappa=0.09, lam=0.8e-4, k_fb=0.1, N=20, beta0=BETA0)


@pytest.fixture
def short_schedule():
    return ProtocolSchedule.with_defaults(5, default_tau(0.09))


@pytest.fixture
def ho_grid():
    return Grid1D(256, 20.0)


@pytest.fixture
def free_field_params():
    """No interaction, no imaging, no feedback: bare trap dynamics."""
    return FieldParams(g=0.0, r_d=0.52, lambda_pc=0.0, beta0=1.0, k_fb=0.0, n_hg_modes=16)


@pytest.fixture(autouse=True)
def thermal_cache_in_tmp(tmp_path, monkeypatch):
    """Keep SPGPE caches out of the working tree."""
    monkeypatch.setenv("FBCOOL_CACHE_DIR", str(tmp_path / "thermal_cache"))
