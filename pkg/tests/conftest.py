from pathlib import Path

import pytest

from dtetrial.posterior import Boundary
from dtetrial.simulation import AccrualModel, TrialConfig
from dtetrial.stats import TruncGammaPrior

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def base_design():
    """Two-look design used throughout the worked example."""
    return TrialConfig(
        control_median=2.8,
        treatment_median=3.5,
        s_likely=2.28,
        s_prior=TruncGammaPrior(12.86, 0.193, 2.0, 2.5),
        schedule=(28, 40),
        boundary=Boundary(0.95, 1.0),
        accrual=AccrualModel("deterministic", 6.0),
        fup=6.0,
    )
