from pathlib import Path

import numpy as np
import pytest

from arrhc.plant import SystemSpec, load_system_spec

REPO_ROOT = Path(__file__).resolve().parents[1]
DEMO_SPEC_PATH = REPO_ROOT / "demos" / "configs" / "demo_system.json"


@pytest.fixture(scope="session")
def demo_spec() -> SystemSpec:
    """Bundled example plant, with the non-stabilizing gain repaired."""
    return load_system_spec(DEMO_SPEC_PATH, repair=True)


@pytest.fixture(scope="session")
def scalar_spec() -> SystemSpec:
    """Fast-contracting scalar plant (closed loop 0.25) for cheap exact checks."""
    return SystemSpec.build(
        [[0.5]], [[1.0]], [[-0.25]],
        P=[[1.0]], Q=[[1.0]], Qbar=[[1.0]], c=1.2, u_max=1.0,
    )


def unit_ellipsoid_spec(c: float = 1.0) -> SystemSpec:
    """Plant whose closed loop is the zero matrix, so Pbar = Qbar = I."""
    return SystemSpec.build(
        0.5 * np.eye(2), np.eye(2), -0.5 * np.eye(2),
        P=np.eye(2), Q=np.eye(2), Qbar=np.eye(2), c=c, u_max=10.0,
    )
