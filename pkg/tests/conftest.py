import numpy as np
import pytest

from cldbs import harness
from cldbs.params import default_params


@pytest.fixture(scope="session")
def base_params():
    return default_params()


@pytest.fixture(scope="session")
def small_calibration(base_params):
    # 2 episodes x 10 windows x 2 conditions = 40 feature vectors
    return harness.calibrate(base_params, episodes_each=2, seed=0)


def make_zero_trace(n_samples=1000, dt_sample=0.1):
    """A TraceWindow of all-constant signals, for degenerate-rule tests."""
    from cldbs.network import TraceWindow

    shape = (10, n_samples)
    return TraceWindow(
        dt_sample=dt_sample,
        t_start=0.0,
        s_gi=np.zeros(shape),
        v_gi=np.zeros(shape),
        v_stn=np.zeros(shape),
        i_dbs=np.zeros(n_samples),
    )
