import numpy as np
import pytest

from risfd.channels import FadingParams, Geometry, generate_scenario
from risfd.model import ChannelSet, PowerModel, Scenario, SystemParams


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_channels(rng, n, m, scale=1.0, si_scale=None):
    si_scale = scale if si_scale is None else si_scale
    return ChannelSet(
        h_s1r=scale * crandn(rng, m, n), h_s2r=scale * crandn(rng, m, n),
        h_rs1=scale * crandn(rng, m), h_rs2=scale * crandn(rng, m),
        h_s1s2=scale * crandn(rng, n), h_s2s1=scale * crandn(rng, n),
        h_s1s1=si_scale * crandn(rng, n), h_s2s2=si_scale * crandn(rng, n),
    )


def zero_channels(n, m):
    z = np.zeros
    return ChannelSet(z((m, n)), z((m, n)), z(m), z(m), z(n), z(n), z(n), z(n))


def default_system(n=4, m=40, p_max=1.0, rate_min=1.0):
    return SystemParams(n_tx=n, m_ris=m, noise_power=1e-11, rate_min=rate_min, p_max=p_max)


def default_scenario(seed, n=4, m=40, p_max=1.0, geometry=Geometry()):
    sys = default_system(n, m, p_max)
    ch = generate_scenario(geometry, FadingParams(seed=seed), sys)
    return Scenario(ch, sys, PowerModel())


def tiny_scenario(seed):
    """N=1, M=2 instance with the second source 40 m away."""
    return default_scenario(seed, n=1, m=2, geometry=Geometry(pos_s2=(40.0, 0.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
