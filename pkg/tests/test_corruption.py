import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddo.corruption import (
    DDPM, NCSN, NoiseSchedule, corrupt, corrupt_array, ddpm_alphas, geometric_sigmas, log_times,
    schedule_from_dict, smoothing_family,
)
from ddo.grf import MaternCovariance, SmoothingOperator, WhiteNoise
from ddo.grid import GridFunction

from conftest import DIRICHLET, TORUS1, TORUS2

NOISE = MaternCovariance(DIRICHLET, 0.5, 0.1, 0.6)


def test_geometric_sigmas_second_level():
    sig = geometric_sigmas(1.0, 0.01, 10)
    assert sig[1] == pytest.approx(0.599484250318941, rel=1e-14)
    assert sig[0] == 1.0 and sig[-1] == 0.01
    assert np.allclose(sig[1:] / sig[:-1], sig[1])


def test_geometric_sigmas_edge_cases():
    assert np.array_equal(geometric_sigmas(0.5, 0.01, 1), [0.5])
    with pytest.raises(ValueError):
        geometric_sigmas(1.0, 0.0, 10)
    with pytest.raises(ValueError):
        geometric_sigmas(1.0, 0.1, 0)


def test_ddpm_alphas_cumulative_product():
    a = ddpm_alphas([0.1, 0.2, 0.3])
    assert np.allclose(a, [0.9, 0.72, 0.504])


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule(NCSN, NOISE, sigmas=np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        NoiseSchedule.ddpm(NOISE, [0.2, 0.1])
    with pytest.raises(ValueError):
        NoiseSchedule.ddpm(NOISE, [0.1, 1.0])
    with pytest.raises(ValueError):
        NoiseSchedule("vp", NOISE, sigmas=np.ones(2))
    with pytest.raises(ValueError):
        NoiseSchedule.ncsn(NOISE, T=3, smoothing=[SmoothingOperator.identity()])


def test_level_range_and_alpha_zero():
    s = NoiseSchedule.ddpm(NOISE, [0.1, 0.2])
    assert s.alpha(0) == 1.0
    assert s.alpha(2) == pytest.approx(0.72)
    with pytest.raises(IndexError):
        s.noise_scale(3)
    with pytest.raises(IndexError):
        s.conditioning(0)


def test_conditioning_values():
    s = NoiseSchedule.ncsn(NOISE)
    assert s.conditioning(1) == 0.0
    assert s.conditioning(10) == pytest.approx(np.log(0.01))
    d = NoiseSchedule.ddpm(NOISE, np.linspace(1e-4, 0.02, 20))
    assert d.conditioning(5) == 0.25


def test_noisy_equals_clean_plus_noise_bit_exact(rng):
    u = GridFunction.from_callable(DIRICHLET, 64, lambda x: np.sin(x / 2))
    for s in (NoiseSchedule.ncsn(NOISE), NoiseSchedule.ddpm(NOISE, np.linspace(1e-4, 0.02, 50))):
        for t in (1, 4, s.T):
            c = corrupt(s, u, t, rng)
            assert np.array_equal(c.noisy.values, c.clean.values + c.noise.values)
            assert np.max(np.abs((c.noisy - c.clean).values - c.noise.values)) < 1e-14
            assert c.noisy.values[-1] == 0.0


def test_ddpm_clean_part_is_scaled(rng):
    s = NoiseSchedule.ddpm(NOISE, [0.1, 0.2])
    u = GridFunction.from_callable(DIRICHLET, 32, lambda x: np.sin(x / 2))
    c = corrupt(s, u, 2, rng)
    assert np.allclose(c.clean.values, np.sqrt(0.72) * u.values)


def test_noise_scale_statistics(rng):
    s = NoiseSchedule.ncsn(NOISE)
    x = np.zeros((20000, 64))
    _, noise, _, base = corrupt_array(s, x, 3, rng)
    assert np.array_equal(noise, base * s.sigma(3))
    h = DIRICHLET.cell_volume(64)
    from ddo.grf import trace

    assert np.mean(h * np.sum(noise**2, axis=1)) == pytest.approx(s.sigma(3) ** 2 * trace(NOISE, 64), rel=0.03)


def test_shared_base_noise_is_used(rng):
    s = NoiseSchedule.ncsn(NOISE)
    x = np.zeros((3, 16))
    base = NOISE.sample_array(16, rng, 3)
    _, noise, _, b = corrupt_array(s, x, np.array([1, 2, 3]), rng, base_noise=base)
    assert b is base
    assert np.allclose(noise, base * s.sigmas[:3, None])


def test_white_noise_schedule(rng):
    s = NoiseSchedule.ncsn(WhiteNoise(TORUS1))
    assert s.white
    c = corrupt(s, GridFunction.zeros(TORUS1, 32), 1, rng)
    assert c.noise.values.std() > 0.5


def test_smoothing_family_from_config():
    fam = smoothing_family({"kind": "heat", "t0": 1e-3, "t1": 1e-1}, 5)
    assert [op.param for op in fam] == pytest.approx(list(log_times(1e-3, 1e-1, 5)))
    assert fam[0].param == pytest.approx(0.1) and fam[-1].param == pytest.approx(1e-3)
    assert smoothing_family({"kind": "identity"}, 3) is None
    assert len(smoothing_family({"kind": "blur", "bandwidth": 0.1}, 4)) == 4
    with pytest.raises(ValueError):
        smoothing_family({"kind": "sharpen"}, 3)


def test_smoothed_corruption_clean_part(rng):
    s = NoiseSchedule.ncsn(NOISE, T=3, smoothing=[SmoothingOperator.heat(0.5)] * 3)
    u = GridFunction.from_callable(DIRICHLET, 64, lambda x: np.sin(x))
    c = corrupt(s, u, 2, rng)
    # sin(x) is the k = 2 eigenfunction with eigenvalue 1
    assert np.max(np.abs(c.clean.values - np.exp(-0.5) * u.values)) < 1e-12


def test_schedule_dict_round_trip():
    s = NoiseSchedule.ncsn(NOISE, 1.0, 0.01, 10)
    back = schedule_from_dict(s.to_dict())
    assert back == s and back != NoiseSchedule.ncsn(NOISE, 1.0, 0.02, 10)
    d = schedule_from_dict({"kind": DDPM, "T": 4, "beta_1": 0.1, "beta_T": 0.4, "covariance": NOISE.to_dict()})
    assert np.allclose(d.betas, [0.1, 0.2, 0.3, 0.4])


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1e-4, 1.0), st.integers(2, 40))
def test_geometric_sigmas_property(s1, ratio, T):
    sig = geometric_sigmas(s1, s1 * ratio, T)
    assert np.all(np.diff(sig) <= 0) and sig[0] == s1 and np.all(sig > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_corruption_decomposes_property(seed, t):
    r = np.random.default_rng(seed)
    s = NoiseSchedule.ncsn(MaternCovariance(TORUS2, 1.0, 2.0, 1.5))
    u = GridFunction(TORUS2, r.standard_normal((8, 8)))
    c = corrupt(s, u, t, r)
    assert np.array_equal(c.noisy.values, c.clean.values + c.noise.values)
