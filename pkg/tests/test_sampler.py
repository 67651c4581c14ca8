import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddo import fno, spectral
from ddo.corruption import NoiseSchedule
from ddo.grf import MaternCovariance
from ddo.grid import GridFunction
from ddo.sampler import (
    ModelScore, OracleScore, SamplerConfig, ZeroRng, annealed_langevin, crank_nicolson_coefficients,
    crank_nicolson_step, ddpm_posterior_variance, ddpm_sample, initial_state, oracle_score, run_chains,
)

from conftest import DIRICHLET, TORUS1

NOISE = MaternCovariance(DIRICHLET, 0.5, 0.1, 0.6)
DATA = MaternCovariance(DIRICHLET, 3.0, 3.0, 3.0)
SCHED = NoiseSchedule.ncsn(NOISE, 1.0, 0.01, 10)


def test_step_sizes():
    cfg = SamplerConfig(SCHED, M=5, epsilon=2e-5)
    assert cfg.step_size(10) == pytest.approx(2e-5)
    assert cfg.step_size(1) == pytest.approx(2e-5 * 1e4)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(SCHED, M=0)
    with pytest.raises(ValueError):
        SamplerConfig(NoiseSchedule.ddpm(NOISE, [0.1, 0.2]))


def test_zero_score_zero_noise_is_identity(rng):
    u0 = GridFunction.from_callable(DIRICHLET, 32, lambda x: np.sin(x / 2))
    out = annealed_langevin(lambda v, t: np.zeros_like(v), SamplerConfig(SCHED, M=3), u0, ZeroRng())
    assert np.array_equal(out.values, u0.values)


def test_linear_drift_without_noise_is_geometric_decay():
    cfg = SamplerConfig(SCHED, M=7, epsilon=1e-6)
    u0 = np.ones((2, 16))
    out = annealed_langevin(lambda v, t: -v, cfg, u0, ZeroRng())
    factor = np.prod([(1 - cfg.step_size(t)) ** cfg.M for t in range(1, 11)])
    assert np.allclose(out, factor * u0, rtol=1e-12)


def test_divergence_reports_level():
    cfg = SamplerConfig(SCHED, M=50, epsilon=1.0)
    with pytest.raises(FloatingPointError, match="level 1"), np.errstate(over="ignore", invalid="ignore"):
        annealed_langevin(lambda v, t: 1e300 * v, cfg, np.ones((1, 16)), ZeroRng())


def _discrete_moments(cfg, o, n):
    """Exact per-mode mean/variance of the Euler chain driven by a linear oracle."""
    d = DATA.eigenvalues(n)
    c = NOISE.eigenvalues(n)
    mean_c = spectral.forward_array(DIRICHLET, o.mean[None])[0] if o.mean is not None else np.zeros(n - 1)
    mu = np.zeros(n - 1)
    var = cfg.schedule.sigmas[0] ** 2 * c
    for t in range(1, cfg.schedule.T + 1):
        h = cfg.step_size(t)
        g = h * c / (d + cfg.schedule.sigmas[t - 1] ** 2 * c)
        for _ in range(cfg.M):
            mu = (1 - g) * mu + g * mean_c
            var = (1 - g) ** 2 * var + 2 * h * c
    return mu, var


def test_langevin_matches_exact_discrete_moments():
    n, chains = 16, 4000
    m = GridFunction.from_callable(DIRICHLET, n, lambda x: np.sin(x / 2)).values
    o = OracleScore(DATA, NOISE, SCHED.sigmas, mean=m, rescaled=True)
    cfg = SamplerConfig(SCHED, M=20, epsilon=2e-5, seed=3, chains=chains)
    u = run_chains(o, cfg, n)
    coeffs = spectral.forward_array(DIRICHLET, u)
    mu, var = _discrete_moments(cfg, o, n)
    se = np.sqrt(var / chains)
    assert np.all(np.abs(coeffs.mean(axis=0) - mu) < 4.5 * se)
    assert np.max(np.abs(coeffs.var(axis=0) / var - 1)) < 0.1


def test_run_chains_independent_of_workers_and_order():
    o = OracleScore(DATA, NOISE, SCHED.sigmas, rescaled=True)
    cfg = SamplerConfig(SCHED, M=2, seed=9, chains=10)
    a = run_chains(o, cfg, 16, workers=1, chunk=4)
    b = run_chains(o, cfg, 16, workers=3, chunk=4)
    assert a.shape == (10, 16) and a.tobytes() == b.tobytes()
    assert np.all(a[:, -1] == 0)


def test_initial_state_scale(rng):
    x = initial_state(SCHED, 64, rng, 20000)
    h = DIRICHLET.cell_volume(64)
    from ddo.grf import trace

    assert np.mean(h * np.sum(x**2, axis=1)) == pytest.approx(trace(NOISE, 64), rel=0.03)


def test_crank_nicolson_coefficients():
    a, b = crank_nicolson_coefficients(2.0)
    assert b == pytest.approx(1.0) and a == pytest.approx(0.0, abs=1e-7)
    for bad in (0.0, -1.0, 2.5):
        with pytest.raises(ValueError):
            crank_nicolson_coefficients(bad)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 2.0))
def test_crank_nicolson_preserves_unit_variance_property(h):
    a, b = crank_nicolson_coefficients(h)
    assert a**2 + b**2 == pytest.approx(1.0, abs=1e-12)
    assert b**2 == pytest.approx(8 * h / (2 + h) ** 2, rel=1e-12)


def test_crank_nicolson_step_keeps_prior_invariant(rng):
    u = NOISE.sample_array(32, rng, 20000)
    out = crank_nicolson_step(lambda v, t: np.zeros_like(v), u, 1, 0.3, rng, NOISE)
    c_in = spectral.forward_array(DIRICHLET, u).var(axis=0)
    c_out = spectral.forward_array(DIRICHLET, out).var(axis=0)
    assert np.max(np.abs(c_out[:10] / c_in[:10] - 1)) < 0.06


def test_ddpm_posterior_variance():
    s = NoiseSchedule.ddpm(NOISE, [0.1, 0.2, 0.3])
    assert ddpm_posterior_variance(s, 1) == 0.0
    assert ddpm_posterior_variance(s, 2) == pytest.approx(0.1 * 0.2 / (1 - 0.72))


def test_ddpm_sample_with_exact_noise_predictor_collapses_to_zero(rng):
    # data is the point mass at 0, so the exact noise predictor is v / sqrt(1 - alpha_t)
    s = NoiseSchedule.ddpm(NOISE, np.linspace(0.01, 0.2, 20))
    F = lambda v, t: v / np.sqrt(1 - s.alpha(t))
    out = ddpm_sample(F, s, rng, 32, chains=5)
    assert np.max(np.abs(out)) < 1e-12
    with pytest.raises(ValueError):
        ddpm_sample(F, SCHED, rng, 32)


def test_oracle_on_eigenfunction():
    k = 3
    phi = GridFunction.from_callable(DIRICHLET, 64, lambda x: np.sin(k * x / 2) / np.sqrt(np.pi))
    d, c = DATA.eigenvalues(64)[k - 1], NOISE.eigenvalues(64)[k - 1]
    s2 = SCHED.sigmas[4] ** 2
    plain = oracle_score(OracleScore(DATA, NOISE, SCHED.sigmas), phi, 5)
    assert np.allclose(plain.values, -s2 * c / (d + s2 * c) * phi.values, atol=1e-12)
    resc = oracle_score(OracleScore(DATA, NOISE, SCHED.sigmas, rescaled=True), phi, 5)
    assert np.allclose(resc.values * s2, plain.values, atol=1e-12)


def test_oracle_is_zero_at_mean():
    m = GridFunction.from_callable(DIRICHLET, 32, lambda x: np.sin(x / 2)).values
    o = OracleScore(DATA, NOISE, SCHED.sigmas, mean=m)
    assert np.max(np.abs(o(m[None], 3))) < 1e-14


def test_oracle_periodic_mean_mode_multiplier_is_zero():
    o = OracleScore(MaternCovariance(TORUS1, 1, 1, 1), MaternCovariance(TORUS1, 1, 2, 1), SCHED.sigmas)
    assert o.multiplier(16, 1)[0] == 0.0 and np.all(o.multiplier(16, 1)[1:] < 0)
    with pytest.raises(ValueError):
        OracleScore(DATA, MaternCovariance(TORUS1, 1, 2, 1), SCHED.sigmas)


def test_model_score_conventions(rng):
    m = fno.init(fno.FnoConfig(modes=4, width=4, layers=2), rng)
    v = rng.standard_normal((2, 16)) * DIRICHLET.boundary_mask(16)
    resc = ModelScore(m, SCHED, "rescaled")(v, 4)
    plain = ModelScore(m, SCHED, "plain")(v, 4)
    assert np.allclose(plain * SCHED.sigma(4) ** 2, resc, rtol=1e-13)
    assert np.all(resc[:, -1] == 0)
    with pytest.raises(ValueError):
        ModelScore(m, SCHED, "logits")


def test_model_score_precond_and_kl_conventions(rng):
    m = fno.init(fno.FnoConfig(modes=4, width=4, layers=2), rng)
    v = rng.standard_normal((2, 16)) * DIRICHLET.boundary_mask(16)
    plain = ModelScore(m, SCHED, "plain")(v, 4)
    assert np.allclose(ModelScore.for_loss(m, SCHED, "precond_dsm")(v, 4), -plain, rtol=1e-13)
    ddpm = NoiseSchedule.ddpm(NOISE, np.linspace(0.05, 0.3, 4))
    # a network that predicts u_hat = 0 implies all of v is noise
    zero = fno.zeros(m.cfg)
    out = ModelScore.for_loss(zero, ddpm, "ddpm_kl")(v, 3)
    assert np.allclose(out, v / np.sqrt(1 - ddpm.alpha(3)), rtol=1e-13)
    with pytest.raises(ValueError):
        ModelScore(m, ddpm, "rescaled")
    with pytest.raises(ValueError):
        ModelScore(m, SCHED, "noise")


def test_inv_sigma_scaling_is_ncsn_only(rng):
    m = fno.init(fno.FnoConfig(modes=4, width=4, layers=2, output_scaling="inv_sigma"), rng)
    ddpm = NoiseSchedule.ddpm(NOISE, np.linspace(0.05, 0.3, 4))
    with pytest.raises(ValueError, match="NCSN"):
        ModelScore(m, ddpm, "noise")
    v = rng.standard_normal((2, 16)) * DIRICHLET.boundary_mask(16)
    assert np.all(np.isfinite(ModelScore(m, SCHED, "rescaled")(v, 4)))
