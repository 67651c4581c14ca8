import numpy as np
import pytest

from ddo import spectral
from ddo.datagen import (
    MEANS, GaussianMixtureSpec, NavierStokesSpec, NumericalInstability, cameron_martin_norms, energy_enstrophy,
    gen_gaussian_mixture, gen_navier_stokes, ns_integrate, ns_step, warn_if_outside_cm,
)
from ddo.grf import MaternCovariance
from ddo.grid import GridFunction

from conftest import DIRICHLET, TORUS1, TORUS2

DATA = MaternCovariance(DIRICHLET, 3.0, 3.0, 3.0)
NOISE = MaternCovariance(DIRICHLET, 0.5, 0.1, 0.6)


def _mode(n, kx, ky, amp=1.0):
    x, y = TORUS2.mesh(n)
    return amp * np.cos(2 * np.pi * (kx * x + ky * y))


def test_mixture_dataset_shape_and_balance(rng):
    ds = gen_gaussian_mixture(GaussianMixtureSpec(DATA), 4000, 64, rng)
    assert ds.samples.shape == (4000, 64) and np.all(ds.samples[:, -1] == 0)
    assert abs(ds.metadata["component_one"] / 4000 - 0.5) < 0.03
    # the projection on sin(x/2) separates the components: +-sqrt(pi) plus noise
    c1 = spectral.forward_array(DIRICHLET, ds.samples)[:, 0]
    assert abs(np.mean(c1 > 0) - 0.5) < 0.03
    assert np.mean(np.abs(c1)) == pytest.approx(np.sqrt(np.pi), rel=0.05)


def test_mixture_degenerate_weights(rng):
    ds = gen_gaussian_mixture(GaussianMixtureSpec(DATA, p=1.0), 50, 32, rng)
    assert ds.metadata["component_one"] == 50
    z = MaternCovariance(DIRICHLET, 0.0, 3.0, 3.0)
    ds = gen_gaussian_mixture(GaussianMixtureSpec(z, p=0.0), 3, 32, rng)
    f1, f2 = GaussianMixtureSpec(z).means(32)
    assert np.array_equal(ds.samples, np.stack([f2.values] * 3))


def test_mixture_determinism():
    spec = GaussianMixtureSpec(DATA, mean="ramp", second_mean="zero")
    a = gen_gaussian_mixture(spec, 20, 32, np.random.default_rng(4))
    b = gen_gaussian_mixture(spec, 20, 32, np.random.default_rng(4))
    assert a.samples.tobytes() == b.samples.tobytes()


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixtureSpec(DATA, p=1.5)
    with pytest.raises(ValueError):
        GaussianMixtureSpec(DATA, mean="cubic")
    with pytest.raises(ValueError):
        GaussianMixtureSpec(MaternCovariance(TORUS2, 1.0, 1.0, 2.0))


def test_ramp_mean_pinned_at_boundary():
    f1, _ = GaussianMixtureSpec(DATA, mean="ramp").means(16)
    x = DIRICHLET.nodes(16)
    assert f1.values[-1] == 0.0
    assert np.allclose(f1.values[:-1], MEANS["ramp"](x[:-1]))


def test_cameron_martin_norms():
    # sin(x/2) is the first eigenfunction: its norm is sqrt(pi / lambda_1) at every resolution
    norms = cameron_martin_norms(MEANS["sin_half"], NOISE, (64, 256, 1024))
    assert np.allclose(norms, np.sqrt(np.pi / NOISE.eigenvalues(4)[0]), rtol=1e-10)
    ramp = cameron_martin_norms(MEANS["ramp"], NOISE, (256, 512, 1024, 2048))
    assert np.all(np.diff(ramp) > 0)


def test_warn_if_outside_cm():
    with pytest.warns(UserWarning, match="Cameron-Martin"):
        assert warn_if_outside_cm(GaussianMixtureSpec(DATA, mean="ramp"), NOISE)
    # sin_half is inside; no warning should be raised
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not warn_if_outside_cm(GaussianMixtureSpec(DATA), NOISE)


def test_ns_spec_defaults():
    s = NavierStokesSpec()
    assert s.step == 1e-3 and s.steps == 5000
    assert NavierStokesSpec(resolution=128).step == 5e-4
    assert s.forcing.eigenvalues(8)[1, 0] == pytest.approx(4.888436996382462e-06, rel=1e-12)
    with pytest.raises(ValueError):
        NavierStokesSpec(resolution=48)
    with pytest.raises(ValueError):
        NavierStokesSpec(dt=-1.0)


def test_single_mode_viscous_decay():
    eps, t = 0.01, 1.0
    w0 = _mode(32, 1, 0)
    out = ns_integrate(w0[None], np.zeros((1, 32, 32)), eps, 1e-3, 1000)[0]
    assert np.max(np.abs(out - np.exp(-eps * 4 * np.pi**2 * t) * w0)) < 1e-6 * np.exp(-eps * 4 * np.pi**2 * t)


def test_inviscid_invariants_conserved():
    n = 64
    w0 = _mode(n, 1, 0) + 0.7 * _mode(n, 1, 2) + 0.4 * _mode(n, 2, -1) + 0.3 * _mode(n, 3, 1)
    e0, z0 = energy_enstrophy(w0)
    w1 = ns_integrate(w0[None], np.zeros((1, n, n)), 0.0, 1e-3, 1000)[0]
    e1, z1 = energy_enstrophy(w1)
    assert abs(e1[()] / e0 - 1) < 1e-4 if np.ndim(e1) else abs(e1 / e0 - 1) < 1e-4
    assert abs(z1 / z0 - 1) < 1e-4
    assert np.max(np.abs(w1 - w0)) > 1e-2  # the flow actually evolved


def test_single_mode_forcing_response():
    eps, t, n = 1 / 500, 1.0, 32
    f = _mode(n, 0, 1, 0.3)
    lam = 4 * np.pi**2
    out = ns_integrate(np.zeros((1, n, n)), f[None], eps, 1e-3, 1000)[0]
    exact = f * (1 - np.exp(-eps * lam * t)) / (eps * lam)
    assert np.max(np.abs(out - exact)) < 1e-4 * np.max(np.abs(exact))


def test_energy_enstrophy_single_mode():
    e, z = energy_enstrophy(_mode(16, 1, 0))
    assert z == pytest.approx(0.25, rel=1e-12)
    assert e == pytest.approx(0.25 / (4 * np.pi**2), rel=1e-12)


def test_cfl_violation_raises():
    w0 = _mode(32, 1, 0, 100.0)
    with pytest.raises(NumericalInstability, match="CFL"):
        ns_integrate(w0[None], np.zeros((1, 32, 32)), 0.0, 0.1, 1)


def test_ns_step_matches_integrate(rng):
    spec = NavierStokesSpec(resolution=16)
    w0 = _mode(16, 1, 1) + 0.5 * _mode(16, 2, 0)
    f = spec.forcing.sample_array(16, rng)
    one = ns_integrate(w0[None], f[None], spec.viscosity, spec.step, 1)[0]
    s = ns_step(spectral.forward(GridFunction(TORUS2, w0)), spectral.forward(GridFunction(TORUS2, f)), spec)
    assert np.max(np.abs(spectral.inverse(s).values - one)) < 1e-12
    with pytest.raises(ValueError):
        ns_step(spectral.forward(GridFunction(TORUS1, np.zeros(16))), s, spec)


def test_gen_navier_stokes_worker_independent():
    spec = NavierStokesSpec(resolution=16, final_time=0.05)
    a = gen_navier_stokes(spec, 5, np.random.default_rng(2), workers=1, chunk=2)
    b = gen_navier_stokes(spec, 5, np.random.default_rng(2), workers=3, chunk=2)
    assert a.samples.shape == (5, 16, 16)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert np.all(np.abs(a.samples.mean(axis=(1, 2))) < 1e-15)
    assert np.max(np.abs(a.samples)) > 0
