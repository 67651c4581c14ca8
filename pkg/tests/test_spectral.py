import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddo import spectral
from ddo.grid import Dataset, DomainSpec, GridFunction, resample

from conftest import ALL_DOMAINS, DIRICHLET, DOMAIN_IDS, TORUS1, TORUS2


def phi(dom: DomainSpec, n: int, k: int) -> GridFunction:
    """Real orthonormal basis function number ``k``."""
    if dom.periodic:
        return GridFunction.from_callable(dom, n, lambda *x: np.sqrt(2) * np.cos(2 * np.pi * k * x[0] / dom.extent) / dom.extent ** (dom.dims / 2))
    return GridFunction.from_callable(dom, n, lambda x: np.sqrt(2 / dom.extent) * np.sin(np.pi * k * x / dom.extent))


def _rand(dom, n, rng):
    return GridFunction.from_callable(dom, n, lambda *x: rng.standard_normal(dom.shape(n)))


def test_first_sine_mode_is_unit_vector():
    c = spectral.forward(phi(DIRICHLET, 64, 1)).coeffs
    e = np.zeros(63)
    e[0] = 1.0
    assert np.max(np.abs(c - e)) < 1e-12


def test_periodic_exponential_is_unit_vector():
    n = 16
    u = GridFunction.from_callable(TORUS1, n, lambda x: np.ones_like(x))
    c = spectral.forward(u).coeffs
    assert abs(c[0] - 1.0) < 1e-12 and np.max(np.abs(c[1:])) < 1e-12


def test_sin_half_coefficient():
    u = GridFunction.from_callable(DIRICHLET, 256, lambda x: np.sin(x / 2))
    c = spectral.forward(u).coeffs
    assert c[0] == pytest.approx(np.sqrt(np.pi), abs=1e-12)
    assert np.max(np.abs(c[1:])) < 1e-12


@pytest.mark.parametrize("dom", ALL_DOMAINS, ids=DOMAIN_IDS)
def test_round_trip(dom, rng):
    u = _rand(dom, 32, rng)
    assert np.max(np.abs(spectral.inverse(spectral.forward(u)).values - u.values)) < 1e-12


def test_conjugate_symmetry(rng):
    c = spectral.forward(_rand(TORUS2, 16, rng)).coeffs
    neg = np.roll(np.flip(c, axis=(0, 1)), 1, axis=(0, 1))
    assert np.max(np.abs(c - np.conj(neg))) < 1e-14


def test_laplacian_eigenvalues():
    assert np.allclose(spectral.laplacian_eigenvalues(DIRICHLET, 8), np.arange(1, 8) ** 2 / 4)
    ev = spectral.laplacian_eigenvalues(TORUS2, 8)
    assert ev[1, 0] == pytest.approx(4 * np.pi**2) and ev[1, 1] == pytest.approx(8 * np.pi**2)
    assert ev[-1, 0] == pytest.approx(4 * np.pi**2)


def test_apply_multiplier_identity_and_heat_zero(rng):
    u = _rand(TORUS2, 16, rng)
    assert np.max(np.abs(spectral.apply_multiplier(u, lambda k: np.ones(k.shape[1:])).values - u.values)) < 1e-12
    assert np.max(np.abs(spectral.apply_eigen_multiplier(u, lambda ev: np.exp(-0.0 * ev)).values - u.values)) < 1e-12


def test_apply_multiplier_eigenfunction():
    u = phi(DIRICHLET, 64, 2)
    out = spectral.apply_multiplier(u, lambda k: k.astype(float))
    assert np.max(np.abs(out.values - 2 * u.values)) < 1e-12


def test_apply_multiplier_rejects_non_finite(rng):
    u = _rand(DIRICHLET, 16, rng)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        spectral.apply_multiplier(u, lambda k: 1.0 / (k - 1.0))


@pytest.mark.parametrize("dom", ALL_DOMAINS, ids=DOMAIN_IDS)
def test_multiplier_then_inverse_multiplier(dom, rng):
    u = _rand(dom, 32, rng)
    f = lambda ev: 1.0 / (1.0 + ev)
    g = lambda ev: 1.0 + ev
    back = spectral.apply_eigen_multiplier(spectral.apply_eigen_multiplier(u, f), g)
    assert np.max(np.abs(back.values - u.values)) < 1e-10


@pytest.mark.parametrize("dom", ALL_DOMAINS, ids=DOMAIN_IDS)
def test_multiplier_commutes_with_resample(dom):
    if dom.periodic and dom.dims == 2:
        f = lambda x, y: np.cos(2 * np.pi * (x + 2 * y)) + np.sin(2 * np.pi * 3 * x)
    elif dom.periodic:
        f = lambda x: np.cos(2 * np.pi * 2 * x) + np.sin(2 * np.pi * 5 * x)
    else:
        f = lambda x: np.sin(x / 2) + np.sin(5 * x / 2)
    u = GridFunction.from_callable(dom, 32, f)
    heat = lambda ev: np.exp(-1e-3 * ev)
    a = resample(spectral.apply_eigen_multiplier(u, heat), 64)
    b = spectral.apply_eigen_multiplier(resample(u, 64), heat)
    assert np.max(np.abs(a.values - b.values)) < 1e-12


def test_dealias_two_thirds():
    n = 32
    dom = TORUS2
    low = GridFunction.from_callable(dom, n, lambda x, y: np.cos(2 * np.pi * (3 * x + 5 * y)))
    s = spectral.forward(low)
    d = spectral.dealias_two_thirds(s)
    assert np.max(np.abs(d.coeffs - s.coeffs)) < 1e-15
    high = GridFunction.from_callable(dom, n, lambda x, y: np.cos(2 * np.pi * 15 * x))
    assert np.max(np.abs(spectral.dealias_two_thirds(spectral.forward(high)).coeffs)) < 1e-14
    assert np.array_equal(spectral.dealias_two_thirds(d).coeffs, d.coeffs)


@pytest.mark.parametrize("dom", ALL_DOMAINS, ids=DOMAIN_IDS)
def test_average_spectrum_of_basis_copies(dom):
    u = phi(dom, 32, 1)
    k, s = spectral.average_spectrum(Dataset(dom, 32, np.stack([u.values] * 4)))
    expected = np.where(k == 1, 1.0 if not dom.periodic else np.sqrt(0.5), 0.0)
    if dom.periodic and dom.dims == 2:
        # the shell round(|k|) = 1 holds (+-1, 0), (0, +-1) and (+-1, +-1): eight
        # coefficients, two of them equal to sqrt(1/2)
        expected = np.where(k == 1, np.sqrt(0.5) / 4, 0.0)
    assert np.max(np.abs(s - expected)) < 1e-12


def test_average_spectrum_zero_and_empty():
    k, s = spectral.average_spectrum(Dataset(TORUS1, 16, np.zeros((3, 16))))
    assert np.all(s == 0) and k[0] == 0 and k[-1] == 8
    with pytest.raises(ValueError):
        spectral.average_spectrum(Dataset(TORUS1, 16, np.zeros((0, 16))))


def test_average_spectrum_of_grf_matches_half_normal_mean(rng):
    from ddo.grf import MaternCovariance

    c = MaternCovariance(DIRICHLET, 3.0, 3.0, 3.0)
    d = Dataset(DIRICHLET, 64, c.sample_array(64, rng, 20000))
    k, s = spectral.average_spectrum(d)
    expected = np.sqrt(2 * c.eigenvalues(64) / np.pi)
    # relative standard error of a half-normal mean over N draws is ~0.76/sqrt(N)
    assert np.max(np.abs(s[:10] / expected[:10] - 1)) < 4 * 0.76 / np.sqrt(20000)


def test_spectrum_csv(tmp_path):
    p = tmp_path / "s.csv"
    spectral.write_spectrum_csv(p, np.array([1, 2]), np.array([0.5, 0.25]))
    assert p.read_text().splitlines() == ["k,mean_abs_coeff", "1,0.5", "2,0.25"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, 2]), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_property(seed, which, a, b):
    dom = ALL_DOMAINS[which]
    r = np.random.default_rng(seed)
    u, v = _rand(dom, 16, r), _rand(dom, 16, r)
    lhs = spectral.forward(a * u + b * v).coeffs
    rhs = a * spectral.forward(u).coeffs + b * spectral.forward(v).coeffs
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1 + abs(a) + abs(b)) * 10
    heat = lambda ev: np.exp(-0.01 * ev)
    lhs = spectral.apply_eigen_multiplier(a * u + b * v, heat).values
    rhs = a * spectral.apply_eigen_multiplier(u, heat).values + b * spectral.apply_eigen_multiplier(v, heat).values
    assert np.max(np.abs(lhs - rhs)) < 1e-11
