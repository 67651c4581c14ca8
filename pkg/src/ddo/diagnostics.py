"""Evaluation statistics and the experiment harnesses built on them."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import fno, spectral
from .corruption import NoiseSchedule
from .grf import MaternCovariance, SmoothingOperator, WhiteNoise, containment_ratio
from .grid import Dataset, DomainSpec, GridFunction, inner_array
from .sampler import ModelScore, SamplerConfig, ScoreFn, run_chains
from .training import LossKind, LossSpec, TrainConfig, batch_loss, train


# -- statistics --------------------------------------------------------------

def _same_grid(a: Dataset, b: Dataset):
    if a.domain != b.domain or a.resolution != b.resolution:
        raise ValueError(
            f"datasets differ in domain/resolution: {a.domain}@{a.resolution} vs {b.domain}@{b.resolution}"
        )


def spectrum_sup_error(model_samples: Dataset, data_samples: Dataset) -> float:
    _same_grid(model_samples, data_samples)
    _, s_model = spectral.average_spectrum(model_samples)
    _, s_data = spectral.average_spectrum(data_samples)
    return float(np.max(np.abs(s_model - s_data)))


def kinetic_energy_array(domain: DomainSpec, omega: np.ndarray) -> np.ndarray:
    """``1/2 sum_{k != 0} |w_k|^2 / eig(k)``, batched over leading axes."""
    if not domain.periodic:
        raise ValueError("kinetic energy is defined for periodic vorticity")
    c = spectral.forward_array(domain, omega)
    lam = spectral.laplacian_eigenvalues(domain, omega.shape[-1])
    inv = np.zeros_like(lam)
    inv[lam > 0] = 1.0 / lam[lam > 0]
    axes = tuple(range(-domain.dims, 0))
    return 0.5 * np.sum(np.abs(c) ** 2 * inv, axis=axes)


def kinetic_energy(omega: GridFunction) -> float:
    return float(kinetic_energy_array(omega.domain, omega.values))


def projections(d: Dataset, phi: GridFunction) -> np.ndarray:
    if phi.domain != d.domain or phi.resolution != d.resolution:
        raise ValueError("projection direction lives on a different grid")
    return inner_array(d.domain, d.samples, phi.values)


def w2_1d(x: np.ndarray, y: np.ndarray) -> float:
    """Exact W2 between two empirical measures on the line (sizes may differ)."""
    x, y = np.sort(np.asarray(x, float)), np.sort(np.asarray(y, float))
    if len(x) == 0 or len(y) == 0:
        raise ValueError("empty sample")
    grid = np.union1d(np.arange(1, len(x) + 1) / len(x), np.arange(1, len(y) + 1) / len(y))
    widths = np.diff(np.concatenate([[0.0], grid]))
    # quantile level in the middle of each piece avoids ambiguity at the breakpoints
    mid = grid - widths / 2
    qx = x[np.minimum((mid * len(x)).astype(int), len(x) - 1)]
    qy = y[np.minimum((mid * len(y)).astype(int), len(y) - 1)]
    return float(np.sqrt(np.sum(widths * (qx - qy) ** 2)))


def empirical_w2_projection(a: Dataset, b: Dataset, phi: GridFunction) -> float:
    return w2_1d(projections(a, phi), projections(b, phi))


def mode_balance(d: Dataset, f1: GridFunction) -> float:
    """Fraction of samples with a positive projection on ``f1``."""
    return float(np.mean(projections(d, f1) > 0))


def coefficient_kurtosis(d: Dataset, modes: int = 4) -> tuple[np.ndarray, float]:
    """Excess kurtosis of the real parts of the lowest nonzero coefficients, plus its standard error."""
    from scipy.stats import kurtosis

    c = spectral.forward_array(d.domain, d.samples)
    if d.domain.dims == 1:
        picks = c[:, 1:modes + 1] if d.domain.periodic else c[:, :modes]
    else:
        idx = [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1)][:modes]
        picks = np.stack([c[:, i, j] for i, j in idx], axis=1)
    return kurtosis(picks.real, axis=0), float(np.sqrt(24.0 / d.count))


def relative_l2_error(domain: DomainSpec, pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean over the batch of ``||pred - ref|| / ||ref||``."""
    num = np.sqrt(inner_array(domain, pred - ref, pred - ref))
    den = np.sqrt(inner_array(domain, ref, ref))
    return float(np.mean(num / den))


@dataclass
class TurbulenceStats:
    k: np.ndarray
    energy_spectrum: np.ndarray
    value_edges: np.ndarray
    value_density: np.ndarray
    energy_edges: np.ndarray
    energy_density: np.ndarray
    bins: int = 64


def radial_energy_spectrum(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Sample-averaged ``1/2 |w_k|^2 / eig(k)`` summed over shells of rounded ``|k|``."""
    dom, n = d.domain, d.resolution
    c = spectral.forward_array(dom, d.samples)
    lam = spectral.laplacian_eigenvalues(dom, n)
    inv = np.zeros_like(lam)
    inv[lam > 0] = 1.0 / lam[lam > 0]
    e = 0.5 * np.mean(np.abs(c) ** 2, axis=0) * inv
    k = spectral.wavenumbers(dom, n).astype(np.float64)
    kr = np.rint(np.sqrt(np.sum(k**2, axis=0)) if dom.dims == 2 else np.abs(k)).astype(int).ravel()
    sums = np.bincount(kr, weights=e.ravel())
    return np.arange(1, len(sums)), sums[1:]


def turbulence_stats(d: Dataset, value_range=None, energy_range=None, bins: int = 64) -> TurbulenceStats:
    """Spectrum plus pointwise and total-energy densities (each integrates to one)."""
    k, spec = radial_energy_spectrum(d)
    values = d.samples.ravel()
    ke = kinetic_energy_array(d.domain, d.samples)
    vr = value_range or (float(values.min()), float(values.max()))
    er = energy_range or (float(ke.min()), float(ke.max()))
    vd, ve = np.histogram(values, bins=bins, range=vr, density=True)
    ed, ee = np.histogram(ke, bins=bins, range=er, density=True)
    return TurbulenceStats(k, spec, ve, vd, ee, ed, bins)


def compare_turbulence(model: Dataset, data: Dataset, bins: int = 64) -> tuple[TurbulenceStats, TurbulenceStats]:
    """Statistics of both datasets on shared bins over the pooled min/max."""
    _same_grid(model, data)
    pooled_v = np.concatenate([model.samples.ravel(), data.samples.ravel()])
    pooled_e = np.concatenate([kinetic_energy_array(model.domain, model.samples),
                               kinetic_energy_array(data.domain, data.samples)])
    vr = (float(pooled_v.min()), float(pooled_v.max()))
    er = (float(pooled_e.min()), float(pooled_e.max()))
    return turbulence_stats(model, vr, er, bins), turbulence_stats(data, vr, er, bins)


# -- spectrum-vs-resolution harnesses ----------------------------------------

@dataclass
class SpectrumReport:
    resolutions: list[int]
    errors: list[float]
    noise: str
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return max(self.errors) / min(self.errors)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["resolution", "sup_error", "noise"])
            for n, e in zip(self.resolutions, self.errors):
                w.writerow([n, repr(float(e)), self.noise])


def noise_tag(s: NoiseSchedule) -> str:
    return "white" if isinstance(s.noise, WhiteNoise) else "trace_class"


def spectrum_report(score_at: Callable[[int], ScoreFn], sampler_cfg: SamplerConfig, data_hires: Dataset,
                    resolutions: Sequence[int], workers: int = 1) -> SpectrumReport:
    """Sample at each resolution with ``score_at(n)`` and compare spectra with the data."""
    errors, samples = [], {}
    for n in resolutions:
        if n > data_hires.resolution:
            raise ValueError(f"data resolution {data_hires.resolution} is below sampling resolution {n}")
        gen = run_chains(score_at(n), sampler_cfg, n, workers=workers)
        model_ds = Dataset(data_hires.domain, n, gen)
        errors.append(spectrum_sup_error(model_ds, data_hires.resampled(n)))
        samples[n] = model_ds
    return SpectrumReport(list(resolutions), errors, noise_tag(sampler_cfg.schedule), {"samples": samples})


def retrained_report(arch: fno.FnoConfig, train_cfg, sampler_cfg: SamplerConfig, data_hires: Dataset,
                     resolutions: Sequence[int], init_seed: int = 1, workers: int = 1) -> SpectrumReport:
    """Train a fresh model on the data subsampled to each resolution and sample it there.

    Every resolution uses the same initial weights and training seed.  Trained models
    are returned in ``extra["models"]``.
    """
    spec = LossSpec("rescaled_dsm", sampler_cfg.schedule)
    models = {}

    def score_at(n):
        m = fno.init(arch, np.random.default_rng(init_seed))
        models[n], _ = train(data_hires.resampled(n), spec, m, train_cfg)
        return ModelScore(models[n], sampler_cfg.schedule, "rescaled")

    rep = spectrum_report(score_at, sampler_cfg, data_hires, resolutions, workers)
    rep.extra["models"] = models
    return rep


def invariance_report(model: fno.FnoModel | ScoreFn, sampler_cfg: SamplerConfig, data_hires: Dataset,
                      resolutions: Sequence[int], output: str = "rescaled", workers: int = 1) -> SpectrumReport:
    """Single model sampled at several resolutions (zero-shot super-resolution)."""
    if isinstance(model, fno.FnoModel):
        low = [n for n in resolutions if n < model.cfg.min_resolution]
        if low:
            raise ValueError(f"resolutions {low} are below the model's 2*modes = {model.cfg.min_resolution}")
        score = ModelScore(model, sampler_cfg.schedule, output)
    else:
        score = model
    return spectrum_report(lambda n: score, sampler_cfg, data_hires, resolutions, workers)


# -- noise-regularity experiment ---------------------------------------------

@dataclass(frozen=True)
class NoiseRegularityConfig:
    resolutions: tuple = (32, 64, 128, 256)
    extent: float = 1.0
    data_alpha: float = 3.0
    data_sigma: float = 4.0
    data_tau: float = 1.0
    noise_alpha: float = 2.0
    noise_sigma: float = 0.2
    noise_tau: float = 1.0
    modes: int = 16
    width: int = 32
    layers: int = 4
    n_train: int = 1000
    n_test: int = 500
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    lr_halving_period: int = 10
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseRegularityConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        d = dict(d)
        if "resolutions" in d:
            d["resolutions"] = tuple(int(n) for n in d["resolutions"])
        return cls(**d)


def noise_regularity_experiment(cfg: NoiseRegularityConfig, log: Callable[[str], None] | None = None) -> list[tuple]:
    """Train a denoiser with the plain and the preconditioned objective at each resolution.

    Returns rows ``(resolution, plain_test_error, precond_test_error)``; a test error is
    the training objective evaluated on fresh data and noise draws.
    """
    dom = DomainSpec.torus(1, cfg.extent)
    data = MaternCovariance(dom, cfg.data_sigma, cfg.data_tau, cfg.data_alpha)
    noise = MaternCovariance(dom, cfg.noise_sigma, cfg.noise_tau, cfg.noise_alpha)
    sched = NoiseSchedule.ncsn(noise, 1.0, 1.0, 1)
    arch = fno.FnoConfig(modes=cfg.modes, width=cfg.width, layers=cfg.layers, dims=1)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                       lr_halving_period=cfg.lr_halving_period, seed=cfg.seed, workers=cfg.workers)
    rows = []
    for n in cfg.resolutions:
        rng = np.random.default_rng([cfg.seed, n])
        train_ds = Dataset(dom, n, data.sample_array(n, rng, cfg.n_train))
        test_u = data.sample_array(n, rng, cfg.n_test)
        test_xi = noise.sample_array(n, rng, cfg.n_test)
        row = [n]
        for kind in (LossKind.PLAIN_DSM, LossKind.PRECOND_DSM):
            spec = LossSpec(kind, sched)
            model = fno.init(arch, np.random.default_rng(cfg.seed))
            model, _ = train(train_ds, spec, model, tcfg)
            err = batch_loss(spec, model, test_u, np.ones(cfg.n_test, dtype=int), None, test_xi)
            row.append(err)
            if log:
                log(f"res {n} {kind.value}: test error {err:.6g}")
        rows.append(tuple(row))
    return rows


def write_rows(path: str | Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([x if isinstance(x, (int, np.integer, str)) else repr(float(x)) for x in r])


# -- smoothing-operator experiment -------------------------------------------

SMOOTHING_CONDITIONS = {
    "a_white": {"white": True},
    "b_contained": {"alpha": 1.0, "sigma": 1.73, "tau": 3.0},
    "c_outside": {"alpha": 2.0, "sigma": 10.0, "tau": 3.0},
    "d_blurred": {"alpha": 2.0, "sigma": 10.0, "tau": 3.0, "blur": 0.1},
}


@dataclass(frozen=True)
class SmoothingExperimentConfig:
    train_resolution: int = 128
    sample_resolutions: tuple = (128, 256, 512)
    data_alpha: float = 1.5
    data_sigma: float = 3.0
    data_tau: float = 3.0
    mean: str = "ramp"
    p: float = 0.5
    n_train: int = 1000
    chains: int = 128
    modes: int = 16
    width: int = 32
    layers: int = 4
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    lr_halving_period: int = 10
    M: int = 200
    epsilon: float = 2e-5
    conditions: tuple = tuple(SMOOTHING_CONDITIONS)
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothingExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("sample_resolutions", "conditions"):
            if key in d:
                d[key] = tuple(d[key])
        bad = set(d.get("conditions", ())) - set(SMOOTHING_CONDITIONS)
        if bad:
            raise ValueError(f"unknown conditions: {sorted(bad)}")
        return cls(**d)


def smoothing_experiment(cfg: SmoothingExperimentConfig, log: Callable[[str], None] | None = None) -> list[tuple]:
    """Train one model per noise condition, sample at several resolutions.

    Rows: ``(condition, resolution, sup_error, mode_balance, containment_ratio)``.
    """
    from .datagen import GaussianMixtureSpec, gen_gaussian_mixture

    dom = DomainSpec.interval()
    hi = max(cfg.sample_resolutions + (cfg.train_resolution,))
    gm = GaussianMixtureSpec(MaternCovariance(dom, cfg.data_sigma, cfg.data_tau, cfg.data_alpha), cfg.mean, cfg.p)
    data_hi = gen_gaussian_mixture(gm, cfg.n_train, hi, np.random.default_rng(cfg.seed))
    train_ds = data_hi.resampled(cfg.train_resolution)
    arch = fno.FnoConfig(modes=cfg.modes, width=cfg.width, layers=cfg.layers, dims=1)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                       lr_halving_period=cfg.lr_halving_period, seed=cfg.seed, workers=cfg.workers)
    rows = []
    for name in cfg.conditions:
        cond = SMOOTHING_CONDITIONS[name]
        if cond.get("white"):
            noise = WhiteNoise(dom)
            smoothing, ratio = None, float("inf")
        else:
            noise = MaternCovariance(dom, cond["sigma"], cond["tau"], cond["alpha"])
            smoothing = None
            if "blur" in cond:
                smoothing = (SmoothingOperator.blur(cond["blur"]),) * 10
            ops = smoothing or (SmoothingOperator.identity(),)
            ratio = containment_ratio(ops[:1], [noise], cfg.train_resolution)
        sched = NoiseSchedule.ncsn(noise, smoothing=smoothing,
                                   smoothing_config={"kind": "blur", "bandwidth": cond["blur"]} if "blur" in cond else None)
        model = fno.init(arch, np.random.default_rng(cfg.seed))
        model, _ = train(train_ds, LossSpec(LossKind.RESCALED_DSM, sched), model, tcfg)
        scfg = SamplerConfig(sched, M=cfg.M, epsilon=cfg.epsilon, seed=cfg.seed, chains=cfg.chains)
        reference = data_hi
        if smoothing is not None:
            reference = Dataset(dom, hi, smoothing[-1].apply_array(dom, data_hi.samples))
        report = invariance_report(model, scfg, reference, cfg.sample_resolutions, workers=cfg.workers)
        for n, err in zip(report.resolutions, report.errors):
            f1 = gm.means(n)[0]
            bal = mode_balance(report.extra["samples"][n], f1)
            rows.append((name, n, err, bal, ratio))
            if log:
                log(f"{name} res {n}: sup error {err:.4g}, balance {bal:.3f}")
    return rows
