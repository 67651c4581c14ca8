"""Command-line entry point: ``python -m ddo <command> --config cfg.json --out dir``.

Every command reads a JSON config, validates all of it before doing any work, writes
its outputs into a staging directory and moves them into ``--out`` only on success.
Each run leaves a ``manifest.json`` that echoes the resolved config, the seed and the
SHA-256 of every input and output file.

Exit codes: 0 on success, 1 on configuration/input errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import shutil
import sys
import tempfile
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, fno
from .corruption import NCSN, schedule_from_dict
from .datagen import (
    MEANS, GaussianMixtureSpec, NavierStokesSpec, gen_gaussian_mixture, gen_navier_stokes, warn_if_outside_cm,
)
from .diagnostics import (
    NoiseRegularityConfig, SmoothingExperimentConfig, compare_turbulence, invariance_report, mode_balance,
    noise_regularity_experiment, retrained_report, smoothing_experiment, spectrum_sup_error, write_rows,
)
from .grf import MaternCovariance, noise_from_dict
from .grid import Dataset, DomainSpec, GridFunction, check_resolution, load_dataset, save_dataset
from .sampler import LOSS_OUTPUT, ModelScore, SamplerConfig, ddpm_sample, run_chains
from .spectral import average_spectrum, write_spectrum_csv
from .training import LossSpec, TrainConfig, train

CONFIG_VERSION = 1
SCHEDULE_KEYS = {"kind", "T", "covariance", "sigma_1", "sigma_T", "betas", "beta_1", "beta_T", "smoothing"}


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class Config:
    """Read-once view of a JSON object that remembers which keys were consumed."""

    def __init__(self, data: Any, prefix: str = ""):
        if not isinstance(data, dict):
            raise ConfigError(prefix or "<root>", f"expected a JSON object, got {type(data).__name__}")
        self.data, self.prefix, self.used = data, prefix, set()

    def _key(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def get(self, name: str, default: Any = None, conv: Callable | None = None, required: bool = False):
        self.used.add(name)
        if name not in self.data:
            if required:
                raise ConfigError(self._key(name), "missing required key")
            return default
        value = self.data[name]
        if conv is None or value is None:
            return value
        try:
            return conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(self._key(name), str(exc)) from exc

    def section(self, name: str, default: dict | None = None, required: bool = False) -> "Config":
        raw = self.get(name, default if default is not None else {}, required=required)
        return Config(raw, self._key(name))

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(self._key(unknown[0]), "unknown key")

    @contextlib.contextmanager
    def building(self, name: str):
        """Attribute errors raised while constructing an object to ``name``."""
        try:
            yield
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError, OSError) as exc:
            raise ConfigError(self._key(name), str(exc)) from exc


def _dataclass_from(cfg: Config, cls, skip: tuple = (), **overrides):
    names = [f.name for f in fields(cls) if f.name not in skip]
    kw = {n: cfg.get(n) for n in names if n in cfg.data}
    kw.update(overrides)
    if cfg.prefix:
        cfg.finish()
    with cfg.building(cls.__name__):
        return cls.from_dict(kw) if hasattr(cls, "from_dict") else cls(**kw)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_path(cfg: Config, name: str) -> Path:
    p = Path(cfg.get(name, required=True, conv=str))
    if not p.is_file():
        raise ConfigError(cfg._key(name), f"no such file: {p}")
    return p


def _load_input_dataset(cfg: Config, name: str) -> tuple[Path, Dataset]:
    p = _input_path(cfg, name)
    with cfg.building(name):
        return p, load_dataset(p)


def _covariance(cfg: Config, name: str, domain: DomainSpec):
    sec = cfg.get(name, required=True)
    with cfg.building(name):
        if not isinstance(sec, dict):
            raise ValueError("expected an object with sigma, tau, alpha")
        return noise_from_dict(sec, domain)


class Job:
    """A validated command ready to run: resolved config, seed, inputs and a runner."""

    def __init__(self, resolved: dict, inputs: dict[str, Path], run: Callable[[Path], dict]):
        self.resolved, self.inputs, self.run = resolved, inputs, run


# -- commands ----------------------------------------------------------------

def _gen_gm(cfg: Config, seed: int, workers: int) -> Job:
    dom = DomainSpec.interval()
    cov = _covariance(cfg, "covariance", dom)
    if not isinstance(cov, MaternCovariance):
        raise ConfigError("covariance", "the mixture needs a Matérn covariance")
    N = cfg.get("N", 1000, int)
    n = cfg.get("resolution", 2048, int)
    with cfg.building("mixture"):
        spec = GaussianMixtureSpec(cov, cfg.get("mean", "sin_half", str), cfg.get("p", 0.5, float),
                                   cfg.get("second_mean", None, str))
    check = cfg.get("check_noise")
    noise = _covariance(cfg, "check_noise", dom) if check is not None else None
    if N < 0:
        raise ConfigError("N", "must be non-negative")

    def run(out: Path) -> dict:
        extra = {}
        if noise is not None:
            extra["outside_cameron_martin"] = warn_if_outside_cm(spec, noise)
        ds = gen_gaussian_mixture(spec, N, n, np.random.default_rng(seed))
        ds.metadata["seed"] = seed
        save_dataset(ds, out / "dataset.ddof")
        return extra

    resolved = {"N": N, "resolution": n, **spec.to_dict(),
                "check_noise": noise.to_dict() if noise is not None else None}
    return Job(resolved, {}, run)


def _gen_ns(cfg: Config, seed: int, workers: int) -> Job:
    N = cfg.get("N", 100, int)
    chunk = cfg.get("chunk", 32, int)
    spec = _dataclass_from(cfg, NavierStokesSpec)
    if N < 0 or chunk < 1:
        raise ConfigError("N" if N < 0 else "chunk", "out of range")

    def run(out: Path) -> dict:
        ds = gen_navier_stokes(spec, N, np.random.default_rng(seed), workers=workers, chunk=chunk)
        ds.metadata["seed"] = seed
        save_dataset(ds, out / "dataset.ddof")
        return {}

    return Job({"N": N, "chunk": chunk, **spec.to_dict()}, {}, run)


def _schedule(cfg: Config, domain: DomainSpec):
    raw = cfg.get("schedule", required=True)
    with cfg.building("schedule"):
        if not isinstance(raw, dict):
            raise ValueError("expected an object")
        unknown = sorted(set(raw) - SCHEDULE_KEYS)
        if unknown:
            raise ValueError(f"unknown keys {unknown}")
        return schedule_from_dict(raw, domain)


def _train(cfg: Config, seed: int, workers: int) -> Job:
    data_path, ds = _load_input_dataset(cfg, "dataset")
    sched = _schedule(cfg, ds.domain)
    with cfg.building("loss"):
        spec = LossSpec(cfg.get("loss", "rescaled_dsm", str), sched)
    arch = _dataclass_from(cfg.section("model"), fno.FnoConfig)
    if arch.dims != ds.domain.dims:
        raise ConfigError("model.dims", f"dataset is {ds.domain.dims}D")
    if arch.output_scaling == "inv_sigma" and sched.kind != NCSN:
        raise ConfigError("model.output_scaling", "inv_sigma needs an NCSN schedule")
    tcfg = _dataclass_from(cfg.section("train"), TrainConfig, skip=("seed", "workers"), seed=seed, workers=workers)
    if ds.resolution < arch.min_resolution:
        raise ConfigError("model.modes", f"dataset resolution {ds.resolution} is below 2*modes")

    def run(out: Path) -> dict:
        model = fno.init(arch, np.random.default_rng([seed, 1]))
        model, history = train(ds, spec, model, tcfg, history_path=out / "loss_history.csv")
        fno.save_model(model, out / "model.ddom")
        return {"final_loss": history[-1][1]}

    resolved = {"dataset": str(data_path), "loss": spec.to_dict(), "model": asdict(arch),
                "train": {k: v for k, v in asdict(tcfg).items() if k != "workers"}}
    return Job(resolved, {"dataset": data_path}, run)


def _model_and_schedule(cfg: Config, domain: DomainSpec | None = None):
    model_path = _input_path(cfg, "model")
    with cfg.building("model"):
        model = fno.load_model(model_path)
    raw = cfg.get("schedule")
    loss_kind = cfg.get("loss", None, str)
    if raw is None:
        # fall back to the training run's manifest next to the model file
        manifest = model_path.parent / "manifest.json"
        if not manifest.is_file():
            raise ConfigError("schedule", "missing, and no training manifest next to the model")
        trained = json.loads(manifest.read_text())["config"]["loss"]
        raw, loss_kind = trained["schedule"], loss_kind or trained["kind"]
    with cfg.building("schedule"):
        sched = schedule_from_dict(raw, domain)
    loss_kind = loss_kind or "rescaled_dsm"
    if loss_kind not in LOSS_OUTPUT:
        raise ConfigError("loss", f"unknown loss kind {loss_kind!r}")
    with cfg.building("loss"):
        score = ModelScore.for_loss(model, sched, loss_kind)
    return model_path, model, sched, loss_kind, score


def _sample(cfg: Config, seed: int, workers: int) -> Job:
    model_path, model, sched, loss_kind, score = _model_and_schedule(cfg)
    n = cfg.get("resolution", 64, int)
    chains = cfg.get("chains", 512, int)
    M = cfg.get("M", 200, int)
    eps = cfg.get("epsilon", 2e-5, float)
    with cfg.building("resolution"):
        check_resolution(n)
        if n < model.cfg.min_resolution:
            raise ValueError(f"below the model's 2*modes = {model.cfg.min_resolution}")
    if sched.kind == "ncsn":
        with cfg.building("sampler"):
            scfg = SamplerConfig(sched, M=M, epsilon=eps, seed=seed, chains=chains)
    elif chains < 1:
        raise ConfigError("chains", "must be positive")

    def run(out: Path) -> dict:
        if sched.kind == "ncsn":
            values = run_chains(score, scfg, n, workers=workers)
        else:
            values = ddpm_sample(score, sched, np.random.default_rng(seed), n, chains)
        save_dataset(Dataset(sched.domain, n, values, {"seed": seed, "model_sha256": _sha256(model_path)}),
                     out / "samples.ddof")
        return {}

    resolved = {"model": str(model_path), "loss": loss_kind, "schedule": sched.to_dict(), "resolution": n,
                "chains": chains, "M": M, "epsilon": eps}
    return Job(resolved, {"model": model_path}, run)


def _matched(samples: Dataset, data: Dataset, key: str) -> Dataset:
    if samples.domain != data.domain:
        raise ConfigError(key, "samples and data live on different domains")
    if data.resolution < samples.resolution:
        raise ConfigError(key, f"data resolution {data.resolution} is below the samples' {samples.resolution}")
    return data.resampled(samples.resolution)


def _eval_spectrum(cfg: Config, seed: int, workers: int) -> Job:
    s_path, samples = _load_input_dataset(cfg, "samples")
    d_path, data = _load_input_dataset(cfg, "data")
    data = _matched(samples, data, "data")
    mean = cfg.get("mean", None, str)
    if mean is not None and mean not in MEANS:
        raise ConfigError("mean", f"unknown mean {mean!r}")
    if samples.count == 0 or data.count == 0:
        raise ConfigError("samples", "empty dataset")

    def run(out: Path) -> dict:
        k, s_model = average_spectrum(samples)
        _, s_data = average_spectrum(data)
        write_spectrum_csv(out / "spectrum_samples.csv", k, s_model)
        write_spectrum_csv(out / "spectrum_data.csv", k, s_data)
        rows = [("sup_error", spectrum_sup_error(samples, data))]
        if mean is not None:
            f1 = GridFunction.from_callable(samples.domain, samples.resolution, MEANS[mean])
            rows.append(("mode_balance", mode_balance(samples, f1)))
        write_rows(out / "metrics.csv", ["metric", "value"], rows)
        return {}

    resolved = {"samples": str(s_path), "data": str(d_path), "mean": mean}
    return Job(resolved, {"samples": s_path, "data": d_path}, run)


def _eval_turbulence(cfg: Config, seed: int, workers: int) -> Job:
    s_path, samples = _load_input_dataset(cfg, "samples")
    d_path, data = _load_input_dataset(cfg, "data")
    data = _matched(samples, data, "data")
    bins = cfg.get("bins", 64, int)
    if not samples.domain.periodic or samples.domain.dims != 2:
        raise ConfigError("samples", "turbulence statistics need 2D periodic vorticity")
    if bins < 1:
        raise ConfigError("bins", "must be positive")

    def run(out: Path) -> dict:
        sm, sd = compare_turbulence(samples, data, bins)
        write_rows(out / "energy_spectrum.csv", ["k", "samples", "data"],
                   zip(sm.k.tolist(), sm.energy_spectrum, sd.energy_spectrum))
        write_rows(out / "value_density.csv", ["lo", "hi", "samples", "data"],
                   zip(sm.value_edges[:-1], sm.value_edges[1:], sm.value_density, sd.value_density))
        write_rows(out / "energy_density.csv", ["lo", "hi", "samples", "data"],
                   zip(sm.energy_edges[:-1], sm.energy_edges[1:], sm.energy_density, sd.energy_density))
        return {"bins": bins, "binning": "uniform over pooled min/max"}

    resolved = {"samples": str(s_path), "data": str(d_path), "bins": bins}
    return Job(resolved, {"samples": s_path, "data": d_path}, run)


def _exp_invariance(cfg: Config, seed: int, workers: int) -> Job:
    d_path, data = _load_input_dataset(cfg, "data")
    protocol = cfg.get("protocol", "fixed", str)
    inputs = {"data": d_path}
    if protocol == "fixed":
        # one trained model sampled at every resolution
        model_path, model, sched, loss_kind, score = _model_and_schedule(cfg, data.domain)
        arch = model.cfg
        inputs["model"] = model_path
        resolved = {"model": str(model_path), "loss": loss_kind}
    elif protocol == "retrain":
        # a fresh model trained on the data subsampled to each resolution
        sched = _schedule(cfg, data.domain)
        with cfg.building("loss"):
            LossSpec("rescaled_dsm", sched)
        arch = _dataclass_from(cfg.section("architecture"), fno.FnoConfig)
        tcfg = _dataclass_from(cfg.section("train"), TrainConfig, skip=("seed", "workers"), seed=seed,
                               workers=workers)
        resolved = {"architecture": asdict(arch), "loss": "rescaled_dsm",
                    "train": {k: v for k, v in asdict(tcfg).items() if k != "workers"}}
    else:
        raise ConfigError("protocol", f"expected 'fixed' or 'retrain', got {protocol!r}")
    with cfg.building("resolutions"):
        resolutions = [int(n) for n in cfg.get("resolutions", [64, 128, 256, 512])]
        if not resolutions:
            raise ValueError("empty list")
        low = [n for n in resolutions if n < arch.min_resolution]
        if low:
            raise ValueError(f"resolutions {low} are below the model's 2*modes = {arch.min_resolution}")
        high = [n for n in resolutions if n > data.resolution]
        if high:
            raise ValueError(f"resolutions {high} exceed the data resolution {data.resolution}")
        for n in resolutions:
            check_resolution(n)
    mean = cfg.get("mean", None, str)
    if mean is not None and mean not in MEANS:
        raise ConfigError("mean", f"unknown mean {mean!r}")
    with cfg.building("sampler"):
        scfg = SamplerConfig(sched, M=cfg.get("M", 200, int), epsilon=cfg.get("epsilon", 2e-5, float), seed=seed,
                             chains=cfg.get("chains", 512, int))

    def run(out: Path) -> dict:
        if protocol == "fixed":
            rep = invariance_report(score, scfg, data, resolutions, workers=workers)
        else:
            rep = retrained_report(arch, tcfg, scfg, data, resolutions, init_seed=seed + 1, workers=workers)
            for n, m in rep.extra["models"].items():
                fno.save_model(m, out / f"model_{n}.ddom")
        rep.write_csv(out / "invariance.csv")
        if mean is not None:
            rows = []
            for n in resolutions:
                f1 = GridFunction.from_callable(data.domain, n, MEANS[mean])
                rows.append((n, mode_balance(rep.extra["samples"][n], f1)))
            write_rows(out / "mode_balance.csv", ["resolution", "mode_balance"], rows)
        return {"ratio": rep.ratio}

    resolved.update({"data": str(d_path), "protocol": protocol, "schedule": sched.to_dict(),
                     "resolutions": resolutions, "chains": scfg.chains, "M": scfg.M, "epsilon": scfg.epsilon,
                     "mean": mean})
    return Job(resolved, inputs, run)


def _exp_noise_regularity(cfg: Config, seed: int, workers: int) -> Job:
    ecfg = _dataclass_from(cfg, NoiseRegularityConfig, skip=("seed", "workers"), seed=seed, workers=workers)

    def run(out: Path) -> dict:
        rows = noise_regularity_experiment(ecfg, log=lambda m: print(m, file=sys.stderr))
        write_rows(out / "noise_regularity.csv", ["resolution", "plain_test_error", "precond_test_error"], rows)
        return {}

    return Job({k: v for k, v in asdict(ecfg).items() if k != "workers"}, {}, run)


def _exp_smoothing(cfg: Config, seed: int, workers: int) -> Job:
    ecfg = _dataclass_from(cfg, SmoothingExperimentConfig, skip=("seed", "workers"), seed=seed, workers=workers)

    def run(out: Path) -> dict:
        rows = smoothing_experiment(ecfg, log=lambda m: print(m, file=sys.stderr))
        write_rows(out / "smoothing.csv", ["condition", "resolution", "sup_error", "mode_balance",
                                           "containment_ratio"], rows)
        return {}

    return Job({k: v for k, v in asdict(ecfg).items() if k != "workers"}, {}, run)


COMMANDS: dict[str, Callable[[Config, int, int], Job]] = {
    "gen-gm": _gen_gm,
    "gen-ns": _gen_ns,
    "train": _train,
    "sample": _sample,
    "eval-spectrum": _eval_spectrum,
    "eval-turbulence": _eval_turbulence,
    "exp-invariance": _exp_invariance,
    "exp-noise-regularity": _exp_noise_regularity,
    "exp-smoothing": _exp_smoothing,
}


# -- driver ------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddo", description="Function-space denoising diffusion toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config's seed (default 0)")
    p.add_argument("--workers", type=int, default=1, help="threads for data-parallel sections")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return p


def _read_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"malformed JSON: {exc}") from exc


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _execute(args) -> None:
    raw = _read_config(args.config)
    cfg = Config(raw)
    version = cfg.get("version", CONFIG_VERSION, int)
    if version != CONFIG_VERSION:
        raise ConfigError("version", f"unsupported config version {version}")
    cfg_seed = cfg.get("seed", 0, int)
    seed = cfg_seed if args.seed is None else args.seed
    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    job = COMMANDS[args.command](cfg, seed, args.workers)
    cfg.finish()

    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ConfigError("--out", f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not args.force:
        raise ConfigError("--out", f"{out} is not empty (use --force to overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".ddo-staging-", dir=out.parent))
    try:
        extra = job.run(staging)
        outputs = {p.name: _sha256(p) for p in sorted(staging.iterdir())}
        manifest = {
            "command": args.command,
            "config_version": CONFIG_VERSION,
            "package_version": __version__,
            "seed": seed,
            "config": job.resolved,
            "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in sorted(job.inputs.items())},
            "outputs": outputs,
            "results": extra,
        }
        (staging / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
        out.mkdir(exist_ok=True)
        for p in sorted(staging.iterdir()):
            p.replace(out / p.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        _execute(args)
    except ConfigError as exc:
        print(f"ddo {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"ddo {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
