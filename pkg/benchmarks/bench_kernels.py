"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Times each kernel on Fourier-layer shaped inputs, then a full forward/backward pass of
a small FNO with the module-level kernels swapped to each backend in turn.
"""

import argparse
import timeit

import numpy as np

from ddo import fno, kernels
from ddo.corruption import NoiseSchedule
from ddo.grf import MaternCovariance
from ddo.grid import DomainSpec
from ddo.training import LossSpec, batch_loss_and_grad


def _complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def kernel_cases(rng, B, W, K):
    x, w, g = _complex(rng, B, W, K), _complex(rng, W, W, K), _complex(rng, B, W, K)
    z, gy = rng.standard_normal((B, W, 4 * K)), rng.standard_normal((B, W, 4 * K))
    return {
        "spectral_mix": lambda m: m.spectral_mix(x, w),
        "spectral_mix_grad_input": lambda m: m.spectral_mix_grad_input(g, w),
        "spectral_mix_grad_weight": lambda m: m.spectral_mix_grad_weight(x, g),
        "gelu": lambda m: m.gelu(z),
        "gelu_grad": lambda m: m.gelu_grad(z, gy),
    }


def best_of(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat, number)) / number


def fno_step(backend, repeat, n=64, chains=64):
    mod = kernels.load_backend(backend)
    saved = {name: getattr(kernels, name) for name in kernels._NAMES}
    rng = np.random.default_rng(0)
    dom = DomainSpec.interval()
    noise = MaternCovariance(dom, 0.5, 0.1, 0.6)
    spec = LossSpec("rescaled_dsm", NoiseSchedule.ncsn(noise))
    model = fno.init(fno.FnoConfig(modes=16, width=32, layers=4), rng)
    u = MaternCovariance(dom, 3.0, 3.0, 3.0).sample_array(n, rng, chains)
    t = rng.integers(1, 11, chains)
    xi = noise.sample_array(n, rng, chains)
    try:
        for name in kernels._NAMES:
            setattr(kernels, name, getattr(mod, name))
        return best_of(lambda: batch_loss_and_grad(spec, model, u, t, None, xi), repeat)
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small shapes, for smoke runs")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available")
    shapes = [(8, 4, 8)] if args.quick else [(64, 32, 16), (256, 32, 16), (256, 32, 16 * 31)]
    print(f"{'kernel':<26}{'B,W,K':>14}" + "".join(f"{b:>12}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for B, W, K in shapes:
        cases = kernel_cases(np.random.default_rng(1), B, W, K)
        for name, fn in cases.items():
            times = [best_of(lambda: fn(kernels.load_backend(b)), args.repeat) for b in backends]
            row = f"{name:<26}{f'{B},{W},{K}':>14}" + "".join(f"{1e3 * s:>10.3f}ms" for s in times)
            if len(times) > 1:
                row += f"{times[1] / times[0]:>9.2f}x"
            print(row)
    n, chains = (32, 4) if args.quick else (64, 64)
    times = [fno_step(b, args.repeat, n, chains) for b in backends]
    row = f"{'fno loss+grad':<26}{f'n={n},B={chains}':>14}" + "".join(f"{1e3 * s:>10.3f}ms" for s in times)
    if len(times) > 1:
        row += f"{times[1] / times[0]:>9.2f}x"
    print(row)


if __name__ == "__main__":
    main()
