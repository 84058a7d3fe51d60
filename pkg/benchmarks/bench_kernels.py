"""Compare the compiled and numpy link-budget kernels on desk-scale inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--batch P]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from aeris import kernels
from aeris.config import load_config
from aeris.phaseopt import PhaseProblem, phase_levels


def _inputs(batch: int, seed: int = 0):
    cfg = load_config("desk")
    scenario = cfg.build_scenario()
    rng = np.random.default_rng(seed)
    G = scenario.area.cols * scenario.area.rows
    placements = [tuple(int(c) for c in rng.choice(G, size=len(scenario.uavs), replace=False)) for _ in range(20)]
    problem = PhaseProblem.from_placements(scenario, cfg.channel, placements)
    direct, coef = problem.direct, problem.coef
    R, M = coef.shape[2], coef.shape[4]
    levels = phase_levels(scenario.ris[0].phase_bits)
    phases = levels[rng.integers(0, len(levels), size=(batch, R, M))]
    return cfg.channel, direct, coef, phases, problem.thresholds


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=30, help="phase rows per call (one PSO iteration)")
    args = ap.parse_args(argv)

    params, direct, coef, phases, thresholds = _inputs(args.batch)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"snapshots={direct.shape[0]} uavs={direct.shape[1]} ues={direct.shape[2]} "
          f"ris={coef.shape[2]} elements={coef.shape[4]} batch={args.batch}")
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy fallback only")

    cases = {
        "best_snr": lambda b: kernels.best_snr(direct, coef, phases[0], params.snr_scale, backend=b),
        "rate_sum_batch": lambda b: kernels.rate_sum_batch(direct, coef, phases, params.snr_scale,
                                                           params.bandwidth_hz, None, thresholds, backend=b),
    }
    print(f"{'kernel':<16}{'backend':<9}{'ms/call':>10}{'speedup':>9}")
    for name, fn in cases.items():
        times = {}
        for b in backends:
            fn(b)  # warm caches
            n = max(1, int(0.2 / max(1e-6, timeit.timeit(lambda: fn(b), number=1))))
            times[b] = min(timeit.repeat(lambda: fn(b), number=n, repeat=args.repeat)) / n
        for b in backends:
            print(f"{name:<16}{b:<9}{1e3 * times[b]:>10.3f}{times['python'] / times[b]:>8.1f}x")
        if "cython" in times:
            ref = fn("python")
            got = fn("cython")
            ref = ref if isinstance(ref, tuple) else (ref,)
            got = got if isinstance(got, tuple) else (got,)
            err = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(g, float)) / (1.0 + np.abs(a))))
                      for a, g in zip(ref, got))
            print(f"{'':<16}max relative difference {err:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
