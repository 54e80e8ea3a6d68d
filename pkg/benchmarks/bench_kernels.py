"""Time the compiled score/gradient kernels against the numpy fallback.

Runs every kernel pair on identical random batches, checks the two
backends agree, then times one full training run per backend.  Invoke
from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --batch 16384 --rank 64
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

import relrank._kernels as kernels
from relrank._kernels import _numpy as python_backend
from relrank.kg import TripleCountTable, make_split
from relrank.models import init_model
from relrank.training import TrainConfig, train


def best_ms(fn, repeats: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return 1000.0 * min(timer.repeat(repeat=repeats, number=number)) / number


def kernel_cases(args, rng):
    """(name, score call, grad call, grad arrays) per model kind, with the
    backend module left as a parameter."""
    s = rng.integers(0, args.entities, size=args.batch)
    p = rng.integers(0, args.relations, size=args.batch)
    o = rng.integers(0, args.entities, size=args.batch)
    coef = rng.normal(size=args.batch)
    cases = []
    for kind in ("distmult", "complex", "multiway", "rescal"):
        model = init_model(
            kind, args.entities, args.relations, rank=args.rank,
            hidden_dim=args.rank, seed=0,
        )
        blocks = model.param_blocks()
        params = tuple(blocks.values())
        grads = tuple(np.zeros_like(b) for b in params)

        def score_call(impl, params=params, kind=kind):
            return getattr(impl, f"scores_{kind}")(*params, s, p, o)

        def grad_call(impl, params=params, grads=grads, kind=kind):
            for g in grads:
                g.fill(0.0)
            getattr(impl, f"grads_{kind}")(*params, s, p, o, coef, *grads)
            return grads

        cases.append((kind, score_call, grad_call))
    return cases


def check_agreement(score_call, grad_call) -> float:
    worst = float(
        np.max(np.abs(score_call(python_backend) - score_call(kernels.impl)))
    )
    got_py = [g.copy() for g in grad_call(python_backend)]
    got_c = grad_call(kernels.impl)
    for a, b in zip(got_py, got_c):
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def bench_kernels(args) -> None:
    rng = np.random.default_rng(7)
    row = "{:<10} {:<7} {:>12.3f} {:>12.3f} {:>9.2f}x {:>12.2e}"
    print(f"{'kind':<10} {'op':<7} {'python ms':>12} {'compiled ms':>12} "
          f"{'speedup':>10} {'max |diff|':>12}")
    for kind, score_call, grad_call in kernel_cases(args, rng):
        diff = check_agreement(score_call, grad_call)
        for op, call in (("scores", score_call), ("grads", grad_call)):
            t_py = best_ms(lambda: call(python_backend), args.repeats)
            t_c = best_ms(lambda: call(kernels.impl), args.repeats)
            print(row.format(kind, op, t_py, t_c, t_py / t_c, diff))


def bench_training(args) -> None:
    n_ent, n_rel = 50, 8
    rng = np.random.default_rng(1)
    counts = {
        (int(s), int(p), int(o)): int(rng.integers(1, 20))
        for s, p, o in rng.integers(0, (n_ent, n_rel, n_ent), size=(2000, 3))
    }
    table = TripleCountTable.build(counts, n_ent, n_rel)
    split = make_split(table, fraction=0.1, seed=0)
    config = TrainConfig(epochs=50, batch_size=256, negative_ratio=8.0, seed=0)

    print(f"\nfull train(), {table.n_nonzero} nonzero triples, "
          f"{config.epochs} epochs:")
    original = kernels.impl
    try:
        for label, impl in (("python", python_backend), ("compiled", original)):
            if label == "compiled" and original is python_backend:
                print("  compiled backend not built; skipping")
                continue
            kernels.impl = impl
            model = init_model("distmult", n_ent, n_rel, rank=8, seed=0)
            started = timeit.default_timer()
            train(model, split, config)
            print(f"  {label:<9} {timeit.default_timer() - started:8.2f} s")
    finally:
        kernels.impl = original


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=8192)
    parser.add_argument("--entities", type=int, default=2000)
    parser.add_argument("--relations", type=int, default=70)
    parser.add_argument("--rank", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)

    print(f"active backend: {kernels.backend_name}  "
          f"(batch={args.batch}, |E|={args.entities}, |R|={args.relations}, "
          f"d={args.rank})")
    if kernels.backend_name != "compiled":
        print("note: compiled backend unavailable, timing python against itself")
    bench_kernels(args)
    bench_training(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
