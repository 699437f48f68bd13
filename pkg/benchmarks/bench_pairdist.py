"""Wall-time comparison of the two pair-reduction backends.

The compiled extension and the numpy fallback are imported directly,
bypassing the import-time selection, so one process can time both on
identical inputs. Every case first checks that the backends agree to
double precision, then reports best-of-N wall times.

    python3 benchmarks/bench_pairdist.py
    python3 benchmarks/bench_pairdist.py --full-sizes 1000 4000 --repeats 5
"""

import argparse
import time

import numpy as np

from driftlens._kernels import _pairdist_np

try:
    from driftlens._kernels import _pairdist
except ImportError:
    _pairdist = None


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(label: str, pairs: int, call_np, call_ext, repeats: int) -> dict:
    reference = call_np()
    row = {"case": label, "pairs": pairs, "numpy": best_of(call_np, repeats)}
    if call_ext is not None:
        value = call_ext()
        if abs(value - reference) > 1e-9 * max(1.0, abs(reference)):
            raise SystemExit(f"{label}: backends disagree ({value} vs {reference})")
        row["compiled"] = best_of(call_ext, repeats)
    return row


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="pair-distance kernel timing, compiled vs numpy"
    )
    parser.add_argument("--full-sizes", type=int, nargs="+", default=[500, 1500, 3000])
    parser.add_argument("--sampled-size", type=int, default=20_000)
    parser.add_argument("--samples", type=int, default=100_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    print(
        "compiled extension:",
        "available" if _pairdist is not None else "NOT built (numpy only)",
    )
    rng = np.random.default_rng(args.seed)
    rows = []

    for n in args.full_sizes:
        before = rng.normal(size=(n, args.dim))
        after = before + 0.1 * rng.normal(size=(n, args.dim))
        rows.append(
            bench(
                f"full n={n} dim={args.dim}",
                n * (n - 1) // 2,
                lambda b=before, a=after: _pairdist_np.pair_absdiff_mean_full(b, a),
                None
                if _pairdist is None
                else (lambda b=before, a=after: _pairdist.pair_absdiff_mean_full(b, a)),
                args.repeats,
            )
        )

    n = args.sampled_size
    before = rng.normal(size=(n, args.dim))
    after = before + 0.1 * rng.normal(size=(n, args.dim))
    ii = rng.integers(0, n - 1, size=args.samples)
    jj = rng.integers(ii + 1, n)  # elementwise low bound keeps i < j
    rows.append(
        bench(
            f"sampled n={n} k={args.samples} dim={args.dim}",
            args.samples,
            lambda: _pairdist_np.pair_absdiff_mean(before, after, ii, jj),
            None
            if _pairdist is None
            else (lambda: _pairdist.pair_absdiff_mean(before, after, ii, jj)),
            args.repeats,
        )
    )

    width = max(len(r["case"]) for r in rows)
    header = f"{'case'.ljust(width)}  {'pairs':>12}  {'numpy':>11}  {'compiled':>11}  {'speedup':>7}"
    print(header)
    print("-" * len(header))
    for r in rows:
        numpy_ms = f"{r['numpy'] * 1e3:8.2f} ms"
        if "compiled" in r:
            compiled_ms = f"{r['compiled'] * 1e3:8.2f} ms"
            speedup = f"{r['numpy'] / r['compiled']:6.1f}x"
        else:
            compiled_ms, speedup = "-".rjust(11), "-".rjust(7)
        print(
            f"{r['case'].ljust(width)}  {r['pairs']:>12,}  {numpy_ms}  {compiled_ms}  {speedup}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
