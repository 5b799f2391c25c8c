"""FFN latency share across widths, and pre/post throughput over a theta sweep.

    python3 scripts/latency_profile.py --depth 2 --batch 16 --iters 20

Full-depth runs are possible (--depth 12) but take tens of minutes on one core.
"""

import argparse

from ffnrep.bench import ffn_latency_fractions, run_profile


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--preset", default="deit-base")
    ap.add_argument("--thetas", type=float, nargs="*", default=[0.25, 0.5, 0.75, 1.0])
    args = ap.parse_args()

    shares = ffn_latency_fractions(batch=args.batch, iters=args.iters, depth=args.depth, threads=args.threads)
    print("vanilla FFN share of per-component time")
    for name, v in shares.items():
        print(f"  {name:<11} {100 * v:5.1f}%")

    print(f"\n{args.preset} (depth {args.depth}, batch {args.batch}): train form vs condensed form")
    print(f"  {'theta':>5} {'pre img/s':>10} {'post img/s':>11} {'speedup':>8} {'ffn ms pre':>11} {'ffn ms post':>12}")
    for theta in args.thetas:
        r = run_profile(args.preset, theta, batch=args.batch, iters=args.iters, warmup=3, depth=args.depth, threads=args.threads)
        print(
            f"  {theta:>5} {r.images_per_second_pre:>10.1f} {r.images_per_second_post:>11.1f} {r.speedup_percent:>+7.1f}% "
            f"{r.per_component_ms['ffn']:>11.1f} {r.per_component_ms_post['ffn']:>12.1f}"
        )
    print(f"\n{r.environment_note}")


if __name__ == "__main__":
    main()
