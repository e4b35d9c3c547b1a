"""Compiled vs numpy kernels on the reference network.

    python3 benchmarks/bench_kernels.py [--images N] [--repeat R] [--model toy]
"""
import argparse

from binfer import bench, kernels
from binfer.formats import reference_spec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="cifar_bcnn",
                    help="shipped model name (cifar_bcnn or toy)")
    ap.add_argument("--images", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    spec = reference_spec(args.model)
    backends = kernels.available()
    if len(backends) == 1:
        print("compiled extension not built; timing the numpy fallback only")
    timings = bench.layer_timings(spec, backends, repeat=args.repeat)
    e2e = bench.end_to_end(spec, args.images, backends)
    print(f"network {args.model}, best of {args.repeat} per layer")
    print(bench.format_report(timings, e2e))


if __name__ == "__main__":
    main()
