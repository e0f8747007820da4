"""Compare the compiled and numpy RK4 ensemble kernels.

    python3 benchmarks/bench_kernels.py [--steps 200] [--members 1,64,256] [--threads 1]
"""
import argparse

from pullback_lab.bench import compare_backends, format_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--members", default="1,64,256")
    ap.add_argument("--modes", type=int, default=32)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    a = ap.parse_args()
    rows = compare_backends([int(x) for x in a.members.split(",")], a.steps, a.modes,
                            a.threads, a.repeats)
    print(format_rows(rows))


if __name__ == "__main__":
    main()
