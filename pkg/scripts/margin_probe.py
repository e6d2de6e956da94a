"""Per-group minimum margins of ERM and Q-Diversity on the default generator.

    python3 scripts/margin_probe.py --seeds 0 1 2
"""

import argparse

from qdiversity.datasets import GeneratorSpec
from qdiversity.dro import TrainConfig, train
from qdiversity.harness import margin_probe
from qdiversity.harness.runner import train_data


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = p.parse_args()
    gen = GeneratorSpec()
    print("seed  method  majority  minority")
    for s in args.seeds:
        data = train_data(gen, s)
        for method in ("erm", "qdiv"):
            theta = train(data, TrainConfig(method=method, seed=s)).theta
            maj, mino = margin_probe(theta, data)
            print(f"{s:4d}  {method:6s}  {maj:8.4f}  {mino:8.4f}")


if __name__ == "__main__":
    main()
