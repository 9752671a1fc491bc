#!/usr/bin/env python3
"""Build psi for each catalog function and print a verification table.

Usage: python3 scripts/catalog_table.py [--samples N] [--json out.json]
"""
import argparse
import json
import time

from nocrit import catalog
from nocrit.pipeline import build_psi, verify
from nocrit.space import Ball, SparseVec

CASES = [
    ("constant", {"c": 1.0}, 2, 0.1, 1.0),
    ("linear", {"a": [1.0]}, 1, 0.5, 1.0),
    ("linear", {"a": [1.0, 0.5]}, 2, 0.5, 0.15),
    ("quadratic", {"c": [0.0]}, 1, 0.1, 0.5),
    ("oscillatory", {"a": [3.0]}, 1, 0.5, 0.3),
    ("custom", {"b0": 0.5, "b": [1.0], "q": [0.5]}, 1, 0.1, 0.15),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()
    rows = []
    print(f"{'function':<12}{'d':>2}{'eps':>6}{'R':>6}{'balls':>7}{'nets':>6}{'sup|psi-f|':>12}{'min|grad|':>11}{'secs':>7}  pass")
    for name, params, d, eps, R in CASES:
        t0 = time.perf_counter()
        h = build_psi(catalog.from_spec({"id": name, **params}, d), eps, Ball(SparseVec.zero(), R), d)
        rep = verify(h, args.samples)
        secs = time.perf_counter() - t0
        print(
            f"{name:<12}{d:>2}{eps:>6}{R:>6}{rep.centers:>7}{rep.clusters:>6}"
            f"{rep.sup_error:>12.4f}{rep.min_gradient_norm:>11.2e}{secs:>7.1f}  {rep.all_pass}"
        )
        rows.append({"function": name, "params": params, "ambient_dim": d, "eps": eps, "radius": R, **rep.to_dict()})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, default=str)


if __name__ == "__main__":
    main()
