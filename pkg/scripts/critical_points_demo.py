#!/usr/bin/env python3
"""Compare the critical points of the blended approximation phi with psi.

phi (before extraction) has isolated critical points, collected in the
cluster nets. After composing with the extraction maps, the gradient
of psi at those same points is bounded away from zero.
"""
from nocrit import catalog
from nocrit.pipeline import build_psi, eval_psi
from nocrit.space import Ball, SparseVec


def main():
    h = build_psi(catalog.linear([1.0, 0.5]), 0.5, Ball(SparseVec.zero(), 0.15), 2)
    print(f"{len(h.partition.atlas)} balls, {sum(len(c.points) for c in h.clusters)} critical points of phi")
    print(f"{'cluster':>7} {'|grad phi|':>11} {'|grad psi|':>11}")
    for n, cl in enumerate(h.clusters):
        for x in cl.points:
            gphi = h.partition.phi_jet(x).gradient.norm()
            gpsi = eval_psi(h, x).gradient.norm()
            print(f"{n:>7} {gphi:>11.2e} {gpsi:>11.2e}")


if __name__ == "__main__":
    main()
