"""Transmission spectrum and CPD of the empty transition section.

Run from the repository root:

    python3 demos/empty_design_spectrum.py --h-mm 2
"""
import argparse

import numpy as np

from acoustopt.geometry import build_mesh, standard_domain
from acoustopt.modes import count_propagating, mode_basis
from acoustopt.objective import Evaluator, reference_frequencies
from acoustopt.waves import cpd, evaluation_grid, performance_spectrum


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h-mm", type=float, default=2.0)
    ap.add_argument("--step-hz", type=float, default=100.0)
    args = ap.parse_args()

    mesh = build_mesh(standard_domain(args.h_mm * 1e-3))
    print(f"mesh: {mesh.n_dof} dofs, {mesh.n_design} design elements")
    left, right = mode_basis(mesh, "left"), mode_basis(mesh, "right")
    for f in (4000.0, 8000.0, 12000.0, 16000.0):
        print(f"{f / 1e3:5.1f} kHz: propagating modes left {count_propagating(f, left, mesh.spec.c)}, right {count_propagating(f, right, mesh.spec.c)}")

    ev = Evaluator.create(mesh)
    spec = performance_spectrum(ev.problem, ev.problem.full_alpha(), evaluation_grid(step=args.step_hz))
    curve = cpd(spec)
    print(f"mean performance {np.mean(spec.performance):.4f}, min {np.min(spec.performance):.4f}")
    print(f"CPD area {curve.area():.4f} (equals 1 - mean performance)")
    J = ev.mean_loss(np.ones(ev.n_design), reference_frequencies())
    print(f"150-frequency mean loss of the empty design: {J:.5f}")


if __name__ == "__main__":
    main()
