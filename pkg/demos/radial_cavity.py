"""A single cavity at the center of the unit disk.

The flow construction reproduces the radial stretch
``y = sqrt(|x|^2 + L^2) x / |x|`` with ``pi L^2`` equal to the
cavity area, and the energy grows like ``v |log eps|``.

Run with ``python demos/radial_cavity.py``.
"""
import math

import numpy as np

from cavflow import CavitationConfig, build_evolution, energy_sweep
from cavflow.cavity import CavitationMap
from cavflow.flow import FlowOptions


def main():
    config = CavitationConfig(1.0, [0j], [math.pi])
    evo = build_evolution(config)
    print(f"lambda = {evo.lam:.6f}")

    cmap = CavitationMap(evo, 1e-3, FlowOptions(steps=200))
    x = np.array([0.002, 0.05j, -0.3 + 0.1j, 0.7 - 0.6j])
    y, G = cmap.evaluate(x)
    exact = np.sqrt(np.abs(x) ** 2 + 1.0) * x / np.abs(x)
    for xi, yi, ei, d in zip(x, y, exact, np.linalg.det(G)):
        print(f"x = {xi:.3f}  y = {yi:.6f}  error {abs(yi - ei):.1e}  det {d:.8f}")

    report, _ = energy_sweep(evo, [1e-2, 3e-3, 1e-3, 3e-4], FlowOptions(steps=200), points=20000)
    for row in report.rows():
        print("  ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


if __name__ == "__main__":
    main()
