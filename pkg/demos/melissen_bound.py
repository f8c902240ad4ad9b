"""Eleven equal cavities in the best known packing.

The packing density limits how far the holes can grow before two of them,
or a hole and the outer circle, collide.

Run with ``python demos/melissen_bound.py``.
"""
from cavflow import check_attainable, sigma
from cavflow.packings import melissen_config


def main():
    config = melissen_config()
    s = sigma(config)
    print(f"packing density sigma = {s:.6f}")
    print(f"largest admissible stretch lambda* = {(1 / (1 - s)) ** 0.5:.6f}")
    print(check_attainable(config))


if __name__ == "__main__":
    main()
