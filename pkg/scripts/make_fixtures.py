#!/usr/bin/env python3
"""Regenerate the tiny MatrixMarket fixtures bundled under tests/data/."""

import pathlib

import numpy as np
import scipy.io
import scipy.sparse

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"


def banded(n=2000, half_width=4):
    rows, cols, vals = [], [], []
    for d in range(-half_width, half_width + 1):
        i = np.arange(max(0, -d), min(n, n - d))
        rows.append(i)
        cols.append(i + d)
        vals.append(np.full(len(i), 10.0 if d == 0 else -0.5))
    return scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def random_general(n=1500, density=0.004, seed=7):
    rng = np.random.default_rng(seed)
    m = scipy.sparse.random(n, n, density=density, random_state=rng, format="coo")
    # keep the diagonal populated so the matrix works as a symGS operand too
    d = scipy.sparse.eye(n, format="coo") * 12.0
    return (m + d).tocoo()


def identity(n=8000):
    return scipy.sparse.eye(n, format="coo")


def tiny_symmetric():
    # stored lower triangle only; readers must expand to full storage
    rows = np.array([0, 1, 2, 2, 3, 3])
    cols = np.array([0, 1, 0, 2, 1, 3])
    vals = np.array([4.0, 5.0, 1.5, 6.0, 2.5, 7.0])
    return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(4, 4))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(OUT / "banded_2000.mtx", banded(), symmetry="general")
    scipy.io.mmwrite(OUT / "random_1500.mtx", random_general(), symmetry="general")
    scipy.io.mmwrite(OUT / "identity_8000.mtx", identity(), symmetry="general")
    scipy.io.mmwrite(OUT / "tiny_sym.mtx", tiny_symmetric(), symmetry="symmetric")
    for f in sorted(OUT.glob("*.mtx")):
        print(f, f.stat().st_size, "bytes")


if __name__ == "__main__":
    main()
