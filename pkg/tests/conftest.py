"""Shared test fixtures: random problem generators and an independent IDX
byte writer used to exercise the dataset loader."""

from __future__ import annotations

import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from milptrain.branch_bound import MilpProblem
from milptrain.simplex import LpProblem

try:
    from hypothesis import settings

    settings.register_profile("solver", deadline=None, max_examples=40)
    settings.load_profile("solver")
except ImportError:
    pass


def random_boxed_lp(rng: np.random.Generator, n: int, m: int) -> LpProblem:
    """Random LP with finite box bounds on every variable and mixed-relation
    rows; roughly half the instances are feasible."""
    c = np.round(rng.uniform(-3, 3, n), 3)
    A = np.round(rng.uniform(-2, 2, (m, n)), 3)
    A[rng.uniform(size=(m, n)) < 0.25] = 0.0
    lo = np.round(rng.uniform(-3, 0, n), 3)
    hi = lo + np.round(rng.uniform(0.5, 4, n), 3)
    rels = []
    b = np.empty(m)
    interior = (lo + hi) / 2 + rng.uniform(-0.3, 0.3, n) * (hi - lo)
    for i in range(m):
        r = rng.choice(["<=", ">=", "="])
        rels.append(r)
        anchor = float(A[i] @ interior)
        slackish = float(rng.uniform(-1.0, 1.5))
        if r == "<=":
            b[i] = anchor + slackish
        elif r == ">=":
            b[i] = anchor - slackish
        else:
            b[i] = anchor + float(rng.uniform(-0.5, 0.5))
        b[i] = round(b[i], 3)
    return LpProblem(
        objective=c,
        constraint_matrix=A,
        relations=tuple(rels),
        rhs=b,
        lower=lo,
        upper=hi,
    )


def random_boxed_milp(
    rng: np.random.Generator, n_cont: int, n_bin: int, m: int
) -> MilpProblem:
    """Random MILP: continuous boxed variables plus 0/1 variables coupled
    through dense rows."""
    n = n_cont + n_bin
    c = np.round(rng.uniform(-3, 3, n), 3)
    A = np.round(rng.uniform(-2, 2, (m, n)), 3)
    A[rng.uniform(size=(m, n)) < 0.2] = 0.0
    lo = np.concatenate([np.round(rng.uniform(-2, 0, n_cont), 3), np.zeros(n_bin)])
    hi = np.concatenate(
        [lo[:n_cont] + np.round(rng.uniform(0.5, 3, n_cont), 3), np.ones(n_bin)]
    )
    rels = []
    b = np.empty(m)
    mid = (lo + hi) / 2
    for i in range(m):
        r = rng.choice(["<=", ">=", "="], p=[0.45, 0.45, 0.1])
        rels.append(r)
        anchor = float(A[i] @ mid)
        if r == "<=":
            b[i] = anchor + float(rng.uniform(-0.5, 2.0))
        elif r == ">=":
            b[i] = anchor - float(rng.uniform(-0.5, 2.0))
        else:
            b[i] = anchor + float(rng.uniform(-0.3, 0.3))
        b[i] = round(b[i], 3)
    base = LpProblem(
        objective=c,
        constraint_matrix=A,
        relations=tuple(rels),
        rhs=b,
        lower=lo,
        upper=hi,
    )
    return MilpProblem(base=base, binary_vars=frozenset(range(n_cont, n)))


def idx_image_bytes(pixels: np.ndarray) -> bytes:
    """Hand-rolled IDX image serialization (independent of the package)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    header = struct.pack(">I", 0x00000803)
    header += struct.pack(">I", count)
    header += struct.pack(">I", rows)
    header += struct.pack(">I", cols)
    body = b"".join(
        bytes(int(pixels[k, r, c]) for c in range(cols))
        for k in range(count)
        for r in range(rows)
    )
    return header + body


def idx_label_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    header = struct.pack(">I", 0x00000801) + struct.pack(">I", labels.size)
    return header + bytes(int(v) for v in labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20_240_817)
