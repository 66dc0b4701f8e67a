"""Periodic shift operator on P1 finite elements.

All inner products between shifted hat functions are circulant matrices with
four nonzero bands, evaluated here in closed form.  For a shift
``p = q h + pt`` with integer cell offset ``q`` and fractional part
``pt in [0, h)``, the entry ``(k, l)`` of the mass-type Gram ``F(p)`` is

* ``(1/h^2) (2/3 (h-pt)^3 + pt (h-pt)^2 + pt h (h-pt) + pt^3/6)``  at ``l = k - q``,
* ``(1/(6 h^2)) (h-pt)^3``                                          at ``l = k - q + 1``,
* ``(1/h^2) ((h-pt)^3/6 - pt^3/3 + h^2 pt)``                        at ``l = k - q - 1``,
* ``pt^3 / (6 h^2)``                                                at ``l = k - q - 2``,

and zero otherwise.  ``G(p)`` is the derivative of ``F`` with respect to the
shift; because the shift semigroup is unitary with generator ``-d/dx``, the
two-path Grams reduce to ``M(p_i, p_j) = F(p_i - p_j)`` and
``N(p_i, p_j) = G(p_i - p_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .core import SpatialGrid, _frozen_array

__all__ = [
    "ShiftGram",
    "decompose_shift",
    "gram_F",
    "gram_G",
    "gram_M",
    "gram_N",
    "stiffness_gram",
    "apply_gram",
    "gram_to_dense",
    "dump_dense_csv",
    "shift_field",
    "eval_p1",
    "quadrature_inner_oracle",
    "quadrature_inner_dp_oracle",
]

# band slot d holds the entry at column l = k - q + BAND_OFFSETS[d]
BAND_OFFSETS = (-2, -1, 0, 1)


@dataclass(frozen=True, eq=False)
class ShiftGram:
    """Banded circulant Gram matrix.

    ``band`` holds the four values ``(b_{k-2}, b_{k-1}, b_k, b_{k+1})``: entry
    ``(k, l)`` equals ``band[d]`` when ``l == k - offset_q + BAND_OFFSETS[d]``
    modulo ``n``, and zero otherwise.
    """

    offset_q: int
    frac: float
    band: np.ndarray
    n: int
    h: float

    def __post_init__(self) -> None:
        band = _frozen_array(self.band)
        if band.shape != (4,):
            raise ValueError("band must hold exactly four values")
        object.__setattr__(self, "band", band)


def decompose_shift(p: float, grid: SpatialGrid) -> tuple[int, float]:
    """Split a shift into whole cells and a fractional rest, modulo the domain.

    Returns ``(q, frac)`` with ``p = q h + frac (mod L)``, ``frac in [0, h)``
    and ``q in {0, ..., n-1}``.
    """
    q, frac = _decompose_many(np.asarray(float(p)), grid)
    return int(q), float(frac)


# fractional parts closer to a cell boundary than this (relative to h) are
# snapped onto it: there the closed-form band polynomials only reproduce the
# boundary values up to rounding jitter, while the true change is O(frac^2)
_SNAP_REL = 1e-9


def _decompose_many(p: np.ndarray, grid: SpatialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`decompose_shift` for arrays of shifts."""
    L = grid.length
    h = grid.h
    pm = np.mod(p, L)
    pm = np.where(pm >= L, 0.0, pm)  # mod of tiny negatives can round up to L
    q = np.floor(pm / h).astype(np.int64)
    frac = pm - q * h
    over = frac >= (1.0 - _SNAP_REL) * h
    q = np.where(over, q + 1, q)
    frac = np.where(over | (frac < _SNAP_REL * h), 0.0, frac)
    frac = np.maximum(frac, 0.0)
    q = np.mod(q, grid.n)
    return q, frac


def _band_F(frac: np.ndarray, h: float) -> np.ndarray:
    """Closed-form F band values; ``frac`` broadcast to shape ``(..., 4)``."""
    pt = np.asarray(frac)
    r = h - pt
    diag = (2.0 / 3.0 * r**3 + pt * r**2 + pt * h * r + pt**3 / 6.0) / h**2
    sup = r**3 / (6.0 * h**2)
    sub = (r**3 / 6.0 - pt**3 / 3.0 + h**2 * pt) / h**2
    subsub = pt**3 / (6.0 * h**2)
    return np.stack([subsub, sub, diag, sup], axis=-1)


def _band_G(frac: np.ndarray, h: float) -> np.ndarray:
    """Closed-form G band values (derivative of the F band in the shift)."""
    pt = np.asarray(frac)
    r = h - pt
    diag = -(2.0 * pt * h - 1.5 * pt**2) / h**2
    sup = -(r**2) / (2.0 * h**2)
    sub = -(2.0 * pt**2 - 2.0 * h * pt - 0.5 * r**2) / h**2
    subsub = pt**2 / (2.0 * h**2)
    return np.stack([subsub, sub, diag, sup], axis=-1)


def gram_F(p: float, grid: SpatialGrid) -> ShiftGram:
    """Gram matrix ``<psi_k, T(p) psi_l>`` of the hat basis against its shift."""
    q, frac = decompose_shift(p, grid)
    return ShiftGram(q, frac, _band_F(frac, grid.h), grid.n, grid.h)


def gram_G(p: float, grid: SpatialGrid) -> ShiftGram:
    """Gram matrix ``<psi_k, d/dp T(p) psi_l>``; at cell boundaries the
    one-sided value from above is used."""
    q, frac = decompose_shift(p, grid)
    return ShiftGram(q, frac, _band_G(frac, grid.h), grid.n, grid.h)


def gram_M(p_i: float, p_j: float, grid: SpatialGrid) -> ShiftGram:
    """Two-path mass Gram ``<T(p_j) psi_k, T(p_i) psi_l>`` = ``F(p_i - p_j)``."""
    return gram_F(p_i - p_j, grid)


def gram_N(p_i: float, p_j: float, grid: SpatialGrid) -> ShiftGram:
    """Two-path derivative Gram ``<T(p_j) psi_k, d/dp_i T(p_i) psi_l>`` = ``G(p_i - p_j)``."""
    return gram_G(p_i - p_j, grid)


def stiffness_gram(grid: SpatialGrid) -> ShiftGram:
    """P1 stiffness matrix ``<psi_k', psi_l'>`` as a zero-offset band."""
    h = grid.h
    band = np.array([0.0, -1.0 / h, 2.0 / h, -1.0 / h])
    return ShiftGram(0, 0.0, band, grid.n, h)


def apply_gram(gram: ShiftGram, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with a banded circulant in O(n).

    ``v`` may also be a 2-D array of row vectors; the product is applied to
    the last axis.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != gram.n:
        raise ValueError(f"vector length {v.shape[-1]} does not match n={gram.n}")
    out = np.zeros_like(v)
    for d, delta in enumerate(BAND_OFFSETS):
        # (A v)_k = sum_d band[d] * v[(k - q + delta_d) mod n]
        out += gram.band[d] * np.roll(v, gram.offset_q - delta, axis=-1)
    return out


def gram_to_dense(gram: ShiftGram) -> np.ndarray:
    """Materialize the full circulant matrix (test and debug tooling)."""
    n = gram.n
    dense = np.zeros((n, n))
    rows = np.arange(n)
    for d, delta in enumerate(BAND_OFFSETS):
        dense[rows, (rows - gram.offset_q + delta) % n] += gram.band[d]
    return dense


def dump_dense_csv(gram: ShiftGram, destination: Union[str, Path]) -> None:
    """Dump the dense matrix as CSV (debug tooling)."""
    np.savetxt(destination, gram_to_dense(gram), delimiter=",", fmt="%.17g")


def shift_field(p: float, v: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Nodal values of ``T(p) v``: the periodic P1 interpolant of ``v``
    evaluated at ``x_l - p``.

    Exact (a pure index rotation) when ``p`` is a whole number of cells.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != grid.n:
        raise ValueError(f"vector length {v.shape[-1]} does not match n={grid.n}")
    q, frac = decompose_shift(p, grid)
    theta = frac / grid.h
    if theta == 0.0:
        return np.roll(v, q, axis=-1)
    return (1.0 - theta) * np.roll(v, q, axis=-1) + theta * np.roll(v, q + 1, axis=-1)


def eval_p1(v: np.ndarray, grid: SpatialGrid, x: np.ndarray) -> np.ndarray:
    """Evaluate the periodic P1 interpolant with nodal values ``v`` at ``x``."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.mod(x, grid.length) / grid.h
    cell = np.floor(s).astype(np.int64)
    theta = s - cell
    cell = np.mod(cell, grid.n)
    nxt = np.mod(cell + 1, grid.n)
    return (1.0 - theta) * v[cell] + theta * v[nxt]


def quadrature_inner_oracle(
    a: np.ndarray, b: np.ndarray, p: float, grid: SpatialGrid, panels: int
) -> float:
    """Composite-midpoint quadrature of ``<a, T(p) b>`` for P1 fields.

    An independent check of the closed-form Gram assembly; converges at
    O(panels^-2).  Requires ``panels >= 10 n``.
    """
    if panels < 10 * grid.n:
        raise ValueError(f"need at least {10 * grid.n} panels, got {panels}")
    dx = grid.length / panels
    x = (np.arange(panels) + 0.5) * dx
    fa = eval_p1(np.asarray(a, dtype=float), grid, x)
    fb = eval_p1(np.asarray(b, dtype=float), grid, x - p)
    return float(np.dot(fa, fb) * dx)


def quadrature_inner_dp_oracle(
    a: np.ndarray, b: np.ndarray, p: float, grid: SpatialGrid, panels: int
) -> float:
    """Composite-midpoint quadrature of ``<a, d/dp T(p) b>``.

    Uses the semigroup generator identity ``d/dp T(p) b = -T(p) b'`` with the
    piecewise-constant derivative of the P1 field ``b``.  The shifted
    derivative jumps at the shifted grid nodes, so the panels are aligned
    with the integrand's breakpoints (the midpoint rule is exact on each
    linear piece; plain uniform panels would only converge at O(1/panels)).
    """
    if panels < 10 * grid.n:
        raise ValueError(f"need at least {10 * grid.n} panels, got {panels}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = grid.length
    cuts = np.unique(
        np.concatenate([grid.nodes, np.mod(grid.nodes + p, L), [0.0, L]])
    )
    total = 0.0
    for x0, x1 in zip(cuts[:-1], cuts[1:]):
        if x1 <= x0:
            continue
        k = max(1, round(panels * (x1 - x0) / L))
        dx = (x1 - x0) / k
        xm = x0 + (np.arange(k) + 0.5) * dx
        fa = eval_p1(a, grid, xm)
        xs = np.mod(xm - p, L)
        cell = np.mod(np.floor(xs / grid.h).astype(np.int64), grid.n)
        db = (b[np.mod(cell + 1, grid.n)] - b[cell]) / grid.h
        total += np.dot(fa, -db) * dx
    return float(total)
