"""Discretized reconstruction cost, its gradients, and the penalty functional.

The approximation ansatz groups modes into reference frames: each frame
carries one shift path ``p(t)``, a stack of mode vectors, and per-mode time
coefficients.  The cost is the quadrature-weighted squared distance between
the data and the superposition of all shifted frames,

    J = 1/2 sum_k w_k || z_k - sum_{frames f} sum_i a_{f,i}(t_k) T(p_f(t_k)) phi_{f,i} ||_X^2,

assembled exactly through the closed-form Gram matrices of ``shift_fem`` so
that shifted fields are never materialized.  Gradients with respect to
coefficients, paths, and modes follow the same assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import SnapshotSet, SpatialGrid, TimeGrid, _frozen_array
from .shift_fem import (
    BAND_OFFSETS,
    _band_F,
    _band_G,
    _decompose_many,
    apply_gram,
    gram_F,
    gram_G,
    stiffness_gram,
)

__all__ = [
    "PathRepr",
    "Frame",
    "Decomposition",
    "CostGradient",
    "path_values",
    "reconstruct",
    "eval_cost",
    "eval_cost_gradient",
    "penalty_value",
    "eval_penalized_cost",
    "data_norm_sq",
]

MAX_POLY_DEGREE = 10


@dataclass(frozen=True, eq=False)
class PathRepr:
    """A shift path, either nodal samples ``p(t_k)`` or polynomial coefficients.

    Polynomial paths store ``c_0..c_d`` with ``p(t) = sum_j c_j t^j`` and are
    limited to degree 10.
    """

    kind: Literal["nodal", "polynomial"]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in ("nodal", "polynomial"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        values = _frozen_array(self.values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("path values must be a nonempty 1-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        if self.kind == "polynomial" and values.size - 1 > MAX_POLY_DEGREE:
            raise ValueError(
                f"polynomial path degree {values.size - 1} exceeds {MAX_POLY_DEGREE}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def nodal(cls, values) -> "PathRepr":
        return cls("nodal", np.asarray(values, dtype=float))

    @classmethod
    def polynomial(cls, coeffs) -> "PathRepr":
        return cls("polynomial", np.asarray(coeffs, dtype=float))


def path_values(path: PathRepr, times: np.ndarray) -> np.ndarray:
    """Evaluate a path at the time grid points."""
    if path.kind == "nodal":
        if path.values.size != times.size:
            raise ValueError(
                f"nodal path has {path.values.size} samples, expected {times.size}"
            )
        return path.values
    return np.polynomial.polynomial.polyval(times, path.values)


@dataclass(frozen=True, eq=False)
class Frame:
    """One reference frame: a path, its modes, and their time coefficients.

    ``modes`` has one row per mode (``r x n``); ``coeffs`` has one column per
    mode (``(m+1) x r``).
    """

    path: PathRepr
    modes: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        modes = _frozen_array(self.modes)
        coeffs = _frozen_array(self.coeffs)
        if modes.ndim != 2 or modes.shape[0] < 1:
            raise ValueError("modes must be a 2-D array with at least one row")
        if coeffs.ndim != 2 or coeffs.shape[1] != modes.shape[0]:
            raise ValueError("coeffs must have one column per mode")
        if not (np.all(np.isfinite(modes)) and np.all(np.isfinite(coeffs))):
            raise ValueError("frame data must be finite")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def r(self) -> int:
        return self.modes.shape[0]


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Ordered frames plus the grids they live on; evaluable to a reconstruction."""

    frames: tuple[Frame, ...]
    grid: SpatialGrid
    tgrid: TimeGrid

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("decomposition needs at least one frame")
        nt = self.tgrid.m + 1
        for f in frames:
            if f.modes.shape[1] != self.grid.n:
                raise ValueError(
                    f"frame modes have {f.modes.shape[1]} columns, grid has {self.grid.n} nodes"
                )
            if f.coeffs.shape[0] != nt:
                raise ValueError(
                    f"frame coeffs have {f.coeffs.shape[0]} rows, time grid has {nt} points"
                )
            if f.path.kind == "nodal" and f.path.values.size != nt:
                raise ValueError(
                    f"nodal path has {f.path.values.size} samples, time grid has {nt} points"
                )
        object.__setattr__(self, "frames", frames)

    @property
    def total_modes(self) -> int:
        return sum(f.r for f in self.frames)


@dataclass(frozen=True, eq=False)
class CostGradient:
    """Cost value plus per-frame gradients.

    ``g_paths`` entries have length ``m+1`` for nodal paths and ``d+1`` for
    polynomial paths (chain rule through the monomial basis).
    """

    value: float
    g_coeffs: tuple[np.ndarray, ...]
    g_paths: tuple[np.ndarray, ...]
    g_modes: tuple[np.ndarray, ...]


def _check_same_grids(z: SnapshotSet, d: Decomposition) -> None:
    if z.grid != d.grid:
        raise ValueError("snapshot data and decomposition use different spatial grids")
    if z.tgrid != d.tgrid:
        raise ValueError("snapshot data and decomposition use different time grids")


def _gather(A: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(A, idx, axis=1)


def _mode_rolls(modes: np.ndarray) -> np.ndarray:
    """Stack of rolled mode vectors, shape (r, 4, n): entry [i, d, l] = phi_i[(l + delta_d) % n]."""
    return np.stack(
        [np.stack([np.roll(m, -delta) for delta in BAND_OFFSETS]) for m in modes]
    )


def _bands_dot_rolls(bands: np.ndarray, rolls_i: np.ndarray) -> np.ndarray:
    """Rows ``F(p_k) phi`` in the co-moving alignment: (m+1, 4) @ (4, n)."""
    return bands @ rolls_i


def _apply_bands_rows(bands: np.ndarray, qs: np.ndarray, A: np.ndarray, idx_cache: dict) -> np.ndarray:
    """Row-wise products ``F(p_k) A[k]`` for a time-varying band family."""
    out = np.zeros_like(A)
    for dlt, b in zip(BAND_OFFSETS, bands.T):
        out += b[:, None] * np.roll(A, -dlt, axis=1)
    key = ("minus", qs.tobytes())
    idx = idx_cache.get(key)
    if idx is None:
        cols = np.arange(A.shape[1])
        idx = (cols[None, :] - qs[:, None]) % A.shape[1]
        idx_cache[key] = idx
    return _gather(out, idx)


def _apply_bands_rows_T(bands: np.ndarray, qs: np.ndarray, A: np.ndarray, idx_cache: dict) -> np.ndarray:
    """Row-wise products ``F(p_k)^T A[k]`` (exact transpose of the band action)."""
    out = np.zeros_like(A)
    for dlt, b in zip(BAND_OFFSETS, bands.T):
        out += b[:, None] * np.roll(A, dlt, axis=1)
    key = ("plus", qs.tobytes())
    idx = idx_cache.get(key)
    if idx is None:
        cols = np.arange(A.shape[1])
        idx = (cols[None, :] + qs[:, None]) % A.shape[1]
        idx_cache[key] = idx
    return _gather(out, idx)


class _Workspace:
    """Shared per-evaluation state for cost and gradient assembly."""

    def __init__(self, z: SnapshotSet, d: Decomposition):
        _check_same_grids(z, d)
        self.z = z
        self.d = d
        grid = d.grid
        self.n = grid.n
        self.h = grid.h
        self.times = d.tgrid.times
        self.w = d.tgrid.weights
        self.Z = z.values
        self.cols = np.arange(self.n)
        self.idx_cache: dict = {}
        self.F0 = gram_F(0.0, grid)
        self.G0 = gram_G(0.0, grid)
        self.pvals = [path_values(f.path, self.times) for f in d.frames]
        decomposed = [_decompose_many(pv, grid) for pv in self.pvals]
        self.qs = [q for q, _ in decomposed]
        self.Fbands = [_band_F(fr, self.h) for _, fr in decomposed]
        self.Gbands = [_band_G(fr, self.h) for _, fr in decomposed]
        self.rolls = [_mode_rolls(f.modes) for f in d.frames]
        self.U = [f.coeffs @ f.modes for f in d.frames]
        # data rows aligned with each frame's whole-cell offset
        self.Zrot = [self._plus_gather(self.Z, q) for q in self.qs]

    def _plus_gather(self, A: np.ndarray, qs: np.ndarray) -> np.ndarray:
        key = ("plus", qs.tobytes())
        idx = self.idx_cache.get(key)
        if idx is None:
            idx = (self.cols[None, :] + qs[:, None]) % self.n
            self.idx_cache[key] = idx
        return _gather(A, idx)

    def rel_shift(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Offsets and F bands of the relative shift ``p_a - p_b``."""
        q, fr = _decompose_many(self.pvals[a] - self.pvals[b], self.d.grid)
        return q, fr

    def data_energy(self) -> np.ndarray:
        """Per-time-step ``z_k^T F(0) z_k``."""
        return np.einsum("kl,kl->k", self.Z, apply_gram(self.F0, self.Z))

    def frame_products(self, want_grad: bool):
        """Per frame: data products FZ (and GZ), reconstruction products R (and RN)."""
        d = self.d
        nf = len(d.frames)
        FZ, GZ, R, RN = [], [], [], []
        cross = {}
        if nf > 1:
            for a in range(nf):
                for b in range(nf):
                    if a != b:
                        cross[a, b] = self.rel_shift(a, b)
        for fi, f in enumerate(d.frames):
            r = f.r
            nt = self.times.size
            fz = np.empty((nt, r))
            gz = np.empty((nt, r)) if want_grad else None
            # same-frame Gram blocks are shift-independent
            K = f.modes @ apply_gram(self.F0, f.modes).T
            rmat = f.coeffs @ K
            if want_grad:
                KG = f.modes @ apply_gram(self.G0, f.modes).T
                rnmat = f.coeffs @ KG
            else:
                rnmat = None
            cross_rot = {}
            for fj in range(nf):
                if fj == fi:
                    continue
                qd, frd = cross[fi, fj]
                cross_rot[fj] = (
                    self._plus_gather(self.U[fj], qd),
                    _band_F(frd, self.h),
                    _band_G(frd, self.h) if want_grad else None,
                )
            for i in range(r):
                Cf = _bands_dot_rolls(self.Fbands[fi], self.rolls[fi][i])
                fz[:, i] = np.einsum("kl,kl->k", self.Zrot[fi], Cf)
                if want_grad:
                    Cg = _bands_dot_rolls(self.Gbands[fi], self.rolls[fi][i])
                    gz[:, i] = np.einsum("kl,kl->k", self.Zrot[fi], Cg)
                for fj, (Urot, fbd, gbd) in cross_rot.items():
                    Cfd = _bands_dot_rolls(fbd, self.rolls[fi][i])
                    rmat[:, i] += np.einsum("kl,kl->k", Urot, Cfd)
                    if want_grad:
                        Cgd = _bands_dot_rolls(gbd, self.rolls[fi][i])
                        rnmat[:, i] += np.einsum("kl,kl->k", Urot, Cgd)
            FZ.append(fz)
            GZ.append(gz)
            R.append(rmat)
            RN.append(rnmat)
        return FZ, GZ, R, RN

    def cost_from_products(self, FZ, R) -> float:
        # the cost is a small difference of large sums near a good fit, so
        # accumulate all weighted addends exactly (the data-energy terms and
        # the frame terms cancel addend-by-addend for exact reconstructions)
        addends = [self.w * self.data_energy()]
        for f, fz, rmat in zip(self.d.frames, FZ, R):
            addends.append(self.w * np.einsum("ki,ki->k", f.coeffs, rmat - 2.0 * fz))
        return 0.5 * math.fsum(np.concatenate(addends).tolist())

    def mode_gradient(self, fi: int) -> np.ndarray:
        """Gradient rows for frame ``fi``'s modes."""
        d = self.d
        f = d.frames[fi]
        row = apply_gram(self.F0, self.U[fi])
        for fj in range(len(d.frames)):
            if fj == fi:
                continue
            qd, frd = self.rel_shift(fj, fi)
            row = row + _apply_bands_rows(
                _band_F(frd, self.h), qd, self.U[fj], self.idx_cache
            )
        row = row - _apply_bands_rows_T(self.Fbands[fi], self.qs[fi], self.Z, self.idx_cache)
        return (self.w[:, None] * f.coeffs).T @ row


def reconstruct(d: Decomposition) -> SnapshotSet:
    """Evaluate the decomposition to nodal snapshot values.

    Row ``k`` is the sum over frames and modes of
    ``coeffs[k, i] * shift_field(p(t_k), mode_i)``.
    """
    n = d.grid.n
    times = d.tgrid.times
    cols = np.arange(n)
    out = np.zeros((times.size, n))
    for f in d.frames:
        pv = path_values(f.path, times)
        qs, frac = _decompose_many(pv, d.grid)
        theta = (frac / d.grid.h)[:, None]
        U = f.coeffs @ f.modes
        idx0 = (cols[None, :] - qs[:, None]) % n
        idx1 = (idx0 - 1) % n
        out += (1.0 - theta) * _gather(U, idx0) + theta * _gather(U, idx1)
    return SnapshotSet(d.grid, d.tgrid, out)


def eval_cost(z: SnapshotSet, d: Decomposition) -> float:
    """Quadrature-weighted squared-residual cost, assembled via Gram matrices."""
    ws = _Workspace(z, d)
    FZ, _, R, _ = ws.frame_products(want_grad=False)
    return ws.cost_from_products(FZ, R)


def eval_cost_gradient(z: SnapshotSet, d: Decomposition) -> CostGradient:
    """Cost together with its gradients w.r.t. coefficients, paths, and modes.

    Polynomial path gradients are the nodal gradients pushed through the
    monomial basis (transposed Vandermonde).
    """
    ws = _Workspace(z, d)
    FZ, GZ, R, RN = ws.frame_products(want_grad=True)
    value = ws.cost_from_products(FZ, R)
    g_coeffs, g_paths, g_modes = [], [], []
    for fi, f in enumerate(d.frames):
        g_coeffs.append(ws.w[:, None] * (R[fi] - FZ[fi]))
        xi = f.coeffs * (RN[fi] - GZ[fi])
        nodal = ws.w * xi.sum(axis=1)
        if f.path.kind == "polynomial":
            V = np.vander(ws.times, f.path.values.size, increasing=True)
            g_paths.append(V.T @ nodal)
        else:
            g_paths.append(nodal)
        g_modes.append(ws.mode_gradient(fi))
    return CostGradient(value, tuple(g_coeffs), tuple(g_paths), tuple(g_modes))


def path_gradient_nodal(z: SnapshotSet, d: Decomposition) -> list[np.ndarray]:
    """Nodal path gradients only (coefficient and mode blocks skipped).

    This is the partial gradient used by the reduced path-only optimization,
    where coefficients and modes sit at an inner minimizer.
    """
    ws = _Workspace(z, d)
    _, GZ, _, RN = ws.frame_products(want_grad=True)
    out = []
    for fi, f in enumerate(d.frames):
        xi = f.coeffs * (RN[fi] - GZ[fi])
        out.append(ws.w * xi.sum(axis=1))
    return out


def data_norm_sq(z: SnapshotSet) -> float:
    """Squared data norm ``sum_k w_k z_k^T F(0) z_k`` (the cost's own metric)."""
    F0 = gram_F(0.0, z.grid)
    zz = np.einsum("kl,kl->k", z.values, apply_gram(F0, z.values))
    return float(np.dot(z.tgrid.weights, zz))


def _discrete_h1_norm_sq(pv: np.ndarray, tgrid: TimeGrid) -> float:
    """Path H1 norm: trapezoidal L2 part plus central-difference derivative part."""
    w = tgrid.weights
    pdot = np.gradient(pv, tgrid.times)
    return float(np.dot(w, pv**2) + np.dot(w, pdot**2))


def penalty_value(d: Decomposition, C: float) -> float:
    """Admissible-set penalty: per (frame, mode) pair, how far the largest of
    the coefficient L2, path H1, and mode H1 norms exceeds the bound ``C``.

    Zero exactly on the admissible set; the shared frame path enters once per
    mode of its frame.
    """
    if not C > 0:
        raise ValueError(f"penalty bound must be positive, got C={C}")
    w = d.tgrid.weights
    stiff = stiffness_gram(d.grid)
    F0 = gram_F(0.0, d.grid)
    total = 0.0
    for f in d.frames:
        pv = path_values(f.path, d.tgrid.times)
        path_norm = math.sqrt(_discrete_h1_norm_sq(pv, d.tgrid))
        mode_sq = np.einsum(
            "il,il->i", f.modes, apply_gram(F0, f.modes) + apply_gram(stiff, f.modes)
        )
        coeff_sq = np.einsum("ki,k->i", f.coeffs**2, w)
        for i in range(f.r):
            largest = max(
                math.sqrt(coeff_sq[i]), path_norm, math.sqrt(max(mode_sq[i], 0.0))
            )
            total += max(0.0, largest - C)
    return total


def eval_penalized_cost(
    z: SnapshotSet, d: Decomposition, C: float = 1.0, lam: float = 0.0
) -> float:
    """Cost plus ``lam`` times the admissible-set penalty (``lam = 0`` default)."""
    if lam < 0:
        raise ValueError(f"penalty coefficient must be nonnegative, got {lam}")
    value = eval_cost(z, d)
    if lam > 0.0:
        value += lam * penalty_value(d, C)
    return value
