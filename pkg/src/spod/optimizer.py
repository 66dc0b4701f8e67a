"""Quasi-Newton minimization of the decomposition cost.

Two drivers share one L-BFGS core:

* :func:`optimize_decomposition` minimizes the (optionally penalized) cost
  over any subset of {coefficients, paths, modes}.
* :func:`optimize_path_only` minimizes the reduced objective in the path
  alone: at each path the coefficients and modes are recomputed exactly by a
  truncated weighted SVD of the data shifted into the co-moving frame (the
  shift is an isometry), and the outer gradient is the partial path gradient
  at that inner minimizer, which is exact by the envelope argument.

Everything is deterministic: no randomized initialization anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .baseline_pod import _apply_symbol, _mass_symbol
from .core import SnapshotSet
from .cost_grad import (
    CostGradient,
    Decomposition,
    Frame,
    PathRepr,
    eval_cost,
    eval_cost_gradient,
    path_gradient_nodal,
    path_values,
    penalty_value,
)
from .shift_fem import _decompose_many

__all__ = [
    "VARIABLE_GROUPS",
    "OptimizerConfig",
    "OptimizerResult",
    "LbfgsHistory",
    "pack",
    "unpack",
    "pack_gradient",
    "lbfgs_minimize",
    "optimize_decomposition",
    "optimize_path_only",
]

VARIABLE_GROUPS = ("coeffs", "paths", "modes")

# a line search gives up after this many backtracking steps
MAX_BACKTRACKS = 60
# and may grow an immediately accepted step at most this many times
MAX_EXPANSIONS = 30

ProgressCallback = Callable[[int, float, float], None]


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the quasi-Newton drivers.

    ``variables`` selects which blocks are optimized; ``C`` and ``lam`` steer
    the admissible-set penalty (``lam = 0`` disables it, the default).
    """

    max_iters: int = 500
    grad_tol: float = 1e-8
    lbfgs_memory: int = 10
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    variables: tuple[str, ...] = VARIABLE_GROUPS
    C: float = 1.0
    lam: float = 0.0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.armijo_c < 1.0:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be at least 1")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        variables = tuple(self.variables)
        if not variables or any(v not in VARIABLE_GROUPS for v in variables):
            raise ValueError(f"variables must be a nonempty subset of {VARIABLE_GROUPS}")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        object.__setattr__(self, "variables", variables)


@dataclass(frozen=True, eq=False)
class OptimizerResult:
    """Best-found decomposition with the monotone cost trace."""

    decomposition: Decomposition
    cost_history: np.ndarray
    grad_norm_history: np.ndarray
    iterations: int
    termination: str
    isometry_defect: Optional[float] = None


@dataclass(frozen=True, eq=False)
class LbfgsHistory:
    cost_history: np.ndarray
    grad_norm_history: np.ndarray
    iterations: int
    termination: str


def _frame_sizes(f: Frame, variables: Sequence[str]) -> list[tuple[str, int]]:
    sizes = []
    if "coeffs" in variables:
        sizes.append(("coeffs", f.coeffs.size))
    if "paths" in variables:
        sizes.append(("paths", f.path.values.size))
    if "modes" in variables:
        sizes.append(("modes", f.modes.size))
    return sizes


def pack(d: Decomposition, variables: Sequence[str] = VARIABLE_GROUPS) -> np.ndarray:
    """Flatten the selected variable blocks.

    Order: frames in sequence; per frame coefficients column-major, then the
    path, then modes row-major.
    """
    parts = []
    for f in d.frames:
        if "coeffs" in variables:
            parts.append(f.coeffs.flatten(order="F"))
        if "paths" in variables:
            parts.append(f.path.values)
        if "modes" in variables:
            parts.append(f.modes.flatten(order="C"))
    if not parts:
        raise ValueError("no variables selected")
    return np.concatenate(parts)


def unpack(
    x: np.ndarray, template: Decomposition, variables: Sequence[str] = VARIABLE_GROUPS
) -> Decomposition:
    """Rebuild a decomposition from a flat vector; unselected blocks are
    taken from the template.  Inverse of :func:`pack`."""
    x = np.asarray(x, dtype=float)
    frames = []
    pos = 0
    for f in template.frames:
        coeffs, path, modes = f.coeffs, f.path, f.modes
        for name, size in _frame_sizes(f, variables):
            block = x[pos : pos + size]
            if block.size != size:
                raise ValueError("packed vector too short for the template")
            if name == "coeffs":
                coeffs = block.reshape(f.coeffs.shape, order="F")
            elif name == "paths":
                path = PathRepr(f.path.kind, block)
            else:
                modes = block.reshape(f.modes.shape, order="C")
            pos += size
        frames.append(Frame(path, modes, coeffs))
    if pos != x.size:
        raise ValueError(f"packed vector has {x.size} entries, expected {pos}")
    return Decomposition(tuple(frames), template.grid, template.tgrid)


def pack_gradient(
    g: CostGradient, d: Decomposition, variables: Sequence[str] = VARIABLE_GROUPS
) -> np.ndarray:
    """Flatten gradient blocks in the same order as :func:`pack`."""
    parts = []
    for fi in range(len(d.frames)):
        if "coeffs" in variables:
            parts.append(g.g_coeffs[fi].flatten(order="F"))
        if "paths" in variables:
            parts.append(g.g_paths[fi])
        if "modes" in variables:
            parts.append(g.g_modes[fi].flatten(order="C"))
    return np.concatenate(parts)


def _two_loop(
    g: np.ndarray, s_list: list[np.ndarray], y_list: list[np.ndarray], rho: list[float]
) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, r in zip(reversed(s_list), reversed(y_list), reversed(rho)):
        a = r * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if s_list:
        gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
        q *= gamma
    for (s, y, r), a in zip(zip(s_list, y_list, rho), reversed(alphas)):
        b = r * np.dot(y, q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    cfg: OptimizerConfig,
    callback: Optional[ProgressCallback] = None,
) -> tuple[np.ndarray, LbfgsHistory]:
    """Two-loop-recursion L-BFGS with Armijo backtracking.

    Terminates when the gradient infinity norm drops to ``grad_tol``, after
    ``max_iters`` accepted steps, or when a line search fails 60 backtracks
    in a row (retried once from a cleared memory before giving up).  The cost
    trace is nonincreasing by construction.
    """
    x = np.array(x0, dtype=float)
    f, g = objective(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the initial point")
    costs = [float(f)]
    gnorms = [float(np.max(np.abs(g)))]
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho: list[float] = []
    termination = "max-iters"
    iterations = 0
    if callback is not None:
        callback(0, costs[0], gnorms[0])
    if gnorms[0] <= cfg.grad_tol:
        termination = "converged"
    else:
        for it in range(1, cfg.max_iters + 1):
            direction = _two_loop(g, s_list, y_list, rho)
            gd = float(np.dot(g, direction))
            if gd >= 0.0:
                # not a descent direction: fall back to steepest descent
                s_list.clear(), y_list.clear(), rho.clear()
                direction = -g
                gd = -float(np.dot(g, g))

            def _search(direction, gd):
                def _accepts(step, fn):
                    return np.isfinite(fn) and fn <= f + cfg.armijo_c * step * gd

                step = cfg.initial_step
                for bt in range(MAX_BACKTRACKS):
                    xn = x + step * direction
                    if np.array_equal(xn, x):
                        # step underflowed against x: no progress possible
                        return None
                    fn, gn = objective(xn)
                    if _accepts(step, fn):
                        if bt == 0:
                            # the full step already satisfies the decrease
                            # rule: grow it while that stays true, to escape
                            # stagnation on over-short quasi-Newton directions
                            while step <= cfg.initial_step * 2**MAX_EXPANSIONS:
                                xe = x + 2.0 * step * direction
                                fe, ge = objective(xe)
                                if _accepts(2.0 * step, fe) and fe < fn:
                                    step *= 2.0
                                    xn, fn, gn = xe, fe, ge
                                else:
                                    break
                        return xn, fn, gn
                    step *= cfg.backtrack_factor
                return None

            hit = _search(direction, gd)
            if hit is None and s_list:
                # quasi-Newton direction failed: restart from steepest descent
                s_list.clear(), y_list.clear(), rho.clear()
                hit = _search(-g, -float(np.dot(g, g)))
            if hit is None:
                termination = "line-search-failure"
                break
            xn, fn, gn = hit
            s = xn - x
            y = gn - g
            sy = float(np.dot(s, y))
            if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
                s_list.append(s)
                y_list.append(y)
                rho.append(1.0 / sy)
                if len(s_list) > cfg.lbfgs_memory:
                    s_list.pop(0), y_list.pop(0), rho.pop(0)
            x, f, g = xn, fn, gn
            iterations = it
            costs.append(float(f))
            gnorms.append(float(np.max(np.abs(g))))
            if callback is not None:
                callback(it, costs[-1], gnorms[-1])
            if gnorms[-1] <= cfg.grad_tol:
                termination = "converged"
                break
    history = LbfgsHistory(np.array(costs), np.array(gnorms), iterations, termination)
    return x, history


def _penalty_fd_subgradient(
    d0: Decomposition, x: np.ndarray, variables: Sequence[str], C: float
) -> np.ndarray:
    """Central-difference subgradient of the (nonsmooth) penalty."""
    out = np.zeros_like(x)
    for i in range(x.size):
        step = 1e-7 * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        out[i] = (
            penalty_value(unpack(xp, d0, variables), C)
            - penalty_value(unpack(xm, d0, variables), C)
        ) / (2.0 * step)
    return out


def optimize_decomposition(
    z: SnapshotSet,
    d0: Decomposition,
    cfg: OptimizerConfig = OptimizerConfig(),
    callback: Optional[ProgressCallback] = None,
) -> OptimizerResult:
    """Minimize the (penalized) cost over the selected variable blocks,
    starting from the supplied decomposition."""
    variables = cfg.variables
    x0 = pack(d0, variables)

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        d = unpack(x, d0, variables)
        grad = eval_cost_gradient(z, d)
        value = grad.value
        gx = pack_gradient(grad, d, variables)
        if cfg.lam > 0.0:
            value += cfg.lam * penalty_value(d, cfg.C)
            gx = gx + cfg.lam * _penalty_fd_subgradient(d0, x, variables, cfg.C)
        return value, gx

    xs, hist = lbfgs_minimize(objective, x0, cfg, callback)
    return OptimizerResult(
        unpack(xs, d0, variables),
        hist.cost_history,
        hist.grad_norm_history,
        hist.iterations,
        hist.termination,
    )


def _comoving_snapshots(z: SnapshotSet, pv: np.ndarray) -> np.ndarray:
    """Shift each snapshot by ``-p(t_k)`` (into the co-moving frame)."""
    n = z.grid.n
    qs, frac = _decompose_many(-pv, z.grid)
    theta = (frac / z.grid.h)[:, None]
    cols = np.arange(n)
    idx0 = (cols[None, :] - qs[:, None]) % n
    idx1 = (idx0 - 1) % n
    Z = z.values
    return (1.0 - theta) * np.take_along_axis(Z, idx0, axis=1) + theta * np.take_along_axis(
        Z, idx1, axis=1
    )


def optimize_path_only(
    z: SnapshotSet,
    path0: PathRepr,
    r: int,
    cfg: OptimizerConfig = OptimizerConfig(),
    callback: Optional[ProgressCallback] = None,
) -> OptimizerResult:
    """Single-frame reduced optimization over the path alone.

    At each path the data is shifted into the co-moving frame, the best
    rank-``r`` coefficients and modes follow from a truncated weighted SVD
    there, and the reduced cost is half the energy of the discarded singular
    values.  Because the nodal shift is interpolatory rather than exactly
    isometric, the residual is measured in the co-moving frame; the gap to
    the reconstructed-frame cost is reported as ``isometry_defect`` (O(h^2)).
    """
    nt, n = z.values.shape
    if not 1 <= r <= min(nt, n):
        raise ValueError(f"rank {r} out of range for {nt} x {n} data")
    times = z.tgrid.times
    sqw = np.sqrt(z.tgrid.weights)
    symbol = _mass_symbol(z.grid)
    sq = np.sqrt(symbol)
    if path0.kind == "nodal" and path0.values.size != nt:
        raise ValueError(f"nodal path has {path0.values.size} samples, expected {nt}")
    vander = (
        np.vander(times, path0.values.size, increasing=True)
        if path0.kind == "polynomial"
        else None
    )

    def inner(x: np.ndarray) -> tuple[float, Decomposition]:
        path = PathRepr(path0.kind, x)
        pv = path_values(path, times)
        Zt = _comoving_snapshots(z, pv)
        B = sqw[:, None] * _apply_symbol(Zt, sq)
        U, s, Vt = np.linalg.svd(B, full_matrices=False)
        cost = 0.5 * float(np.dot(s[r:], s[r:]))
        modes = _apply_symbol(Vt[:r], 1.0 / sq)
        coeffs = (U[:, :r] * s[:r]) / sqw[:, None]
        frame = Frame(path, modes, coeffs)
        return cost, Decomposition((frame,), z.grid, z.tgrid)

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        cost, d = inner(x)
        nodal = path_gradient_nodal(z, d)[0]
        if vander is not None:
            return cost, vander.T @ nodal
        return cost, nodal

    xs, hist = lbfgs_minimize(objective, np.array(path0.values, dtype=float), cfg, callback)
    final_cost, d_final = inner(xs)
    defect = abs(final_cost - eval_cost(z, d_final))
    return OptimizerResult(
        d_final,
        hist.cost_history,
        hist.grad_norm_history,
        hist.iterations,
        hist.termination,
        isometry_defect=defect,
    )
