import numpy as np
import pytest

from spod.core import SnapshotSet, SpatialGrid, make_uniform_time_grid
from spod.cost_grad import (
    Decomposition,
    Frame,
    PathRepr,
    data_norm_sq,
    eval_cost,
    reconstruct,
)
from spod.generators import TravelingProfile, synthetic_traveling
from spod.optimizer import (
    OptimizerConfig,
    lbfgs_minimize,
    optimize_decomposition,
    optimize_path_only,
    pack,
    unpack,
)
from spod.shift_fem import apply_gram, gram_F, gram_M


def spike_fixture(n=32, m=16):
    grid = SpatialGrid(n, 1.0)
    tg = make_uniform_time_grid(m, 1.0)
    s1 = np.zeros(n)
    s1[3] = 1.0
    s2 = np.zeros(n)
    s2[(5 * n) // 8] = 1.0
    profiles = [
        TravelingProfile(s1, speed=1.0),
        TravelingProfile(s2, speed=-0.5, amplitude=0.5),
    ]
    return synthetic_traveling(profiles, grid, tg)


class TestPacking:
    def test_round_trip(self, rng):
        grid = SpatialGrid(12, 1.0)
        tg = make_uniform_time_grid(5, 1.0)
        frames = (
            Frame(
                PathRepr.nodal(rng.standard_normal(6)),
                rng.standard_normal((2, 12)),
                rng.standard_normal((6, 2)),
            ),
            Frame(
                PathRepr.polynomial(rng.standard_normal(3)),
                rng.standard_normal((1, 12)),
                rng.standard_normal((6, 1)),
            ),
        )
        d = Decomposition(frames, grid, tg)
        for variables in (("coeffs",), ("paths",), ("modes",), ("coeffs", "paths", "modes")):
            x = pack(d, variables)
            back = unpack(x, d, variables)
            for fa, fb in zip(d.frames, back.frames):
                assert np.array_equal(fa.coeffs, fb.coeffs)
                assert np.array_equal(fa.path.values, fb.path.values)
                assert np.array_equal(fa.modes, fb.modes)

    def test_polynomial_path_length(self):
        grid = SpatialGrid(8, 1.0)
        tg = make_uniform_time_grid(4, 1.0)
        d = Decomposition(
            (Frame(PathRepr.polynomial([0.0, 1.0, 2.0]), np.ones((1, 8)), np.ones((5, 1))),),
            grid,
            tg,
        )
        assert pack(d, ("paths",)).size == 3

    def test_full_vector_length(self):
        grid = SpatialGrid(32, 1.0)
        tg = make_uniform_time_grid(20, 1.0)
        d = Decomposition(
            (Frame(PathRepr.nodal(np.zeros(21)), np.zeros((2, 32)), np.zeros((21, 2))),),
            grid,
            tg,
        )
        assert pack(d).size == 2 * 21 + 21 + 2 * 32 == 127

    def test_mismatched_vector(self):
        grid = SpatialGrid(8, 1.0)
        tg = make_uniform_time_grid(4, 1.0)
        d = Decomposition(
            (Frame(PathRepr.nodal(np.zeros(5)), np.zeros((1, 8)), np.zeros((5, 1))),),
            grid,
            tg,
        )
        with pytest.raises(ValueError):
            unpack(np.zeros(pack(d).size + 1), d)


class TestLbfgs:
    def test_quadratic_matches_direct_solve(self, rng):
        A = rng.standard_normal((10, 10))
        A = A @ A.T + 10 * np.eye(10)
        # keep the optimal value small so the Armijo decreases stay above
        # floating-point resolution all the way down to the tolerance
        b = 1e-2 * rng.standard_normal(10)

        def objective(x):
            return 0.5 * float(x @ A @ x) - float(b @ x), A @ x - b

        cfg = OptimizerConfig(max_iters=50, grad_tol=1e-10)
        x, hist = lbfgs_minimize(objective, np.zeros(10), cfg)
        assert hist.termination == "converged"
        assert hist.iterations <= 50
        assert np.max(np.abs(x - np.linalg.solve(A, b))) < 1e-9

    def test_rosenbrock(self):
        def objective(x):
            a, b = x
            f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
            g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
            return f, g

        cfg = OptimizerConfig(max_iters=500, grad_tol=1e-10)
        x, hist = lbfgs_minimize(objective, np.array([-1.2, 1.0]), cfg)
        f, _ = objective(x)
        assert f < 1e-8

    def test_stationary_start_returns_immediately(self):
        def objective(x):
            return float(x @ x), 2 * x

        x, hist = lbfgs_minimize(objective, np.zeros(4), OptimizerConfig(grad_tol=1e-12))
        assert hist.iterations == 0
        assert hist.termination == "converged"

    def test_nonfinite_start_rejected(self):
        def objective(x):
            return np.inf, x

        with pytest.raises(ValueError):
            lbfgs_minimize(objective, np.zeros(2), OptimizerConfig())

    def test_history_nonincreasing(self, rng):
        A = rng.standard_normal((8, 8))
        A = A @ A.T + np.eye(8)
        b = rng.standard_normal(8)

        def objective(x):
            return 0.5 * float(x @ A @ x) - float(b @ x), A @ x - b

        _, hist = lbfgs_minimize(objective, rng.standard_normal(8), OptimizerConfig(max_iters=40))
        assert np.all(np.diff(hist.cost_history) <= 0)


class TestOptimizeDecomposition:
    def test_truth_init_converges_immediately(self):
        z, dtrue = spike_fixture()
        res = optimize_decomposition(z, dtrue, OptimizerConfig(grad_tol=1e-8))
        assert res.iterations == 0
        assert res.termination == "converged"

    def test_coeffs_only_matches_normal_equations(self, rng):
        # random data is not exactly representable, so the optimum is positive
        _, template = spike_fixture(n=16, m=10)
        grid, tg = template.grid, template.tgrid
        z = SnapshotSet(grid, tg, rng.standard_normal((tg.m + 1, grid.n)))
        frames = tuple(
            Frame(f.path, rng.standard_normal(f.modes.shape), np.zeros(f.coeffs.shape))
            for f in template.frames
        )
        d0 = Decomposition(frames, grid, tg)
        cfg = OptimizerConfig(max_iters=400, grad_tol=1e-13, variables=("coeffs",))
        res = optimize_decomposition(z, d0, cfg)

        # direct least squares per time step on the transformed-mode Gram
        from spod.cost_grad import path_values

        paths = [path_values(f.path, tg.times) for f in d0.frames]
        modes = [f.modes for f in d0.frames]
        nmodes = sum(f.r for f in d0.frames)
        cost_direct = 0.0
        F0 = gram_F(0.0, grid)
        for k in range(tg.m + 1):
            blocks = []
            for fi, f in enumerate(d0.frames):
                for i in range(f.r):
                    blocks.append((paths[fi][k], modes[fi][i]))
            A = np.empty((nmodes, nmodes))
            rhs = np.empty(nmodes)
            for a, (pa, va) in enumerate(blocks):
                rhs[a] = float(z.values[k] @ apply_gram(gram_F(pa, grid), va))
                for b, (pb, vb) in enumerate(blocks):
                    A[a, b] = float(va @ apply_gram(gram_M(pb, pa, grid), vb))
            alpha = np.linalg.solve(A, rhs)
            zz = float(z.values[k] @ apply_gram(F0, z.values[k]))
            cost_direct += tg.weights[k] * (zz - float(alpha @ rhs))
        cost_direct *= 0.5
        achieved = res.cost_history[-1]
        assert abs(achieved - cost_direct) <= 1e-6 * max(abs(cost_direct), 1e-12)

    def test_frame_permutation_equivariance(self, rng):
        z, dtrue = spike_fixture()
        f0, f1 = dtrue.frames
        h = dtrue.grid.h
        perturbed = (
            Frame(PathRepr.nodal(f0.path.values + 0.31 * h), f0.modes, f0.coeffs),
            Frame(PathRepr.nodal(f1.path.values - 0.17 * h), f1.modes, f1.coeffs),
        )
        cfg = OptimizerConfig(max_iters=30, grad_tol=1e-12)
        res_a = optimize_decomposition(z, Decomposition(perturbed, dtrue.grid, dtrue.tgrid), cfg)
        res_b = optimize_decomposition(
            z, Decomposition(perturbed[::-1], dtrue.grid, dtrue.tgrid), cfg
        )
        na = min(len(res_a.cost_history), len(res_b.cost_history))
        assert np.allclose(res_a.cost_history[:na], res_b.cost_history[:na], rtol=0, atol=1e-12)
        for fa, fb in zip(res_a.decomposition.frames, res_b.decomposition.frames[::-1]):
            assert np.allclose(fa.path.values, fb.path.values, atol=1e-10)

    def test_monotone_history_on_real_problem(self):
        z, dtrue = spike_fixture()
        f0, f1 = dtrue.frames
        h = dtrue.grid.h
        d0 = Decomposition(
            (
                Frame(PathRepr.nodal(f0.path.values + 0.3 * h), f0.modes, f0.coeffs),
                Frame(PathRepr.nodal(f1.path.values - 0.2 * h), f1.modes, f1.coeffs),
            ),
            dtrue.grid,
            dtrue.tgrid,
        )
        res = optimize_decomposition(z, d0, OptimizerConfig(max_iters=100, grad_tol=1e-10))
        assert np.all(np.diff(res.cost_history) <= 0)

    def test_gaussian_path_recovery_from_offset(self):
        grid = SpatialGrid(32, 1.0)
        tg = make_uniform_time_grid(16, 1.0)
        x = grid.nodes
        gauss = np.exp(-0.5 * ((x - 0.5) / 0.08) ** 2)
        z, dtrue = synthetic_traveling([TravelingProfile(gauss, speed=1.0)], grid, tg)
        f = dtrue.frames[0]
        d0 = Decomposition(
            (Frame(PathRepr.nodal(f.path.values + 0.1 * grid.length), f.modes, f.coeffs),),
            grid,
            tg,
        )
        res = optimize_decomposition(z, d0, OptimizerConfig(max_iters=800, grad_tol=1e-12))
        dev = np.max(np.abs(res.decomposition.frames[0].path.values - f.path.values))
        assert dev <= grid.h

    def test_penalized_run_decreases_penalty(self, rng):
        z, dtrue = spike_fixture(n=16, m=8)
        f = dtrue.frames[0]
        big = Frame(f.path, 40.0 * f.modes, f.coeffs)
        d0 = Decomposition((big, dtrue.frames[1]), dtrue.grid, dtrue.tgrid)
        from spod.cost_grad import penalty_value

        cfg = OptimizerConfig(
            max_iters=60, grad_tol=1e-12, variables=("modes",), C=2.0, lam=5.0
        )
        res = optimize_decomposition(z, d0, cfg)
        assert penalty_value(res.decomposition, 2.0) < penalty_value(d0, 2.0)
        assert np.all(np.diff(res.cost_history) <= 0)


class TestOptimizePathOnly:
    def test_exactly_representable_profile(self):
        grid = SpatialGrid(32, 1.0)
        tg = make_uniform_time_grid(16, 1.0)
        x = grid.nodes
        profile = np.exp(-0.5 * ((x - 0.4) / 0.07) ** 2)
        z, dtrue = synthetic_traveling([TravelingProfile(profile, speed=1.0)], grid, tg)
        ptrue = dtrue.frames[0].path.values
        path0 = PathRepr.nodal(ptrue + 0.3 * grid.h)
        res = optimize_path_only(z, path0, 1, OptimizerConfig(max_iters=300, grad_tol=1e-10))
        assert res.cost_history[-1] <= 1e-12 * data_norm_sq(z)
        assert np.max(np.abs(res.decomposition.frames[0].path.values - ptrue)) <= grid.h

    def test_constant_in_space_data(self):
        grid = SpatialGrid(16, 1.0)
        tg = make_uniform_time_grid(8, 1.0)
        values = np.outer(1.0 + tg.times, np.ones(grid.n))
        z = SnapshotSet(grid, tg, values)
        # a shift-invariant field is reproduced exactly for any path
        path0 = PathRepr.nodal(0.3 * tg.times + 0.1)
        res = optimize_path_only(z, path0, 1, OptimizerConfig(max_iters=5, grad_tol=1e-8))
        from spod.core import relative_l2_error

        err = relative_l2_error(z, reconstruct(res.decomposition))
        assert err <= 1e-10
        assert res.iterations == 0  # already stationary

    def test_reduced_cost_matches_tail_energy_within_defect(self, rng):
        grid = SpatialGrid(24, 1.0)
        tg = make_uniform_time_grid(12, 1.0)
        x = grid.nodes
        profile = np.exp(-0.5 * ((x - 0.5) / 0.1) ** 2)
        values = np.stack(
            [
                np.interp((x - 0.37 * t) % 1.0, x, profile, period=1.0)
                + 0.1 * np.sin(2 * np.pi * (x + t))
                for t in tg.times
            ]
        )
        z = SnapshotSet(grid, tg, values)
        res = optimize_path_only(
            z, PathRepr.nodal(0.37 * tg.times), 2, OptimizerConfig(max_iters=3, grad_tol=1e-12)
        )
        recon_cost = eval_cost(z, res.decomposition)
        assert abs(res.cost_history[-1] - recon_cost) <= res.isometry_defect + 1e-12
        # defect is a small fraction of the cost scale (O(h^2) interpolation)
        assert res.isometry_defect <= 0.05 * max(res.cost_history[-1], recon_cost)

    def test_polynomial_path_variant(self):
        grid = SpatialGrid(24, 1.0)
        tg = make_uniform_time_grid(12, 1.0)
        x = grid.nodes
        profile = np.exp(-0.5 * ((x - 0.4) / 0.08) ** 2)
        z, _ = synthetic_traveling([TravelingProfile(profile, speed=0.5)], grid, tg)
        res = optimize_path_only(
            z,
            PathRepr.polynomial([0.0, 0.4]),
            1,
            OptimizerConfig(max_iters=200, grad_tol=1e-10),
        )
        slope = res.decomposition.frames[0].path.values[1]
        assert abs(slope - 0.5) < 0.02

    def test_rank_out_of_range(self):
        z, _ = spike_fixture(n=16, m=8)
        with pytest.raises(ValueError):
            optimize_path_only(z, PathRepr.nodal(np.zeros(9)), 10, OptimizerConfig())


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            OptimizerConfig(max_iters=0)
        with pytest.raises(ValueError):
            OptimizerConfig(armijo_c=1.5)
        with pytest.raises(ValueError):
            OptimizerConfig(backtrack_factor=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(variables=("coeffs", "bogus"))
        with pytest.raises(ValueError):
            OptimizerConfig(lam=-0.1)
