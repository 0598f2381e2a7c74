import io

import numpy as np
import pytest

from kwlab.errors import BlowUpError, UnknownFormatVersionError
from kwlab.solver import (
    SolverConfig,
    Trajectory,
    advance,
    align_shift,
    conserved_l2,
    conserved_trace,
    load_trajectory,
    nonlinearity,
    save_trajectory,
    shifted,
    simulate,
    stable_dt,
    step,
    traveling_wave,
    traveling_wave_residual,
)
from kwlab.spectral import (
    GridSpec,
    RealField,
    SpectralField,
    forward_transform,
    frequencies,
    grid_points,
    inverse_transform,
    mode_numbers,
    retained_mask,
    semigroup_apply,
    sobolev_norm,
)

from conftest import hermitian_random_field
from oracles import richardson_orders, slow_derivative_of_square


class TestNonlinearity:
    def test_zero(self, unit_grid):
        u = SpectralField(np.zeros(64, complex), unit_grid)
        assert np.all(nonlinearity(u).coeffs == 0)

    def test_cosine_gives_minus_sin_2x(self):
        # u = cos x: (u^2)_x = d/dx (1 + cos 2x)/2 = -sin 2x
        g = GridSpec(32, 2.0 * np.pi)
        u = forward_transform(RealField(np.cos(grid_points(g))), g)
        out = nonlinearity(u, "galerkin_consistent")
        expected = forward_transform(RealField(-np.sin(2.0 * grid_points(g))), g)
        assert np.max(np.abs(out.coeffs - expected.coeffs)) < 1e-13

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_direct_convolution(self, unit_grid, seed):
        u = hermitian_random_field(unit_grid, 10.0, 1.0, seed=seed)
        fast = nonlinearity(u, "galerkin_consistent").coeffs
        keep = mode_numbers(unit_grid)[retained_mask(unit_grid)]
        slow = slow_derivative_of_square(u.coeffs, unit_grid.length, keep)
        assert np.max(np.abs(fast - slow)) < 1e-12

    def test_two_thirds_masks_top_modes(self, unit_grid):
        u = hermitian_random_field(unit_grid, 30.0, 1.0, seed=5)
        out = nonlinearity(u, "two_thirds")
        k = np.abs(mode_numbers(unit_grid))
        assert np.all(out.coeffs[k >= unit_grid.num_modes / 3.0] == 0)

    def test_mean_is_exactly_zero(self, unit_grid):
        u = hermitian_random_field(unit_grid, 10.0, 1.0, seed=7)
        for mode in ("galerkin_consistent", "two_thirds", "none"):
            assert nonlinearity(u, mode).coeffs[0] == 0.0


class TestStep:
    def test_linear_step_is_exact_semigroup(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=1)
        cfg = SolverConfig(dt=0.37, t_end=1.0, nonlinearity_enabled=False)
        expected = semigroup_apply(u, 0.37)
        got = step(u, cfg)
        assert np.max(np.abs(got.coeffs - expected.coeffs)) == 0.0

    def test_zero_state_fixed(self, unit_grid):
        u = SpectralField(np.zeros(64, complex), unit_grid)
        assert np.all(step(u, SolverConfig(dt=0.1, t_end=1.0)).coeffs == 0)

    def test_fourth_order_convergence(self, wide_grid):
        u0 = hermitian_random_field(wide_grid, 0.6, 4.0, seed=4)
        t_end = 2.0

        def final(dt):
            tr = simulate(u0, SolverConfig(dt=dt, t_end=t_end), snapshot_stride=10**9)
            return tr.snapshots[-1].coeffs

        ref = final(t_end / 1024)
        errs = [np.max(np.abs(final(t_end / n) - ref)) for n in (8, 16, 32, 64)]
        orders = richardson_orders(errs)
        assert np.all(orders >= 3.8)

    def test_time_reversal(self, wide_grid):
        u0 = hermitian_random_field(wide_grid, 0.6, 4.0, seed=4)
        h = 0.25
        there = advance(u0, h)
        back = advance(there, -h)
        reversal = np.max(np.abs(back.coeffs - u0.coeffs))
        # Richardson estimate of the local truncation error at step size h
        two_half = advance(advance(u0, h / 2), h / 2)
        lte = np.max(np.abs(there.coeffs - two_half.coeffs)) / (1.0 - 2.0**-4)
        assert reversal <= 10.0 * lte

    def test_blow_up_detected(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1e9, seed=0)
        with pytest.raises(BlowUpError):
            state = u
            for _ in range(50):
                state = advance(state, 0.5)


class TestSimulate:
    def test_linear_cosine_transport(self):
        g = GridSpec(64, 2.0 * np.pi, beta=0)
        u0 = forward_transform(RealField(np.cos(grid_points(g))), g)
        cfg = SolverConfig(dt=0.01, t_end=1.0, nonlinearity_enabled=False)
        traj = simulate(u0, cfg, snapshot_stride=100)
        final = inverse_transform(traj.snapshots[-1]).samples
        assert np.max(np.abs(final - np.cos(grid_points(g) + 1.0))) < 1e-10

    def test_zero_data(self, unit_grid):
        u0 = SpectralField(np.zeros(64, complex), unit_grid)
        traj = simulate(u0, SolverConfig(dt=0.01, t_end=0.1), snapshot_stride=2)
        assert all(np.all(s.coeffs == 0) for s in traj.snapshots)

    def test_first_snapshot_is_initial_data(self, unit_grid):
        u0 = hermitian_random_field(unit_grid, 8.0, 0.1, seed=3)
        traj = simulate(u0, SolverConfig(dt=0.01, t_end=0.05))
        assert traj.times[0] == 0.0
        assert np.array_equal(traj.snapshots[0].coeffs, u0.coeffs)

    def test_l2_conservation_small_data(self):
        g = GridSpec(256, 2.0 * np.pi, beta=1)
        u0 = hermitian_random_field(g, 12.0, 0.02, seed=3)
        traj = simulate(u0, SolverConfig(dt=5e-4, t_end=0.25), snapshot_stride=100)
        l2 = np.array([conserved_l2(s) for s in traj.snapshots])
        assert (l2.max() - l2.min()) / l2[0] < 1e-6

    def test_mean_invariance_exact(self, wide_grid):
        u0 = hermitian_random_field(wide_grid, 0.6, 1.0, seed=6)
        traj = simulate(u0, SolverConfig(dt=0.01, t_end=0.2), snapshot_stride=5)
        assert all(s.coeffs[0] == 0.0 for s in traj.snapshots)
        assert all(s.coeffs[wide_grid.num_modes // 2] == 0.0 for s in traj.snapshots)

    def test_linear_limit_matches_semigroup_composition(self, unit_grid):
        u0 = hermitian_random_field(unit_grid, 8.0, 1.0, seed=8)
        cfg = SolverConfig(dt=0.05, t_end=0.5, nonlinearity_enabled=False)
        traj = simulate(u0, cfg, snapshot_stride=5)
        for t, snap in zip(traj.times, traj.snapshots):
            expected = semigroup_apply(u0, t)
            assert np.max(np.abs(snap.coeffs - expected.coeffs)) < 1e-12


class TestConservedQuantities:
    def test_zero(self, unit_grid):
        assert conserved_l2(SpectralField(np.zeros(64, complex), unit_grid)) == 0.0

    def test_cosine(self):
        g = GridSpec(32, 2.0 * np.pi)
        u = forward_transform(RealField(np.cos(grid_points(g))), g)
        assert abs(conserved_l2(u) - np.pi) < 1e-12

    def test_trace_rows(self, unit_grid):
        u0 = hermitian_random_field(unit_grid, 8.0, 0.1, seed=4)
        traj = simulate(u0, SolverConfig(dt=0.01, t_end=0.05))
        rows = conserved_trace(traj)
        assert len(rows) == len(traj)
        t, l2, h2 = rows[0]
        assert abs(l2 - conserved_l2(u0)) < 1e-14
        assert abs(h2 - sobolev_norm(u0, 2.0) ** 2) < 1e-12


class TestStableDt:
    def test_heuristic(self):
        g = GridSpec(64, 2.0 * np.pi, beta=0)
        xi_max = np.max(np.abs(frequencies(g)))
        assert abs(stable_dt(g, 1.0) - 1.0 / xi_max**5) < 1e-18


@pytest.fixture(scope="module")
def wave_setup():
    # closed-form solitary profile A sech^4(B x) at one special speed,
    # shifted to mean zero, which travels at speed c - 2 mean
    length, m = 120.0, 512
    g = GridSpec(m, length, 1.0, 1)
    x = grid_points(g)
    amp, width = 105.0 / 338.0, 1.0 / np.sqrt(52.0)
    line_profile = amp / np.cosh(width * (x - length / 2.0)) ** 4
    mean = line_profile.mean()
    c = 36.0 / 169.0 - 2.0 * mean
    return g, c, line_profile - mean


class TestTravelingWave:

    def test_residual_and_symmetry(self, wave_setup):
        g, c, _ = wave_setup
        phi = traveling_wave(c, g)
        assert traveling_wave_residual(phi, c) <= 1e-10
        samples = inverse_transform(phi).samples
        j0 = int(np.argmax(samples))
        m = g.num_modes
        offs = np.arange(1, m // 2)
        asym = np.max(np.abs(samples[(j0 + offs) % m] - samples[(j0 - offs) % m]))
        assert asym <= 1e-8

    def test_matches_closed_form_profile(self, wave_setup):
        g, c, oracle = wave_setup
        phi = traveling_wave(c, g)
        samples = inverse_transform(phi).samples
        assert np.max(np.abs(samples - oracle)) < 1e-8

    def test_propagation(self, wave_setup):
        g, c, _ = wave_setup
        phi = traveling_wave(c, g)
        horizon = 5.0 / c
        traj = simulate(phi, SolverConfig(dt=0.005, t_end=horizon), snapshot_stride=10**9)
        final = traj.snapshots[-1]
        delta = align_shift(phi, final)
        aligned = shifted(final, delta)
        err = np.sqrt(
            conserved_l2(SpectralField(aligned.coeffs - phi.coeffs, g)) / conserved_l2(phi)
        )
        assert err <= 1e-4
        assert abs((-delta) % g.length - (c * horizon) % g.length) < 0.05

    def test_requires_focusing_sign(self):
        g = GridSpec(64, 50.0, 1.0, 0)
        with pytest.raises(ValueError):
            traveling_wave(0.2, g)

    def test_speed_range_enforced(self):
        g = GridSpec(64, 50.0, 1.0, 1)
        with pytest.raises(ValueError):
            traveling_wave(100.0, g, speed_range=(0.02, 5.0))


class TestTrajectoryFormat:
    def test_round_trip(self, tmp_path, unit_grid):
        u0 = hermitian_random_field(unit_grid, 8.0, 0.1, seed=11)
        traj = simulate(u0, SolverConfig(dt=0.01, t_end=0.05), snapshot_stride=2)
        path = tmp_path / "run.kwtr"
        save_trajectory(traj, path)
        back = load_trajectory(path)
        assert len(back) == len(traj)
        assert np.allclose(back.times, traj.times)
        for a, b in zip(back.snapshots, traj.snapshots):
            assert np.array_equal(a.coeffs, b.coeffs)

    def test_unknown_version(self, tmp_path, unit_grid):
        u0 = hermitian_random_field(unit_grid, 8.0, 0.1, seed=11)
        traj = simulate(u0, SolverConfig(dt=0.01, t_end=0.03))
        path = tmp_path / "run.kwtr"
        save_trajectory(traj, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 42
        path.write_bytes(bytes(raw))
        with pytest.raises(UnknownFormatVersionError):
            load_trajectory(path)

    def test_times_must_increase(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 0.1, seed=0)
        with pytest.raises(ValueError):
            Trajectory(grid=unit_grid, times=np.array([0.0, 0.0]), snapshots=(u, u))
