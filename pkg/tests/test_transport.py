"""Tests for the exact characteristic transport and its boundary bookkeeping."""

import numpy as np
import pytest

from grainflow import AreaGrid, ModelParams, SimState, relaxed_transport, shift_transport
from grainflow.errors import StepSizeError
from grainflow.transport import cell_steps, shift_panel, shift_row
from grainflow.core import compute_moments, super_solution


def make_params(beta=1.0, n0=10, delta_a=0.1, num_nodes=41):
    grid = AreaGrid(delta_a=delta_a, num_nodes=num_nodes)
    return ModelParams(beta=beta, n0=n0, grid=grid)


def bump_state(params, lo=1.0, hi=2.5, seed=3):
    """Random per-class amplitudes on a shared interior bump profile."""
    a = params.grid.nodes
    prof = np.where((a > lo) & (a < hi),
                    np.sin(np.pi * (a - lo) / (hi - lo)) ** 2, 0.0)
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.5, 1.5, params.n_classes)
    return SimState(amps[:, None] * prof[None, :], 0.0)


class TestCellSteps:
    def test_integer_multiples(self):
        assert cell_steps(0.3, 0.1) == 3
        assert cell_steps(0.0, 0.1) == 0
        assert cell_steps(0.1 * 7, 0.1) == 7  # tolerant of float accumulation

    def test_rejections(self):
        with pytest.raises(StepSizeError):
            cell_steps(0.05, 0.1)
        with pytest.raises(StepSizeError):
            cell_steps(-0.1, 0.1)


class TestShiftRow:
    def test_directions(self):
        row = np.array([1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(shift_row(row, 0), row)
        assert np.array_equal(shift_row(row, 1), [0.0, 1.0, 2.0, 3.0])
        assert np.array_equal(shift_row(row, -2), [3.0, 4.0, 0.0, 0.0])
        assert np.array_equal(shift_row(row, 5), np.zeros(4))
        assert np.array_equal(shift_row(row, -4), np.zeros(4))


class TestShiftTransport:
    def test_rows_move_at_class_speed(self):
        params = make_params(delta_a=0.5, num_nodes=9)
        f = np.zeros((params.n_classes, 9))
        f[:, 4] = 1.0  # spike in every class at a = 2
        f[params.classes > 6, 0] = 0.0
        out, _ = shift_transport(SimState(f, 0.0), 0.5, params)
        for i, v in enumerate(params.speeds):
            expected = np.zeros(9)
            if 0 <= 4 + v < 9:
                expected[4 + v] = 1.0
            assert np.array_equal(out.f[i], expected), f"class {params.classes[i]}"

    def test_interior_support_count_balance_is_exact(self):
        # nothing reaches either boundary: count splits exactly between
        # the new state and the (empty) departed/overflow tallies
        params = make_params(num_nodes=101)
        state = bump_state(params)
        c0 = compute_moments(state, params, strict=False).count
        out, flow = shift_transport(state, 0.2, params)
        c1 = compute_moments(out, params, strict=False).count
        assert flow.departed.sum() == 0.0
        assert flow.overflow.sum() == 0.0
        assert np.isclose(c1, c0, rtol=1e-14)
        assert out.time == 0.2

    def test_departed_mass_is_captured(self):
        # a shrinking-class bump pushed through a = 0 lands in departed
        params = make_params(num_nodes=41)
        a = params.grid.nodes
        prof = np.where(a < 1.0, 1.0 - a, 0.0)
        f = np.zeros((params.n_classes, 41))
        f[0] = prof  # class 2, speed -4
        state = SimState(f, 0.0)
        w = params.grid.quadrature_weights()
        c0 = float(f[0] @ w)
        out, flow = shift_transport(state, 1.0, params)  # shift left 40 nodes
        assert np.all(out.f[0] == 0.0)
        assert np.isclose(flow.departed[0], c0, rtol=1e-13)
        assert flow.overflow[0] == 0.0

    def test_overflow_mass_is_captured(self):
        # a growing-class bump pushed past a_max lands in overflow
        params = make_params(num_nodes=41)
        a = params.grid.nodes
        prof = np.where((a > 2.0) & (a < 3.0),
                        np.sin(np.pi * (a - 2.0)) ** 2, 0.0)
        f = np.zeros((params.n_classes, 41))
        f[-1] = prof  # class 10, speed 4
        state = SimState(f, 0.0)
        w = params.grid.quadrature_weights()
        c0 = float(f[-1] @ w)
        out, flow = shift_transport(state, 1.0, params)
        assert np.all(out.f[-1] == 0.0)
        assert np.isclose(flow.overflow[-1], c0, rtol=1e-13)

    def test_partial_sweep_balance(self):
        # a bump straddling the boundary: moved mass + departed = original
        params = make_params(num_nodes=41)
        a = params.grid.nodes
        f = np.zeros((params.n_classes, 41))
        f[1] = np.exp(-a)  # class 3, speed -3
        state = SimState(f, 0.0)
        w = params.grid.quadrature_weights()
        c0 = float(f[1] @ w)
        out, flow = shift_transport(state, 0.4, params)
        c1 = float(out.f[1] @ w)
        # balance closes up to the half-weight of the node entering the
        # stencil at a_max (data there are e^{-4} scaled, not zero)
        slack = 0.5 * params.grid.delta_a * np.exp(-a[-1])
        assert abs(c1 + flow.departed[1] - c0) <= slack + 1e-14

    def test_growing_class_inflow_is_zero(self):
        params = make_params()
        state = bump_state(params)
        out, _ = shift_transport(state, 0.3, params)
        growing = params.classes > 6
        speeds = params.speeds[growing]
        for row, v in zip(out.f[growing], speeds):
            assert np.all(row[: v * 3] == 0.0)

    def test_boundary_values_reported(self):
        params = make_params(delta_a=0.5, num_nodes=9)
        f = np.ones((params.n_classes, 9))
        f[params.classes > 6, 0] = 0.0
        f[2, 0] = 7.0
        _, flow = shift_transport(SimState(f, 0.0), 0.5, params)
        assert flow.boundary_values[2] == 7.0
        assert np.all(flow.boundary_values[params.classes > 6] == 0.0)

    def test_two_small_steps_equal_one_big_step(self):
        params = make_params(num_nodes=81)
        state = bump_state(params, lo=2.0, hi=3.0)
        one, _ = shift_transport(state, 0.4, params)
        half, _ = shift_transport(state, 0.2, params)
        two, _ = shift_transport(half, 0.2, params)
        assert np.array_equal(one.f, two.f)


class TestShiftPanel:
    def test_matches_shift_transport(self):
        params = make_params()
        state = bump_state(params)
        out, _ = shift_transport(state, 0.3, params)
        panel = shift_panel(state.f, 3, params)
        assert np.array_equal(out.f, panel)


class TestRelaxedTransport:
    def test_decay_factors(self):
        # drift plus exponential relaxation at the per-class loss rates
        params = make_params()
        state = bump_state(params)
        G = 0.37
        out = relaxed_transport(state, 0.3, G, params)
        u = super_solution(params).u
        plain = shift_panel(state.f, 3, params)
        expected = np.exp(-u[:, None] * G) * plain
        assert np.allclose(out.f, expected, rtol=1e-14)
        assert out.time == 0.3

    def test_zero_integral_is_pure_shift(self):
        params = make_params()
        state = bump_state(params)
        out = relaxed_transport(state, 0.2, 0.0, params)
        plain, _ = shift_transport(state, 0.2, params)
        assert np.array_equal(out.f, plain.f)

    def test_negative_integral_rejected(self):
        params = make_params()
        state = bump_state(params)
        with pytest.raises(ValueError):
            relaxed_transport(state, 0.2, -1e-3, params)
