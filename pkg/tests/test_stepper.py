"""Tests for the time integrators: splitting, fixed point, ladder, aborts."""

import numpy as np
import pytest

from grainflow import (
    AreaGrid,
    ModelParams,
    SimState,
    StepperConfig,
    build_initial_state,
    collision_propagate,
    compute_moments,
    flat_norm,
    picard_window,
    project_polyhedral,
    run_simulation,
    strang_step,
    truncation_ladder,
)
from grainflow.errors import AdmissibilityLossError, OverflowLeakError, StepSizeError


def make_params(beta=1.0, n0=10, delta_a=0.05, num_nodes=201):
    grid = AreaGrid(delta_a=delta_a, num_nodes=num_nodes)
    return ModelParams(beta=beta, n0=n0, grid=grid)


def exp_datum(params, scale=1.0, rate=2.0):
    return project_polyhedral(
        build_initial_state(params, "exponential", scale=scale, rate=rate),
        params)


class TestStepperConfig:
    def test_rejections(self):
        with pytest.raises(ValueError):
            StepperConfig(dt=0.0)
        with pytest.raises(ValueError):
            StepperConfig(dt=0.1, scheme="euler")
        with pytest.raises(ValueError):
            StepperConfig(dt=0.1, record_every=0)
        with pytest.raises(ValueError):
            StepperConfig(dt=0.1, window_steps=0)
        with pytest.raises(ValueError):
            StepperConfig(dt=0.1, picard_tol=0.0)


class TestCollisionPropagate:
    def test_zero_theta_is_identity(self):
        params = make_params()
        state = exp_datum(params)
        out = collision_propagate(state, 0.0, params)
        assert np.array_equal(out.f, state.f)
        assert out.f is not state.f

    def test_propagator_preserves_column_sums(self):
        # columns of the exchange matrix sum to zero, so the matrix
        # exponential preserves the per-node class total
        rng = np.random.default_rng(8)
        params = make_params(beta=0.6, n0=14, num_nodes=5)
        x = rng.uniform(0.0, 1.0, (params.n_classes, 5))
        for theta in (0.01, 0.3, 2.0):
            out = collision_propagate(SimState(x.copy()), theta, params)
            s0 = x.sum(axis=0)
            s1 = out.f.sum(axis=0)
            assert np.all(np.abs(s1 - s0) <= 1e-13 * np.abs(s0))

    def test_propagator_keeps_nonnegativity(self):
        # off-diagonal rates are non-negative, so the propagator is a
        # positive map
        rng = np.random.default_rng(9)
        params = make_params(num_nodes=4)
        x = rng.uniform(0.0, 1.0, (params.n_classes, 4))
        out = collision_propagate(SimState(x), 1.5, params)
        assert out.f.min() >= 0.0

    def test_negative_theta_rejected(self):
        params = make_params(num_nodes=4)
        state = SimState(np.zeros((params.n_classes, 4)))
        with pytest.raises(ValueError):
            collision_propagate(state, -0.1, params)


class TestStrangStep:
    def test_step_diagnostics(self):
        params = make_params()
        state = exp_datum(params)
        config = StepperConfig(dt=0.05)
        out, diag = strang_step(state, config, params)
        assert out.time == state.time + 0.05
        # the exponential datum vanishes at a = 0, so the step starts with
        # zero weight; the trial step moves shrinking mass to the boundary
        # and the trapezoid predictor picks that up
        assert diag.coupling_start == 0.0
        assert diag.coupling_mid > 0.0
        assert diag.departed.shape == (params.n_classes,)
        assert np.all(diag.departed[params.classes >= 6] == 0.0)
        assert np.all(diag.overflow[params.classes <= 6] == 0.0)
        out2, diag2 = strang_step(out, config, params)
        assert diag2.coupling_start > 0.0
        assert out2.time == state.time + 0.1

    def test_invariants_over_a_run(self):
        # the discrete facet balance closes to O(dt^2) per step: the
        # boundary outflux over one step sweeps whole cells, while the
        # coupling weight is calibrated from the node-0 values, so the
        # imbalance settles on an O(dt^2) plateau (measured ~0.9 dt^2 M0)
        # and the area integrates it
        params = make_params()
        state = exp_datum(params)
        mom0 = compute_moments(state, params)
        t_final, dt = 0.5, 0.05
        record = run_simulation(state, t_final, StepperConfig(dt=dt), params)
        area_drift = np.abs(record.area - mom0.area) / mom0.area
        assert area_drift.max() < 20.0 * dt ** 2 * t_final
        assert np.abs(record.imbalance).max() < 5.0 * dt ** 2 * mom0.facet_total
        assert np.all(np.diff(record.count) <= 1e-12 * mom0.count)
        assert record.flat.max() <= record.flat[0] * (1.0 + 1e-10)
        assert record.min_node.min() >= -1e-14 * record.flat[0]


class TestRunSimulation:
    def test_record_layout(self):
        params = make_params()
        state = exp_datum(params)
        config = StepperConfig(dt=0.05, record_every=3)
        record = run_simulation(state, 0.5, config, params)
        assert record.times.shape == (11,)
        assert np.allclose(record.times, 0.05 * np.arange(11))
        # cadence samples 0, 3, 6, 9 plus the forced final step 10
        assert list(record.sample_steps) == [0, 3, 6, 9, 10]
        assert len(record.samples) == 5
        assert record.samples[0].time == 0.0
        assert record.samples[-1].time == 0.5
        assert record.outflow_cum is not None
        assert record.outflow_cum.shape == (11, params.n_classes)
        assert np.array_equal(record.initial.f, state.f)

    def test_sample_at(self):
        params = make_params()
        state = exp_datum(params)
        record = run_simulation(state, 0.5, StepperConfig(dt=0.05), params)
        assert record.sample_at(0.25).time == 0.25
        with pytest.raises(KeyError):
            record.sample_at(0.5 + 0.05)

    def test_lattice_violations_rejected(self):
        params = make_params()
        state = exp_datum(params)
        with pytest.raises(StepSizeError):
            run_simulation(state, 0.5, StepperConfig(dt=0.07), params)
        with pytest.raises(StepSizeError):
            run_simulation(state, 0.52, StepperConfig(dt=0.05), params)

    def test_unbalanced_data_rejected(self):
        params = make_params()
        state = build_initial_state(params, "exponential", scale=1.0, rate=2.0)
        with pytest.raises(ValueError, match="imbalance"):
            run_simulation(state, 0.5, StepperConfig(dt=0.05), params)

    def test_overflow_abort_carries_partial_record(self):
        # growing-class mass parked next to a_max leaks immediately
        params = make_params(num_nodes=61)
        a = params.grid.nodes
        hi = params.grid.a_max
        f = np.zeros((params.n_classes, 61))
        prof = np.where((a > hi - 1.0) & (a < hi - 0.25),
                        np.sin(np.pi * (a - hi + 1.0) / 0.75) ** 2, 0.0)
        f[-1] = prof           # class 10
        f[0] = prof            # class 2 balances the facet count
        state = project_polyhedral(SimState(f, 0.0), params)
        config = StepperConfig(dt=0.05, overflow_tol_factor=1e-6)
        with pytest.raises(OverflowLeakError) as info:
            run_simulation(state, 1.0, config, params)
        record = info.value.record
        assert record is not None
        assert record.times.size < 21
        assert record.sample_steps[-1] == record.times.size - 1

    def test_coupling_floor_abort(self):
        params = make_params()
        state = exp_datum(params)
        config = StepperConfig(dt=0.05, coupling_floor_factor=1e6)
        with pytest.raises(AdmissibilityLossError) as info:
            run_simulation(state, 0.5, config, params)
        assert info.value.record is not None


class TestPicard:
    def test_window_converges_and_matches_strang(self):
        params = make_params()
        state = exp_datum(params)
        config = StepperConfig(dt=0.05, picard_tol=1e-12)
        states, diag = picard_window(state, 4, config, params)
        assert len(states) == 5
        assert diag.iterations < 50
        assert diag.diffs[-1] < 1e-12
        s_strang = state
        for _ in range(4):
            s_strang, _ = strang_step(s_strang, config, params)
        # both schemes are O(dt^2); their gap is a few percent of the data
        # scale at dt = 0.05 (the flat norm is dominated by the top classes,
        # whose profile weights are ~1e-4)
        assert flat_norm(states[-1].f - s_strang.f, params) < 0.25 * flat_norm(
            state, params)
        sup_gap = np.abs(states[-1].f - s_strang.f).max()
        assert sup_gap < 0.1 * state.f.max()

    def test_picard_run_matches_strang_run(self):
        params = make_params()
        state = exp_datum(params)
        t_final = 0.25
        rec_p = run_simulation(state, t_final,
                               StepperConfig(dt=0.05, scheme="picard"), params)
        rec_s = run_simulation(state, t_final,
                               StepperConfig(dt=0.05, scheme="strang"), params)
        assert rec_p.outflow_cum is None
        assert rec_p.times.shape == rec_s.times.shape
        gap = max(
            flat_norm(sp.f - ss.f, params)
            for sp, ss in zip(rec_p.samples, rec_s.samples))
        assert gap < 0.25 * rec_s.flat[0]

    def test_count_decreases_up_to_quadrature_slack(self):
        # the mild-form integrator uses a trapezoid-in-time quadrature, so
        # its per-step count balance closes to O(dt^2) only (the splitting
        # scheme conserves the count exactly; see the strang invariants test)
        params = make_params()
        state = exp_datum(params)
        dt = 0.05
        record = run_simulation(state, 0.25,
                                StepperConfig(dt=dt, scheme="picard"), params)
        mom0 = compute_moments(state, params)
        assert np.all(np.diff(record.count) <= dt ** 2 * mom0.count)
        assert record.count[-1] < mom0.count


class TestTruncationLadder:
    def test_report_structure_and_decrease(self):
        params = make_params(n0=14, num_nodes=81)
        a = params.grid.nodes
        f = np.zeros((params.n_classes, 81))
        prof = np.where((a > 0.5) & (a < 2.0),
                        np.sin(np.pi * (a - 0.5) / 1.5) ** 2, 0.0)
        f[2] = prof            # class 4
        f[6] = 0.5 * prof      # class 8
        state = project_polyhedral(SimState(f, 0.0), params)
        config = StepperConfig(dt=0.05, record_every=2)
        report = truncation_ladder(state, (10, 12, 14), 0.5, config, params)
        assert report.rungs == [10, 12, 14]
        assert len(report.records) == 3
        assert report.pair_sup.shape == (2,)
        assert report.pair_sup[1] < report.pair_sup[0]
        assert report.pair_sup_low[1] < report.pair_sup_low[0]

    def test_projected_ladder_accepts_full_support_datum(self):
        # the exponential datum carries mass in every class, so truncated
        # rungs need the per-rung re-balance to pass the admissibility gate
        params = make_params(n0=14, num_nodes=201)
        state = exp_datum(params)
        config = StepperConfig(dt=0.05, record_every=2)
        with pytest.raises(ValueError, match="imbalance"):
            truncation_ladder(state, (10, 12, 14), 0.25, config, params)
        report = truncation_ladder(state, (10, 12, 14), 0.25, config, params,
                                   project=True)
        assert report.pair_sup[1] < report.pair_sup[0]

    def test_validation(self):
        params = make_params(n0=10)
        state = exp_datum(params)
        config = StepperConfig(dt=0.05)
        with pytest.raises(ValueError):
            truncation_ladder(state, (10,), 0.5, config, params)
        with pytest.raises(ValueError):
            truncation_ladder(state, (10, 12), 0.5, config, params)
