"""Time integration: Strang splitting and a relaxed fixed-point scheme.

Both steppers advance on the lattice t_k = k dt with dt an integer multiple
of the node spacing, so transport legs are exact index shifts.

The Strang step is collision-transport-collision: half a collision substep
on each side of one full transport step. Putting the full-step transport in
the middle keeps every shift an exact integer move even when dt equals the
node spacing (a transport half-step would drag odd-speed classes half a
cell off the lattice). The collision substeps apply the matrix exponential
of the exchange operator scaled by half the time integral of the coupling
weight across the step; that integral is estimated by a trapezoid predictor
(one trial step with the weight frozen at its start value, re-evaluate on
the trial end state, average). Symmetry of the splitting makes the facet
imbalance excursions inside a step cancel to leading order, which is what
keeps the total area drift at the recorded times small.

The fixed-point scheme iterates the mild-solution map on short windows:
relaxed free flight of the window's initial state plus a trapezoid-in-time
integral of relax-transported gain terms, with the coupling weight
recomputed from the current iterate. Windows that fail to contract are
halved by the driver.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .core import (
    ModelParams,
    SimState,
    apply_collision_gain,
    check_admissible,
    check_shape,
    collision_matrix,
    compute_moments,
    flat_norm,
    super_solution,
)
from .errors import (
    AdmissibilityLossError,
    NonContractionError,
    OverflowLeakError,
    PropagatorError,
    StepSizeError,
)
from .initial import project_polyhedral
from .transport import cell_steps, shift_panel, shift_transport


@dataclass(frozen=True)
class StepperConfig:
    """Knobs of the time integrators.

    dt must be an integer multiple of the grid spacing. record_every sets
    the cadence (in steps) at which full states are stored on the record;
    scalar series are stored every step regardless. The coupling floor used
    by the Strang scheme is coupling_floor_factor * (4 - 2 beta) * count(0);
    a denominator below it aborts the run. Runs also abort when cumulative
    overflow past the end of the grid exceeds overflow_tol_factor * count(0).
    """

    dt: float
    scheme: str = "strang"
    record_every: int = 1
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    window_steps: int = 8
    window_retry_cap: int = 8
    coupling_floor_factor: float = 1e-8
    overflow_tol_factor: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in ("strang", "picard"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        if self.window_steps < 1:
            raise ValueError("window_steps must be at least 1")
        if not 0.0 < self.picard_tol:
            raise ValueError("picard_tol must be positive")


@lru_cache(maxsize=512)
def _propagator(theta: float, beta: float, n0: int, truncated: bool) -> np.ndarray:
    mat = expm(theta * collision_matrix(beta, n0, truncated))
    if not np.all(np.isfinite(mat)):
        raise PropagatorError(f"collision propagator is not finite at theta = {theta}")
    mat.flags.writeable = False
    return mat


def collision_propagate(state: SimState, theta: float, params: ModelParams) -> SimState:
    """Advance the collision part: exp(theta J) applied at every area node.

    theta is the time integral of the coupling weight over the substep.
    Propagators are cached per distinct theta; theta = 0 is the identity.
    """
    check_shape(state, params)
    if theta < 0.0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    if theta == 0.0:
        return state.copy()
    prop = _propagator(float(theta), params.beta, params.n0, params.truncated)
    return SimState(prop @ state.f, state.time)


@dataclass
class StepDiagnostics:
    """Bookkeeping of one Strang step.

    coupling_start is the weight evaluated on the step's initial state;
    coupling_mid is the trapezoid-averaged weight the collision halves
    actually used. departed / overflow / boundary_values come from the
    step's single full transport leg.
    """

    departed: np.ndarray
    overflow: np.ndarray
    boundary_values: np.ndarray
    coupling_start: float
    coupling_mid: float


def _stepping_weight(state: SimState, params: ModelParams, floor: float) -> float:
    mom = compute_moments(state, params, strict=False)
    if mom.coupling_den > floor:
        return mom.coupling if mom.coupling > 0.0 else 0.0
    if not np.any(state.f):
        return 0.0
    raise AdmissibilityLossError(
        f"coupling denominator {mom.coupling_den:.6g} at or below floor {floor:.6g} "
        f"at t = {state.time:.6g}"
    )


def strang_step(state: SimState, config: StepperConfig, params: ModelParams,
                coupling_floor: float = 0.0):
    """One collision-transport-collision step of length config.dt.

    Returns (new state, StepDiagnostics). The collision halves share one
    effective weight obtained by a trapezoid predictor: run a trial step
    with the weight frozen at its start value, re-evaluate the weight on
    the trial end state, and average the two. The trial's transport
    bookkeeping is discarded; only the real step's flow is reported.
    """
    dt = config.dt
    w_start = _stepping_weight(state, params, coupling_floor)
    t1 = collision_propagate(state, w_start * 0.5 * dt, params)
    t2, _ = shift_transport(t1, dt, params)
    t3 = collision_propagate(t2, w_start * 0.5 * dt, params)
    w_eff = 0.5 * (w_start + _stepping_weight(t3, params, coupling_floor))
    s1 = collision_propagate(state, w_eff * 0.5 * dt, params)
    s2, flow = shift_transport(s1, dt, params)
    s3 = collision_propagate(s2, w_eff * 0.5 * dt, params)
    s3.time = state.time + dt
    diag = StepDiagnostics(
        departed=flow.departed,
        overflow=flow.overflow,
        boundary_values=flow.boundary_values,
        coupling_start=w_start,
        coupling_mid=w_eff,
    )
    return s3, diag


@dataclass
class TrajectoryRecord:
    """Scalar series at every step plus full states at the sampling cadence.

    Series include row 0 for the initial state. outflow_cum and overflow_cum
    are cumulative per-class tallies; they are None for the fixed-point
    scheme, whose relaxed shifts do not produce boundary bookkeeping.
    """

    times: np.ndarray
    count: np.ndarray
    area: np.ndarray
    facet_total: np.ndarray
    imbalance: np.ndarray
    exchange_rate: np.ndarray
    coupling_num: np.ndarray
    coupling_den: np.ndarray
    coupling: np.ndarray
    coupling_sup: np.ndarray
    flat: np.ndarray
    min_node: np.ndarray
    outflow_cum: np.ndarray | None
    overflow_cum: np.ndarray | None
    sample_steps: np.ndarray
    samples: list
    initial: SimState
    params: ModelParams
    config: StepperConfig

    @property
    def sample_times(self) -> np.ndarray:
        return self.times[self.sample_steps]

    def sample_at(self, t: float) -> SimState:
        """Stored state closest to time t (must match within half a step)."""
        k = int(np.argmin(np.abs(self.sample_times - t)))
        if abs(self.sample_times[k] - t) > 0.5 * self.config.dt:
            raise KeyError(f"no stored state near t = {t}")
        return self.samples[k]


class _RecordBuilder:
    def __init__(self, initial: SimState, params: ModelParams, config: StepperConfig,
                 track_outflow: bool):
        self.params = params
        self.config = config
        self.initial = initial.copy()
        self.track = track_outflow
        self.rows = {k: [] for k in (
            "times", "count", "area", "facet_total", "imbalance", "exchange_rate",
            "coupling_num", "coupling_den", "coupling", "coupling_sup", "flat",
            "min_node")}
        self.outflow = [] if track_outflow else None
        self.overflow = [] if track_outflow else None
        self._out_acc = np.zeros(params.n_classes)
        self._over_acc = np.zeros(params.n_classes)
        self.sample_steps = []
        self.samples = []
        self._sup = 0.0

    def add(self, step: int, state: SimState, departed=None, overflow=None):
        mom = compute_moments(state, self.params, strict=False)
        r = self.rows
        r["times"].append(state.time)
        r["count"].append(mom.count)
        r["area"].append(mom.area)
        r["facet_total"].append(mom.facet_total)
        r["imbalance"].append(mom.imbalance)
        r["exchange_rate"].append(mom.exchange_rate)
        r["coupling_num"].append(mom.coupling_num)
        r["coupling_den"].append(mom.coupling_den)
        w = mom.coupling if mom.coupling_valid and mom.coupling > 0.0 else 0.0
        r["coupling"].append(w)
        self._sup = max(self._sup, w)
        r["coupling_sup"].append(self._sup)
        r["flat"].append(flat_norm(state, self.params))
        r["min_node"].append(float(state.f.min()))
        if self.track:
            if departed is not None:
                self._out_acc = self._out_acc + departed
                self._over_acc = self._over_acc + overflow
            self.outflow.append(self._out_acc.copy())
            self.overflow.append(self._over_acc.copy())
        if step % self.config.record_every == 0:
            self.sample_steps.append(step)
            self.samples.append(state.copy())

    @property
    def overflow_total(self) -> float:
        return float(np.abs(self._over_acc).sum())

    def ensure_sampled(self, step: int, state: SimState):
        if not self.sample_steps or self.sample_steps[-1] != step:
            self.sample_steps.append(step)
            self.samples.append(state.copy())

    def finish(self) -> TrajectoryRecord:
        arr = {k: np.array(v) for k, v in self.rows.items()}
        return TrajectoryRecord(
            outflow_cum=np.array(self.outflow) if self.track else None,
            overflow_cum=np.array(self.overflow) if self.track else None,
            sample_steps=np.array(self.sample_steps, dtype=int),
            samples=self.samples,
            initial=self.initial,
            params=self.params,
            config=self.config,
            **arr,
        )


def _integer_steps(t_final: float, dt: float) -> int:
    m = round(t_final / dt)
    if m < 1 or abs(t_final - m * dt) > 1e-9 * max(1.0, t_final):
        raise StepSizeError(f"t_final = {t_final} is not a positive multiple of dt = {dt}")
    return int(m)


def run_simulation(initial: SimState, t_final: float, config: StepperConfig,
                   params: ModelParams) -> TrajectoryRecord:
    """March the configured scheme to t_final and record the trajectory.

    initial must be admissible (non-negative, clean boundary, balanced
    facets, finite flat norm); t_final must be an integer number of steps.
    AdmissibilityLossError and OverflowLeakError carry the partial record.
    """
    check_admissible(initial, params)
    cell_steps(config.dt, params.grid.delta_a)  # validate lattice compatibility
    n_steps = _integer_steps(t_final, config.dt)
    mom0 = compute_moments(initial, params, strict=False)
    floor = config.coupling_floor_factor * (4.0 - 2.0 * params.beta) * mom0.count
    overflow_cap = config.overflow_tol_factor * mom0.count

    builder = _RecordBuilder(initial, params, config,
                             track_outflow=config.scheme == "strang")
    start = initial.copy()
    start.time = 0.0
    builder.add(0, start)

    if config.scheme == "strang":
        state = start
        for k in range(1, n_steps + 1):
            try:
                state, diag = strang_step(state, config, params, floor)
            except AdmissibilityLossError as err:
                raise AdmissibilityLossError(str(err), record=builder.finish()) from None
            state.time = k * config.dt
            builder.add(k, state, diag.departed, diag.overflow)
            if builder.overflow_total > overflow_cap:
                builder.ensure_sampled(k, state)
                raise OverflowLeakError(
                    f"cumulative overflow {builder.overflow_total:.6g} exceeds "
                    f"{overflow_cap:.6g} at t = {state.time:.6g}",
                    record=builder.finish(),
                )
    else:
        state = start
        k = 0
        window = config.window_steps
        retries = 0
        while k < n_steps:
            w = min(window, n_steps - k)
            try:
                states, _ = picard_window(state, w, config, params)
            except NonContractionError as err:
                retries += 1
                if retries > config.window_retry_cap or w == 1:
                    raise NonContractionError(
                        f"{err} (window halving exhausted)") from None
                window = max(1, w // 2)
                continue
            for j in range(1, w + 1):
                states[j].time = (k + j) * config.dt
                builder.add(k + j, states[j])
            state = states[-1]
            k += w

    record = builder.finish()
    if record.sample_steps[-1] != n_steps:
        builder.ensure_sampled(n_steps, state)
        record = builder.finish()
    return record


@dataclass
class PicardDiagnostics:
    """Convergence trace of one fixed-point window."""

    iterations: int
    diffs: list
    iterate_norms: list
    coupling_sup: float
    coupling_integral: float


def picard_window(start: SimState, window_steps: int, config: StepperConfig,
                  params: ModelParams):
    """Solve the mild form on a window of window_steps * dt by iteration.

    Returns (states, PicardDiagnostics) with states on the dt lattice,
    states[0] being the window's initial state. The coupling weight of an
    iterate is |num/den| evaluated per lattice time; its absolute value is
    used because intermediate iterates need not be facet-balanced. Raises
    NonContractionError when successive flat-norm distances stop
    decreasing or the iteration budget runs out.
    """
    check_shape(start, params)
    W = int(window_steps)
    dt = config.dt
    kc = cell_steps(dt, params.grid.delta_a)
    u = super_solution(params).u[:, None]
    g = start.f

    def weight(panel):
        mom = compute_moments(SimState(panel, 0.0), params, strict=False)
        return abs(mom.coupling) if mom.coupling_den != 0.0 else 0.0

    iters = [shift_panel(g, kc * j, params) for j in range(W + 1)]
    gam = np.array([weight(p) for p in iters])
    diffs: list = []
    norms: list = []

    for it in range(config.picard_max_iter):
        G = np.concatenate([[0.0], np.cumsum(0.5 * dt * (gam[1:] + gam[:-1]))])
        gains = [gam[j] * apply_collision_gain(iters[j], params) for j in range(W + 1)]
        new = [g.copy()]
        for m in range(1, W + 1):
            acc = np.exp(-u * G[m]) * shift_panel(g, kc * m, params)
            for j in range(m + 1):
                wq = dt if 0 < j < m else 0.5 * dt
                if j == m:
                    acc = acc + wq * gains[j]
                else:
                    acc = acc + wq * np.exp(-u * (G[m] - G[j])) * shift_panel(
                        gains[j], kc * (m - j), params)
            new.append(acc)
        d = max(flat_norm(new[j] - iters[j], params) for j in range(W + 1))
        diffs.append(d)
        norms.append(max(flat_norm(p, params) for p in new))
        iters = new
        gam = np.array([weight(p) for p in iters])
        if d < config.picard_tol:
            Gf = np.concatenate([[0.0], np.cumsum(0.5 * dt * (gam[1:] + gam[:-1]))])
            states = [SimState(p, start.time + j * dt) for j, p in enumerate(iters)]
            return states, PicardDiagnostics(
                iterations=it + 1, diffs=diffs, iterate_norms=norms,
                coupling_sup=float(gam.max()), coupling_integral=float(Gf[-1]))
        if len(diffs) >= 3 and diffs[-1] >= diffs[-2]:
            raise NonContractionError(
                f"window of {W} steps stopped contracting at iteration {it + 1} "
                f"(distances {diffs[-2]:.3e} -> {diffs[-1]:.3e})")
    raise NonContractionError(
        f"window of {W} steps missed tolerance {config.picard_tol:g} "
        f"after {config.picard_max_iter} iterations")


@dataclass
class LadderReport:
    """Cross-cap comparison of one datum run under increasing class caps.

    pair_* arrays hold one entry per consecutive rung pair. pair_sup is the
    sup over sampled states, common classes, and nodes of the density
    difference; pair_sup_low restricts to classes n <= 8.
    """

    rungs: list
    records: list
    pair_sup: np.ndarray
    pair_sup_low: np.ndarray
    pair_count_sup: np.ndarray
    pair_area_sup: np.ndarray
    pair_coupling_sup: np.ndarray


def truncation_ladder(initial: SimState, rungs, t_final: float,
                      config: StepperConfig, params: ModelParams,
                      project: bool = False) -> LadderReport:
    """Run the same datum under increasing class caps and compare rungs.

    initial lives on the cap of params, which must be at least max(rungs);
    each rung keeps classes 2 .. rung and drops the rows above. Consecutive
    records are compared on their sampled states over the common classes.

    Dropping classes above a rung unbalances the facet count whenever the
    datum carries mass there; with project=True each truncated rung datum
    is re-balanced by the polyhedral projection before running (the rung
    comparison then includes the projection difference, which vanishes as
    the rungs clear the datum's support). With project=False such data are
    rejected by the admissibility gate of run_simulation.
    """
    rungs = sorted(int(r) for r in rungs)
    if len(rungs) < 2:
        raise ValueError("need at least two rungs to compare")
    if rungs[-1] > params.n0:
        raise ValueError(f"largest rung {rungs[-1]} exceeds the cap {params.n0}")

    records = []
    for r in rungs:
        p_r = replace(params, n0=r)
        g_r = SimState(initial.f[: p_r.n_classes].copy(), 0.0)
        if project:
            g_r = project_polyhedral(g_r, p_r)
        records.append(run_simulation(g_r, t_final, config, p_r))

    pair_sup, pair_low, pair_count, pair_area, pair_coupling = [], [], [], [], []
    for ra, rb in zip(records, records[1:]):
        ncommon = min(len(ra.params.classes), len(rb.params.classes))
        nlow = min(ncommon, 8 - 2 + 1)
        s_all = 0.0
        s_low = 0.0
        for sa, sb in zip(ra.samples, rb.samples):
            d = np.abs(sa.f[:ncommon] - sb.f[:ncommon])
            s_all = max(s_all, float(d.max()))
            s_low = max(s_low, float(d[:nlow].max()))
        pair_sup.append(s_all)
        pair_low.append(s_low)
        pair_count.append(float(np.abs(ra.count - rb.count).max()))
        pair_area.append(float(np.abs(ra.area - rb.area).max()))
        pair_coupling.append(float(np.abs(ra.coupling - rb.coupling).max()))

    return LadderReport(
        rungs=rungs,
        records=records,
        pair_sup=np.array(pair_sup),
        pair_sup_low=np.array(pair_low),
        pair_count_sup=np.array(pair_count),
        pair_area_sup=np.array(pair_area),
        pair_coupling_sup=np.array(pair_coupling),
    )
