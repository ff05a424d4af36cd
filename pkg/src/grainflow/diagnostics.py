"""Post-run verification: conserved-quantity report, quasi-complement decay
envelopes, grain-count lower bounds, energy distance, and mean-area lines.

Everything here is pure post-processing over immutable states and
trajectory records. Envelope violations and failed bounds are reported as
data, never raised, so a verification sweep always completes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AreaGrid,
    ModelParams,
    SimState,
    check_shape,
    flat_norm,
    super_solution,
)
from .stepper import TrajectoryRecord

NEUTRAL_CLASS = 6


# ---------------------------------------------------------------------------
# partial quadrature


def head_weights(grid: AreaGrid, alpha: float) -> np.ndarray:
    """Trapezoid weights for the integral over [0, min(alpha, a_max)].

    The cell straddling alpha is split with the linear interpolant, so
    head and tail weights add up to the full-line weights exactly.
    """
    w = np.zeros(grid.num_nodes)
    if alpha <= 0.0:
        return w
    if alpha >= grid.a_max:
        return grid.quadrature_weights()
    d = grid.delta_a
    i = min(int(alpha / d), grid.num_nodes - 2)
    theta = alpha / d - i
    if i > 0:
        w[: i + 1] = d
        w[0] = 0.5 * d
        w[i] = 0.5 * d
    w[i] += d * theta * (1.0 - 0.5 * theta)
    w[i + 1] += 0.5 * d * theta * theta
    return w


def tail_weights(grid: AreaGrid, alpha: float) -> np.ndarray:
    """Trapezoid weights for the integral over [alpha, a_max]."""
    return grid.quadrature_weights() - head_weights(grid, alpha)


# ---------------------------------------------------------------------------
# quasi-complements


def quasi_complement_first(state: SimState, alpha: float, params: ModelParams,
                           nu: int | None = None) -> float:
    """Grain count outside the frame {n <= nu} x [0, alpha].

    Adds the [0, alpha] mass of classes above nu to the [alpha, a_max] mass
    of every class. nu defaults to floor(alpha); since class 1 is void, the
    two-argument form at alpha = 0 returns the plain grain count.
    """
    check_shape(state, params)
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if nu is None:
        nu = int(math.floor(alpha))
    if nu < 0:
        raise ValueError(f"nu must be non-negative, got {nu}")
    head = head_weights(params.grid, alpha)
    tail = params.grid.quadrature_weights() - head
    above = params.classes > nu
    return float((state.f[above] @ head).sum() + (state.f @ tail).sum())


def quasi_complement_second(state: SimState, alpha: float,
                            params: ModelParams) -> float:
    """Facet count of classes above floor(alpha) plus area beyond alpha.

    Dominates the first quasi-complement at the same cutoff; at alpha = 0
    it reduces to the facet total plus the total area.
    """
    check_shape(state, params)
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    grid = params.grid
    full = grid.quadrature_weights()
    tail = full - head_weights(grid, alpha)
    above = params.classes > int(math.floor(alpha))
    class_part = (params.classes[above] * (state.f[above] @ full)).sum()
    area_part = (state.f @ (grid.nodes * tail)).sum()
    return float(class_part + area_part)


def _complement_profiles(state, params):
    """Both quasi-complements of one state evaluated at every grid node.

    Uses per-class cumulative trapezoids, so the node-alpha values match
    quasi_complement_first / _second exactly (theta = 0 at nodes).
    """
    grid = params.grid
    f = state.f
    d = grid.delta_a
    w = grid.quadrature_weights()
    k = params.n_classes

    def head_cum(rows):
        avg = 0.5 * d * (rows[:, 1:] + rows[:, :-1])
        return np.concatenate([np.zeros((k, 1)), np.cumsum(avg, axis=1)], axis=1)

    mass_total = f @ w
    mass_tail = mass_total[:, None] - head_cum(f)
    af = f * grid.nodes[None, :]
    area_tail = (af @ w)[:, None] - head_cum(af)

    above = params.classes[:, None] > np.floor(grid.nodes).astype(int)[None, :]
    head_part = mass_total[:, None] - mass_tail
    first = (head_part * above).sum(axis=0) + mass_tail.sum(axis=0)
    second = ((params.classes * mass_total)[:, None] * above).sum(axis=0) \
        + area_tail.sum(axis=0)
    return first, second


class _InitialScale:
    """Initial-data side of the decay envelopes, interpolated off the grid.

    Carries N-perp of the datum on the nodes, its right-tail integral, and
    the combined scale (alpha+1)e^(-gamma alpha) + alpha N-perp(alpha)
    + integral_alpha^inf N-perp; everything vanishes beyond a_max.
    """

    def __init__(self, state, params):
        grid = params.grid
        self.nodes = grid.nodes
        self.gamma = super_solution(params).decay
        self.first, self.second = _complement_profiles(state, params)
        chunk = 0.5 * grid.delta_a * (self.first[1:] + self.first[:-1])
        self.first_integral = np.concatenate(
            [np.cumsum(chunk[::-1])[::-1], [0.0]])

    def first_at(self, x):
        return np.interp(x, self.nodes, self.first, right=0.0)

    def scale_at(self, x):
        x = np.asarray(x, dtype=float)
        tail = np.interp(x, self.nodes, self.first_integral, right=0.0)
        return (x + 1.0) * np.exp(-self.gamma * x) + x * self.first_at(x) + tail


def envelope_constants(beta: float) -> tuple:
    """Prefactors (C1, C2) of the count and facet-area decay envelopes.

    C1 multiplies the flat norm times the running weight sup in the count
    envelope; C2 multiplies the initial-data scale in the facet-area one.
    Both depend only on the shrink fraction through gamma = log(1 + 1/beta).
    """
    gamma = math.log1p(1.0 / beta)
    c1 = math.exp(gamma) / gamma
    c2 = max(2.0,
             2.0 * c1 * (1.0 + 1.0 / gamma),
             2.0 * math.exp(gamma) * (gamma + 1.0) / (beta * gamma * gamma))
    return c1, c2


def fit_exponential_tail(alphas, values, floor_ratio: float = 1e-12) -> tuple:
    """Least-squares fit of values ~ prefactor * exp(-rate * alpha).

    Entries that are zero or below floor_ratio times the peak are dropped
    before the log-linear regression; at least two must survive.
    """
    alphas = np.asarray(alphas, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > values.max(initial=0.0) * floor_ratio
    if keep.sum() < 2:
        raise ValueError("tail fit needs at least two entries above the floor")
    slope, offset = np.polyfit(alphas[keep], np.log(values[keep]), 1)
    return float(-slope), float(math.exp(offset))


@dataclass(frozen=True)
class TightnessRecord:
    """Measured quasi-complements against their analytic decay envelopes.

    first / second are (time, alpha) tables of the two quasi-complements;
    the bounds are the corresponding envelope values. tail_rate and
    tail_prefactor are log-linear fits of second(t, .) per sampled time.
    overflow_total is the cumulative mass lost past a_max over the run.
    """

    times: np.ndarray
    alphas: np.ndarray
    first: np.ndarray
    second: np.ndarray
    first_bound: np.ndarray
    second_bound: np.ndarray
    tail_rate: np.ndarray
    tail_prefactor: np.ndarray
    overflow_total: float

    @property
    def first_margin(self) -> np.ndarray:
        return self.first_bound - self.first

    @property
    def second_margin(self) -> np.ndarray:
        return self.second_bound - self.second

    @property
    def ok(self) -> bool:
        return bool((self.first_margin >= 0.0).all()
                    and (self.second_margin >= 0.0).all())


def tightness_envelope(record: TrajectoryRecord, times=None, alphas=None,
                       n_times: int = 10, n_alphas: int = 10) -> TightnessRecord:
    """Check the quasi-complement decay envelopes along a trajectory.

    The count complement at cutoff alpha is compared against its value at
    the shrunken cutoff alpha e^(-t) on the datum plus C1 ||g|| Gammabar(t)
    e^(-gamma alpha e^(-t)); the facet-area complement against C2 e^t
    (1 + ||g|| + ||g|| Gammabar(t)) times the initial scale at alpha e^(-t).
    Violations show up as negative margins, not exceptions.
    """
    params = record.params
    sample_times = record.sample_times
    if times is None:
        idx = np.unique(np.round(
            np.linspace(0, len(sample_times) - 1, n_times)).astype(int))
    else:
        idx = np.array(sorted(
            int(np.argmin(np.abs(sample_times - t))) for t in times))
    if alphas is None:
        alphas = np.linspace(0.0, params.grid.a_max, n_alphas)
    alphas = np.asarray(alphas, dtype=float)

    c1, c2 = envelope_constants(params.beta)
    gnorm = flat_norm(record.initial.f, params)
    scale = _InitialScale(record.initial, params)

    shape = (len(idx), len(alphas))
    first = np.zeros(shape)
    second = np.zeros(shape)
    first_bound = np.zeros(shape)
    second_bound = np.zeros(shape)
    rate = np.full(len(idx), np.nan)
    prefactor = np.full(len(idx), np.nan)

    for row, k in enumerate(idx):
        state = record.samples[k]
        t = sample_times[k]
        gbar = record.coupling_sup[record.sample_steps[k]]
        shrunk = alphas * math.exp(-t)
        for col, alpha in enumerate(alphas):
            first[row, col] = quasi_complement_first(state, alpha, params)
            second[row, col] = quasi_complement_second(state, alpha, params)
        first_bound[row] = scale.first_at(shrunk) \
            + c1 * gnorm * gbar * np.exp(-scale.gamma * shrunk)
        second_bound[row] = c2 * math.exp(t) * (1.0 + gnorm + gnorm * gbar) \
            * scale.scale_at(shrunk)
        try:
            rate[row], prefactor[row] = fit_exponential_tail(alphas, second[row])
        except ValueError:
            pass

    return TightnessRecord(
        times=sample_times[idx], alphas=alphas, first=first, second=second,
        first_bound=first_bound, second_bound=second_bound,
        tail_rate=rate, tail_prefactor=prefactor,
        overflow_total=(float(record.overflow_cum[-1].sum())
                        if record.overflow_cum is not None else 0.0))


# ---------------------------------------------------------------------------
# grain-count lower bounds


@dataclass(frozen=True)
class GrainBoundReport:
    """Measured grain count against its two lower bounds.

    compact_bound is area / (a0 + t (n0 - 6)), available only when the
    datum support bound a0 is supplied. implicit_bound solves the
    cap-independent relation; coupling_cap is the companion upper bound
    c ||g|| / N(t) on the running weight sup.
    """

    times: np.ndarray
    counts: np.ndarray
    compact_bound: np.ndarray | None
    implicit_bound: np.ndarray
    coupling_sup: np.ndarray
    coupling_cap: np.ndarray
    tail_rate: float
    decay_rate: float
    data_scale: float

    @property
    def compact_ok(self) -> bool | None:
        if self.compact_bound is None:
            return None
        return bool((self.counts >= self.compact_bound).all())

    @property
    def implicit_ok(self) -> bool:
        return bool((self.counts >= self.implicit_bound).all())

    @property
    def coupling_ok(self) -> bool:
        return bool((self.coupling_sup <= self.coupling_cap).all())


def _solve_increasing(h, hi, tol=1e-12, max_iter=400):
    """Root of an increasing function on (0, hi] by bracketing bisection."""
    while h(hi) < 0.0 and max_iter > 0:
        hi *= 2.0
        max_iter -= 1
    lo = hi
    while h(lo) > 0.0 and lo > 1e-300:
        lo *= 0.5
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if h(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * hi:
            break
    return lo


def grain_count_bounds(record: TrajectoryRecord,
                       a0: float | None = None) -> GrainBoundReport:
    """Evaluate both grain-count lower bounds along a trajectory.

    The compact bound divides the initial area by the largest reachable
    grain area a0 + t (n0 - 6) and needs the datum support bound a0. The
    cap-independent bound combines the facet-area envelope with the weight
    cap c ||g|| / N: with D_t, d_t from the envelope of the datum's fitted
    exponential tail, the count exceeds the root x of
    C_t (1 + log(1 + 1/x)) x = 1 where C_t = 2 K_t / area and
    K_t = max(log(2 D_t / area) + log(1 + c ||g||), 1) / d_t.
    """
    params = record.params
    g = record.initial
    steps = record.sample_steps
    times = record.sample_times
    counts = record.count[steps]
    area = record.area[0]
    if not area > 0.0:
        raise ValueError("grain-count bounds need a datum with positive area")

    compact = None
    if a0 is not None:
        if a0 <= 0.0:
            raise ValueError(f"a0 must be positive, got {a0}")
        compact = area / (a0 + times * (params.n0 - NEUTRAL_CLASS))

    gnorm = flat_norm(g.f, params)
    gamma = super_solution(params).decay
    phi = super_solution(params).phi
    c_weight = float((16.0 * phi[0] + 9.0 * phi[1] + 4.0 * phi[2] + phi[3])
                     / (4.0 - 2.0 * params.beta))
    _, c2 = envelope_constants(params.beta)

    scale = _InitialScale(g, params)
    tail_rate, _ = fit_exponential_tail(scale.nodes, scale.second)
    decay = 0.5 * min(gamma, tail_rate)
    data_scale = float(np.max(scale.scale_at(scale.nodes)
                              * np.exp(decay * scale.nodes)))

    implicit = np.zeros_like(times)
    for i, t in enumerate(times):
        d_t = decay * math.exp(-t)
        big_d = c2 * math.exp(t) * (1.0 + gnorm) * data_scale
        k_t = max(math.log(2.0 * big_d / area) + math.log1p(c_weight * gnorm),
                  1.0) / d_t
        c_t = 2.0 * k_t / area
        implicit[i] = _solve_increasing(
            lambda x: c_t * (1.0 + math.log1p(1.0 / x)) * x - 1.0, counts[0])

    return GrainBoundReport(
        times=times, counts=counts, compact_bound=compact,
        implicit_bound=implicit,
        coupling_sup=record.coupling_sup[steps],
        coupling_cap=c_weight * gnorm / counts,
        tail_rate=tail_rate, decay_rate=decay, data_scale=data_scale)


# ---------------------------------------------------------------------------
# energy distance and mean-area statistics


def energy_distance(state: SimState, other: SimState,
                    params: ModelParams) -> float:
    """Facet-weighted squared distance plus squared grain-count gap.

    Classes are weighted by n, areas by e^(-a); the grain-count term makes
    the distance vanish only when the states agree on the whole grid.
    """
    check_shape(state, params)
    check_shape(other, params)
    w = params.grid.quadrature_weights()
    kernel = np.exp(-params.grid.nodes)
    diff = state.f - other.f
    quad = (params.classes * ((diff * diff * kernel[None, :]) @ w)).sum()
    count_gap = (state.f @ w).sum() - (other.f @ w).sum()
    return float(quad + count_gap * count_gap)


def energy_growth_fit(times, energies) -> tuple:
    """Least-squares (rate, prefactor) of energies ~ prefactor * e^(rate t).

    Zero entries are dropped before the log-linear regression; at least two
    must survive.
    """
    times = np.asarray(times, dtype=float)
    energies = np.asarray(energies, dtype=float)
    keep = energies > 0.0
    if keep.sum() < 2:
        raise ValueError("growth fit needs at least two positive energies")
    slope, offset = np.polyfit(times[keep], np.log(energies[keep]), 1)
    return float(slope), float(math.exp(offset))


@dataclass(frozen=True)
class LewisFit:
    """Per-class mean areas with a least-squares line over a class window.

    means is aligned with classes and holds nan where the class mass sits
    under the floor. The line is fitted in the shifted variable n - 6, so
    slope and intercept compare directly against the asymptote
    slope = 1/(Gamma+1), intercept = slope ((2 beta + 1) - 6 Gamma).
    """

    classes: np.ndarray
    means: np.ndarray
    slope: float
    intercept: float
    window: tuple
    used: np.ndarray


def lewis_means(state: SimState, params: ModelParams,
                mass_floor: float | None = None,
                window: tuple | None = None) -> LewisFit:
    """Mean area per facet class and its linear trend in n - 6.

    Classes with mass at or below the floor (default 1e-12 of the total)
    are skipped. The fit window defaults to [8, n0 - 2]: the asymptote is
    a large-n statement and the top class feels the truncation.
    """
    check_shape(state, params)
    w = params.grid.quadrature_weights()
    mass = state.f @ w
    if mass_floor is None:
        mass_floor = 1e-12 * mass.sum()
    if window is None:
        window = (8, params.n0 - 2)

    usable = mass > mass_floor
    means = np.full(params.n_classes, np.nan)
    means[usable] = (state.f @ (params.grid.nodes * w))[usable] / mass[usable]

    lo, hi = window
    used = usable & (params.classes >= lo) & (params.classes <= hi)
    if used.sum() >= 2:
        slope, intercept = np.polyfit(
            params.classes[used] - NEUTRAL_CLASS, means[used], 1)
        slope, intercept = float(slope), float(intercept)
    else:
        slope = intercept = math.nan
    return LewisFit(classes=params.classes.copy(), means=means, slope=slope,
                    intercept=intercept, window=(lo, hi), used=used)


# ---------------------------------------------------------------------------
# invariant aggregation


@dataclass(frozen=True)
class InvariantReport:
    """Conservation and monotonicity summary of one trajectory.

    area_drift: max |A(t) - A(0)| / A(0).
    imbalance_peak: max |P(t)| / M(0).
    count_violations: steps where the grain count rose beyond tolerance.
    min_node: most negative node value over the run.
    flat_ratio: max ||f(t)||_b / ||g||_b.
    coupling_den_floor: min Gamma_D(t) / N(t).
    """

    area_drift: float
    imbalance_peak: float
    count_violations: int
    min_node: float
    flat_ratio: float
    coupling_den_floor: float


def invariant_report(record: TrajectoryRecord,
                     count_tol: float = 1e-12) -> InvariantReport:
    """Aggregate the conserved-quantity series of a run into one report.

    count_tol is relative to the initial grain count; increases below it
    do not count as monotonicity violations.
    """
    area0 = record.area[0]
    facets0 = record.facet_total[0]
    count0 = record.count[0]
    flat0 = record.flat[0]
    if not (area0 > 0.0 and facets0 > 0.0 and count0 > 0.0 and flat0 > 0.0):
        raise ValueError("invariant report needs a datum with positive mass")
    rises = np.diff(record.count)
    return InvariantReport(
        area_drift=float(np.max(np.abs(record.area - area0)) / area0),
        imbalance_peak=float(np.max(np.abs(record.imbalance)) / facets0),
        count_violations=int((rises > count_tol * count0).sum()),
        min_node=float(record.min_node.min()),
        flat_ratio=float(record.flat.max() / flat0),
        coupling_den_floor=float(np.min(record.coupling_den / record.count)),
    )
