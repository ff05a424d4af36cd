"""Core model objects: parameters, grid, state, and the class-exchange operator.

The model evolves number densities f_n(a, t) of two-dimensional grains with
n facets and area a >= 0. Area drifts at the integer rate n - 6 (the
von Neumann-Mullins law with the mobility constant normalized to one), while
a tri-diagonal exchange operator moves grains between facet classes. The
strength of the exchange is set by a nonlocal coupling weight, the ratio of
a boundary term to a first-moment term; both are computed in compute_moments.

Classes run from n = 2 up to a cap n0. Two conventions are supported at the
cap: the truncated operator closes the flux through the top class, while the
full convention keeps the interior row formula there with zero inflow from
above (a hard cutoff of the infinite system).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateWeightError

N_MIN = 2  # lowest facet class carried by the model
NEUTRAL_CLASS = 6  # six-sided grains neither grow nor shrink


@dataclass(frozen=True)
class AreaGrid:
    """Uniform area grid a_i = i * delta_a for i = 0 .. num_nodes - 1."""

    delta_a: float
    num_nodes: int

    def __post_init__(self):
        if not self.delta_a > 0.0:
            raise ValueError(f"delta_a must be positive, got {self.delta_a}")
        if self.num_nodes < 2:
            raise ValueError(f"grid needs at least two nodes, got {self.num_nodes}")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.num_nodes) * self.delta_a

    @property
    def a_max(self) -> float:
        return (self.num_nodes - 1) * self.delta_a

    def quadrature_weights(self) -> np.ndarray:
        """Composite trapezoid weights on the node grid."""
        w = np.full(self.num_nodes, self.delta_a)
        w[0] = 0.5 * self.delta_a
        w[-1] = 0.5 * self.delta_a
        return w


@dataclass(frozen=True)
class ModelParams:
    """Physical and discretization parameters.

    beta is the up/down asymmetry of the exchange rates and must lie in
    (0, 2): positivity of the rates needs beta > 0, and beta < 2 keeps the
    coupling denominator positive on facet-balanced states.

    truncated selects the convention at the class cap. True closes the
    exchange flux through the top class; False keeps the interior row
    formula at the cap with zero inflow from above.
    """

    beta: float
    n0: int
    grid: AreaGrid
    truncated: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")
        if self.n0 < 8:
            raise ValueError(f"class cap must be at least 8, got {self.n0}")

    @property
    def n_classes(self) -> int:
        return self.n0 - N_MIN + 1

    @property
    def classes(self) -> np.ndarray:
        """Facet numbers carried by the state, 2 .. n0."""
        return np.arange(N_MIN, self.n0 + 1)

    @property
    def speeds(self) -> np.ndarray:
        """Per-class area drift rates n - 6."""
        return self.classes - NEUTRAL_CLASS


@dataclass
class SimState:
    """Densities on the class-by-area lattice at one instant.

    f has shape (n_classes, num_nodes); row i holds class n = i + 2.
    """

    f: np.ndarray
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.f.copy(), self.time)


def check_shape(state: SimState, params: ModelParams) -> None:
    expected = (params.n_classes, params.grid.num_nodes)
    if state.f.shape != expected:
        raise ValueError(f"state shape {state.f.shape} does not match {expected}")


def full_mode_cap(beta: float, tail: float = 1e-14) -> int:
    """Smallest class cap whose comparison-profile value falls below tail.

    Densities evolved from data of finite flat norm stay below
    ||g|| * phi_n classwise, so capping where phi_n <= tail keeps the
    discarded top-class density below tail * ||g||.
    """
    decay = math.log1p(1.0 / beta)
    n = 8
    while math.exp(-n * decay) / (n * beta) > tail:
        n += 1
    return n


@dataclass(frozen=True)
class SuperSolution:
    """Stationary comparison profile of the exchange operator.

    phi_n = (1 / (beta n)) (beta / (1 + beta))^n is annihilated row by row,
    in both cap conventions up to the cap row of the full mode. With
    decay = log(1 + 1/beta) the profile satisfies beta n phi_n = exp(-n decay).
    u holds the per-class relaxation rates (the diagonal of the loss part
    of the operator).
    """

    phi: np.ndarray
    decay: float
    u: np.ndarray


def relaxation_rates(beta: float, n0: int, truncated: bool = True) -> np.ndarray:
    """Diagonal of the loss part: 2 beta for class 2, (2 beta + 1) n inside,
    and (beta + 1) n0 at a truncated cap."""
    n = np.arange(N_MIN, n0 + 1, dtype=float)
    u = (2.0 * beta + 1.0) * n
    u[0] = 2.0 * beta
    if truncated:
        u[-1] = (beta + 1.0) * n0
    return u


@lru_cache(maxsize=None)
def _super_solution(beta: float, n0: int, truncated: bool) -> SuperSolution:
    decay = math.log1p(1.0 / beta)
    n = np.arange(N_MIN, n0 + 1, dtype=float)
    phi = np.exp(-n * decay) / (n * beta)
    u = relaxation_rates(beta, n0, truncated)
    phi.flags.writeable = False
    u.flags.writeable = False
    return SuperSolution(phi=phi, decay=decay, u=u)


def super_solution(params: ModelParams) -> SuperSolution:
    return _super_solution(params.beta, params.n0, params.truncated)


def _as_class_array(col, params: ModelParams) -> np.ndarray:
    col = np.asarray(col, dtype=np.float64)
    if col.ndim not in (1, 2) or col.shape[0] != params.n_classes:
        raise ValueError(
            f"expected leading axis of length {params.n_classes}, got shape {col.shape}"
        )
    return col


def _exchange_fluxes(col: np.ndarray, params: ModelParams) -> np.ndarray:
    # j_n = (beta+1) n f_n - beta (n-1) f_{n-1} for n = 3 .. n0
    b = params.beta
    n = np.arange(N_MIN + 1, params.n0 + 1, dtype=float)
    if col.ndim == 2:
        n = n[:, None]
    return (b + 1.0) * n * col[1:] - b * (n - 1.0) * col[:-1]


def apply_collision(col, params: ModelParams) -> np.ndarray:
    """Apply the class-exchange operator to per-class values.

    col holds one value per class, shape (n_classes,), or a panel of such
    columns, shape (n_classes, m). The operator is evaluated in flux form:
    every interior row is the difference of the two adjacent exchange
    fluxes, so the class sum telescopes and cancels at roundoff level.
    The class-2 row equals the flux out of class 3 (there is no class
    below 2), and the cap row follows the convention in params.
    """
    col = _as_class_array(col, params)
    j = _exchange_fluxes(col, params)
    out = np.empty_like(col)
    out[0] = j[0]
    out[1:-1] = j[1:] - j[:-1]
    if params.truncated:
        out[-1] = -j[-1]
    else:
        out[-1] = (-params.beta * params.n0) * col[-1] - j[-1]
    return out


def apply_collision_gain(col, params: ModelParams) -> np.ndarray:
    """Gain part: inflow from the class above and the class below."""
    col = _as_class_array(col, params)
    b = params.beta
    n = np.arange(N_MIN, params.n0 + 1, dtype=float)
    if col.ndim == 2:
        n = n[:, None]
    out = np.zeros_like(col)
    out[:-1] = (b + 1.0) * n[1:] * col[1:]
    out[1:] += b * n[:-1] * col[:-1]
    return out


def apply_collision_loss(col, params: ModelParams) -> np.ndarray:
    """Loss part: diagonal relaxation at the per-class rates u."""
    col = _as_class_array(col, params)
    u = relaxation_rates(beta=params.beta, n0=params.n0, truncated=params.truncated)
    if col.ndim == 2:
        u = u[:, None]
    return u * col


@lru_cache(maxsize=None)
def _collision_matrix(beta: float, n0: int, truncated: bool) -> np.ndarray:
    ncls = n0 - N_MIN + 1
    n = np.arange(N_MIN, n0 + 1, dtype=float)
    mat = np.zeros((ncls, ncls))
    idx = np.arange(ncls)
    mat[idx[:-1], idx[1:]] = (beta + 1.0) * n[1:]  # gain from above
    mat[idx[1:], idx[:-1]] = beta * n[:-1]  # gain from below
    mat[idx, idx] = -relaxation_rates(beta, n0, truncated)
    mat.flags.writeable = False
    return mat


def collision_matrix(beta: float, n0: int, truncated: bool = True) -> np.ndarray:
    """Dense matrix of the exchange operator acting on class columns."""
    return _collision_matrix(beta, n0, truncated)


@dataclass(frozen=True)
class MomentSet:
    """Integrated observables of one state.

    count       N, total number of grains
    area        A, total area
    facet_total M, total number of facets, sum of n * integral f_n
    imbalance   P = M - 6 N, facet surplus over the hexagonal network
    exchange_rate  R = 2 (beta+1) I_2 - n0 beta I_n0, boundary exchange term
    coupling    ratio coupling_num / coupling_den of the nonlocal weight;
                coupling_valid is False when the denominator is not positive
                (the zero state, or transient non-admissible data)
    """

    count: float
    area: float
    facet_total: float
    imbalance: float
    exchange_rate: float
    coupling_num: float
    coupling_den: float
    coupling: float
    coupling_valid: bool

    @property
    def edge_count(self) -> float:
        """Edges of the grain network: every facet is shared by two grains."""
        return 0.5 * self.facet_total

    @property
    def face_count(self) -> float:
        """Faces of the grain network: one per grain."""
        return self.count


def compute_moments(state: SimState, params: ModelParams, strict: bool = True) -> MomentSet:
    """Quadrature moments and the nonlocal coupling weight.

    The coupling numerator uses the boundary node values f_n(0) of the
    shrinking classes n = 2 .. 5 weighted by (n - 6)^2. The denominator is
    minus the first moment of the exchange operator in truncated mode, and
    facet_total - 2 (beta+1) I_2 in full mode. A non-positive denominator on
    a nonzero state raises DegenerateWeightError when strict, otherwise the
    coupling is reported with coupling_valid False.
    """
    check_shape(state, params)
    f = state.f
    grid = params.grid
    w = grid.quadrature_weights()
    n = params.classes.astype(float)

    per_class = f @ w
    count = float(per_class.sum())
    area = float((f @ (w * grid.nodes)).sum())
    facet_total = float(n @ per_class)
    imbalance = float((n - NEUTRAL_CLASS) @ per_class)
    b = params.beta
    exchange_rate = float(2.0 * (b + 1.0) * per_class[0] - params.n0 * b * per_class[-1])

    low = slice(0, NEUTRAL_CLASS - N_MIN)  # classes 2 .. 5
    weights_low = (n[low] - NEUTRAL_CLASS) ** 2
    coupling_num = float(weights_low @ f[low, 0])

    if params.truncated:
        rows_int = apply_collision(f, params) @ w
        coupling_den = float(-(n @ rows_int))
    else:
        coupling_den = float(facet_total - 2.0 * (b + 1.0) * per_class[0])

    zero_state = not np.any(f)
    if coupling_den > 0.0:
        coupling = coupling_num / coupling_den
        coupling_valid = True
    elif zero_state:
        coupling = 0.0
        coupling_valid = False
    elif strict:
        raise DegenerateWeightError(
            f"coupling denominator {coupling_den:.6g} is not positive on a nonzero state"
        )
    else:
        coupling = coupling_num / coupling_den if coupling_den != 0.0 else 0.0
        coupling_valid = False

    return MomentSet(
        count=count,
        area=area,
        facet_total=facet_total,
        imbalance=imbalance,
        exchange_rate=exchange_rate,
        coupling_num=coupling_num,
        coupling_den=coupling_den,
        coupling=coupling,
        coupling_valid=coupling_valid,
    )


def flat_norm_per_class(values, params: ModelParams) -> np.ndarray:
    """Per-class sup of |f_n| relative to the comparison profile phi_n."""
    f = values.f if isinstance(values, SimState) else np.asarray(values, dtype=float)
    phi = super_solution(params).phi
    if f.ndim == 1:
        return np.abs(f) / phi
    return np.abs(f).max(axis=1) / phi


def flat_norm(values, params: ModelParams) -> float:
    """Weighted sup norm: sup over classes and nodes of |f_n(a)| / phi_n."""
    return float(flat_norm_per_class(values, params).max())


def check_admissible(state: SimState, params: ModelParams, imbalance_tol: float = 1e-8) -> None:
    """Validate initial data: finite, non-negative, boundary-clean, balanced.

    Growing classes (n > 6) must vanish identically at a = 0; the facet
    imbalance must vanish within imbalance_tol relative to the facet total.
    Raises ValueError with a description of the first violated condition.
    """
    check_shape(state, params)
    f = state.f
    if not np.all(np.isfinite(f)):
        raise ValueError("state contains non-finite entries")
    if f.min(initial=0.0) < 0.0:
        raise ValueError(f"state has negative entries, min {f.min():.6g}")
    growing = params.classes > NEUTRAL_CLASS
    if np.any(f[growing, 0] != 0.0):
        raise ValueError("growing classes must vanish at a = 0")
    mom = compute_moments(state, params, strict=False)
    scale = max(abs(mom.facet_total), 1.0)
    if abs(mom.imbalance) > imbalance_tol * scale:
        raise ValueError(
            f"facet imbalance {mom.imbalance:.6g} exceeds {imbalance_tol:g} * {scale:.6g}"
        )
