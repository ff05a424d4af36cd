"""Initial data families and the facet-balance projection.

All families return states that vanish at a = 0 in the growing classes and
are non-negative everywhere. Balanced data (facet imbalance zero) is what
the steppers require; project_polyhedral rescales the growing classes to
remove any imbalance, which is the discrete version of closing the grain
network (total facets of an N-grain trivalent network equal 6N up to
boundary terms).
"""

from __future__ import annotations

import numpy as np

from .core import (
    NEUTRAL_CLASS,
    ModelParams,
    SimState,
    check_shape,
    compute_moments,
    super_solution,
)
from .errors import UnprojectableError

FAMILIES = ("exponential", "compact-bump", "table")


def build_initial_state(params: ModelParams, family: str, **kwargs) -> SimState:
    """Construct one of the named data families on the params grid.

    exponential: f_n(a) = scale * phi_n * a * exp(-rate * a); rapidly
        decaying in class and area, flat norm scale * / (rate * e).
    compact-bump: per-class sin^2 bump supported on [a_lo, a_hi]; weights
        maps facet class to amplitude, e.g. {4: 1.0, 8: 0.5}.
    table: values passed explicitly with the expected shape.
    """
    grid = params.grid
    a = grid.nodes

    if family == "exponential":
        scale = float(kwargs.pop("scale", 1.0))
        rate = float(kwargs.pop("rate", 1.0))
        _reject_unknown(kwargs)
        if scale < 0.0 or rate <= 0.0:
            raise ValueError("exponential family needs scale >= 0 and rate > 0")
        phi = super_solution(params).phi
        f = scale * phi[:, None] * (a * np.exp(-rate * a))[None, :]
    elif family == "compact-bump":
        a_lo = float(kwargs.pop("a_lo"))
        a_hi = float(kwargs.pop("a_hi"))
        weights = dict(kwargs.pop("weights"))
        _reject_unknown(kwargs)
        if not 0.0 <= a_lo < a_hi <= grid.a_max:
            raise ValueError(
                f"bump support [{a_lo}, {a_hi}] must sit inside [0, {grid.a_max}]")
        f = np.zeros((params.n_classes, grid.num_nodes))
        profile = np.zeros_like(a)
        inside = (a >= a_lo) & (a <= a_hi)
        profile[inside] = np.sin(np.pi * (a[inside] - a_lo) / (a_hi - a_lo)) ** 2
        classes = list(params.classes)
        for n, wgt in weights.items():
            n = int(n)
            if n not in classes:
                raise ValueError(f"class {n} outside 2 .. {params.n0}")
            if wgt < 0.0:
                raise ValueError(f"negative weight for class {n}")
            f[classes.index(n)] = wgt * profile
    elif family == "table":
        values = np.asarray(kwargs.pop("values"), dtype=float)
        _reject_unknown(kwargs)
        f = values.copy()
    else:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")

    state = SimState(f, 0.0)
    check_shape(state, params)
    if not np.all(np.isfinite(f)):
        raise ValueError("initial data contains non-finite entries")
    if f.min() < 0.0:
        raise ValueError(f"initial data has negative entries, min {f.min():.6g}")
    growing = params.classes > NEUTRAL_CLASS
    if np.any(f[growing, 0] != 0.0):
        raise ValueError("growing classes must vanish at a = 0")
    return state


def _reject_unknown(kwargs):
    if kwargs:
        raise ValueError(f"unknown family parameters: {sorted(kwargs)}")


def project_polyhedral(state: SimState, params: ModelParams) -> SimState:
    """Rescale the growing classes so the facet imbalance vanishes.

    Classes n > 6 are multiplied by the ratio of the shrinking-side facet
    deficit to the growing-side surplus; classes n <= 6 are untouched, so
    boundary values entering the coupling numerator are preserved. Raises
    UnprojectableError when one side carries mass and the other does not.
    """
    check_shape(state, params)
    w = params.grid.quadrature_weights()
    per_class = state.f @ w
    n = params.classes
    surplus = float(((n - NEUTRAL_CLASS) * per_class)[n > NEUTRAL_CLASS].sum())
    deficit = float(((NEUTRAL_CLASS - n) * per_class)[n < NEUTRAL_CLASS].sum())
    if surplus == 0.0 and deficit == 0.0:
        return state.copy()
    if surplus == 0.0 or deficit == 0.0:
        raise UnprojectableError(
            f"cannot balance facets by scaling: surplus {surplus:.6g}, "
            f"deficit {deficit:.6g}")
    f = state.f.copy()
    f[n > NEUTRAL_CLASS] *= deficit / surplus
    return SimState(f, state.time)
