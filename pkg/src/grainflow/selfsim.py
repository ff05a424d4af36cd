"""Class-wise moments of self-similar profiles.

Integrating the rescaled stationary equation over the area variable turns
it into an algebraic relation for the vector of class integrals Phi:

    Gamma (J Phi)_n + Phi_n = b_n,   b_n = (6 - n) phi_n(0) for n <= 5,
                                     b_n = 0 otherwise,

with the coupling weight Gamma evaluated self-consistently: the numerator
from the prescribed boundary values, the denominator from the moments.

The resolvent (I + Gamma J)^-1 has poles at the reciprocal magnitudes of
the exchange matrix's eigenvalues, which slice the positive axis into
slivers; between any two poles the weight balance crosses zero, so the
relation has many algebraic roots. Only the maximal pole-free branch --
weights above the largest pole -- is physically meaningful: it is the one
branch free of resonances with the exchange spectrum, and the profile it
carries relaxes onto the exchange kernel (the equilibrium class shape) as
the weight grows. The solver therefore restricts itself to that branch:
it alternates a banded linear solve for Phi at frozen Gamma with a damped
update of Gamma from the new Phi, and when that map does not contract
(its slope at the fixed point exceeds one whenever the data lean on the
low classes), it falls back to bracketing bisection on the scalar balance
Gamma * Gamma_D(Phi(Gamma)) - Gamma_N along the branch. Summing the
relation kills the exchange term (its columns balance to zero), which
gives the consistency identity sum(Phi) = sum(b) for every converged
candidate; the n-weighted sum shows every fixed point carries exactly six
facets per grain, so the candidates inherit the polyhedral structure of
the time-dependent flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal, solve_banded

from .core import collision_matrix
from .errors import DegenerateWeightError

BASE_CLASS = 2
NEUTRAL_CLASS = 6


@dataclass(frozen=True)
class SelfSimInput:
    """Problem data for the self-similar moment solve.

    boundary_values are the rescaled-profile values at zero area for the
    shrinking classes 2..5 (growing classes vanish there); n_cap truncates
    the moment vector. damping scales the weight updates: 0.5 halves each
    move toward the freshly computed weight.
    """

    beta: float
    boundary_values: tuple
    n_cap: int = 64
    tol: float = 1e-12
    max_iter: int = 500
    damping: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")
        if len(self.boundary_values) != 4:
            raise ValueError("boundary_values must hold classes 2 .. 5")
        if any(v < 0.0 for v in self.boundary_values):
            raise ValueError("boundary values must be non-negative")
        if self.n_cap < 8:
            raise ValueError(f"n_cap must be at least 8, got {self.n_cap}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.tol <= 0.0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")


@dataclass
class SelfSimResult:
    """Converged (or last-iterate) candidate from the moment solve.

    moments holds the class integrals Phi_n for n = 2 .. n_cap. residuals
    is the per-iteration history of the relative update size; nonnegative
    flags whether the candidate is an admissible profile (the solve never
    aborts on sign alone, since existence of positive profiles is open).
    """

    classes: np.ndarray
    moments: np.ndarray
    coupling: float
    coupling_num: float
    coupling_den: float
    residuals: np.ndarray
    iterations: int
    converged: bool
    nonnegative: bool


def _weight_den(classes, beta, phi):
    return float(classes @ phi - 2.0 * (beta + 1.0) * phi[0])


def _largest_pole(diag, upper, lower):
    """Largest resolvent pole 1/|lambda_2| of the exchange matrix.

    The matrix is similar to a symmetric tri-diagonal one because both
    off-diagonals are positive, so its spectrum is real; the top
    eigenvalue is the kernel's zero and the next one sets the pole.
    """
    spectrum = np.sort(eigvalsh_tridiagonal(diag, np.sqrt(upper * lower)))
    return float(-1.0 / spectrum[-2])


def selfsim_moments(inp: SelfSimInput) -> SelfSimResult:
    """Solve the class-integral relation by damped alternating iteration.

    For frozen weight the relation is a tri-diagonal linear system, solved
    banded; the weight is then re-evaluated (boundary values fix the
    numerator once and for all, the fresh moments give the denominator)
    and moved halfway. The iteration lives on the pole-free branch: the
    anchor is scanned in octave offsets above the largest resolvent pole
    until the denominator turns positive, and a damped step that falls
    back onto or below the pole is treated like a failed contraction. If
    no weight on the branch is admissible the solve raises; if the damped
    updates stop contracting, the driver switches to bisection on the
    sign change of the weight balance along the branch; non-convergence
    within the iteration cap is reported, not raised.
    """
    classes = np.arange(BASE_CLASS, inp.n_cap + 1, dtype=float)
    bv = np.asarray(inp.boundary_values, dtype=float)
    b = np.zeros(classes.size)
    b[:4] = (NEUTRAL_CLASS - classes[:4]) * bv
    num = float(((classes[:4] - NEUTRAL_CLASS) ** 2 * bv).sum())

    if num == 0.0:
        return SelfSimResult(
            classes=classes.astype(int), moments=np.zeros(classes.size),
            coupling=0.0, coupling_num=0.0, coupling_den=0.0,
            residuals=np.zeros(0), iterations=0, converged=True,
            nonnegative=True)

    mat = collision_matrix(inp.beta, inp.n_cap, truncated=True)
    upper = np.diag(mat, 1)
    diag = np.diag(mat)
    lower = np.diag(mat, -1)
    banded = np.zeros((3, classes.size))

    def solve_phi(gamma):
        banded[0, 1:] = gamma * upper
        banded[1, :] = 1.0 + gamma * diag
        banded[2, :-1] = gamma * lower
        return solve_banded((1, 1), banded, b)

    def weigh(gamma):
        """(Phi, denominator) at a frozen weight; None at a pole."""
        try:
            phi = solve_phi(gamma)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(phi)):
            return None
        return phi, _weight_den(classes, inp.beta, phi)

    pole = _largest_pole(diag, upper, lower)

    phi = den = None
    anchor = None
    offsets = [1.0]
    for k in range(1, 41):
        offsets += [2.0 ** k, 2.0 ** -k]
    for offset in offsets:
        solved = weigh(pole * (1.0 + offset))
        if solved is not None and solved[1] > 0.0:
            anchor = pole * (1.0 + offset)
            phi, den = solved
            break
    if anchor is None:
        raise DegenerateWeightError(
            "no weight on the pole-free branch yields a positive"
            " moment denominator")

    gamma = anchor
    residuals = []
    converged = False
    for _ in range(inp.max_iter):
        target = num / den
        gamma_next = gamma + inp.damping * (target - gamma)
        if gamma_next <= pole:
            break
        solved = weigh(gamma_next)
        if solved is None or solved[1] <= 0.0:
            break
        phi_next, den_next = solved
        residual = max(
            abs(gamma_next - gamma) / max(1.0, abs(gamma_next)),
            float(np.max(np.abs(phi_next - phi)))
            / max(1.0, float(np.max(np.abs(phi_next)))))
        residuals.append(residual)
        gamma, phi, den = gamma_next, phi_next, den_next
        if residual <= inp.tol:
            converged = True
            break
        if len(residuals) >= 3 and residuals[-1] >= residuals[-3]:
            break

    if not converged:
        gamma, phi, den, tail = _bisect_balance(
            weigh, num, pole, inp.tol, inp.max_iter)
        residuals.extend(tail)
        converged = bool(tail) and tail[-1] <= inp.tol

    scale = float(np.max(np.abs(phi)))
    return SelfSimResult(
        classes=classes.astype(int), moments=phi, coupling=gamma,
        coupling_num=num, coupling_den=den,
        residuals=np.asarray(residuals), iterations=len(residuals),
        converged=converged,
        nonnegative=bool((phi >= -inp.tol * max(1.0, scale)).all()))


def _bisect_balance(weigh, num, pole, tol, max_iter):
    """Root of gamma * den(gamma) - num on the pole-free branch.

    Any root there is admissible on its own: with a positive numerator,
    gamma * den = num forces the denominator positive. The balance is
    continuous above the largest pole, so a single sign change between
    neighbours on a geometric ladder of offsets brackets the root; the
    ladder reaches close enough to the pole and far enough out to catch
    every sign change the branch can carry. Returns the midpoint solve
    and the per-iteration relative interval widths.
    """

    def balance(gamma):
        solved = weigh(gamma)
        if solved is None:
            return None
        return gamma * solved[1] - num

    points = []
    for k in range(-40, 41):
        gamma = pole * (1.0 + 2.0 ** k)
        val = balance(gamma)
        if val is not None:
            points.append((gamma, val))

    bracket = None
    for (ga, va), (gb, vb) in zip(points, points[1:]):
        if (va > 0.0) != (vb > 0.0):
            bracket = (ga, va), (gb, vb)
            break
    if bracket is None:
        raise DegenerateWeightError(
            "weight balance does not change sign on the pole-free branch")

    (lo, lo_val), (hi, _) = bracket
    low_positive = lo_val > 0.0
    residuals = []
    mid = lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = balance(mid)
        if val is None:
            raise DegenerateWeightError(
                f"moment solve failed at weight {mid:.6g}")
        if (val > 0.0) == low_positive:
            lo = mid
        else:
            hi = mid
        residuals.append((hi - lo) / max(1.0, mid))
        if residuals[-1] <= tol:
            break
    solved = weigh(mid)
    if solved is None:
        raise DegenerateWeightError(
            f"no admissible moments at the bisected weight {mid:.6g}")
    phi, den = solved
    return mid, phi, den, residuals


def lewis_asymptote(beta: float, gamma: float) -> tuple:
    """Slope and intercept of the large-class mean-area line.

    The mean area of class n approaches b (n - 6) + c with b = 1/(Gamma+1)
    and c = b ((2 beta + 1) - 6 Gamma).
    """
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    slope = 1.0 / (gamma + 1.0)
    return slope, slope * ((2.0 * beta + 1.0) - NEUTRAL_CLASS * gamma)
