"""Basis and penalty matrices for age-dependent parameter blocks.

All splines live on the log-age scale log(a + 1) with internal ages
a = 1..A.  The number of basis functions always equals the number of age
groups, so the basis matrix X is square.  Penalties are exact integrated
squared second derivatives; a diagonal weight matrix D down-weights the
penalty for the three youngest age groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import AllZeroMatrix, DegenerateKnots, NotPSD

PSD_RTOL = 1e-10


@dataclass(frozen=True)
class SplineBlock:
    """Basis + penalty bundle for one parameter block."""

    kind: str  # "cs", "bs" or "identity"
    knots: np.ndarray  # log-age positions, length A
    X: np.ndarray  # (A, n_basis) basis matrix
    S: tuple  # penalty matrices, each (n_basis, n_basis)
    D: np.ndarray  # diagonal down-weight matrix
    S_tilde: tuple  # D @ S_i @ D

    @property
    def n_basis(self) -> int:
        return self.X.shape[1]


def log_age_grid(ages) -> np.ndarray:
    """log(a + 1) for internal ages a = 1..A; strictly increasing."""
    n = ages.n_ages if hasattr(ages, "n_ages") else int(ages)
    return np.log(np.arange(1, n + 1) + 1.0)


def _check_knots(knots, minimum):
    knots = np.asarray(knots, dtype=np.float64)
    if len(np.unique(knots)) != len(knots):
        raise DegenerateKnots("duplicate knots")
    if np.any(np.diff(knots) <= 0):
        raise DegenerateKnots("knots must be strictly increasing")
    if len(knots) < minimum:
        raise DegenerateKnots(f"need at least {minimum} knots")
    return knots


def build_cr_basis(knots):
    """Cardinal natural-cubic-spline basis with knots at the grid points.

    Value parametrization: beta_i = f(knot_i), so X is the identity at the
    knots.  The penalty is the exact integral of f''(x)^2 of the natural
    interpolant, S = Dh' B^{-1} Dh with B the tridiagonal second-derivative
    system and Dh the divided-difference matrix.
    """
    knots = _check_knots(knots, 3)
    n = len(knots)
    h = np.diff(knots)
    # B: (n-2) x (n-2) tridiagonal, Dh: (n-2) x n
    B = np.zeros((n - 2, n - 2))
    Dh = np.zeros((n - 2, n))
    for i in range(n - 2):
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < n - 2:
            B[i, i + 1] = h[i + 1] / 6.0
            B[i + 1, i] = h[i + 1] / 6.0
        Dh[i, i] = 1.0 / h[i]
        Dh[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        Dh[i, i + 2] = 1.0 / h[i + 1]
    S = Dh.T @ np.linalg.solve(B, Dh)
    S = 0.5 * (S + S.T)
    X = np.eye(n)
    return X, S


def natural_spline_second_derivs(knots, beta):
    """Second derivatives at the knots of the natural interpolant of beta.

    Solves the tridiagonal system B gamma = Dh beta; endpoints are 0.
    """
    knots = np.asarray(knots, dtype=np.float64)
    n = len(knots)
    h = np.diff(knots)
    B = np.zeros((n - 2, n - 2))
    Dh = np.zeros((n - 2, n))
    for i in range(n - 2):
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < n - 2:
            B[i, i + 1] = h[i + 1] / 6.0
            B[i + 1, i] = h[i + 1] / 6.0
        Dh[i, i] = 1.0 / h[i]
        Dh[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        Dh[i, i + 2] = 1.0 / h[i + 1]
    gamma = np.linalg.solve(B, Dh @ np.asarray(beta, dtype=np.float64))
    return np.concatenate([[0.0], gamma, [0.0]])


def bspline_knot_vector(knots, degree=3):
    """Full knot vector with uniform interior knots and repeated boundaries,
    sized so the basis count equals the number of grid points."""
    knots = np.asarray(knots, dtype=np.float64)
    n_basis = len(knots)
    lo, hi = knots[0], knots[-1]
    n_interior = n_basis - degree - 1
    if n_interior < 0:
        raise DegenerateKnots(
            f"{n_basis} grid points cannot carry a degree-{degree} B-spline basis")
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return np.concatenate([np.full(degree + 1, lo), interior,
                           np.full(degree + 1, hi)])


def bspline_design(t, degree, x, deriv=0):
    """Matrix of B-spline basis (derivative) values at the points x."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    n_basis = len(t) - degree - 1
    out = np.zeros((len(x), n_basis))
    for j in range(n_basis):
        c = np.zeros(n_basis)
        c[j] = 1.0
        spl = BSpline(t, c, degree, extrapolate=False)
        if deriv:
            spl = spl.derivative(deriv)
        vals = spl(np.clip(x, t[degree], t[-degree - 1]))
        out[:, j] = np.nan_to_num(vals)
    return out


def build_bspline_basis(knots, degree=3):
    """Degree-``degree`` B-spline basis over the grid with n_basis = A.

    The penalty is the exact integral of f''(x)^2 over the grid span,
    assembled segment-wise with 3-point Gauss-Legendre quadrature (exact
    because (f'')^2 is piecewise quadratic for cubics).
    """
    knots = _check_knots(knots, degree + 1)
    t = bspline_knot_vector(knots, degree)
    n_basis = len(knots)
    X = bspline_design(t, degree, knots)

    # quadrature nodes/weights on [-1, 1]
    gl_x, gl_w = np.polynomial.legendre.leggauss(3)
    S = np.zeros((n_basis, n_basis))
    breaks = np.unique(t)
    for a, b in zip(breaks[:-1], breaks[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        xq = mid + half * gl_x
        d2 = bspline_design(t, degree, xq, deriv=2)
        S += half * (d2 * gl_w[:, None]).T @ d2
    S = 0.5 * (S + S.T)
    return X, S


def apply_shrinkage(S, epsilon):
    """Replace zero eigenvalues of a PSD penalty with a small positive value.

    The shrinkage makes the penalty strictly positive definite so that large
    penalty parameters shrink the whole function (including its null-space
    component) towards zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    S = np.asarray(S, dtype=np.float64)
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    wmax = np.max(np.abs(w))
    if wmax == 0:
        raise NotPSD("penalty is identically zero")
    tol = PSD_RTOL * wmax
    if np.any(w < -tol):
        raise NotPSD(f"negative eigenvalue {w.min():g}")
    nonzero = w[w > tol]
    if len(nonzero) == len(w):
        return S
    fill = epsilon * nonzero.min()
    w = np.where(w > tol, w, fill)
    return U @ np.diag(w) @ U.T


def downweight_matrix(n_basis: int) -> np.ndarray:
    """Diagonal penalty weights exp(a - 4) for the basis functions centred on
    the three youngest age groups (first three columns), 1 elsewhere."""
    if n_basis < 1:
        raise ValueError("n_basis must be >= 1")
    d = np.ones(n_basis)
    for a in (1, 2, 3):
        if a <= n_basis:
            d[a - 1] = np.exp(a - 4.0)
    return np.diag(d)


def generalized_logdet(S_list, lam):
    """log of the product of non-zero eigenvalues of sum(lam_i * S_i).

    Returns (logdet, rank).  Eigenvalues below 1e-10 times the largest are
    treated as the null space.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    if np.any(lam <= 0):
        raise ValueError("all penalty parameters must be positive")
    if len(S_list) != len(lam):
        raise ValueError("need one lambda per penalty matrix")
    total = sum(l * np.asarray(S) for l, S in zip(lam, S_list))
    total = 0.5 * (total + total.T)
    w = np.linalg.eigvalsh(total)
    wmax = np.max(np.abs(w))
    if wmax == 0:
        raise AllZeroMatrix("sum of penalties is the zero matrix")
    tol = PSD_RTOL * wmax
    if np.any(w < -tol):
        raise NotPSD(f"negative eigenvalue {w.min():g}")
    keep = w[w > tol]
    return float(np.sum(np.log(keep))), int(len(keep))


def build_spline_block(kind, n_ages, shrinkage_epsilon=0.01, bs_degree=3):
    """Assemble a :class:`SplineBlock` for one parameter block.

    Falls back to the identity basis when there are too few age groups for
    the requested spline kind.
    """
    grid = log_age_grid(n_ages)
    if kind == "cs" and n_ages >= 3:
        X, S = build_cr_basis(grid)
        S = apply_shrinkage(S, shrinkage_epsilon)
    elif kind == "bs" and n_ages >= bs_degree + 1:
        X, S = build_bspline_basis(grid, degree=bs_degree)
    elif kind in ("cs", "bs"):
        # too few ages for a spline: one free parameter per age, no penalty
        kind = "identity"
        X, S = np.eye(n_ages), np.zeros((n_ages, n_ages))
    elif kind == "identity":
        X, S = np.eye(n_ages), np.zeros((n_ages, n_ages))
    else:
        raise ValueError(f"unknown basis kind {kind!r}")
    D = downweight_matrix(X.shape[1])
    S_tilde = tuple([D @ Si @ D for Si in (S,)])
    return SplineBlock(kind=kind, knots=grid, X=X, S=(S,), D=D,
                       S_tilde=S_tilde)
