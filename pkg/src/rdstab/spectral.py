"""Principal eigenvalues of the habitat operators.

Two problems drive every stability statement in the toolkit:

  * weighted problem:    Lap(phi) + lam * h(x) * phi = 0
    For sign-changing h with nonzero integral there is a unique nonzero
    eigenvalue lam1(h) with a positive eigenfunction; its sign is opposite
    to the sign of the integral of h.

  * shifted problem:     d * Lap(phi) + h(x) * phi + mu * phi = 0
    mu1(d, h) is the bottom of the spectrum of -d*Lap - h, i.e. the infimum
    of  int(d |grad phi|^2 - h phi^2)  over  int phi^2 = 1.  It is strictly
    increasing and concave in d, tends to min(-h) as d -> 0 and to
    -average(h) as d -> inf, and for int h < 0 crosses zero exactly at
    d = 1 / lam1(h).

Both are discretized with the symmetric mirror-closure Laplacian, so the
matrix problems are symmetric (generalized) ones with real spectra.  mu1 has
two independent routes (inverse iteration and a dense solve) that the test
suite cross-checks; lam1 likewise (dense QZ pencil vs. bisection on d).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import ConvergenceFailure, NotApplicable
from .grid import (
    ScalarField,
    field_to_csv,
    integrate,
    laplacian_matrix,
    quadrature_weights,
)

DENSE_LIMIT = 2048          # largest point count for dense fallbacks
BISECTION_BRACKET = (1e-6, 1e6)   # d-range searched for the mu1 zero crossing


class IntegralSign(enum.Enum):
    POSITIVE = "positive"
    ZERO = "zero"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class WeightClass:
    """Sign structure of a weight function, with explicit tolerances."""

    integral_sign: IntegralSign
    changes_sign: bool
    identically_zero: bool
    integral: float


@dataclass(frozen=True)
class SpectralResult:
    eigenvalue: float
    eigenfunction: ScalarField
    residual: float
    iterations: int

    def to_json(self, path, eigenfunction_csv=None) -> None:
        """JSON record of the scalars; eigenfunction stored as CSV by reference."""
        record = {
            "eigenvalue": self.eigenvalue,
            "residual": self.residual,
            "iterations": self.iterations,
        }
        if eigenfunction_csv is not None:
            field_to_csv(self.eigenfunction, eigenfunction_csv)
            record["eigenfunction_csv"] = str(eigenfunction_csv)
        with open(path, "w") as fh:
            json.dump(record, fh, indent=2)


@dataclass(frozen=True)
class NoNonzeroPrincipal:
    """Returned by lambda1 when the weight has zero integral: the only
    eigenvalue with a positive eigenfunction is 0 itself."""

    weight_class: WeightClass


def classify_weight(h: ScalarField) -> WeightClass:
    """Sign of the integral and sign-change structure of a weight.

    The integral is called zero within eps_int = 1e-10 * |habitat| * sup|h|,
    and pointwise sign changes are detected against 1e-12 * sup|h|.
    """
    total = integrate(h)
    scale = float(np.max(np.abs(h.values)))
    identically_zero = scale == 0.0
    eps_int = 1e-10 * h.grid.volume * scale
    if total > eps_int:
        sign = IntegralSign.POSITIVE
    elif total < -eps_int:
        sign = IntegralSign.NEGATIVE
    else:
        sign = IntegralSign.ZERO
    eps_pt = 1e-12 * scale
    changes = bool(np.min(h.values) < -eps_pt and np.max(h.values) > eps_pt)
    return WeightClass(sign, changes, identically_zero, total)


# ---------------------------------------------------------------------------
# symmetrized operators
# ---------------------------------------------------------------------------

def _symmetrized_operator(d: float, h: ScalarField) -> tuple[sp.csr_matrix, np.ndarray]:
    """Similarity transform of  -d*Lap - diag(h)  that is exactly symmetric.

    With s = sqrt(quadrature weights), M = S P S^{-1} is symmetric because
    W*Lap is.  Eigenvectors transform back as phi = y / s.
    """
    lap = laplacian_matrix(h.grid)
    s = np.sqrt(quadrature_weights(h.grid).weights)
    p = (-d) * lap - sp.diags(h.values)
    m = sp.diags(s) @ p @ sp.diags(1.0 / s)
    m = (m + m.T) * 0.5
    return m.tocsr(), s


def _operator_scale(d: float, h: ScalarField) -> float:
    row = sum(4.0 / dx**2 for dx in h.grid.spacing)
    return d * row + float(np.max(np.abs(h.values))) + 1e-300


def _result_from_vector(d, h, mu, y, s, iterations, tol) -> SpectralResult:
    phi = y / s
    w = quadrature_weights(h.grid).weights
    phi = phi / np.sqrt(w @ (phi * phi))
    if phi[np.argmax(np.abs(phi))] < 0:
        phi = -phi
    m, _ = _symmetrized_operator(d, h)
    ynorm = y / np.linalg.norm(y)
    res = float(np.linalg.norm(m @ ynorm - mu * ynorm)) / _operator_scale(d, h)
    if np.min(phi) <= 0:
        raise ConvergenceFailure(
            "principal eigenfunction is not strictly positive", residual=res
        )
    if res > tol:
        raise ConvergenceFailure(
            f"eigenpair residual {res:.3e} above tolerance {tol:.3e}",
            residual=res,
            iterations=iterations,
        )
    return SpectralResult(float(mu), ScalarField(h.grid, phi), res, iterations)


def _mu1_dense(d: float, h: ScalarField, tol: float) -> SpectralResult:
    m, s = _symmetrized_operator(d, h)
    vals, vecs = sla.eigh(m.toarray(), subset_by_index=[0, 0])
    return _result_from_vector(d, h, vals[0], vecs[:, 0], s, 0, tol)


def _mu1_iterative(d: float, h: ScalarField, tol: float,
                   max_iterations: int = 400) -> SpectralResult:
    """Shifted inverse iteration with a late Rayleigh-quotient refinement.

    The initial shift sits strictly below the variational lower bound
    min(-h), so the iteration can only converge to the bottom eigenvalue.
    """
    m, s = _symmetrized_operator(d, h)
    n = m.shape[0]
    scale = _operator_scale(d, h)
    span = float(np.max(h.values) - np.min(h.values))
    sigma = -float(np.max(h.values)) - max(0.05 * span, 1e-3 * scale, 1e-8)
    lu = spla.splu((m - sigma * sp.identity(n)).tocsc())
    y = s / np.linalg.norm(s)  # weighted constant: positive overlap with phi1
    mu = sigma
    refined = False
    for it in range(1, max_iterations + 1):
        y = lu.solve(y)
        y /= np.linalg.norm(y)
        mu = float(y @ (m @ y))
        res = float(np.linalg.norm(m @ y - mu * y)) / scale
        if res <= tol:
            return _result_from_vector(d, h, mu, y, s, it, tol)
        if not refined and res < 1e-5:
            # one Rayleigh shift once safely inside the bottom cluster
            lu = spla.splu((m - mu * sp.identity(n)).tocsc())
            refined = True
    raise ConvergenceFailure(
        "inverse iteration did not converge", residual=res, iterations=max_iterations
    )


def mu1(d: float, h: ScalarField, method: str = "auto",
        tol: float = 1e-12) -> SpectralResult:
    """Bottom eigenvalue of -d*Lap - h with its positive eigenfunction.

    method: "iterative", "dense", or "auto" (iterative with dense fallback
    for grids up to DENSE_LIMIT points).
    """
    if d <= 0:
        raise ValueError("dispersal rate d must be positive")
    if method == "dense":
        if h.grid.n_points > DENSE_LIMIT:
            raise NotApplicable(f"dense solve limited to {DENSE_LIMIT} points")
        return _mu1_dense(d, h, tol)
    if method == "iterative":
        return _mu1_iterative(d, h, tol)
    if method == "auto":
        try:
            return _mu1_iterative(d, h, tol)
        except ConvergenceFailure:
            if h.grid.n_points <= DENSE_LIMIT:
                return _mu1_dense(d, h, tol)
            raise
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# the weighted (indefinite) problem
# ---------------------------------------------------------------------------

def lambda1(h: ScalarField, method: str = "dense", tol: float = 1e-9):
    """Nonzero eigenvalue of Lap(phi) + lam*h*phi = 0 with positive phi.

    Requires a sign-changing weight.  Returns NoNonzeroPrincipal when the
    integral of h vanishes (the zero eigenvalue is then the only principal
    one).  The returned eigenvalue is negative when int h > 0 and positive
    when int h < 0.

    method "dense" solves the symmetric QZ pencil (-W*Lap, W*diag(h));
    method "bisection" locates the zero of d -> mu1(d, +-h) instead, giving
    an algorithmically independent value.
    """
    wc = classify_weight(h)
    if not wc.changes_sign:
        raise NotApplicable(
            "principal theory inapplicable: weight does not change sign"
        )
    if wc.integral_sign is IntegralSign.ZERO:
        return NoNonzeroPrincipal(wc)
    if method == "bisection":
        if wc.integral_sign is IntegralSign.NEGATIVE:
            lam = lambda1_by_bisection(h)
            flip = 1.0
        else:
            lam = lambda1_by_bisection(-h)
            flip = -1.0
        # recover the eigenfunction from the shifted problem at d = 1/lam
        pair = mu1(1.0 / lam, ScalarField(h.grid, flip * h.values))
        return SpectralResult(flip * lam, pair.eigenfunction,
                              pair.residual, pair.iterations)
    if method != "dense":
        raise ValueError(f"unknown method {method!r}")
    if h.grid.n_points > DENSE_LIMIT:
        raise NotApplicable(f"dense pencil solve limited to {DENSE_LIMIT} points")

    lap = laplacian_matrix(h.grid)
    w = quadrature_weights(h.grid).weights
    a = (-sp.diags(w) @ lap).toarray()
    a = (a + a.T) * 0.5
    b = np.diag(w * h.values)
    vals, vecs = sla.eig(a, b)

    want = -1.0 if wc.integral_sign is IntegralSign.POSITIVE else 1.0
    scale = float(np.max(np.abs(h.values)))
    candidates = []
    for i in range(len(vals)):
        lam = vals[i]
        if not np.isfinite(lam):
            continue
        if abs(lam.imag) > 1e-8 * (abs(lam.real) + 1.0):
            continue
        lam = float(lam.real)
        if lam * want <= 0:
            continue
        v = vecs[:, i].real
        v = v / np.max(np.abs(v))
        if np.max(np.abs(v - np.mean(v))) < 1e-8:
            continue  # the zero mode: constant eigenfunction
        if np.min(v) > -1e-10 or np.max(v) < 1e-10:
            candidates.append((abs(lam), lam, np.abs(v) if np.max(v) < 0 else v))
    if not candidates:
        raise ConvergenceFailure("no sign-definite nonzero eigenpair found")
    candidates.sort(key=lambda t: t[0])
    _, lam, v = candidates[0]

    phi = v / np.sqrt(w @ (v * v))
    res_vec = (-lap @ phi) - lam * (h.values * phi)
    denom = (np.linalg.norm(lap @ phi) + abs(lam) * scale * np.linalg.norm(phi)
             + 1e-300)
    res = float(np.linalg.norm(res_vec)) / denom
    if np.min(phi) <= 0:
        raise ConvergenceFailure("selected eigenfunction not strictly positive")
    if res > tol:
        raise ConvergenceFailure(
            f"pencil eigenpair residual {res:.3e} above {tol:.3e}", residual=res
        )
    return SpectralResult(lam, ScalarField(h.grid, phi), res, 0)


def lambda1_by_bisection(h: ScalarField) -> float:
    """Independent route to lambda1 for int h < 0: the map d -> mu1(d, h) is
    strictly increasing and crosses zero at d = 1/lambda1(h)."""
    wc = classify_weight(h)
    if wc.integral_sign is not IntegralSign.NEGATIVE or not wc.changes_sign:
        raise NotApplicable(
            "bisection route needs a sign-changing weight with negative integral"
        )
    lo, hi = BISECTION_BRACKET

    def f(t):
        return mu1(float(np.exp(t)), h).eigenvalue

    tlo, thi = np.log(lo), np.log(hi)
    flo, fhi = f(tlo), f(thi)
    if not (flo < 0 < fhi):
        raise ConvergenceFailure(
            f"no sign change of mu1 over d in [{lo:g}, {hi:g}]"
        )
    troot = brentq(f, tlo, thi, xtol=1e-13, rtol=8.9e-16)
    return float(1.0 / np.exp(troot))


# ---------------------------------------------------------------------------
# monotonicity / concavity / limit report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mu1LimitsReport:
    d_samples: np.ndarray
    mu_samples: np.ndarray
    strictly_increasing: bool
    midpoint_concave: bool
    small_d_value: float
    small_d_target: float      # min(-h)
    large_d_value: float
    large_d_target: float      # -average(h)

    @property
    def ok(self) -> bool:
        return self.strictly_increasing and self.midpoint_concave


def mu1_limits_check(h: ScalarField, n_samples: int = 25,
                     d_range: tuple[float, float] = (1e-4, 1e4)) -> Mu1LimitsReport:
    """Sample mu1 over a log grid of d and report monotonicity, midpoint
    concavity, and the two endpoint limits.  Report-only: never raises on a
    property failure."""
    span = float(np.max(h.values) - np.min(h.values))
    if span == 0.0:
        raise NotApplicable("limits check needs a non-constant weight")
    ds = np.geomspace(d_range[0], d_range[1], n_samples)
    mus = np.array([mu1(d, h).eigenvalue for d in ds])
    increasing = bool(np.all(np.diff(mus) > 0))
    concave = True
    for i in range(len(ds) - 1):
        mid = 0.5 * (ds[i] + ds[i + 1])
        mu_mid = mu1(float(mid), h).eigenvalue
        if mu_mid < 0.5 * (mus[i] + mus[i + 1]) - 1e-10 * span:
            concave = False
            break
    small_target = float(np.min(-h.values))
    large_target = -integrate(h) / h.grid.volume
    return Mu1LimitsReport(
        d_samples=ds,
        mu_samples=mus,
        strictly_increasing=increasing,
        midpoint_concave=concave,
        small_d_value=float(mus[0]),
        small_d_target=small_target,
        large_d_value=float(mus[-1]),
        large_d_target=large_target,
    )
