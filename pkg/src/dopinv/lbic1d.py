"""Potential identification from a one-dimensional LBIC current curve.

A laser scan across a 1D device produces a current response i(x).  In the
low-injection regime the excess carriers solve a pair of coupled
two-point boundary value problems driven by the electrostatic potential
V, and the whole curve is generated by just two scalars: the carrier
currents entering at the left contact.  This module provides

* the forward map V -> i (coupled P1 solve on a uniform grid),
* the algebraic reconstruction i -> V, which reduces to fitting the two
  contact constants (c1, c2) against two scalar compatibility residuals,
* an attainability report implementing the "if and only if"
  characterization of curves that come from an actual potential,
* the one-parameter family of distinct potentials reproducing the same
  curve, which is the constructive non-uniqueness witness.

Sign conventions: i = v - u where u is the normalized electron and v the
normalized hole perturbation, both 1 at the left contact and 0 at the
right.  The scaled carrier fluxes

    a(x) = e^{V} u'(x) = c1 - (q0/mu_n) I(x),
    b(x) = e^{-V} v'(x) = c2 + (q0/mu_p) I(x),      I(x) = int_0^x i,

satisfy the pointwise quadratic a Y^2 + i' Y - b = 0 for Y = e^{-V}.
Physical curves have c1 <= 0 and c2 <= 0 (carriers flow into the
device), hence a < 0, b < 0 wherever the curve is attainable, and the
positive root is Y = (i' + sqrt(i'^2 + 4 a b)) / (2 |a|).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq


@dataclass(frozen=True)
class Lbic1dParameters:
    """Scaled 1D device constants: mobilities and the recombination rate."""

    mu_n: float = 1.0
    mu_p: float = 1.0
    q0: float = 1.0

    def __post_init__(self):
        if self.mu_n <= 0 or self.mu_p <= 0:
            raise ValueError("mobilities must be positive")
        if self.q0 < 0:
            raise ValueError("recombination rate must be nonnegative")


@dataclass
class LbicCurve:
    """Sampled current response on a uniform grid over [0, 1]."""

    x: np.ndarray
    i: np.ndarray
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.i = np.asarray(self.i, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.i.shape:
            raise ValueError("x and i must be 1D arrays of equal length")
        if len(self.x) < 5:
            raise ValueError("need at least 5 samples")

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def cumulative(self) -> np.ndarray:
        """I(x) = int_0^x i, trapezoidal."""
        return cumulative_trapezoid(self.i, self.x, initial=0.0)

    def derivative(self) -> np.ndarray:
        return grid_derivative(self.x, self.i)


def grid_derivative(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order derivative on a uniform grid.

    Centered in the interior, one-sided three-point at the endpoints so
    the boundary values i'(0), i'(1) keep the O(h^2) accuracy the
    compatibility residual J2 needs.
    """
    h = x[1] - x[0]
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    d[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return d


def _nodal_potential(potential, x: np.ndarray) -> np.ndarray:
    if callable(potential):
        vals = np.asarray(potential(x), dtype=float)
    else:
        vals = np.asarray(potential, dtype=float)
    if vals.shape != x.shape:
        raise ValueError("potential samples must match the grid")
    return vals


def forward_currents(potential, m: int = 256,
                     params: Lbic1dParameters | None = None) -> LbicCurve:
    """Solve the coupled carrier equations and return the current curve.

    (mu_n e^{V} u')' = q0 (u - v),   u(0) = 1, u(1) = 0,
    (mu_p e^{-V} v')' = q0 (v - u),  v(0) = 1, v(1) = 0,

    P1 elements on m intervals, coefficients at element midpoints, the
    coupling term lumped.  Returns the curve i = v - u with the carrier
    profiles attached.
    """
    params = params or Lbic1dParameters()
    if m < 4:
        raise ValueError("need at least 4 intervals")
    x = np.linspace(0.0, 1.0, m + 1)
    h = 1.0 / m
    V = _nodal_potential(potential, x)
    v_mid = 0.5 * (V[:-1] + V[1:])
    a_n = params.mu_n * np.exp(v_mid)
    a_p = params.mu_p * np.exp(-v_mid)

    def stiffness(coef):
        main = np.zeros(m + 1)
        main[:-1] += coef / h
        main[1:] += coef / h
        return sp.diags([main, -coef / h, -coef / h], [0, -1, 1], format="csr")

    lump = np.full(m + 1, h)
    lump[0] = lump[-1] = h / 2.0
    Q = sp.diags(params.q0 * lump)
    K_n = stiffness(a_n) + Q
    K_p = stiffness(a_p) + Q
    A = sp.bmat([[K_n, -Q], [-Q, K_p]], format="csr")

    full = np.zeros(2 * (m + 1))
    full[0] = 1.0
    full[m + 1] = 1.0
    fixed = np.array([0, m, m + 1, 2 * m + 1])
    free = np.setdiff1d(np.arange(2 * (m + 1)), fixed)
    rhs = -(A @ full)[free]
    sol = full.copy()
    sol[free] = spla.splu(A[free][:, free].tocsc()).solve(rhs)
    u = sol[: m + 1]
    v = sol[m + 1:]
    return LbicCurve(x=x, i=v - u, u=u, v=v)


def contact_constants(curve: LbicCurve, potential) -> tuple[float, float]:
    """The scaled contact fluxes c1 = e^{V(0)} u'(0), c2 = e^{-V(0)} v'(0).

    Needs the carrier profiles on the curve; used to compare a direct
    fit against the values the forward solve actually produced.
    """
    if curve.u is None or curve.v is None:
        raise ValueError("curve carries no carrier profiles")
    V0 = float(_nodal_potential(potential, curve.x)[0]) if not np.isscalar(potential) \
        else float(potential)
    du = grid_derivative(curve.x, curve.u)[0]
    dv = grid_derivative(curve.x, curve.v)[0]
    return float(np.exp(V0) * du), float(np.exp(-V0) * dv)


def flux_fields(curve: LbicCurve, params: Lbic1dParameters,
                c1: float, c2: float) -> tuple[np.ndarray, np.ndarray]:
    """a(x) and b(x) for given contact constants."""
    I = curve.cumulative()
    a = c1 - (params.q0 / params.mu_n) * I
    b = c2 + (params.q0 / params.mu_p) * I
    return a, b


def admissible_c1_bound(curve: LbicCurve, params: Lbic1dParameters) -> float:
    """Supremum of c1 values keeping a(x) < 0 on the whole interval."""
    I = curve.cumulative()
    return float((params.q0 / params.mu_n) * I.min())


def admissible_c2_bound(curve: LbicCurve, params: Lbic1dParameters) -> float:
    """Supremum of c2 values keeping b(x) < 0 on the whole interval."""
    I = curve.cumulative()
    return float(-(params.q0 / params.mu_p) * I.max())


def positive_root(curve: LbicCurve, params: Lbic1dParameters,
                  c1: float, c2: float) -> np.ndarray:
    """Y = e^{-V} from the pointwise quadratic; requires a < 0 and
    discriminant >= 0 everywhere, else ValueError."""
    a, b = flux_fields(curve, params, c1, c2)
    if np.any(a >= 0.0):
        raise ValueError("a(x) must stay negative")
    di = curve.derivative()
    disc = di * di + 4.0 * a * b
    if np.any(disc < 0.0):
        raise ValueError("negative discriminant: constants not admissible")
    return (di + np.sqrt(disc)) / (2.0 * np.abs(a))


def residuals(curve: LbicCurve, v0: float, params: Lbic1dParameters,
              c1: float, c2: float) -> tuple[float, float]:
    """The two scalar compatibility residuals (J1, J2).

    J1 is the integrated quadratic: for an attainable curve the integral
    of sqrt(i'^2 + 4ab) over [0, 1] equals 2.  J2 enforces the quadratic
    at the left contact with the known boundary potential v0, scaled by
    e^{-|v0|} to keep it O(1) for large bias.  Returns (inf, inf) when
    the constants leave the admissible region (sign or discriminant).
    """
    a, b = flux_fields(curve, params, c1, c2)
    di = curve.derivative()
    disc = di * di + 4.0 * a * b
    if np.any(disc < 0.0):
        return float("inf"), float("inf")
    j1 = 0.5 * np.trapezoid(np.sqrt(disc), curve.x) - 1.0
    j2 = (c1 * np.exp(-v0) + di[0] - c2 * np.exp(v0)) * np.exp(-abs(v0))
    return float(j1), float(j2)


def integral_residual(curve: LbicCurve, params: Lbic1dParameters,
                      c1: float, c2: float) -> float:
    """1 + int_0^1 a Y dx; vanishes for attainable constants since the
    electron profile drops from 1 to 0 across the device."""
    y = positive_root(curve, params, c1, c2)
    a, _ = flux_fields(curve, params, c1, c2)
    return float(1.0 + np.trapezoid(a * y, curve.x))


@dataclass
class FitResult:
    c1: float
    c2: float
    residual_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _residual_vec(curve, v0, params, c):
    return np.array(residuals(curve, v0, params, c[0], c[1]))


def fit_constants(curve: LbicCurve, v0: float,
                  params: Lbic1dParameters | None = None,
                  initial: tuple[float, float] | None = None,
                  tol: float = 1e-8, max_iter: int = 60) -> FitResult:
    """Gauss-Newton fit of (c1, c2) against (J1, J2).

    The Jacobian is formed by forward differences (step 1e-6); each
    update is halved until the residual norm decreases.  If the initial
    point is infeasible or the iteration stalls, a coarse grid search
    over the nonpositive quadrant restarts it once.
    """
    params = params or Lbic1dParameters()

    def norm_at(c):
        r = _residual_vec(curve, v0, params, c)
        return float(np.sqrt(np.sum(r * r))), r

    def grid_seed():
        best, best_c = float("inf"), None
        c1_hi = admissible_c1_bound(curve, params)
        c2_hi = admissible_c2_bound(curve, params)
        for s1 in np.geomspace(0.05, 50.0, 24):
            for s2 in np.geomspace(0.05, 50.0, 24):
                c = np.array([min(c1_hi, 0.0) - s1, min(c2_hi, 0.0) - s2])
                val, _ = norm_at(c)
                if val < best:
                    best, best_c = val, c
        return best_c

    c = np.array(initial, dtype=float) if initial is not None \
        else np.array([-1.0, -1.0])
    fnorm, r = norm_at(c)
    if not np.isfinite(fnorm):
        c = grid_seed()
        fnorm, r = norm_at(c)
    history = [fnorm]
    restarted = False
    it = 0
    while it < max_iter and fnorm > tol:
        it += 1
        step = 1e-6
        J = np.empty((2, 2))
        for k in range(2):
            cp = c.copy()
            cp[k] += step
            rp = _residual_vec(curve, v0, params, cp)
            if not np.all(np.isfinite(rp)):
                cp[k] -= 2 * step
                rp = _residual_vec(curve, v0, params, cp)
                J[:, k] = (r - rp) / step
            else:
                J[:, k] = (rp - r) / step
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            delta = -np.linalg.lstsq(J, r, rcond=None)[0]
        t = 1.0
        improved = False
        for _ in range(50):
            cand = c + t * delta
            val, rv = norm_at(cand)
            if np.isfinite(val) and val < fnorm:
                c, fnorm, r = cand, val, rv
                improved = True
                break
            t *= 0.5
        history.append(fnorm)
        if not improved:
            if restarted:
                break
            restarted = True
            c = grid_seed()
            fnorm, r = norm_at(c)
            history.append(fnorm)
    return FitResult(c1=float(c[0]), c2=float(c[1]), residual_norm=fnorm,
                     iterations=it, converged=bool(fnorm <= tol),
                     history=history)


def reconstruct_potential(curve: LbicCurve, v0: float,
                          params: Lbic1dParameters | None = None,
                          fit: FitResult | None = None) -> np.ndarray:
    """V = -ln Y with the fitted contact constants."""
    params = params or Lbic1dParameters()
    if fit is None:
        fit = fit_constants(curve, v0, params)
    y = positive_root(curve, params, fit.c1, fit.c2)
    if np.any(y <= 0.0):
        raise ValueError("root is not positive; curve not attainable")
    return -np.log(y)


@dataclass
class AttainabilityReport:
    """Outcome of testing a measured curve against the characterization:
    a curve is attainable iff nonpositive contact constants zero both
    compatibility residuals and produce a positive root consistent with
    the electron boundary drop."""

    attainable: bool
    fit: FitResult
    j1: float
    j2: float
    integral: float
    y_min: float

    def summary(self) -> dict:
        return {
            "attainable": self.attainable,
            "c1": self.fit.c1, "c2": self.fit.c2,
            "J1": self.j1, "J2": self.j2,
            "integral_residual": self.integral, "y_min": self.y_min,
        }


def attainability_report(curve: LbicCurve, v0: float,
                         params: Lbic1dParameters | None = None,
                         tol: float = 1e-6) -> AttainabilityReport:
    params = params or Lbic1dParameters()
    fit = fit_constants(curve, v0, params)
    j1, j2 = residuals(curve, v0, params, fit.c1, fit.c2)
    try:
        y = positive_root(curve, params, fit.c1, fit.c2)
        y_min = float(y.min())
        integral = integral_residual(curve, params, fit.c1, fit.c2)
    except ValueError:
        y_min = float("nan")
        integral = float("inf")
    ok = (fit.converged and fit.c1 <= tol and fit.c2 <= tol
          and abs(j1) < tol and abs(j2) < tol
          and abs(integral) < 10 * tol and y_min > 0.0)
    return AttainabilityReport(attainable=bool(ok), fit=fit, j1=j1, j2=j2,
                               integral=integral, y_min=y_min)


@dataclass
class FamilyMember:
    """One potential from the non-uniqueness family, with the carrier
    profiles certifying that it reproduces the measured curve."""

    c1: float
    c2: float
    y: np.ndarray
    potential: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray

    def consistency(self, curve: LbicCurve) -> float:
        """max |(v_hat - u_hat) - i|; zero by construction up to
        quadrature error."""
        return float(np.abs(self.v_hat - self.u_hat - curve.i).max())


def family_member(curve: LbicCurve, params: Lbic1dParameters,
                  c1: float) -> FamilyMember:
    """Construct the family member with electron constant ``c1``.

    Requires c1 strictly below the admissible bound so a < 0.  The hole
    constant is the unique root of 1 + int a Y dx = 0, found by bracketed
    bisection on c2 (the map is strictly increasing in c2).  The carrier
    profiles are rebuilt by quadrature, certifying v_hat - u_hat = i.
    """
    bound1 = admissible_c1_bound(curve, params)
    if c1 >= bound1:
        raise ValueError(f"c1 must lie below {bound1:.6g}")
    bound2 = admissible_c2_bound(curve, params)

    def g(c2):
        return integral_residual(curve, params, c1, c2)

    hi = min(bound2, 0.0) - 1e-12
    lo = hi - 1.0
    g_hi = g(hi)
    if g_hi < 0.0:
        raise ValueError("no admissible hole constant for this c1")
    for _ in range(80):
        if g(lo) < 0.0:
            break
        lo = hi + 2.0 * (lo - hi)
    else:
        raise ValueError("failed to bracket the hole constant")
    c2 = brentq(g, lo, hi, xtol=1e-14, rtol=8.9e-16)
    y = positive_root(curve, params, c1, c2)
    a, b = flux_fields(curve, params, c1, c2)
    u_hat = 1.0 + cumulative_trapezoid(a * y, curve.x, initial=0.0)
    v_hat = 1.0 + cumulative_trapezoid(b / y, curve.x, initial=0.0)
    return FamilyMember(c1=float(c1), c2=float(c2), y=y,
                        potential=-np.log(y), u_hat=u_hat, v_hat=v_hat)


def family_sweep(curve: LbicCurve, params: Lbic1dParameters,
                 c1_values) -> list[FamilyMember]:
    """Family members for several electron constants, e.g. to exhibit
    the pointwise monotone ordering of the potentials."""
    return [family_member(curve, params, c1) for c1 in c1_values]
