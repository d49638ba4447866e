"""Quenched free energy, Curie-Weiss fixed points and the random centering."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import CriticalPointError, ModelParams, _as_xi

ARCTANH_CLAMP = 1.0 - 1e-15
TRUST_RADIUS = 0.5
MAX_NEWTON_ITER = 100
GRAD_TOL = 1e-10


class Branch(str, enum.Enum):
    ZERO = "zero"
    POSITIVE = "positive"
    NEGATIVE = "negative"
    FIELD = "field"


@dataclass(frozen=True)
class FixedPointResult:
    x_star: float
    branch: Branch
    residual: float

    def to_dict(self) -> dict:
        return {"x_star": self.x_star, "branch": self.branch.value,
                "residual": self.residual}


@dataclass(frozen=True)
class CenteringResult:
    lam: np.ndarray
    x_center: np.ndarray
    hessian_at_max: np.ndarray | None
    min_eig_neg_hessian: float
    grad_norm: float
    fallback_used: bool
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "x_center": self.x_center.tolist(),
            "grad_norm": self.grad_norm,
            "min_eig_neg_hessian": self.min_eig_neg_hessian,
            "fallback_used": self.fallback_used,
        }

    @classmethod
    def from_dict(cls, d: dict, xi, params: ModelParams) -> "CenteringResult":
        lam = np.asarray(d["lambda"], dtype=np.float64)
        hess = phi_hessian(lam, xi, params) if params.beta > 0 else None
        return cls(lam, np.asarray(d["x_center"], dtype=np.float64), hess,
                   float(d["min_eig_neg_hessian"]), float(d["grad_norm"]),
                   bool(d["fallback_used"]))


def arctanh(x):
    x = np.clip(x, -ARCTANH_CLAMP, ARCTANH_CLAMP)
    return 0.5 * np.log((1.0 + x) / (1.0 - x))


def log_cosh(z):
    """Overflow-safe ``log cosh z``."""
    a = np.abs(z)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def curie_weiss_fixed_point(beta: float, h: float = 0.0,
                            sign: int = 1) -> FixedPointResult:
    """Solve ``beta x + h = arctanh(x)`` on the physically relevant branch.

    For ``h = 0`` and ``beta > 1`` the largest root ``x^+`` is returned, or
    ``x^- = -x^+`` when ``sign = -1``.
    """
    if beta == 1.0 and h == 0.0:
        raise CriticalPointError("no fixed point selection at (beta, h) = (1, 0)")
    if beta < 0 or h < 0:
        raise ValueError("beta and h must be nonnegative")
    if h == 0.0 and beta < 1.0:
        return FixedPointResult(0.0, Branch.ZERO, 0.0)

    def g(x):
        return np.tanh(beta * x + h) - x

    lo, hi = 1e-12, float(np.nextafter(1.0, 0.0))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * hi:
            break
    x = 0.5 * (lo + hi)
    # bisection stalls at a few ulps; polish on f(x) = beta x + h - arctanh x
    for _ in range(3):
        f = beta * x + h - arctanh(x)
        step = f / (beta - 1.0 / (1.0 - x * x))
        if not np.isfinite(step) or abs(step) > hi - lo + 1e-15:
            break
        x -= step
    residual = float(abs(beta * x + h - arctanh(x)))
    if h > 0:
        return FixedPointResult(float(x), Branch.FIELD, residual)
    if sign < 0:
        return FixedPointResult(-float(x), Branch.NEGATIVE, residual)
    return FixedPointResult(float(x), Branch.POSITIVE, residual)


def _projections(lam: np.ndarray, xi) -> tuple[np.ndarray, np.ndarray]:
    x = _as_xi(xi).astype(np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (x.shape[1],):
        raise ValueError(f"lambda has shape {lam.shape}, expected ({x.shape[1]},)")
    return x, x @ lam


def phi(lam, xi, params: ModelParams) -> float:
    x, z = _projections(lam, xi)
    d = np.asarray(lam, dtype=np.float64) - params.h * params.unit_vector()
    return float(-(d @ d) / (2.0 * params.beta) + np.mean(log_cosh(z)))


def phi_gradient(lam, xi, params: ModelParams) -> np.ndarray:
    x, z = _projections(lam, xi)
    d = np.asarray(lam, dtype=np.float64) - params.h * params.unit_vector()
    return -d / params.beta + x.T @ np.tanh(z) / x.shape[0]


def sech2_moment(lam, xi) -> np.ndarray:
    """``(1/n) sum_i sech^2(<lam, xi_i>) xi_i xi_i^t``."""
    x, z = _projections(lam, xi)
    w = 1.0 / np.cosh(np.clip(z, -350, 350)) ** 2
    return (x * w[:, None]).T @ x / x.shape[0]


def phi_hessian(lam, xi, params: ModelParams) -> np.ndarray:
    p = _as_xi(xi).shape[1]
    return -np.eye(p) / params.beta + sech2_moment(lam, xi)


def index_set_L(params: ModelParams) -> set[int]:
    params.require_noncritical()
    if params.h != 0.0:
        return {params.l}  # h >= 0, so sgn(h) l = l
    if params.beta < 1.0:
        return {1}
    return set(range(-params.p, 0)) | set(range(1, params.p + 1))


def _fallback(xi, params: ModelParams, x_star: float, lam=None, grad_norm=np.inf,
              iterations=0) -> CenteringResult:
    e = params.unit_vector()
    x_center = x_star * e
    if lam is None:
        lam = params.beta * x_center + params.h * e
    if params.beta > 0:
        hess = phi_hessian(lam, xi, params)
        min_eig = float(np.linalg.eigvalsh(-hess)[0])
    else:
        hess, min_eig = None, float("inf")
    return CenteringResult(np.asarray(lam, dtype=np.float64), x_center, hess,
                           min_eig, float(grad_norm), True, iterations)


def find_lambda_max(xi, params: ModelParams,
                    trust_radius: float = TRUST_RADIUS,
                    max_iter: int = MAX_NEWTON_ITER,
                    grad_tol: float = GRAD_TOL) -> CenteringResult:
    """Maximise the free energy near ``arctanh(x*) e_l`` by damped Newton ascent.

    Iterates are kept inside the closed ball of radius ``trust_radius``
    around the start.  If the gradient does not vanish to ``grad_tol`` with a
    negative definite Hessian, the deterministic centering ``x* e_l`` is
    returned with ``fallback_used`` set.
    """
    params.require_noncritical()
    x_star = curie_weiss_fixed_point(params.beta, params.h).x_star
    if params.beta == 0.0:
        # Phi is undefined at beta = 0; the field alone fixes the centering
        return _fallback(xi, params, np.tanh(params.h), grad_norm=0.0)

    e = params.unit_vector()
    start = arctanh(x_star) * e
    lam = start.copy()
    value = phi(lam, xi, params)
    grad = phi_gradient(lam, xi, params)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) <= grad_tol:
            break
        hess = phi_hessian(lam, xi, params)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        if step @ grad <= 0:  # not an ascent direction
            step = grad
        accepted = False
        for _ in range(60):
            cand = lam + step
            off = cand - start
            dist = np.linalg.norm(off)
            if dist > trust_radius:
                cand = start + off * (trust_radius / dist)
            cand_value = phi(cand, xi, params)
            if cand_value >= value:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        lam, value = cand, cand_value
        grad = phi_gradient(lam, xi, params)

    grad_norm = float(np.linalg.norm(grad))
    hess = phi_hessian(lam, xi, params)
    min_eig = float(np.linalg.eigvalsh(-hess)[0])
    if grad_norm > grad_tol or min_eig <= 0:
        return _fallback(xi, params, x_star, grad_norm=grad_norm, iterations=it)
    x_center = (lam - params.h * e) / params.beta
    return CenteringResult(lam, x_center, hess, min_eig, grad_norm, False, it)


def hessian_deviation(xi, params: ModelParams, centering: CenteringResult) -> float:
    """Operator norm of ``-D^2 Phi(lambda) - (1/beta)(1 - beta(1 - x*^2)) Id``."""
    x_star = curie_weiss_fixed_point(params.beta, params.h).x_star
    c = -phi_hessian(centering.lam, xi, params)
    target = (1.0 - params.beta * (1.0 - x_star**2)) / params.beta
    dev = c - target * np.eye(c.shape[0])
    return float(np.max(np.abs(np.linalg.eigvalsh(dev))))
