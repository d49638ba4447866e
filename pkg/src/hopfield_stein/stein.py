"""Regression objects of the exchangeable pair and the Stein bound terms.

For a state ``sigma`` the pair moves one uniformly chosen spin, so all
conditional moments given ``sigma`` are closed-form site sums::

    E[W' - W | sigma]           = (T - S) / (n sqrt(n))
    E[dW_i dW_j | sigma]        = 2 Q_ij / n^2
    E|dW_i dW_j dW_k| | sigma   = 4 F / n^(5/2)

with ``T, Q, F`` the site statistics of :class:`~.sampling.StateEnsemble`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .free_energy import CenteringResult, phi_hessian, sech2_moment
from .model import ModelParams, _as_xi
from .sampling import StateEnsemble

MIN_MC_DRAWS = 100
N_BATCHES = 20


class SingularLambdaError(np.linalg.LinAlgError):
    pass


class BoundDomainError(ValueError):
    """The smoothing parameter ``t`` of the non-smooth bound is outside (0, 1)."""


@dataclass
class RegressionObjects:
    lambda_matrix: np.ndarray
    lambda_inverse: np.ndarray
    lambda_i: np.ndarray
    hessian: np.ndarray | None
    params: ModelParams
    centering: CenteringResult

    @property
    def k(self) -> int:
        return self.params.k

    def w(self, states: StateEnsemble) -> np.ndarray:
        return states.w(self.centering, self.k)

    def full_deviation(self, states: StateEnsemble) -> np.ndarray:
        return states.w(self.centering)

    def drift(self, states: StateEnsemble) -> np.ndarray:
        """``E[W' - W | sigma]`` from the heat-bath means."""
        n = states.n
        return ((states.tanh_sum - n * states.overlap) / n**1.5)[:, :self.k]

    def r1(self, states: StateEnsemble) -> np.ndarray:
        n = states.n
        return ((states.tanh_sum - states.tanh_full_sum) / n**1.5)[:, :self.k]

    def r2(self, states: StateEnsemble) -> np.ndarray:
        """Remainder after linearising the free-energy gradient.

        Uses ``(1/sqrt n) grad Phi(beta S/n + h e_l) = (U - S) / n^(3/2)``.
        """
        n = states.n
        grad_part = ((states.tanh_full_sum - n * states.overlap) / n**1.5)[:, :self.k]
        return grad_part + self.w(states) @ self.lambda_matrix.T

    def residual(self, states: StateEnsemble) -> np.ndarray:
        """``R`` in ``E[W' - W | sigma] = -Lambda W + R``."""
        return self.r1(states) + self.r2(states)

    def r2_taylor(self, states: StateEnsemble) -> np.ndarray:
        """Cross-block Hessian part of ``R_2`` (zero when ``k = p``)."""
        if self.hessian is None:
            return np.zeros((len(states), self.k))
        n, k = states.n, self.k
        d = self.full_deviation(states)
        return self.params.beta / n * d[:, k:] @ self.hessian[:k, k:].T

    def regression_gap(self, states: StateEnsemble, drift=None) -> np.ndarray:
        """``E[W'-W|sigma] + Lambda W - R``; identically zero up to rounding."""
        drift = self.drift(states) if drift is None else drift
        return drift + self.w(states) @ self.lambda_matrix.T - self.residual(states)


def build_regression(xi, params: ModelParams,
                     centering: CenteringResult) -> RegressionObjects:
    """``Lambda = (beta/n) [-D^2 Phi(lambda)]`` restricted to the first ``k`` axes."""
    x = _as_xi(xi)
    n, p = x.shape
    k = params.k
    scaled = (np.eye(p) - params.beta * sech2_moment(centering.lam, x)) / n
    lam_mat = scaled[:k, :k]
    cond = np.linalg.cond(lam_mat)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularLambdaError(f"Lambda is singular (condition number {cond:.3g})")
    inv = np.linalg.inv(lam_mat)
    hess = phi_hessian(centering.lam, x, params) if params.beta > 0 else None
    return RegressionObjects(lam_mat, inv, np.abs(inv).sum(axis=0), hess,
                             params, centering)


# --------------------------------------------------------------- moments

def _weights(states: StateEnsemble, idx=None) -> np.ndarray:
    if states.weights is not None:
        w = states.weights if idx is None else states.weights[idx]
        return w / w.sum()
    m = len(states) if idx is None else len(idx)
    return np.full(m, 1.0 / m)


def _mean(x: np.ndarray, w: np.ndarray):
    return np.tensordot(w, x, axes=(0, 0))


def _var(x: np.ndarray, w: np.ndarray):
    mu = _mean(x, w)
    return np.maximum(_mean((x - mu) ** 2, w), 0.0)


def conditional_second_moments(states: StateEnsemble, k: int) -> np.ndarray:
    return 2.0 * states.flip_matrix[:, :k, :k] / states.n**2


def conditional_abs_third(states: StateEnsemble) -> np.ndarray:
    return 4.0 * states.flip_sum / states.n**2.5


def _group_by_w(w: np.ndarray, decimals: int = 10):
    _, inverse = np.unique(np.round(w, decimals), axis=0, return_inverse=True)
    return inverse.ravel()


def _terms(states: StateEnsemble, reg: RegressionObjects, idx=None,
           given_w: bool = False) -> dict:
    """All Stein bound ingredients on the (sub)ensemble ``idx``."""
    k = reg.k
    wts = _weights(states, idx)
    sel = slice(None) if idx is None else idx
    cs = conditional_second_moments(states, k)[sel]
    W = reg.w(states)[sel]
    if given_w:
        groups = _group_by_w(W)
        mass = np.bincount(groups, weights=wts)
        cs_flat = cs.reshape(len(cs), -1)
        sums = np.stack([np.bincount(groups, weights=wts * cs_flat[:, j])
                         for j in range(cs_flat.shape[1])], axis=1)
        keep = mass > 0
        cond = (sums[keep] / mass[keep, None]).reshape(-1, k, k)
        var_cs = _var(cond, mass[keep])
    else:
        var_cs = _var(cs, wts)
    R = reg.residual(states)[sel]
    third = _mean(conditional_abs_third(states)[sel], wts)
    sd_cs = np.sqrt(var_cs)
    inv_abs = np.abs(reg.lambda_inverse)
    lam_i = reg.lambda_i
    r2 = _mean(R * R, wts)
    return {
        "term_A": float(np.sum(lam_i[:, None] * sd_cs)),
        "term_B": float(lam_i.sum() * k * k * third),
        "term_C": float(np.sum(lam_i * np.sqrt(r2))),
        "term_C_variance": float(np.sum(lam_i * np.sqrt(_var(R, wts)))),
        "term_A1": float(np.sum(inv_abs.T * sd_cs)),
        "term_A2": float(np.sum(inv_abs.T * np.sqrt(r2)[:, None])),
        "sigma_hat": _mean(np.einsum("si,sj->sij", W, W), wts),
        "abs_mean_sum": float(np.sum(_mean(np.abs(W), wts))),
    }


def _check_mc(states: StateEnsemble):
    if states.weights is None and len(states) < MIN_MC_DRAWS:
        raise ValueError(f"Monte Carlo mode needs >= {MIN_MC_DRAWS} draws, "
                         f"got {len(states)}")


def term_A(states: StateEnsemble, reg: RegressionObjects,
           given_w: bool = False) -> float:
    """``sum_ij lambda^(i) sqrt(Var E[dW_i dW_j | .])``, conditioning on sigma.

    With ``given_w`` (exact ensembles only) the inner expectation conditions
    on ``W`` itself, which can only lower the value.
    """
    _check_mc(states)
    return _terms(states, reg, given_w=given_w)["term_A"]


def term_B(states: StateEnsemble, reg: RegressionObjects) -> float:
    _check_mc(states)
    return _terms(states, reg)["term_B"]


def term_C(states: StateEnsemble, reg: RegressionObjects,
           centered: bool = False) -> float:
    """``sum_i lambda^(i) sqrt(E R_i^2)``; ``centered`` uses ``Var R_i``."""
    _check_mc(states)
    t = _terms(states, reg)
    return t["term_C_variance"] if centered else t["term_C"]


def empirical_covariance(batch_or_states, weights=None) -> np.ndarray:
    """Uncentred second-moment matrix ``E[W W^t]``."""
    w = getattr(batch_or_states, "w", batch_or_states)
    if callable(w):
        raise TypeError("pass a SampleBatch or an array of W rows")
    w = np.asarray(w, dtype=np.float64)
    if weights is None:
        weights = getattr(batch_or_states, "weights", None)
    if w.shape[0] == 0:
        raise ValueError("empty batch")
    if weights is None:
        if w.shape[0] < 2:
            raise ValueError("need at least two draws")
        weights = np.full(w.shape[0], 1.0 / w.shape[0])
    return np.einsum("s,si,sj->ij", np.asarray(weights) / np.sum(weights), w, w)


def operator_norm(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(mat))))


def bound_smooth(term_a: float, term_b: float, term_c: float,
                 sigma_hat: np.ndarray, g_norms=(1.0, 1.0, 1.0)) -> float:
    """Smooth-test-function bound for a ``d``-dimensional ``W``."""
    g1, g2, g3 = g_norms
    d = np.atleast_2d(sigma_hat).shape[0]
    sig = math.sqrt(operator_norm(np.atleast_2d(sigma_hat)))
    return g2 / 4.0 * term_a + g3 / 12.0 * term_b + (g1 + 0.5 * d * sig * g2) * term_c


def bound_nonsmooth(term_a1: float, term_a2: float, term_a3: float,
                    sigma_hat: np.ndarray, abs_mean_sum: float, a: float,
                    a_sup: float, dim_constant: float = 1.0) -> float:
    """Non-smooth (class G) bound with smoothing level ``sqrt(t) = 2 C A^3 A_3``.

    ``a_sup`` bounds every coordinate increment of the pair.  When ``t = 0``
    (``A_3 = 0``) the logarithmic terms are admissible only if their
    coefficients vanish.
    """
    sig = math.sqrt(operator_norm(np.atleast_2d(sigma_hat)))
    cube = a_sup**3 * term_a3
    t = (2.0 * dim_constant * cube) ** 2
    if t >= 1.0 or t < 0.0:
        raise BoundDomainError(f"t = {t:.4g} outside (0, 1)")
    if t == 0.0:
        if term_a1 or term_a2:
            raise BoundDomainError("t = 0 with nonzero A1/A2")
        log_t = 0.0
    else:
        log_t = math.log(1.0 / t)
    inner = (log_t * term_a1
             + (log_t * sig + 1.0) * term_a2
             + (1.0 + log_t * abs_mean_sum + a) * cube
             + a * a_sup)
    return dim_constant * inner


def term_A3(reg: RegressionObjects) -> float:
    return float(np.sum(np.abs(reg.lambda_inverse).max(axis=0)))


# ---------------------------------------------------------------- report

@dataclass
class SteinReport:
    mode: str
    n: int
    k: int
    sigma_hat: np.ndarray
    term_A: float
    term_B: float
    term_C: float
    term_C_variance: float
    bound_smooth: float
    term_A1: float
    term_A2: float
    term_A3: float
    a_sup: float
    abs_mean_sum: float
    bound_nonsmooth: float | None
    dim_constant: float
    a_constant: float
    regression_residual: float
    term_A_given_w: float | None = None
    lambda_matrix: np.ndarray | None = None
    standard_errors: dict | None = None
    g_norms: tuple = (1.0, 1.0, 1.0)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("sigma_hat", "lambda_matrix"):
            if d[key] is not None:
                d[key] = np.asarray(d[key]).tolist()
        d["g_norms"] = list(self.g_norms)
        return d


def _batch_indices(states: StateEnsemble, n_batches: int) -> list[np.ndarray]:
    """Contiguous batches within each chain, pooled across chains."""
    chain = states.chain if states.chain is not None else np.zeros(len(states), int)
    out = [[] for _ in range(n_batches)]
    for c in np.unique(chain):
        rows = np.flatnonzero(chain == c)
        for b, part in enumerate(np.array_split(rows, n_batches)):
            out[b].append(part)
    return [np.concatenate(parts) for parts in out if sum(map(len, parts))]


def stein_report(states: StateEnsemble, reg: RegressionObjects,
                 g_norms=(1.0, 1.0, 1.0), a: float = 1.0,
                 dim_constant: float = 1.0) -> SteinReport:
    """Evaluate every bound ingredient on an exact or sampled ensemble."""
    _check_mc(states)
    terms = _terms(states, reg)
    sigma_hat = terms["sigma_hat"]
    a_sup = 2.0 / math.sqrt(states.n)
    a3 = term_A3(reg)
    notes = []
    smooth = bound_smooth(terms["term_A"], terms["term_B"], terms["term_C"],
                          sigma_hat, g_norms)
    try:
        nonsmooth = bound_nonsmooth(terms["term_A1"], terms["term_A2"], a3,
                                    sigma_hat, terms["abs_mean_sum"], a, a_sup,
                                    dim_constant)
    except BoundDomainError as exc:
        nonsmooth = None
        notes.append(f"non-smooth bound undefined: {exc}")
    gap = reg.regression_gap(states)
    given_w = _terms(states, reg, given_w=True)["term_A"] if states.exact else None
    ses = None
    if not states.exact:
        batches = [_terms(states, reg, idx) for idx in
                   _batch_indices(states, N_BATCHES)]
        ses = {}
        for key in ("term_A", "term_B", "term_C", "term_C_variance",
                    "term_A1", "term_A2"):
            vals = np.array([b[key] for b in batches])
            ses[key] = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    return SteinReport(
        mode="exact" if states.exact else "monte_carlo",
        n=states.n, k=reg.k, sigma_hat=sigma_hat,
        term_A=terms["term_A"], term_B=terms["term_B"], term_C=terms["term_C"],
        term_C_variance=terms["term_C_variance"], bound_smooth=smooth,
        term_A1=terms["term_A1"], term_A2=terms["term_A2"], term_A3=a3,
        a_sup=a_sup, abs_mean_sum=terms["abs_mean_sum"],
        bound_nonsmooth=nonsmooth, dim_constant=dim_constant, a_constant=a,
        regression_residual=float(np.max(np.abs(gap))) if len(gap) else 0.0,
        term_A_given_w=given_w, lambda_matrix=reg.lambda_matrix,
        standard_errors=ses, g_norms=tuple(g_norms), notes=notes)
