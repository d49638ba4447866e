"""Static objects of the Hopfield model with random ±1 patterns.

Spins and patterns are stored as ``int8`` arrays.  Pattern matrices are
``n x p`` with one row ``xi_i`` per neuron, so column ``mu`` is the stored
pattern ``xi^mu``.  Direction indices ``l`` are signed and 1-based:
``e_l = sign(l) * e_|l|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class CriticalPointError(ValueError):
    """Raised for the excluded critical point (beta, h) = (1, 0)."""


@dataclass(frozen=True)
class ModelParams:
    n: int
    p: int
    beta: float
    h: float = 0.0
    l: int = 1
    k: int = 1

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.p > self.n:
            raise ValueError(f"p={self.p} exceeds n={self.n}")
        if not 1 <= self.k <= self.p:
            raise ValueError(f"k={self.k} must lie in [1, p={self.p}]")
        if self.l == 0 or abs(self.l) > self.p:
            raise ValueError(f"l={self.l} must be nonzero with |l| <= p")
        if self.beta < 0 or self.h < 0:
            raise ValueError("beta and h must be nonnegative")

    @property
    def is_critical(self) -> bool:
        return self.beta == 1.0 and self.h == 0.0

    def require_noncritical(self):
        if self.is_critical:
            raise CriticalPointError("(beta, h) = (1, 0) is excluded")

    @property
    def axis(self) -> int:
        """0-based column index of the direction ``|l|``."""
        return abs(self.l) - 1

    @property
    def sign(self) -> int:
        return 1 if self.l > 0 else -1

    def unit_vector(self) -> np.ndarray:
        """Signed unit vector ``e_l`` in R^p."""
        e = np.zeros(self.p)
        e[self.axis] = self.sign
        return e

    def with_n(self, n: int) -> "ModelParams":
        return ModelParams(n, self.p, self.beta, self.h, self.l, self.k)

    def to_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "beta": self.beta, "h": self.h,
                "l": self.l, "k": self.k}


@dataclass(frozen=True)
class PatternSet:
    xi: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        xi = np.asarray(self.xi)
        if xi.ndim != 2:
            raise ValueError("pattern matrix must be 2-d (n x p)")
        if not np.all(np.abs(xi) == 1):
            raise ValueError("pattern entries must be -1 or +1")
        xi = xi.astype(np.int8)
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def p(self) -> int:
        return self.xi.shape[1]

    def signed_column(self, l: int) -> np.ndarray:
        """``xi^l`` with the sign convention ``xi^{-m} = -xi^m``."""
        col = self.xi[:, abs(l) - 1].astype(np.float64)
        return col if l > 0 else -col


@dataclass(frozen=True)
class SpinConfig:
    sigma: np.ndarray = field()

    def __post_init__(self):
        s = np.asarray(self.sigma)
        if s.ndim != 1 or not np.all(np.abs(s) == 1):
            raise ValueError("spin configuration must be a 1-d vector of +-1")
        s = s.astype(np.int8)
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    def __neg__(self) -> "SpinConfig":
        return SpinConfig(-self.sigma)

    def __len__(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class PatternCovarianceReport:
    deviation_norm: float
    epsilon_n: float
    alpha: float
    bound_holds: bool


def generate_patterns(params: ModelParams, seed: int) -> PatternSet:
    """Draw an ``n x p`` matrix of independent fair ±1 entries."""
    rng = np.random.default_rng(np.uint64(seed))
    bits = rng.integers(0, 2, size=(params.n, params.p), dtype=np.int8)
    return PatternSet(2 * bits - 1, seed=int(seed))


def _as_spins(sigma) -> np.ndarray:
    if isinstance(sigma, SpinConfig):
        return sigma.sigma
    return np.asarray(sigma)


def _as_xi(xi) -> np.ndarray:
    if isinstance(xi, PatternSet):
        return xi.xi
    return np.asarray(xi)


def _check_dims(sigma: np.ndarray, xi: np.ndarray):
    if sigma.shape[-1] != xi.shape[0]:
        raise ValueError(
            f"spin length {sigma.shape[-1]} does not match n={xi.shape[0]}")


def overlap(sigma, xi) -> np.ndarray:
    """Overlap vector ``S_n / n``; also accepts a stack of configurations."""
    s, x = _as_spins(sigma), _as_xi(xi)
    _check_dims(s, x)
    return (s.astype(np.float64) @ x.astype(np.float64)) / x.shape[0]


def hamiltonian(sigma, xi) -> float:
    """Hopfield energy ``-(1/2n) sum_mu (sum_i xi_i^mu sigma_i)^2``."""
    s, x = _as_spins(sigma), _as_xi(xi)
    _check_dims(s, x)
    S = s.astype(np.float64) @ x.astype(np.float64)
    return -0.5 * float(S @ S) / x.shape[0]


def log_gibbs_weight(sigma, xi, params: ModelParams):
    """Unnormalised log weight ``-beta H_n + <S_n, h e_l>``.

    Vectorised over leading axes of ``sigma``.
    """
    s, x = _as_spins(sigma), _as_xi(xi)
    _check_dims(s, x)
    S = s.astype(np.float64) @ x.astype(np.float64)
    energy = -0.5 * np.sum(S * S, axis=-1) / x.shape[0]
    field = params.h * params.sign * S[..., params.axis]
    return -params.beta * energy + field


def local_field(i: int, sigma, xi, exclude_self: bool = True) -> float:
    """Local field ``m_i`` or ``m_i^i`` at 0-based site ``i``."""
    s, x = _as_spins(sigma), _as_xi(xi)
    _check_dims(s, x)
    n, p = x.shape
    if not 0 <= i < n:
        raise IndexError(f"site {i} out of range for n={n}")
    m = float(x[i].astype(np.float64) @ (x.T.astype(np.float64) @ s)) / n
    if exclude_self:
        m -= p * s[i] / n
    return m


def conditional_spin_distribution(i: int, sigma, xi,
                                  params: ModelParams) -> tuple[float, float]:
    """Heat-bath law of ``sigma_i`` given the other spins.

    Returns ``(P(+1), P(-1))`` with ``P(t) ∝ exp(t (beta m_i^i + h xi_i^l))``.
    """
    x = _as_xi(xi)
    field = params.beta * local_field(i, sigma, x, exclude_self=True)
    field += params.h * params.sign * x[i, params.axis]
    up = float(expit(2.0 * field))
    return up, float(expit(-2.0 * field))


def pattern_covariance_matrix(xi) -> np.ndarray:
    """``(1/n) sum_i xi_i xi_i^t - Id``."""
    x = _as_xi(xi).astype(np.float64)
    return x.T @ x / x.shape[0] - np.eye(x.shape[1])


def epsilon_n(n: int, p: int, epsilon: float) -> tuple[float, float]:
    """Return ``(alpha, eps_n)`` for the almost-sure pattern-covariance bound."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    alpha = max(p, (3.0 * np.log(n) / np.log1p(epsilon)) ** 4) / n
    root = np.sqrt(alpha)
    return float(alpha), float(root * (2.0 + root) * (1.0 + epsilon))


def pattern_covariance_report(xi, epsilon: float) -> PatternCovarianceReport:
    x = _as_xi(xi)
    n, p = x.shape
    dev = pattern_covariance_matrix(x)
    norm = float(np.max(np.abs(np.linalg.eigvalsh(dev))))
    alpha, eps_n = epsilon_n(n, p, epsilon)
    return PatternCovarianceReport(norm, eps_n, alpha, norm <= eps_n)
