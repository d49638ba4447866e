"""Brute-force reference computations for small systems.

Everything here works from the explicit double-sum energy over enumerated
configurations and shares no formulas with the fast paths.  Intended for
``n <= 10``.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .model import ModelParams, _as_xi

BRUTE_MAX_N = 12


def energy_double_sum(sigma, xi) -> float:
    """``-(1/2n) sum_mu sum_{i,j} xi_i^mu xi_j^mu sigma_i sigma_j`` term by term."""
    x = _as_xi(xi)
    n, p = x.shape
    total = 0
    for mu in range(p):
        for i in range(n):
            for j in range(n):
                total += int(x[i, mu]) * int(x[j, mu]) * int(sigma[i]) * int(sigma[j])
    return -total / (2.0 * n)


def log_weight(sigma, xi, params: ModelParams) -> float:
    x = _as_xi(xi)
    field = sum(params.sign * int(x[i, params.axis]) * int(sigma[i])
                for i in range(x.shape[0]))
    return -params.beta * energy_double_sum(sigma, x) + params.h * field


class BruteForce:
    """Enumerated Gibbs law of one small instance.

    Configurations are tuples in ``itertools.product((-1, 1), repeat=n)``
    order; ``log_weights`` holds the unnormalised double-sum weights.
    """

    def __init__(self, xi, params: ModelParams):
        self.xi = np.array(_as_xi(xi), dtype=np.int64)
        self.n, self.p = self.xi.shape
        if self.n > BRUTE_MAX_N:
            raise ValueError(f"brute-force oracle refused for n={self.n} > {BRUTE_MAX_N}")
        self.params = params
        self.configs = list(itertools.product((-1, 1), repeat=self.n))
        self.index = {c: r for r, c in enumerate(self.configs)}
        self.log_weights = np.array([log_weight(c, self.xi, params)
                                     for c in self.configs])
        self.probs = np.exp(self.log_weights - logsumexp(self.log_weights))

    def flipped(self, sigma, i: int, s: int) -> tuple:
        out = list(sigma)
        out[i] = s
        return tuple(out)

    def conditional(self, i: int, sigma) -> tuple[float, float]:
        """``(P(sigma_i = +1), P(sigma_i = -1))`` from the two full weights."""
        a = self.log_weights[self.index[self.flipped(sigma, i, 1)]]
        b = self.log_weights[self.index[self.flipped(sigma, i, -1)]]
        m = max(a, b)
        za, zb = math.exp(a - m), math.exp(b - m)
        return za / (za + zb), zb / (za + zb)

    def moves(self, sigma):
        """``(site, new spin, probability)`` for one pair step from ``sigma``."""
        for i in range(self.n):
            up, down = self.conditional(i, sigma)
            yield i, 1, up / self.n
            yield i, -1, down / self.n

    def w(self, sigma, x_center, k: int) -> np.ndarray:
        s = np.asarray(sigma, dtype=np.float64)
        return math.sqrt(self.n) * (s @ self.xi / self.n - np.asarray(x_center))[:k]

    def increment(self, sigma, i: int, s: int, k: int) -> np.ndarray:
        return self.xi[i, :k] * (s - sigma[i]) / math.sqrt(self.n)

    def drift(self, sigma, k: int) -> np.ndarray:
        """``E[W' - W | sigma]``."""
        out = np.zeros(k)
        for i, s, prob in self.moves(sigma):
            out += prob * self.increment(sigma, i, s, k)
        return out

    def increment_moments(self, sigma, k: int) -> tuple[np.ndarray, float]:
        """``E[dW dW^t | sigma]`` and ``E[sum_abc |dW_a dW_b dW_c| | sigma]``."""
        second = np.zeros((k, k))
        third = 0.0
        for i, s, prob in self.moves(sigma):
            d = self.increment(sigma, i, s, k)
            second += prob * np.outer(d, d)
            third += prob * float(np.sum(np.abs(np.einsum("a,b,c->abc", d, d, d))))
        return second, third

    def pair_law(self, x_center, k: int, decimals: int = 12) -> dict:
        """Exact law of ``(W, W')`` keyed by rounded atom pairs."""
        law: dict = {}
        for sigma, ps in zip(self.configs, self.probs):
            w = self.w(sigma, x_center, k)
            for i, s, prob in self.moves(sigma):
                wp = w + self.increment(sigma, i, s, k)
                key = (tuple(np.round(w, decimals)), tuple(np.round(wp, decimals)))
                law[key] = law.get(key, 0.0) + ps * prob
        return law

    def site_kernel(self, i: int) -> np.ndarray:
        """Transition matrix of one heat-bath update at site ``i``."""
        K = np.zeros((len(self.configs), len(self.configs)))
        for r, sigma in enumerate(self.configs):
            up, down = self.conditional(i, sigma)
            K[r, self.index[self.flipped(sigma, i, 1)]] += up
            K[r, self.index[self.flipped(sigma, i, -1)]] += down
        return K

    def sweep_operator(self) -> np.ndarray:
        """``n`` updates at uniformly chosen sites: ``((1/n) sum_i K_i)^n``."""
        step = sum(self.site_kernel(i) for i in range(self.n)) / self.n
        return np.linalg.matrix_power(step, self.n)


def swap_asymmetry(law: dict) -> float:
    """``max |P(W=a, W'=b) - P(W=b, W'=a)|`` over all atom pairs."""
    return max(abs(v - law.get((b, a), 0.0)) for (a, b), v in law.items())
