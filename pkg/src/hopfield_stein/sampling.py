"""Gibbs sampling, exact enumeration and the exchangeable pair.

Every state of the chain (or of an enumeration) is summarised by its
*site statistics*: sums over sites ``t`` of quantities built from the
heat-bath mean ``tau_t = tanh(beta m_t^t + h xi_t^l)``.  They are all the
Stein diagnostics need, so long chains never have to store spin vectors.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln, logsumexp

from .free_energy import CenteringResult
from .model import (ModelParams, SpinConfig, _as_xi,
                    conditional_spin_distribution)

log = logging.getLogger(__name__)

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
ENUMERATION_MAX_N = 24
LUMPED_MAX_STATES = 2_000_000
MIN_ACCEPTANCE = 1e-3


class ConditioningStarvation(RuntimeError):
    """Rejection sampling of the conditional measure barely accepts."""


@dataclass(frozen=True)
class Conditioning:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("conditioning radius must be positive")
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class ChainConfig:
    """Glauber chain settings; ``n_samples`` counts retained draws over all chains."""

    n_samples: int
    burnin_sweeps: int = 100
    thin_sweeps: int = 1
    n_chains: int = 1
    seed: int = 0
    conditioning: Conditioning | None = None
    workers: int = 1

    def __post_init__(self):
        if self.n_samples < 1 or self.n_chains < 1:
            raise ValueError("n_samples and n_chains must be positive")
        if self.thin_sweeps < 1 or self.burnin_sweeps < 0:
            raise ValueError("thin_sweeps >= 1 and burnin_sweeps >= 0 required")

    def chain_seed(self, c: int) -> int:
        return (int(self.seed) ^ (((c + 1) * GOLDEN) & MASK64)) & MASK64

    def draws_for_chain(self, c: int) -> int:
        q, r = divmod(self.n_samples, self.n_chains)
        return q + (1 if c < r else 0)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "burnin_sweeps": self.burnin_sweeps,
            "thin_sweeps": self.thin_sweeps,
            "n_chains": self.n_chains,
            "seed": self.seed,
            "chain_seeds": [self.chain_seed(c) for c in range(self.n_chains)],
            "conditioning": (None if self.conditioning is None
                             else self.conditioning.to_dict()),
        }


@dataclass
class StateEnsemble:
    """Per-state site statistics with optional exact probabilities.

    ``tanh_sum[s, mu] = sum_t xi_t^mu tau_t``, ``tanh_full_sum`` uses the
    full local field ``m_t`` instead of ``m_t^t``,
    ``flip_matrix[s, mu, nu] = sum_t xi_t^mu xi_t^nu (1 - sigma_t tau_t)`` and
    ``flip_sum`` is its common diagonal.
    """

    n: int
    overlap: np.ndarray
    tanh_sum: np.ndarray
    tanh_full_sum: np.ndarray
    flip_matrix: np.ndarray
    flip_sum: np.ndarray
    weights: np.ndarray | None = None
    chain: np.ndarray | None = None

    def __len__(self) -> int:
        return self.overlap.shape[0]

    @property
    def exact(self) -> bool:
        return self.weights is not None

    def w(self, centering: CenteringResult, k: int | None = None) -> np.ndarray:
        d = math.sqrt(self.n) * (self.overlap - centering.x_center)
        return d if k is None else d[:, :k]


@dataclass
class PairStream:
    site: np.ndarray
    w: np.ndarray
    w_prime: np.ndarray


@dataclass
class SampleBatch:
    w: np.ndarray
    params: ModelParams
    centering: CenteringResult
    weights: np.ndarray | None = None
    chain: np.ndarray | None = None
    draw: np.ndarray | None = None
    states: StateEnsemble | None = None
    pairs: PairStream | None = None
    acceptance: float | None = None
    conditioned: bool = False

    def __len__(self) -> int:
        return self.w.shape[0]

    @property
    def exact(self) -> bool:
        return self.weights is not None


@dataclass(frozen=True)
class PairSample:
    w: np.ndarray
    w_prime: np.ndarray
    site: int
    sigma: SpinConfig
    delta_bound_ok: bool = field(default=True)


def _field_column(xi: np.ndarray, params: ModelParams) -> np.ndarray:
    return params.sign * xi[:, params.axis].astype(np.float64)


# ---------------------------------------------------------------- kernels

@njit(cache=True, nogil=True)
def _heat_bath(spins, S, xi, fcol, beta, h, sites, uniforms, lo, hi):
    n, p = xi.shape
    for s in range(lo, hi):
        i = sites[s]
        dot = 0
        for mu in range(p):
            dot += xi[i, mu] * S[mu]
        old = spins[i]
        u = beta * (dot - p * old) / n + h * fcol[i]
        new = 1 if uniforms[s] * (1.0 + math.exp(-2.0 * u)) < 1.0 else -1
        if new != old:
            spins[i] = new
            for mu in range(p):
                S[mu] += 2 * new * xi[i, mu]


@njit(cache=True, nogil=True)
def _site_stats(spins, S, xi, fcol, beta, h, T, U, Q, F, row):
    n, p = xi.shape
    for t in range(n):
        dot = 0
        for mu in range(p):
            dot += xi[t, mu] * S[mu]
        st = spins[t]
        tau = math.tanh(beta * (dot - p * st) / n + h * fcol[t])
        tau_full = math.tanh(beta * dot / n + h * fcol[t])
        fl = 1.0 - st * tau
        F[row] += fl
        for mu in range(p):
            T[row, mu] += xi[t, mu] * tau
            U[row, mu] += xi[t, mu] * tau_full
            for nu in range(p):
                Q[row, mu, nu] += xi[t, mu] * xi[t, nu] * fl


@njit(cache=True, nogil=True)
def _run_block(spins, S, xi, fcol, beta, h, sites, uniforms, n_draws,
               sweeps_per_draw, cond, center, radius, record, out_S, T, U, Q, F,
               pair_sites, pair_u, pair_delta, row0, counters):
    n, p = xi.shape
    backup_spins = spins.copy()
    backup_S = S.copy()
    pos = 0
    for d in range(n_draws):
        for _ in range(sweeps_per_draw):
            if cond:
                backup_spins[:] = spins
                backup_S[:] = S
            _heat_bath(spins, S, xi, fcol, beta, h, sites, uniforms, pos, pos + n)
            pos += n
            if cond:
                dist2 = 0.0
                for mu in range(p):
                    diff = S[mu] / n - center[mu]
                    dist2 += diff * diff
                counters[0] += 1
                if dist2 < radius * radius:
                    counters[1] += 1
                else:
                    spins[:] = backup_spins
                    S[:] = backup_S
        if record:
            row = row0 + d
            for mu in range(p):
                out_S[row, mu] = S[mu]
            _site_stats(spins, S, xi, fcol, beta, h, T, U, Q, F, row)
            if pair_sites.shape[0] > 0:
                i = pair_sites[d]
                dot = 0
                for mu in range(p):
                    dot += xi[i, mu] * S[mu]
                u = beta * (dot - p * spins[i]) / n + h * fcol[i]
                new = 1 if pair_u[d] * (1.0 + math.exp(-2.0 * u)) < 1.0 else -1
                pair_delta[row] = new - spins[i]


# ------------------------------------------------------------ single steps

def glauber_sweep(sigma, xi, params: ModelParams,
                  rng: np.random.Generator) -> SpinConfig:
    """``n`` random-site heat-bath updates."""
    x = _as_xi(xi)
    spins = np.array(sigma.sigma if isinstance(sigma, SpinConfig) else sigma,
                     dtype=np.int8)
    n = x.shape[0]
    S = (spins.astype(np.int64) @ x.astype(np.int64))
    sites = rng.integers(0, n, size=n)
    uniforms = rng.random(n)
    _heat_bath(spins, S, x.astype(np.int64), _field_column(x, params),
               float(params.beta), float(params.h), sites, uniforms, 0, n)
    return SpinConfig(spins)


def make_pair(sigma, xi, params: ModelParams, centering: CenteringResult,
              rng: np.random.Generator) -> PairSample:
    """Resample one uniformly chosen spin from its conditional law."""
    x = _as_xi(xi)
    s = sigma if isinstance(sigma, SpinConfig) else SpinConfig(sigma)
    n, k = x.shape[0], params.k
    site = int(rng.integers(0, n))
    up, _ = conditional_spin_distribution(site, s, x, params)
    new = 1 if rng.random() < up else -1
    m = s.sigma.astype(np.float64) @ x.astype(np.float64) / n
    w = math.sqrt(n) * (m - centering.x_center)[:k]
    w_prime = w + x[site, :k] * (new - s.sigma[site]) / math.sqrt(n)
    ok = bool(np.all(np.abs(w_prime - w) <= 2.0 / math.sqrt(n) + 1e-15))
    return PairSample(w, w_prime, site, s, ok)


# ----------------------------------------------------------------- chains

def _initial_spins(x: np.ndarray, params: ModelParams,
                   conditioning: Conditioning | None,
                   rng: np.random.Generator) -> np.ndarray:
    spins = (params.sign * x[:, params.axis]).astype(np.int8)
    if conditioning is None:
        return spins
    n = x.shape[0]
    S = spins.astype(np.float64) @ x
    for i in rng.permutation(n):
        if np.linalg.norm(S / n - conditioning.center) < conditioning.radius:
            return spins
        S -= 2 * spins[i] * x[i]
        spins[i] = -spins[i]
    raise ConditioningStarvation("no starting configuration inside the ball")


def _run_chain(c: int, x: np.ndarray, params: ModelParams, config: ChainConfig,
               record_pairs: bool):
    n, p = x.shape
    rng = np.random.default_rng(np.uint64(config.chain_seed(c)))
    xi64 = x.astype(np.int64)
    fcol = _field_column(x, params)
    beta, h = float(params.beta), float(params.h)
    cond = config.conditioning
    center = cond.center if cond else np.zeros(p)
    radius = float(cond.radius) if cond else 1.0
    spins = _initial_spins(x.astype(np.float64), params, cond, rng)
    S = spins.astype(np.int64) @ xi64
    n_draws = config.draws_for_chain(c)
    out_S = np.zeros((n_draws, p), dtype=np.int64)
    T = np.zeros((n_draws, p))
    U = np.zeros((n_draws, p))
    Q = np.zeros((n_draws, p, p))
    F = np.zeros(n_draws)
    pair_delta = np.zeros(n_draws, dtype=np.int64)
    pair_site_all = np.zeros(n_draws, dtype=np.int64)
    counters = np.zeros(2, dtype=np.int64)
    empty_i, empty_f = np.zeros(0, dtype=np.int64), np.zeros(0)

    block_sweeps = max(1, (1 << 20) // n)

    def check_starvation():
        if cond and counters[0] >= 1000 and counters[1] < MIN_ACCEPTANCE * counters[0]:
            raise ConditioningStarvation(
                f"acceptance {counters[1]}/{counters[0]} below {MIN_ACCEPTANCE:.1%}")

    remaining = config.burnin_sweeps
    while remaining > 0:
        b = min(block_sweeps, remaining)
        sites = rng.integers(0, n, size=b * n)
        uniforms = rng.random(b * n)
        _run_block(spins, S, xi64, fcol, beta, h, sites, uniforms, b, 1,
                   cond is not None, center, radius, False, out_S, T, U, Q, F,
                   empty_i, empty_f, pair_delta, 0, counters)
        remaining -= b
        check_starvation()

    per_block = max(1, block_sweeps // config.thin_sweeps)
    done = 0
    while done < n_draws:
        b = min(per_block, n_draws - done)
        steps = b * config.thin_sweeps * n
        sites = rng.integers(0, n, size=steps)
        uniforms = rng.random(steps)
        if record_pairs:
            psites = rng.integers(0, n, size=b)
            pu = rng.random(b)
            pair_site_all[done:done + b] = psites
        else:
            psites, pu = empty_i, empty_f
        _run_block(spins, S, xi64, fcol, beta, h, sites, uniforms, b,
                   config.thin_sweeps, cond is not None, center, radius, True,
                   out_S, T, U, Q, F, psites, pu, pair_delta, done, counters)
        done += b
        check_starvation()
    return out_S, T, U, Q, F, pair_site_all, pair_delta, counters


def run_chains(xi, params: ModelParams, centering: CenteringResult,
               config: ChainConfig, record_pairs: bool = False) -> SampleBatch:
    """Run independent Glauber chains and collect W draws with site statistics.

    Output rows are ordered by chain index, then draw index, independent of
    ``config.workers``.
    """
    x = _as_xi(xi)
    n, k = x.shape[0], params.k

    def job(c):
        return _run_chain(c, x, params, config, record_pairs)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(job, range(config.n_chains)))
    else:
        results = [job(c) for c in range(config.n_chains)]

    S = np.concatenate([r[0] for r in results]).astype(np.float64)
    overlap = S / n
    chain = np.concatenate([np.full(len(r[0]), c, dtype=np.int64)
                            for c, r in enumerate(results)])
    draw = np.concatenate([np.arange(len(r[0]), dtype=np.int64) for r in results])
    states = StateEnsemble(
        n=n,
        overlap=overlap,
        tanh_sum=np.concatenate([r[1] for r in results]),
        tanh_full_sum=np.concatenate([r[2] for r in results]),
        flip_matrix=np.concatenate([r[3] for r in results]),
        flip_sum=np.concatenate([r[4] for r in results]),
        chain=chain,
    )
    w = states.w(centering, k)
    pairs = None
    if record_pairs:
        site = np.concatenate([r[5] for r in results])
        delta = np.concatenate([r[6] for r in results]).astype(np.float64)
        w_prime = w + x[site, :k] * (delta / math.sqrt(n))[:, None]
        pairs = PairStream(site, w, w_prime)
    acceptance = None
    if config.conditioning is not None:
        tried = sum(int(r[7][0]) for r in results)
        acc = sum(int(r[7][1]) for r in results)
        acceptance = acc / tried if tried else 1.0
    return SampleBatch(w, params, centering, chain=chain, draw=draw,
                       states=states, pairs=pairs, acceptance=acceptance,
                       conditioned=config.conditioning is not None)


# ------------------------------------------------------------ enumeration

def all_spins(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Configurations ``start..stop-1`` of ``{-1,1}^n`` in binary order."""
    stop = 1 << n if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return (2 * bits - 1).astype(np.int8)


def spin_statistics(spins: np.ndarray, xi, params: ModelParams) -> dict:
    """Vectorised site statistics for a stack of configurations."""
    x = _as_xi(xi).astype(np.float64)
    n, p = x.shape
    s = spins.astype(np.float64)
    S = s @ x
    m = S @ x.T / n
    f = params.h * _field_column(_as_xi(xi), params)
    tau = np.tanh(params.beta * (m - p * s / n) + f)
    tau_full = np.tanh(params.beta * m + f)
    fl = 1.0 - s * tau
    return {
        "overlap": S / n,
        "tanh_sum": tau @ x,
        "tanh_full_sum": tau_full @ x,
        "flip_matrix": np.einsum("st,ti,tj->sij", fl, x, x),
        "flip_sum": fl.sum(axis=1),
    }


def exact_states(xi, params: ModelParams, chunk: int = 1 << 14) -> StateEnsemble:
    """All ``2^n`` configurations with their exact Gibbs probabilities."""
    x = _as_xi(xi)
    n = x.shape[0]
    if n > ENUMERATION_MAX_N:
        raise ValueError(f"enumeration refused for n={n} > {ENUMERATION_MAX_N}")
    from .model import log_gibbs_weight

    parts, logw = [], []
    for lo in range(0, 1 << n, chunk):
        spins = all_spins(n, lo, min(lo + chunk, 1 << n))
        parts.append(spin_statistics(spins, x, params))
        logw.append(log_gibbs_weight(spins, x, params))
    logw = np.concatenate(logw)
    stats = {key: np.concatenate([d[key] for d in parts]) for key in parts[0]}
    return StateEnsemble(n=n, weights=np.exp(logw - logsumexp(logw)), **stats)


def lumped_states(xi, params: ModelParams,
                  max_states: int = LUMPED_MAX_STATES) -> StateEnsemble:
    """Exact Gibbs law grouped by pattern-row type.

    Sites sharing the same pattern row ``xi_i`` are exchangeable, so a state
    is fixed by the number of up-spins in each row class.  The ensemble is
    exact and has ``prod_r (n_r + 1)`` atoms.
    """
    x = _as_xi(xi)
    n, p = x.shape
    rows, counts = np.unique(x, axis=0, return_counts=True)
    size = int(np.prod(counts + 1, dtype=np.float64))
    if size > max_states:
        raise ValueError(f"lumped enumeration needs {size} states > {max_states}")
    grids = np.meshgrid(*[np.arange(c + 1) for c in counts], indexing="ij")
    ups = np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)
    downs = counts - ups
    rows_f = rows.astype(np.float64)
    S = (ups - downs) @ rows_f
    log_mult = np.sum(gammaln(counts + 1) - gammaln(ups + 1) - gammaln(downs + 1),
                      axis=1)
    logw = (params.beta * np.sum(S * S, axis=1) / (2 * n)
            + params.h * params.sign * S[:, params.axis] + log_mult)
    dot = S @ rows_f.T  # (states, classes)
    fr = params.h * params.sign * rows_f[:, params.axis]
    T = np.zeros_like(S)
    U = np.zeros_like(S)
    F = np.zeros(len(S))
    Q = np.zeros((len(S), p, p))
    outer = np.einsum("ri,rj->rij", rows_f, rows_f)
    tau_full = np.tanh(params.beta * dot / n + fr)
    for spin, cnt in ((1.0, ups), (-1.0, downs)):
        tau = np.tanh(params.beta * (dot - p * spin) / n + fr)
        fl = cnt * (1.0 - spin * tau)
        T += (cnt * tau) @ rows_f
        U += (cnt * tau_full) @ rows_f
        F += fl.sum(axis=1)
        Q += np.einsum("sr,rij->sij", fl, outer)
    return StateEnsemble(n=n, overlap=S / n, tanh_sum=T, tanh_full_sum=U,
                         flip_matrix=Q, flip_sum=F,
                         weights=np.exp(logw - logsumexp(logw)))


def _aggregate_atoms(w: np.ndarray, weights: np.ndarray, decimals: int = 12):
    keys = np.round(w, decimals)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    probs = np.bincount(inverse, weights=weights, minlength=len(uniq))
    # report an actual member of each class rather than the rounded key
    first = np.full(len(uniq), -1)
    first[inverse[::-1]] = np.arange(len(w))[::-1]
    return w[first], probs


def enumerate_distribution(xi, params: ModelParams,
                           centering: CenteringResult,
                           lumped: bool = False) -> SampleBatch:
    """Exact law of ``W`` as distinct atoms with probabilities."""
    states = lumped_states(xi, params) if lumped else exact_states(xi, params)
    w_all = states.w(centering, params.k)
    w, probs = _aggregate_atoms(w_all, states.weights)
    return SampleBatch(w, params, centering, weights=probs,
                       chain=np.zeros(len(w), dtype=np.int64),
                       draw=np.arange(len(w), dtype=np.int64), states=states)
