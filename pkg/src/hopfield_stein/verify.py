"""Exact identities checked against the brute-force oracle on small instances."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .free_energy import find_lambda_max
from .metrics import distance, smooth_family
from .model import ModelParams, conditional_spin_distribution, generate_patterns
from .oracles import BruteForce, swap_asymmetry
from .sampling import StateEnsemble, enumerate_distribution, spin_statistics
from .stein import SingularLambdaError, bound_smooth, build_regression, stein_report

TOLERANCES = {
    "conditional_law": 1e-13,
    "regression": 1e-12,
    "increment_moments": 1e-13,
    "exchangeability": 1e-13,
    "stationarity": 1e-12,
    "normalization": 1e-14,
}
ALL_CHECKS = ("conditional_law", "regression", "increment_moments",
              "exchangeability", "stationarity", "domination")
EXCHANGE_MAX_N = 8
STATIONARITY_MAX_N = 8

DEFAULT_GRID = {"n": [2, 3, 4, 5, 6, 7, 8], "p": [1, 2], "beta": [0.5, 1.5],
                "h": [0.0, 0.3]}


@dataclass
class InstanceCheck:
    params: ModelParams
    pattern_seed: int
    errors: dict
    domination_violations: int
    fallback_used: bool
    failures: list = field(default_factory=list)
    skipped: str | None = None

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "pattern_seed": self.pattern_seed,
                "errors": self.errors,
                "domination_violations": self.domination_violations,
                "fallback_used": self.fallback_used, "failures": self.failures,
                "skipped": self.skipped, "ok": self.ok}


def exact_state_ensemble(bf: BruteForce) -> StateEnsemble:
    """Fast-path site statistics on the oracle's configurations and weights."""
    spins = np.array(bf.configs, dtype=np.int8)
    stats = spin_statistics(spins, bf.xi, bf.params)
    return StateEnsemble(n=bf.n, weights=bf.probs.copy(), **stats)


def check_instance(xi, params: ModelParams, pattern_seed: int = -1,
                   checks=ALL_CHECKS) -> InstanceCheck:
    bf = BruteForce(xi, params)
    k = params.k
    errors = {}

    if "conditional_law" in checks:
        cond = 0.0
        for sigma in bf.configs:
            s = np.array(sigma)
            for i in range(bf.n):
                fast = conditional_spin_distribution(i, s, bf.xi, params)
                slow = bf.conditional(i, sigma)
                cond = max(cond, abs(fast[0] - slow[0]), abs(fast[1] - slow[1]))
        errors["conditional_law"] = cond

    centering = find_lambda_max(bf.xi, params)
    if not set(checks) - {"conditional_law"}:
        return _finish(params, pattern_seed, errors, 0, centering.fallback_used)
    states = exact_state_ensemble(bf)
    try:
        reg = build_regression(bf.xi, params, centering)
    except SingularLambdaError as exc:
        return _finish(params, pattern_seed, errors, 0, centering.fallback_used,
                       skipped=str(exc))
    W = reg.w(states)
    R = reg.residual(states)
    second_fast = 2.0 * states.flip_matrix[:, :k, :k] / bf.n**2
    third_fast = k**3 * 4.0 * states.flip_sum / bf.n**2.5
    reg_err = mom_err = 0.0
    for r, sigma in enumerate(bf.configs):
        if "regression" in checks:
            drift = bf.drift(sigma, k)
            reg_err = max(reg_err, float(np.max(np.abs(
                drift + reg.lambda_matrix @ W[r] - R[r]))))
        if "increment_moments" in checks:
            second, third = bf.increment_moments(sigma, k)
            mom_err = max(mom_err, float(np.max(np.abs(second - second_fast[r]))),
                          abs(third - third_fast[r]))
    if "regression" in checks:
        errors["regression"] = reg_err
    if "increment_moments" in checks:
        errors["increment_moments"] = mom_err

    if "exchangeability" in checks and bf.n <= EXCHANGE_MAX_N:
        errors["exchangeability"] = swap_asymmetry(bf.pair_law(centering.x_center, k))
    if "stationarity" in checks and bf.n <= STATIONARITY_MAX_N:
        P = bf.sweep_operator()
        errors["stationarity"] = float(np.max(np.abs(bf.probs @ P - bf.probs)))

    violations = 0
    if "domination" in checks:
        batch = enumerate_distribution(bf.xi, params, centering)
        errors["normalization"] = abs(float(batch.weights.sum()) - 1.0)
        report = stein_report(batch.states, reg)
        for g in smooth_family(k):
            d, _ = distance(batch, g, report.sigma_hat)
            bound = bound_smooth(report.term_A, report.term_B, report.term_C,
                                 report.sigma_hat, g.g_norms)
            if not d <= bound:
                violations += 1
    return _finish(params, pattern_seed, errors, violations, centering.fallback_used)


def _finish(params, seed, errors, violations, fallback, skipped=None) -> InstanceCheck:
    failures = [name for name, err in errors.items() if not err <= TOLERANCES[name]]
    if violations:
        failures.append("domination")
    return InstanceCheck(params, seed, errors, violations, fallback, failures, skipped)


def grid_instances(grid: dict, seed_fn):
    """Yield ``(params, pattern_seed)`` over a parameter grid.

    Every ``k <= p`` is visited; combinations with ``p > n`` are skipped.
    """
    for n, p, beta, h in itertools.product(grid["n"], grid["p"], grid["beta"],
                                           grid["h"]):
        if p > n:
            continue
        for k in range(1, p + 1):
            params = ModelParams(int(n), int(p), float(beta), float(h), 1, k)
            yield params, seed_fn(params)


def check_grid(grid: dict, seed_fn, checks=ALL_CHECKS) -> list[InstanceCheck]:
    out = []
    for params, seed in grid_instances(grid, seed_fn):
        xi = generate_patterns(params, seed)
        out.append(check_instance(xi, params, seed, checks))
    return out
