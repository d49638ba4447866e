import math

import numpy as np
import pytest

from hopfield_stein.free_energy import (CenteringResult, curie_weiss_fixed_point,
                                        find_lambda_max)
from hopfield_stein.model import (ModelParams, SpinConfig, generate_patterns,
                                  log_gibbs_weight, overlap)
from hopfield_stein.oracles import BruteForce, swap_asymmetry
from hopfield_stein.sampling import (GOLDEN, ChainConfig, Conditioning,
                                     ConditioningStarvation, all_spins,
                                     enumerate_distribution, exact_states,
                                     glauber_sweep, make_pair, run_chains)


def manual_centering(x_center) -> CenteringResult:
    x = np.atleast_1d(np.asarray(x_center, dtype=np.float64))
    return CenteringResult(x.copy(), x, None, float("nan"), 0.0, True)


# ------------------------------------------------------------ chain config

def test_chain_config_validation_and_seeds():
    with pytest.raises(ValueError):
        ChainConfig(n_samples=0)
    with pytest.raises(ValueError):
        ChainConfig(n_samples=10, thin_sweeps=0)
    with pytest.raises(ValueError):
        Conditioning(np.zeros(1), 0.0)
    cfg = ChainConfig(n_samples=10, n_chains=3, seed=5)
    assert cfg.chain_seed(0) == 5 ^ GOLDEN
    assert cfg.chain_seed(2) == 5 ^ ((3 * GOLDEN) % 2**64)
    assert [cfg.draws_for_chain(c) for c in range(3)] == [4, 3, 3]
    assert cfg.to_dict()["chain_seeds"] == [cfg.chain_seed(c) for c in range(3)]


# ---------------------------------------------------------- single sweeps

def test_sweep_infinite_temperature_gives_fair_coins():
    n = 50
    xi = np.ones((n, 1), dtype=np.int8)
    params = ModelParams(n, 1, 0.0)
    rng = np.random.default_rng(0)
    sigma = np.ones(n, dtype=np.int8)
    ups, total = 0, 0
    for _ in range(400):
        # only sites touched by the sweep are resampled; restart from all +1
        out = glauber_sweep(sigma, xi, params, rng).sigma
        changed = out != sigma
        # each touched site is +1 or -1 with probability 1/2, so flips occur at
        # rate P(touched) / 2
        ups += changed.sum()
        total += n
    p_touched = 1 - (1 - 1 / n) ** n
    rate = ups / total
    se = math.sqrt(p_touched / 2 * (1 - p_touched / 2) / total)
    assert abs(rate - p_touched / 2) < 4 * se


def test_sweep_returns_valid_config_and_preserves_input():
    params = ModelParams(20, 2, 1.5, 0.1)
    xi = generate_patterns(params, 1)
    sigma = SpinConfig(np.ones(20, dtype=np.int8))
    out = glauber_sweep(sigma, xi.xi, params, np.random.default_rng(3))
    assert isinstance(out, SpinConfig) and len(out) == 20
    np.testing.assert_array_equal(sigma.sigma, 1)


def test_heat_bath_detailed_balance():
    rng = np.random.default_rng(1)
    for p, beta, h in ((1, 1.5, 0.0), (2, 0.7, 0.3), (2, 2.0, 0.5)):
        xi = rng.choice([-1, 1], size=(6, p)).astype(np.int8)
        params = ModelParams(6, p, beta, h)
        bf = BruteForce(xi, params)
        for sigma in bf.configs[::5]:
            for i in range(6):
                other = bf.flipped(sigma, i, -sigma[i])
                up_s = bf.conditional(i, sigma)
                up_o = bf.conditional(i, other)
                p_flip = up_s[0] if sigma[i] == -1 else up_s[1]
                p_back = up_o[0] if other[i] == -1 else up_o[1]
                lhs = log_gibbs_weight(np.array(sigma), xi, params) + math.log(p_flip)
                rhs = log_gibbs_weight(np.array(other), xi, params) + math.log(p_back)
                assert lhs == pytest.approx(rhs, abs=1e-12)


def test_chain_law_matches_enumeration_n3():
    xi = np.array([[1], [-1], [1]], dtype=np.int8)
    params = ModelParams(3, 1, 1.0, 0.0)
    cent = manual_centering([0.0])
    batch = run_chains(xi, params, cent, ChainConfig(n_samples=1_000_000, seed=11,
                                                     burnin_sweeps=10))
    exact = enumerate_distribution(xi, params, cent)
    counts = {round(float(w), 9): 0 for w in exact.w[:, 0]}
    vals, freq = np.unique(np.round(batch.w[:, 0], 9), return_counts=True)
    for v, f in zip(vals, freq):
        counts[float(v)] += f
    emp = np.array([counts[round(float(w), 9)] for w in exact.w[:, 0]]) / len(batch)
    assert 0.5 * np.abs(emp - exact.weights).sum() <= 0.01


def test_sweep_operator_fixes_gibbs_law():
    rng = np.random.default_rng(2)
    for n, p in ((4, 1), (5, 2), (6, 2)):
        xi = rng.choice([-1, 1], size=(n, p)).astype(np.int8)
        bf = BruteForce(xi, ModelParams(n, p, 1.5, 0.3))
        P = bf.sweep_operator()
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-13)
        assert np.max(np.abs(bf.probs @ P - bf.probs)) <= 1e-12


# -------------------------------------------------------------- enumeration

def test_enumeration_two_sites():
    xi = np.array([[1], [1]], dtype=np.int8)
    params = ModelParams(2, 1, 0.0)
    batch = enumerate_distribution(xi, params, manual_centering([0.0]))
    order = np.argsort(batch.w[:, 0])
    np.testing.assert_allclose(batch.w[order, 0], [-2 / math.sqrt(2), 0, 2 / math.sqrt(2)],
                               atol=1e-15)
    np.testing.assert_allclose(batch.weights[order], [0.25, 0.5, 0.25], atol=1e-15)


def test_enumeration_normalised_and_symmetric():
    params = ModelParams(10, 2, 0.6)
    xi = generate_patterns(params, 3)
    cent = find_lambda_max(xi, params)
    np.testing.assert_array_equal(cent.x_center, 0.0)
    batch = enumerate_distribution(xi, params, cent)
    assert abs(batch.weights.sum() - 1) <= 1e-14
    mirrored = {tuple(np.round(-w, 10)): q for w, q in zip(batch.w, batch.weights)}
    for w, q in zip(batch.w, batch.weights):
        assert q == pytest.approx(mirrored[tuple(np.round(w, 10))], abs=1e-15)


def test_enumeration_matches_brute_force_weights():
    params = ModelParams(7, 2, 1.3, 0.2, l=-1)
    xi = generate_patterns(params, 9)
    st = exact_states(xi, params)
    bf = BruteForce(xi, params)
    np.testing.assert_array_equal(all_spins(7), np.array(bf.configs))
    np.testing.assert_allclose(st.weights, bf.probs, rtol=1e-12)


def test_enumeration_guard():
    params = ModelParams(25, 1, 0.5)
    xi = generate_patterns(params, 0)
    with pytest.raises(ValueError):
        enumerate_distribution(xi, params, manual_centering([0.0]))


@pytest.mark.parametrize("n,p,beta,h,l", [(12, 1, 1.5, 0.2, 1), (10, 2, 1.2, 0.0, 2),
                                          (9, 3, 0.8, 0.3, -3)])
def test_lumped_enumeration_equals_full(n, p, beta, h, l):
    params = ModelParams(n, p, beta, h, l, k=p)
    xi = generate_patterns(params, 4)
    cent = find_lambda_max(xi, params)
    full = enumerate_distribution(xi, params, cent)
    lump = enumerate_distribution(xi, params, cent, lumped=True)
    key = lambda b: {tuple(np.round(w, 9)): q for w, q in zip(b.w, b.weights)}
    kf, kl = key(full), key(lump)
    assert kf.keys() == kl.keys()
    for atom, q in kf.items():
        assert kl[atom] == pytest.approx(q, rel=1e-10, abs=1e-15)
    # per-state statistics agree as weighted moments
    for name in ("tanh_sum", "tanh_full_sum", "flip_sum", "flip_matrix"):
        a = np.tensordot(full.states.weights, getattr(full.states, name), axes=1)
        b = np.tensordot(lump.states.weights, getattr(lump.states, name), axes=1)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


# -------------------------------------------------------------------- pairs

def test_make_pair_increments_and_no_move():
    params = ModelParams(16, 2, 1.5, 0.2)
    xi = generate_patterns(params, 5)
    cent = find_lambda_max(xi, params)
    rng = np.random.default_rng(0)
    sigma = np.where(rng.random(16) < 0.7, 1, -1).astype(np.int8)
    seen_move = seen_stay = False
    for _ in range(300):
        pair = make_pair(sigma, xi.xi, params, cent, rng)
        d = np.abs(pair.w_prime - pair.w)
        assert np.all(np.isclose(d, 0) | np.isclose(d, 2 / 4))
        assert pair.delta_bound_ok
        np.testing.assert_allclose(pair.w, 4 * (overlap(sigma, xi.xi) - cent.x_center)[:1])
        if np.all(d == 0):
            seen_stay = True
        else:
            seen_move = True
    assert seen_move and seen_stay


def test_make_pair_move_frequencies():
    params = ModelParams(4, 1, 1.2, 0.3)
    xi = np.array([[1], [-1], [1], [1]], dtype=np.int8)
    bf = BruteForce(xi, params)
    sigma = (1, -1, -1, 1)
    cent = manual_centering([0.0])
    rng = np.random.default_rng(1)
    m = 40_000
    flips = np.zeros(4)
    for _ in range(m):
        pair = make_pair(np.array(sigma), xi, params, cent, rng)
        if pair.w_prime[0] != pair.w[0]:
            flips[pair.site] += 1
    expected = np.array([bf.conditional(i, sigma)[1 if sigma[i] == 1 else 0] / 4
                         for i in range(4)])
    se = np.sqrt(expected * (1 - expected) / m)
    assert np.all(np.abs(flips / m - expected) < 4.5 * se)


def test_pair_law_is_exchangeable_n3():
    xi = np.array([[1], [1], [-1]], dtype=np.int8)
    for beta, h in ((0.5, 0.0), (1.5, 0.0), (1.5, 0.3)):
        params = ModelParams(3, 1, beta, h)
        bf = BruteForce(xi, params)
        law = bf.pair_law(find_lambda_max(xi, params).x_center, 1)
        assert abs(sum(law.values()) - 1) < 1e-14
        assert swap_asymmetry(law) <= 1e-13


# ------------------------------------------------------------------- chains

def test_run_chains_deterministic_and_worker_independent():
    params = ModelParams(40, 2, 1.5, 0.1)
    xi = generate_patterns(params, 2)
    cent = find_lambda_max(xi, params)
    cfg = ChainConfig(n_samples=500, n_chains=3, seed=99, burnin_sweeps=20)
    a = run_chains(xi, params, cent, cfg, record_pairs=True)
    b = run_chains(xi, params, cent, cfg, record_pairs=True)
    c = run_chains(xi, params, cent, ChainConfig(n_samples=500, n_chains=3, seed=99,
                                                 burnin_sweeps=20, workers=3),
                   record_pairs=True)
    for other in (b, c):
        np.testing.assert_array_equal(a.w, other.w)
        np.testing.assert_array_equal(a.chain, other.chain)
        np.testing.assert_array_equal(a.pairs.w_prime, other.pairs.w_prime)
    assert list(np.bincount(a.chain)) == [167, 167, 166]
    assert np.all(np.diff(a.chain) >= 0)
    d = np.abs(a.pairs.w_prime - a.pairs.w)
    assert np.all(np.isclose(d, 0) | np.isclose(d, 2 / math.sqrt(40)))
    other = run_chains(xi, params, cent, ChainConfig(n_samples=500, n_chains=3, seed=98,
                                                     burnin_sweeps=20))
    assert np.any(other.w != a.w)


def test_run_chains_rows_are_reachable_overlaps():
    params = ModelParams(30, 2, 1.5, 0.2)
    xi = generate_patterns(params, 6)
    cent = find_lambda_max(xi, params)
    batch = run_chains(xi, params, cent, ChainConfig(n_samples=200, seed=1))
    m = batch.w / math.sqrt(30) + cent.x_center[:1]
    np.testing.assert_allclose(m * 30, np.round(m * 30), atol=1e-9)
    # site statistics are consistent with the recorded overlap
    np.testing.assert_allclose(batch.states.overlap[:, :1], m, atol=1e-12)


def test_run_chains_infinite_temperature_mean():
    params = ModelParams(100, 2, 0.0, 0.0, k=2)
    xi = generate_patterns(params, 7)
    cent = find_lambda_max(xi, params)
    batch = run_chains(xi, params, cent, ChainConfig(n_samples=4000, n_chains=2, seed=3,
                                                     thin_sweeps=2))
    from hopfield_stein.metrics import batch_means_se
    for j in range(2):
        se = batch_means_se(batch.w[:, j], batch.chain)
        assert abs(batch.w[:, j].mean()) < 4 * se


def test_conditioned_chain_stays_in_ball():
    params = ModelParams(10, 1, 1.5, 0.0)
    xi = generate_patterns(params, 0)
    x_star = curie_weiss_fixed_point(1.5, 0.0).x_star
    cond = Conditioning(np.array([x_star]), 0.5)
    cent = manual_centering([x_star])
    batch = run_chains(xi, params, cent, ChainConfig(n_samples=2000, seed=4,
                                                     conditioning=cond))
    m = batch.states.overlap
    assert np.all(np.linalg.norm(m - x_star, axis=1) < 0.5)
    assert 0 < batch.acceptance <= 1
    assert batch.conditioned


def test_conditioned_chain_on_negative_well():
    params = ModelParams(12, 1, 1.5, 0.0, l=-1)
    xi = generate_patterns(params, 1)
    x_star = curie_weiss_fixed_point(1.5, 0.0).x_star
    cond = Conditioning(-x_star * np.ones(1), 0.4)
    batch = run_chains(xi, params, manual_centering([-x_star]),
                       ChainConfig(n_samples=500, seed=2, conditioning=cond))
    assert np.all(batch.states.overlap[:, 0] < 0)


def test_conditioning_starvation():
    # deep in the ordered phase the disordered point is almost never revisited
    params = ModelParams(100, 1, 8.0, 0.0)
    xi = generate_patterns(params, 0)
    cond = Conditioning(np.zeros(1), 0.01)
    with pytest.raises(ConditioningStarvation):
        run_chains(xi, params, manual_centering([0.0]),
                   ChainConfig(n_samples=2000, seed=0, burnin_sweeps=2000,
                               conditioning=cond))
    # odd n: no reachable overlap lies inside the ball at all
    params = ModelParams(21, 1, 1.0, 0.0)
    with pytest.raises(ConditioningStarvation):
        run_chains(generate_patterns(params, 0), params, manual_centering([0.0]),
                   ChainConfig(n_samples=10, seed=0, conditioning=cond))


def test_moment_boundedness_exact_p1():
    fourth = []
    for n in (64, 256, 1024, 2048):
        params = ModelParams(n, 1, 1.5, 0.2)
        xi = generate_patterns(params, n)
        batch = enumerate_distribution(xi, params, find_lambda_max(xi, params),
                                       lumped=True)
        fourth.append(float(batch.weights @ np.abs(batch.w[:, 0]) ** 4))
    assert max(fourth) < 3 * min(fourth)
