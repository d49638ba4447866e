"""Command-line experiment runner.

Exit codes: 0 ok, 1 verification failure, 2 usage or configuration error,
3 critical point, 4 conditioning starvation, 5 singular Lambda,
6 rate study without any usable (non-noise) fit.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path


from . import io
from .free_energy import curie_weiss_fixed_point, find_lambda_max, hessian_deviation
from .metrics import (A_HALFLINE, HALFLINE, INTERVAL, distance, fit_rate,
                      gclass_family, hubbard_stratonovich_check, smooth_family)
from .model import (CriticalPointError, ModelParams, generate_patterns,
                    pattern_covariance_report)
from .sampling import (ENUMERATION_MAX_N, ConditioningStarvation,
                       enumerate_distribution, run_chains)
from .stein import (BoundDomainError, SingularLambdaError, bound_nonsmooth,
                    bound_smooth, build_regression, stein_report)
from .verify import ALL_CHECKS, DEFAULT_GRID, check_grid, check_instance

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
EXIT_CRITICAL, EXIT_STARVATION, EXIT_SINGULAR, EXIT_NOISE = 3, 4, 5, 6


class NoiseDominated(RuntimeError):
    """No family in a rate study has enough usable points to fit."""


# ---------------------------------------------------------------- helpers

def _patterns(config: dict, params: ModelParams, seed: int):
    path = config.get("patterns_csv")
    if path:
        pats = io.read_patterns(path)
        if pats.xi.shape != (params.n, params.p):
            raise io.ConfigError(f"{path} has shape {pats.xi.shape}, "
                                 f"expected ({params.n}, {params.p})")
        return pats
    return generate_patterns(params, seed)


def _batch(config: dict, xi, params: ModelParams, centering, chain_seed: int):
    mode = config["mode"]
    if mode == "monte_carlo":
        default_center = curie_weiss_fixed_point(
            params.beta, params.h).x_star * params.unit_vector()
        cfg = io.chain_config(config, chain_seed, default_center)
        return run_chains(xi, params, centering, cfg), cfg
    if mode == "exact" and params.n > ENUMERATION_MAX_N:
        raise io.ConfigError(f"exact mode needs n <= {ENUMERATION_MAX_N}; "
                             "use mode 'lumped' for larger n")
    return enumerate_distribution(xi, params, centering, lumped=mode == "lumped"), None


def _default_a(k: int, a):
    if a is not None:
        return float(a)
    return A_HALFLINE if k == 1 else 1.0


def _family(name: str, k: int):
    if name == "smooth":
        return smooth_family(k)
    if name == "gclass":
        return gclass_family(k)
    if k == 1 and name == "halfline":
        return [g for g in gclass_family(1, intervals=False) if g.kind == HALFLINE]
    if k == 1 and name == "interval":
        return [g for g in gclass_family(1) if g.kind == INTERVAL]
    raise io.ConfigError(f"unknown family {name!r} for k={k}")


def _emit(out: Path, name: str, payload) -> Path:
    path = io.write_json(out / name, payload)
    sys.stdout.write(io.dumps(payload))
    return path


# --------------------------------------------------------------- commands

def cmd_gen_patterns(config: dict, out: Path) -> int:
    params = io.model_params(config)
    pats = generate_patterns(params, config["seeds"]["patterns"])
    io.write_patterns(out / "patterns.csv", pats)
    report = pattern_covariance_report(pats, float(config["epsilon"]))
    payload = io.manifest("gen-patterns", config, ["patterns.csv", "patterns.json"],
                          pattern_covariance=report.__dict__)
    _emit(out, "gen-patterns.manifest.json", payload)
    return EXIT_OK


def cmd_fixed_point(beta: float, h: float, sign: int) -> int:
    res = curie_weiss_fixed_point(beta, h, sign)
    sys.stdout.write(io.dumps(res.to_dict()))
    return EXIT_OK


def cmd_center(config: dict, out: Path) -> int:
    params = io.model_params(config)
    pats = _patterns(config, params, config["seeds"]["patterns"])
    centering = find_lambda_max(pats, params)
    extra = {"centering": centering.to_dict(),
             "x_star": curie_weiss_fixed_point(params.beta, params.h).x_star}
    if params.beta > 0:
        extra["hessian_at_max"] = centering.hessian_at_max
        extra["hessian_deviation"] = hessian_deviation(pats, params, centering)
    _emit(out, "centering.json", io.manifest("center", config, ["centering.json"],
                                              **extra))
    return EXIT_OK


def cmd_sample(config: dict, out: Path) -> int:
    params = io.model_params(config)
    pats = _patterns(config, params, config["seeds"]["patterns"])
    centering = find_lambda_max(pats, params)
    batch, cfg = _batch(config, pats, params, centering, config["seeds"]["chains"])
    io.write_batch(out / "samples.csv", batch)
    extra = {"centering": centering.to_dict(), "n_rows": len(batch),
             "acceptance": batch.acceptance,
             "chain_config": None if cfg is None else cfg.to_dict()}
    _emit(out, "sample.manifest.json",
          io.manifest("sample", config, ["samples.csv"], **extra))
    return EXIT_OK


def cmd_stein_report(config: dict, out: Path) -> int:
    params = io.model_params(config)
    pats = _patterns(config, params, config["seeds"]["patterns"])
    centering = find_lambda_max(pats, params)
    reg = build_regression(pats, params, centering)
    batch, cfg = _batch(config, pats, params, centering, config["seeds"]["chains"])
    st = config["stein"]
    a = _default_a(params.k, st.get("a"))
    report = stein_report(batch.states, reg, tuple(st["g_norms"]), a,
                          float(st["dim_constant"]))
    extra = {"report": report.to_dict(), "centering": centering.to_dict(),
             "chain_config": None if cfg is None else cfg.to_dict()}
    _emit(out, "stein_report.json",
          io.manifest("stein-report", config, ["stein_report.json"], **extra))
    return EXIT_OK


RATE_HEADER = ["n", "p", "beta", "h", "family", "g_id", "distance", "se", "bound",
               "a", "noise_dominated"]


def _synthetic_rows(config: dict, n_values) -> tuple[list, dict]:
    syn = config["rate_study"]["synthetic"]
    c = float(syn.get("constant", 1.0))
    e = float(syn.get("exponent", -0.5))
    lp = float(syn.get("log_power", 0.0))
    m = config["model"]
    rows, dist = [], []
    for n in n_values:
        d = c * n**e * math.log(n) ** lp
        rows.append([n, m["p"], m["beta"], m.get("h", 0.0), "synthetic", "synthetic",
                     d, 0.0, None, None, False])
        dist.append(d)
    return rows, {"synthetic": {"fit": fit_rate(n_values, dist).to_dict(),
                                "n_used": list(n_values)}}


def _rate_point(config, params, families, seeds_n):
    """All (family, member) distances and bounds at one ``n``."""
    pats = _patterns(config, params, seeds_n["patterns"])
    centering = find_lambda_max(pats, params)
    reg = build_regression(pats, params, centering)
    batch, _ = _batch(config, pats, params, centering, seeds_n["chains"])
    st = config["stein"]
    report = stein_report(batch.states, reg, (1.0, 1.0, 1.0),
                          _default_a(params.k, st.get("a")), float(st["dim_constant"]))
    cv = bool(config["rate_study"].get("control_variate", True))
    results = {}
    for fam in families:
        rows = []
        for g in _family(fam, params.k):
            d, se = distance(batch, g, report.sigma_hat, control_variate=cv)
            if g.g_norms is not None:
                bound = bound_smooth(report.term_A, report.term_B, report.term_C,
                                     report.sigma_hat, g.g_norms)
            else:
                bound = _nonsmooth_bound(report, g.a_constant)
            noisy = (not batch.exact) and d < 2.0 * se
            rows.append((g, d, se, bound, noisy))
        results[fam] = rows
    return results


def _nonsmooth_bound(report, a):
    if a is None:
        return None
    try:
        return bound_nonsmooth(report.term_A1, report.term_A2, report.term_A3,
                               report.sigma_hat, report.abs_mean_sum, a,
                               report.a_sup, report.dim_constant)
    except BoundDomainError:
        return None


def cmd_rate_study(config: dict, out: Path) -> int:
    rs = config["rate_study"]
    n_values = [int(n) for n in rs["n_values"]]
    if len(n_values) < 4 or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise io.ConfigError("rate_study.n_values must be >= 4 increasing sizes")
    seeds = config["seeds"]
    per_n_seeds = {n: {"patterns": io.derive_seed(seeds["patterns"], n),
                       "chains": io.derive_seed(seeds["chains"], n)}
                   for n in n_values}
    if rs.get("synthetic"):
        rows, fits = _synthetic_rows(config, n_values)
    else:
        rows, fits = [], {}
        base = io.model_params(config)
        points = {fam: [] for fam in rs["families"]}
        for n in n_values:
            params = base.with_n(n)
            res = _rate_point(config, params, rs["families"], per_n_seeds[n])
            for fam, members in res.items():
                usable = []
                for g, d, se, bound, noisy in members:
                    rows.append([n, params.p, params.beta, params.h, fam, g.name,
                                 d, se, bound, g.a_constant, noisy])
                    if not noisy:
                        usable.append((d, se, g.name))
                if usable:
                    points[fam].append((n, *max(usable)))
        for fam, pts in points.items():
            entry = {"aggregate": "max over non-noise members",
                     "n_used": [p[0] for p in pts],
                     "argmax": [p[3] for p in pts],
                     "distances": [p[1] for p in pts], "se": [p[2] for p in pts]}
            entry["fit"] = (fit_rate([p[0] for p in pts], [p[1] for p in pts]).to_dict()
                            if len(pts) >= 4 else None)
            fits[fam] = entry
    io.write_csv(out / "rate_study.csv", RATE_HEADER, rows)
    payload = io.manifest("rate-study", config, ["rate_fit.json", "rate_study.csv"],
                          per_n_seeds={str(n): s for n, s in per_n_seeds.items()},
                          fits=fits)
    _emit(out, "rate_fit.json", payload)
    if not any(f["fit"] is not None for f in fits.values()):
        raise NoiseDominated("no family has four or more non-noise points")
    return EXIT_OK


def cmd_hs_check(config: dict, out: Path) -> int:
    params = io.model_params(config)
    if params.k != params.p:
        raise io.ConfigError("hs-check needs the unprojected W: set model.k = model.p")
    pats = _patterns(config, params, config["seeds"]["patterns"])
    centering = find_lambda_max(pats, params)
    batch, cfg = _batch(config, pats, params, centering, config["seeds"]["chains"])
    rep = hubbard_stratonovich_check(pats, params, centering, batch,
                                     config["seeds"]["v"], int(config["hs"]["points"]))
    extra = {"hs": rep.to_dict(), "centering": centering.to_dict(),
             "chain_config": None if cfg is None else cfg.to_dict()}
    _emit(out, "hs_check.json", io.manifest("hs-check", config, ["hs_check.json"],
                                            **extra))
    return EXIT_OK


def cmd_verify_exact(config: dict, out: Path, use_model: bool) -> int:
    seeds = config["seeds"]
    checks = tuple(config.get("verify", {}).get("checks", ALL_CHECKS))
    if use_model:
        params = io.model_params(config)
        pats = _patterns(config, params, seeds["patterns"])
        results = [check_instance(pats, params, seeds["patterns"], checks)]
    else:
        grid = config.get("verify", {}).get("grid", DEFAULT_GRID)

        def seed_fn(p):
            return io.derive_seed(seeds["patterns"], p.n, p.p, p.k,
                                  round(p.beta * 1000), round(p.h * 1000))

        results = check_grid(grid, seed_fn, checks)
    worst: dict = {}
    for r in results:
        for name, err in r.errors.items():
            worst[name] = max(worst.get(name, 0.0), float(err))
    ok = all(r.ok for r in results)
    payload = io.manifest("verify-exact", config, ["verify_exact.json"], ok=ok,
                          worst=worst, n_instances=len(results),
                          skipped=sum(r.skipped is not None for r in results),
                          instances=[r.to_dict() for r in results])
    _emit(out, "verify_exact.json", payload)
    return EXIT_OK if ok else EXIT_VERIFY


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config or manifest to run")
    common.add_argument("--seed", type=int, help="master seed (u64), overrides config")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(
        prog="hopfield-stein",
        description="Hopfield-model Stein normal-approximation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-patterns", parents=[common], help="draw a pattern matrix")
    fp = sub.add_parser("fixed-point", parents=[common],
                        help="Curie-Weiss fixed point")
    fp.add_argument("--beta", type=float)
    fp.add_argument("--h", type=float)
    fp.add_argument("--sign", type=int, choices=(-1, 1), default=1)
    sub.add_parser("center", parents=[common], help="free-energy centering")
    sub.add_parser("sample", parents=[common], help="Glauber or exact W samples")
    sub.add_parser("stein-report", parents=[common], help="Stein bound terms")
    sub.add_parser("rate-study", parents=[common], help="distances and rate fits over n")
    sub.add_parser("hs-check", parents=[common], help="Hubbard-Stratonovich check")
    ve = sub.add_parser("verify-exact", parents=[common],
                        help="brute-force identity checks on small instances")
    ve.add_argument("--model", action="store_true",
                    help="check only the configured model instead of the grid")
    return parser


def _check_seed(seed):
    if seed is not None and not 0 <= seed < 1 << 64:
        raise io.ConfigError("--seed must be an unsigned 64-bit integer")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_seed(args.seed)
        if args.command == "fixed-point":
            if args.beta is None or args.h is None:
                if args.config is None:
                    parser.error("fixed-point needs --beta and --h, or --config")
                m = io.load_config(args.config)["model"]
                beta = m["beta"] if args.beta is None else args.beta
                h = m.get("h", 0.0) if args.h is None else args.h
            else:
                beta, h = args.beta, args.h
            return cmd_fixed_point(float(beta), float(h), args.sign)
        config = io.load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify-exact":
            return cmd_verify_exact(config, out, args.model)
        handler = {
            "gen-patterns": cmd_gen_patterns,
            "center": cmd_center,
            "sample": cmd_sample,
            "stein-report": cmd_stein_report,
            "rate-study": cmd_rate_study,
            "hs-check": cmd_hs_check,
        }[args.command]
        return handler(config, out)
    except CriticalPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CRITICAL
    except ConditioningStarvation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STARVATION
    except SingularLambdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except NoiseDominated as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOISE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
