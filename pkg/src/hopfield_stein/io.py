"""Deterministic CSV/JSON artifacts, experiment configs and manifests.

Floats in CSV files are written with 17 significant digits; JSON uses
Python's shortest round-trip representation.  Both are lossless for doubles.
Artifacts never contain timestamps, so re-running a manifest reproduces
every file byte for byte.
"""

from __future__ import annotations

import copy
import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .model import ModelParams, PatternSet
from .sampling import ChainConfig, Conditioning, SampleBatch

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "model": {"n": 64, "p": 1, "beta": 1.5, "h": 0.2, "l": 1, "k": 1},
    "seeds": {"master": 0},
    "patterns_csv": None,
    "mode": "monte_carlo",
    "chain": {
        "n_samples": 10000,
        "burnin_sweeps": 100,
        "thin_sweeps": 1,
        "n_chains": 4,
        "workers": 1,
        "conditioning": None,
    },
    "stein": {"dim_constant": 1.0, "g_norms": [1.0, 1.0, 1.0], "a": None},
    "rate_study": {
        "n_values": [64, 128, 256, 512, 1024, 2048],
        "families": ["smooth"],
        "control_variate": True,
        "synthetic": None,
    },
    "hs": {"points": 20001},
    "epsilon": math.e - 1.0,
}


class ConfigError(ValueError):
    """Malformed or unsupported experiment configuration."""


# ----------------------------------------------------------------- seeds

def derive_seed(base: int, *keys: int) -> int:
    """Independent 64-bit seed for the stream labelled by ``keys``."""
    ss = np.random.SeedSequence([int(base), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


# stream labels for derive_seed
STREAM_PATTERNS, STREAM_CHAINS, STREAM_V = 1, 2, 3


def resolve_seeds(config: dict) -> dict:
    """Fill in ``patterns``/``chains``/``v`` seeds from ``master`` when absent."""
    seeds = dict(config.get("seeds") or {})
    seeds.setdefault("master", 0)
    for key, val in seeds.items():
        if isinstance(val, bool) or not isinstance(val, (int, np.integer)) \
                or not 0 <= int(val) < 1 << 64:
            raise ConfigError(f"seed {key}={val!r} is not an unsigned 64-bit integer")
        seeds[key] = int(val)
    master = seeds["master"]
    seeds.setdefault("patterns", derive_seed(master, STREAM_PATTERNS))
    seeds.setdefault("chains", derive_seed(master, STREAM_CHAINS))
    seeds.setdefault("v", derive_seed(master, STREAM_V))
    return seeds


# ---------------------------------------------------------------- config

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | Path | None = None, seed: int | None = None) -> dict:
    """Read a config (or a manifest embedding one) and apply defaults.

    ``seed`` replaces the master seed and drops any derived seeds so they are
    recomputed from it.
    """
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if "config" in raw and "command" in raw:
            raw = raw["config"]
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    cfg = _merge(DEFAULT_CONFIG, raw)
    if seed is not None:
        cfg["seeds"] = {"master": int(seed)}
    cfg["seeds"] = resolve_seeds(cfg)
    if cfg["mode"] not in ("monte_carlo", "exact", "lumped"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def model_params(config: dict, n: int | None = None) -> ModelParams:
    m = config["model"]
    try:
        params = ModelParams(int(m["n"]), int(m["p"]), float(m["beta"]),
                             float(m.get("h", 0.0)), int(m.get("l", 1)),
                             int(m.get("k", 1)))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc
    return params if n is None else params.with_n(n)


def chain_config(config: dict, seed: int, default_center=None) -> ChainConfig:
    c = config["chain"]
    cond = None
    if c.get("conditioning"):
        center = c["conditioning"].get("center")
        if center is None:
            center = default_center
        cond = Conditioning(np.asarray(center, dtype=np.float64),
                            float(c["conditioning"]["radius"]))
    return ChainConfig(n_samples=int(c["n_samples"]),
                       burnin_sweeps=int(c["burnin_sweeps"]),
                       thin_sweeps=int(c["thin_sweeps"]),
                       n_chains=int(c["n_chains"]), seed=int(seed),
                       conditioning=cond, workers=int(c.get("workers", 1)))


# ------------------------------------------------------------------ JSON

def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True,
                      allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def manifest(command: str, config: dict, outputs: list[str], **extra) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "command": command,
           "config": config, "seeds": config["seeds"], "outputs": sorted(outputs)}
    out.update(extra)
    return out


# ------------------------------------------------------------------- CSV

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else FLOAT_FMT % v
    return "" if v is None else str(v)


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def write_patterns(path: str | Path, patterns: PatternSet) -> tuple[Path, Path]:
    """Pattern CSV (one row per neuron) plus a sidecar JSON with the seed."""
    path = Path(path)
    header = [f"mu_{m + 1}" for m in range(patterns.p)]
    write_csv(path, header, patterns.xi.astype(int).tolist())
    side = write_json(path.with_suffix(".json"),
                      {"schema_version": SCHEMA_VERSION, "seed": patterns.seed,
                       "n": patterns.n, "p": patterns.p})
    return path, side


def read_patterns(path: str | Path) -> PatternSet:
    path = Path(path)
    header, rows = read_csv(path)
    if header != [f"mu_{m + 1}" for m in range(len(header))]:
        raise ValueError(f"unexpected pattern header {header}")
    xi = np.array([[int(v) for v in r] for r in rows], dtype=np.int8)
    side = path.with_suffix(".json")
    seed = read_json(side).get("seed") if side.exists() else None
    return PatternSet(xi, seed=seed)


def batch_rows(batch: SampleBatch) -> tuple[list[str], list[list]]:
    k = batch.w.shape[1]
    header = ["chain", "draw"] + [f"w_{i + 1}" for i in range(k)]
    if batch.weights is not None:
        header.append("prob")
    rows = []
    for r in range(len(batch)):
        row = [int(batch.chain[r]), int(batch.draw[r])]
        row += [float(v) for v in batch.w[r]]
        if batch.weights is not None:
            row.append(float(batch.weights[r]))
        rows.append(row)
    return header, rows


def write_batch(path: str | Path, batch: SampleBatch) -> Path:
    header, rows = batch_rows(batch)
    return write_csv(path, header, rows)


def read_batch_table(path: str | Path) -> dict:
    """Columns of a SampleBatch CSV as arrays."""
    header, rows = read_csv(path)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    k = sum(1 for h in header if h.startswith("w_"))
    out = {"chain": data[:, 0].astype(np.int64), "draw": data[:, 1].astype(np.int64),
           "w": data[:, 2:2 + k]}
    if "prob" in header:
        out["prob"] = data[:, header.index("prob")]
    return out
