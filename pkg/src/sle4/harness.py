"""Experiment configuration, seeding, parallel replica farming and output files."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import multiprocessing as mp
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

ENV_PREFIX = "SLE4_"
# prefixed variables that steer the test harness rather than the config
RESERVED_ENV = {"SLE4_ACCEPTANCE_FRESH"}


def _floats(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(x) for x in s)
    return tuple(float(eval_number(x)) for x in str(s).split(",") if x.strip())


def eval_number(s):
    """Parse a number, allowing simple fractions such as 1/64."""
    s = str(s).strip()
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    return float(s)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20240601
    out: str = "results"
    workers: int = 1
    kappa: float = 4.0
    # loewner oracle suite
    oracle_dt: float = 1e-3
    hcap_chains: int = 20
    hcap_t: float = 0.5
    # field suite
    delta: float = 1 / 64
    window: float = 4.0
    gff_replicas: int = 10_000
    gff_pairs: int = 200
    continuum_window: float = 16.0
    strip_replicas: int = 4000
    # chaos suite
    tail_n: int = 10_000
    tail_xmax: float = 2.5
    cbm_n: int = 10_000
    moment_n: int = 2000
    moment_p: float = 0.25
    moment_eps: tuple = (0.4, 0.2, 0.1)
    # natural measure suites
    t: float = 1.0
    dt: float = 2e-3
    n_curves: int = 200
    n_fields: int = 50
    eps_ladder: tuple = (1 / 16, 1 / 32, 1 / 64)
    node_spacing: float = 1 / 128
    seg_steps: int = 5
    weight_exponent: float = -0.5
    push_exponent: float = 1.5
    scale_box: float = 0.125
    scale_factors: tuple = (1.5, 2.0, 3.0)
    control_weight_exponent: float = -1.0
    inv_t: float = 0.25
    inv_horizon: float = 0.25
    inv_dt: float = 1e-3
    inv_curves: int = 200
    wrong_push_exponent: float = 1.0
    consistency_s: float = 0.125
    consistency_dt: float = 1e-3
    consistency_curves: int = 10
    mink_curves: int = 8
    mink_t: float = 1.0
    mink_dt: float = 2.5e-5
    r_ladder: tuple = (1 / 16, 1 / 32, 1 / 64)
    # thresholds
    z_stat: float = 3.0
    det_tol: float = 1e-6
    alpha: float = 0.05

    def __post_init__(self):
        pos = ["kappa", "oracle_dt", "hcap_t", "delta", "window", "continuum_window", "t",
               "dt", "inv_t", "inv_horizon", "inv_dt", "consistency_s", "consistency_dt",
               "mink_t", "mink_dt", "scale_box", "node_spacing", "z_stat", "det_tol",
               "tail_xmax"]
        for k in pos:
            if not getattr(self, k) > 0:
                raise InvalidArgument(f"{k} must be positive")
        counts = ["workers", "hcap_chains", "gff_replicas", "gff_pairs", "strip_replicas",
                  "cbm_n", "moment_n", "n_curves", "n_fields", "inv_curves",
                  "consistency_curves", "mink_curves", "seg_steps"]
        for k in counts:
            if getattr(self, k) < 1:
                raise InvalidArgument(f"{k} must be >= 1")
        if self.tail_n < 1000:
            raise InvalidArgument("tail_n must be >= 1000")
        if not 0 < self.moment_p < 1:
            raise InvalidArgument("moment_p must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise InvalidArgument("alpha must lie in (0, 1)")
        for k in ("eps_ladder", "moment_eps", "r_ladder"):
            v = getattr(self, k)
            if len(v) < 3 or any(b >= a for a, b in zip(v, v[1:])):
                raise InvalidArgument(f"{k} needs >= 3 strictly decreasing values")
        if any(a <= 1 for a in self.scale_factors) or not self.scale_factors:
            raise InvalidArgument("scale_factors must all exceed 1")
        if self.dt > self.t or self.mink_dt > self.mink_t:
            raise InvalidArgument("time step larger than the horizon")
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")

    def canonical(self):
        """Key-sorted key=value text (output directory excluded)."""
        lines = []
        for f in sorted(dataclasses.fields(self), key=lambda f: f.name):
            if f.name in ("out", "workers"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _coerce(name, raw):
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if name not in fields:
        raise InvalidArgument(f"unknown config key {name!r}")
    default = fields[name].default
    try:
        if isinstance(default, tuple):
            return _floats(raw)
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            v = eval_number(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if isinstance(default, float):
            return eval_number(raw)
        return str(raw)
    except ValueError:
        raise InvalidArgument(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text):
    """key=value lines; '#' starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = _coerce(k, v)
    return out


def load_config(path=None, env=None, overrides=None):
    """Defaults < config file < SLE4_* environment < explicit overrides."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise InvalidArgument(f"cannot read config {path}: {e}") from None
        values.update(parse_config_text(text))
    env = os.environ if env is None else env
    for k, v in env.items():
        if k.startswith(ENV_PREFIX) and k not in RESERVED_ENV:
            values[k[len(ENV_PREFIX):].lower()] = _coerce(k[len(ENV_PREFIX):].lower(), v)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    return ExperimentConfig(**values)


# --- seeding and replica farming -------------------------------------------------


def stream_seed(seed, *key):
    """Independent SeedSequence for the stream ``key`` under the master seed."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


def stream_rng(seed, *key):
    return np.random.default_rng(stream_seed(seed, *key))


def farm(fn, args, workers=1):
    """map(fn, args) with results in argument order; parallel across processes."""
    args = list(args)
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    ctx = mp.get_context("fork") if hasattr(os, "fork") else mp.get_context()
    with ctx.Pool(min(workers, len(args))) as pool:
        return pool.map(fn, args, chunksize=1)


# --- outputs ---------------------------------------------------------------------


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    if x is None:
        return ""
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    values: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    suite: str
    checks: list
    files: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def write_manifest(out_dir, suite, cfg, result, seeds=None):
    out_dir = Path(out_dir)
    files = sorted(set(result.files))
    manifest = {
        "suite": suite,
        "config": {k: v for k, v in json.loads(json.dumps(dataclasses.asdict(cfg))).items()
                   if k not in ("out", "workers")},
        "config_canonical": cfg.canonical(),
        "config_sha256": cfg.digest(),
        "seeds": seeds or {"master": cfg.seed},
        "files": {Path(f).name: sha256_file(f) for f in files},
    }
    summary = {
        "suite": suite,
        "status": "PASS" if result.passed else "FAIL",
        "checks": [{"name": c.name, "status": "PASS" if c.passed else "FAIL",
                    "detail": c.detail} for c in result.checks],
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name} {c.detail}".rstrip()
             for c in result.checks]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    manifest["files"]["summary.json"] = sha256_file(out_dir / "summary.json")
    manifest["files"]["summary.txt"] = sha256_file(out_dir / "summary.txt")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
