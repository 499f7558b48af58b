"""Run configuration: a small INI dialect with line-numbered validation errors.

Format: ``[section]`` headers, ``key = value`` lines and ``#`` comments.
Vectors are comma-separated; matrices are given row-major, rows separated by
``;``.  Unknown sections and keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EZDualError
from .market import (
    ConstantModel,
    HestonModel,
    HestonParams,
    KimOmbergModel,
    KimOmbergParams,
)
from .preferences import EZPreference

_MODEL_KEYS = {
    "constant": {"kind", "r", "mu", "sigma", "rho", "x0"},
    "heston": {"kind", "b", "ell", "a", "r0", "r1", "lam", "sigma", "sigma_form", "rho", "x0"},
    "kim_omberg": {"kind", "a", "b", "r0", "r1", "lam0", "lam1", "sigma", "rho", "x0"},
}

_SCHEMA = {
    "preference": {"delta": True, "gamma": True, "psi": True},
    "model": None,  # depends on kind
    "solver": {"T": False, "K": False, "nodes": False, "tol": False, "override": False},
    "mc": {"N": False, "seed": False, "batches": False, "w0": False, "lagrange_points": False, "threads": False},
    "output": {"dir": False},
}


@dataclass
class Entry:
    value: str
    line: int


@dataclass
class RawConfig:
    sections: dict = field(default_factory=dict)  # name -> {key: Entry}
    header_lines: dict = field(default_factory=dict)


def parse_text(text: str) -> RawConfig:
    """Split ``text`` into sections of ``key -> Entry``; syntax errors carry line numbers."""
    raw = RawConfig()
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]") or len(s) < 3:
                raise ConfigError(f"malformed section header {s!r}", n)
            current = s[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(f"unknown section [{current}]", n)
            if current in raw.sections:
                raise ConfigError(f"duplicate section [{current}]", n)
            raw.sections[current] = {}
            raw.header_lines[current] = n
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", n)
        if current is None:
            raise ConfigError("key outside of any section", n)
        key, value = (p.strip() for p in s.split("=", 1))
        if not key:
            raise ConfigError("empty key", n)
        if key in raw.sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", n)
        raw.sections[current][key] = Entry(value, n)
    return raw


@dataclass
class RunConfig:
    preference: EZPreference
    model: object
    T: float = 1.0
    K: int = 200
    nodes: int = 400
    tol: float = 1e-10
    override: bool = False
    N: int = 10_000
    seed: int = 0
    batches: int = 20
    w0: float = 1.0
    lagrange_points: int = 21
    threads: int = 1
    out_dir: str | None = None
    model_kind: str = "constant"


class _Reader:
    def __init__(self, raw, section):
        self.entries = raw.sections.get(section, {})
        self.section = section
        self.header = raw.header_lines.get(section, 0)

    def _get(self, key, required):
        e = self.entries.get(key)
        if e is None and required:
            raise ConfigError(f"missing required key {key!r} in [{self.section}]", self.header or None)
        return e

    def _conv(self, key, fn, default, required, what):
        e = self._get(key, required)
        if e is None:
            return default
        try:
            return fn(e.value)
        except (ValueError, EZDualError) as exc:
            raise ConfigError(f"{key}: expected {what}, got {e.value!r} ({exc})", e.line) from None

    def float(self, key, default=None, required=False):
        return self._conv(key, float, default, required, "a number")

    def int(self, key, default=None, required=False):
        return self._conv(key, lambda v: int(v, 0), default, required, "an integer")

    def bool(self, key, default=False):
        table = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

        def conv(v):
            if v.lower() not in table:
                raise ValueError("not a boolean")
            return table[v.lower()]

        return self._conv(key, conv, default, False, "a boolean")

    def vector(self, key, default=None, required=False):
        return self._conv(key, lambda v: np.array([float(x) for x in v.split(",")]), default, required, "a vector")

    def matrix(self, key, default=None, required=False):
        def conv(v):
            rows = [[float(x) for x in r.split(",")] for r in v.split(";")]
            if len({len(r) for r in rows}) != 1:
                raise ValueError("ragged matrix")
            return np.array(rows)

        return self._conv(key, conv, default, required, "a matrix")

    def str(self, key, default=None, required=False):
        return self._conv(key, str, default, required, "a string")

    def line(self, key):
        e = self.entries.get(key)
        return e.line if e is not None else (self.header or None)

    def check_keys(self, allowed):
        for k, e in self.entries.items():
            if k not in allowed:
                raise ConfigError(f"unknown key {k!r} in [{self.section}]", e.line)


def _build_model(r: _Reader):
    kind = r.str("kind", required=True)
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"unknown model kind {kind!r}", r.line("kind"))
    r.check_keys(_MODEL_KEYS[kind])
    try:
        if kind == "constant":
            return kind, ConstantModel(
                r.float("r", required=True), r.vector("mu", required=True), r.matrix("sigma", required=True),
                r.vector("rho", required=True), r.float("x0", 0.0),
            )
        if kind == "heston":
            hp = HestonParams(
                r.float("b", required=True), r.float("ell", required=True), r.float("a", required=True),
                r.float("r0", required=True), r.float("r1", 0.0), r.vector("lam", required=True),
                r.matrix("sigma", np.array([[1.0]])), r.vector("rho", required=True),
                r.str("sigma_form", "sqrt"),
            )
            return kind, HestonModel(hp, r.float("x0", hp.ell))
        kp = KimOmbergParams(
            r.float("a", required=True), r.float("b", required=True), r.float("r0", required=True),
            r.float("r1", 0.0), r.vector("lam0", required=True), r.vector("lam1", required=True),
            r.matrix("sigma", required=True), r.vector("rho", required=True),
        )
        return kind, KimOmbergModel(kp, r.float("x0", 0.0))
    except ConfigError:
        raise
    except EZDualError as exc:
        raise ConfigError(f"invalid model: {exc}", r.header or None) from None


def load_config(text: str) -> RunConfig:
    """Parse and validate configuration text."""
    raw = parse_text(text)
    for name in ("preference", "model"):
        if name not in raw.sections:
            raise ConfigError(f"missing section [{name}]", 1)
    pr = _Reader(raw, "preference")
    pr.check_keys(set(_SCHEMA["preference"]))
    delta, gamma, psi = (pr.float(k, required=True) for k in ("delta", "gamma", "psi"))
    try:
        pref = EZPreference(delta, gamma, psi)
    except EZDualError as exc:
        raise ConfigError(f"invalid preference: {exc}", pr.header) from None
    kind, model = _build_model(_Reader(raw, "model"))
    sv, mc, out = _Reader(raw, "solver"), _Reader(raw, "mc"), _Reader(raw, "output")
    sv.check_keys(set(_SCHEMA["solver"]))
    mc.check_keys(set(_SCHEMA["mc"]))
    out.check_keys(set(_SCHEMA["output"]))
    cfg = RunConfig(
        pref, model, T=sv.float("T", 1.0), K=sv.int("K", 200), nodes=sv.int("nodes", 400), tol=sv.float("tol", 1e-10),
        override=sv.bool("override"), N=mc.int("N", 10_000), seed=mc.int("seed", 0), batches=mc.int("batches", 20),
        w0=mc.float("w0", 1.0), lagrange_points=mc.int("lagrange_points", 21), threads=mc.int("threads", 1),
        out_dir=out.str("dir"), model_kind=kind,
    )
    checks = [
        (cfg.T > 0, sv, "T", "horizon must be positive"),
        (cfg.K >= 1, sv, "K", "K must be at least 1"),
        (cfg.nodes >= 3, sv, "nodes", "nodes must be at least 3"),
        (cfg.tol > 0, sv, "tol", "tol must be positive"),
        (cfg.N >= 2, mc, "N", "N must be at least 2"),
        (cfg.batches >= 2, mc, "batches", "batches must be at least 2"),
        (cfg.N >= 2 * cfg.batches, mc, "N", "N must be at least twice the number of batches"),
        (0 <= cfg.seed < 2**64, mc, "seed", "seed must be an unsigned 64-bit integer"),
        (cfg.w0 > 0, mc, "w0", "w0 must be positive"),
        (cfg.lagrange_points >= 0, mc, "lagrange_points", "lagrange_points must be non-negative"),
        (cfg.threads >= 1, mc, "threads", "threads must be at least 1"),
    ]
    for ok, reader, key, msg in checks:
        if not ok:
            raise ConfigError(msg, reader.line(key))
    return cfg


def load_config_file(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError("config is not valid UTF-8") from None
    return load_config(text)
