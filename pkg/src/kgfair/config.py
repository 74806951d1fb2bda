"""Plain-text ``key = value`` run configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored.
Lists are comma separated.  Every key must be in :data:`SCHEMA` and every
value is range-checked, so a typo fails loudly with its line number instead
of silently falling back to a default.

The only environment override is ``KGFAIR_SEED``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields
from typing import Any, Callable

from .errors import ConfigParseError, RangeError, UnknownKey
from .fairness import AuditConfig
from .gcn import GcnConfig
from .graph import SENSITIVE_CATEGORIES
from .linkpred import TrainConfig
from .synth import GenParams

SEED_ENV = "KGFAIR_SEED"
SENSITIVE_NAMES = tuple(c.value for c in SENSITIVE_CATEGORIES)


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    v = float(text)
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError("not finite")
    return v


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text


def _opt_str(text: str) -> str | None:
    return None if text.lower() in ("", "none") else text


def _opt_int(text: str) -> int | None:
    return None if text.lower() in ("", "none") else int(text)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    check: Callable[[Any], str | None] = lambda v: None
    help: str = ""


def _at_least(lo):
    return lambda v: None if v >= lo else f"must be >= {lo}, got {v}"


def _unit(v):
    return None if 0.0 <= v <= 1.0 else f"must be in [0, 1], got {v}"


def _open_unit(v):
    return None if 0.0 < v < 1.0 else f"must be in (0, 1), got {v}"


def _positive(v):
    return None if v > 0 else f"must be > 0, got {v}"


def _categories(v):
    bad = [c for c in v if c not in SENSITIVE_NAMES]
    if bad:
        return f"not binary SDoH categories: {', '.join(bad)} (choose from {', '.join(SENSITIVE_NAMES)})"
    if not v:
        return "needs at least one category"
    return None


def _planted(v):
    if v is None or v in SENSITIVE_NAMES:
        return None
    return f"must be none or one of {', '.join(SENSITIVE_NAMES)}"


def _opt_at_least(lo):
    return lambda v: None if v is None or v >= lo else f"must be >= {lo}, got {v}"


SCHEMA: dict[str, Key] = {
    # run
    "seed": Key(_int, _at_least(0), "master seed; overridden by KGFAIR_SEED"),
    "seeds": Key(_int_list, lambda v: None if all(s >= 0 for s in v) else "seeds must be >= 0",
                 "audit seeds (empty: just `seed`)"),
    "graph": Key(_opt_str, help="input edge-list TSV (none: generate one)"),
    "out_dir": Key(_str, help="artifact directory"),
    "jobs": Key(_int, _at_least(1), "parallel per-category audits"),
    # generator
    "n_drugs": Key(_int, _at_least(1)),
    "n_diseases": Key(_int, _at_least(2)),
    "n_phenotypes": Key(_int, _at_least(1)),
    "p_treats": Key(_float, _unit),
    "p_drug_sdoh": Key(_float, _unit),
    "p_disease_sdoh": Key(_float, _unit),
    "p_phenotype_drug": Key(_float, _unit),
    "p_phenotype_disease": Key(_float, _unit),
    "include_disease_sdoh": Key(_bool),
    "n_communities": Key(_int, _at_least(1)),
    "community_mix": Key(_float, _unit),
    "planted_category": Key(_opt_str, _planted),
    "bias_strength": Key(_float, _unit),
    "free_fraction": Key(_float, _open_unit),
    "block_fraction": Key(_float, _unit),
    # encoder
    "embedding_dim": Key(_int, _at_least(1)),
    "hidden_dim": Key(_int, _at_least(1)),
    "num_layers": Key(_int, _at_least(1)),
    # link prediction
    "negatives": Key(_int, _at_least(1), "negatives per positive"),
    "epochs": Key(_int, _at_least(1)),
    "lr": Key(_float, _positive),
    "precision": Key(_str, lambda v: None if v in ("float64", "float32") else "must be float64 or float32"),
    # audit / de-bias
    "categories": Key(_str_list, _categories),
    "debias_epochs": Key(_int, _at_least(1)),
    "debias_lr": Key(_float, _positive),
    "eval_fraction": Key(_float, _open_unit),
    "edges_per_drug": Key(_int, _at_least(1)),
    "debias_edges_per_drug": Key(_opt_int, _opt_at_least(1)),
    "share_backbone": Key(_bool),
}

ALIASES = {"K": "negatives", "k": "negatives"}


def _defaults() -> dict[str, Any]:
    out: dict[str, Any] = {"seed": 0, "seeds": (), "graph": None, "out_dir": ".", "jobs": 1}
    for cls in (GenParams, GcnConfig, TrainConfig, AuditConfig):
        for f in fields(cls):
            if f.name != "seed":
                out[f.name] = f.default
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any] = field(default_factory=_defaults)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def replace(self, **changes) -> "RunConfig":
        for k in changes:
            if k not in SCHEMA:
                raise UnknownKey(k)
        merged = dict(self.values)
        merged.update(changes)
        return RunConfig(merged)

    @property
    def audit_seeds(self) -> tuple[int, ...]:
        return self.values["seeds"] or (self.values["seed"],)

    def gen_params(self, seed: int | None = None) -> GenParams:
        kw = {f.name: self.values[f.name] for f in fields(GenParams) if f.name != "seed"}
        return GenParams(seed=self.seed if seed is None else seed, **kw)

    def gcn_config(self, seed: int | None = None) -> GcnConfig:
        kw = {f.name: self.values[f.name] for f in fields(GcnConfig) if f.name != "seed"}
        return GcnConfig(seed=self.seed if seed is None else seed, **kw)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        kw = {f.name: self.values[f.name] for f in fields(TrainConfig) if f.name != "seed"}
        return TrainConfig(seed=self.seed if seed is None else seed, **kw)

    def audit_config(self, categories=None) -> AuditConfig:
        kw = {f.name: self.values[f.name] for f in fields(AuditConfig)}
        if categories is not None:
            kw["categories"] = tuple(categories)
        return AuditConfig(**kw)

    def normalized(self) -> str:
        """Canonical text form: every key, sorted, one per line."""
        lines = []
        for key in sorted(SCHEMA):
            lines.append(f"{key} = {format_value(self.values[key])}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.normalized().encode()).hexdigest()[:16]


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def check_value(key: str, value, line: int | None = None):
    problem = SCHEMA[key].check(value)
    if problem:
        raise RangeError(key, problem, line)
    return value


def parse_value(key: str, text: str, line: int | None = None):
    try:
        value = SCHEMA[key].parse(text)
    except ValueError as exc:
        raise RangeError(key, f"cannot parse {text!r}: {exc}", line) from None
    return check_value(key, value, line)


def parse_config(text: str, environ=None) -> RunConfig:
    """Parse config text; missing keys take their defaults."""
    values = _defaults()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected key = value, got {raw.strip()!r}", lineno)
        key, _, rhs = line.partition("=")
        key = ALIASES.get(key.strip(), key.strip())
        if not key:
            raise ConfigParseError("missing key", lineno)
        if key not in SCHEMA:
            raise UnknownKey(key, lineno)
        if key in seen:
            raise ConfigParseError(f"{key} already set on line {seen[key]}", lineno)
        seen[key] = lineno
        values[key] = parse_value(key, rhs.strip().strip('"').strip("'"), lineno)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV, "").strip():
        values["seed"] = parse_value("seed", environ[SEED_ENV].strip())
    _cross_check(values)
    return RunConfig(values)


def _cross_check(values: dict) -> None:
    try:
        GenParams(**{f.name: values[f.name] for f in fields(GenParams) if f.name != "seed"}).validate()
    except ValueError as exc:
        name = str(exc).split()[0].split("=")[0]
        raise RangeError(name if name in SCHEMA else "p_treats", str(exc)) from None


def validate_config(path: str | os.PathLike | None, environ=None) -> RunConfig:
    """Read and validate a config file (``None`` gives all defaults)."""
    if path is None:
        return parse_config("", environ)
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), environ)


def default_config_text() -> str:
    return RunConfig().normalized()

