"""Pipeline configuration: one YAML file, validated into plain dataclasses.

Schema (every block except ``data`` is optional)::

    seed: 2024                      # master seed
    data:
      path: mbs.csv                 # relative to the config file
      log_columns: [trig, IR, GB, G2]
    prior:
      loading_variance: 100
      psi_shape: 0.01
      psi_rate: 0.01
      phi_df: null                  # null -> m + 2
      training_fraction: null       # null -> twice the free-parameter count
    chain:
      iterations: 50000
      burn_in: 10000
      chains: 1
    dimension:
      max_m: null                   # null -> existence bound
      splits: 5
      anchors: {2: [5, 3]}          # optional 1-based anchor rows per m
    ucfm:                           # the Step 2 model; default: best m from Step 1
      m: 2
      anchors: [5, 3]               # or: restrictions: ["L[3,1] = 0", ...]
    models:
      path: models.txt              # '[model NAME]' sections
      prior_draws: 1000000
      prior_probs: null             # null -> uniform
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dsl import DslError
from .sampler import PriorSpec
from .types import UcfmSpec, parse_spec


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ChainSettings:
    iterations: int = 50_000
    burn_in: int = 10_000
    chains: int = 1


@dataclass(frozen=True)
class DimensionSettings:
    max_m: int | None = None
    splits: int = 5
    anchors: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelSettings:
    path: Path | None = None
    prior_draws: int = 1_000_000
    prior_probs: tuple | None = None


@dataclass(frozen=True)
class Config:
    source: Path
    seed: int
    data_path: Path
    log_columns: tuple[str, ...]
    prior: PriorSpec
    chain: ChainSettings
    dimension: DimensionSettings
    ucfm: UcfmSpec | None
    models: ModelSettings

    def provenance(self) -> dict:
        pr = self.prior
        return {
            "config": self.source.name,
            "data": self.data_path.name,
            "seed": self.seed,
            "prior": {"loading_variance": pr.loading_variance, "psi_shape": pr.psi_shape,
                      "psi_rate": pr.psi_rate, "phi_df": pr.phi_df, "training_fraction": pr.training_fraction},
            "chain": {"iterations": self.chain.iterations, "burn_in": self.chain.burn_in,
                      "chains": self.chain.chains},
        }


_BLOCKS = {"seed", "data", "prior", "chain", "dimension", "ucfm", "models"}


def _block(raw: dict, name: str, keys: set[str]) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(name, "must be a mapping")
    unknown = sorted(set(value) - keys)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown field")
    return value


def _int(value, path: str, low: int | None = None, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if low is not None and value < low:
        raise ConfigError(path, f"must be >= {low}")
    return value


def _num(value, path: str, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _rows(value, path: str) -> list[int]:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of 1-based row numbers")
    return [_int(v, f"{path}[{i}]", low=1) for i, v in enumerate(value)]


def _ucfm(raw: dict) -> UcfmSpec | None:
    if raw.get("ucfm") is None:
        return None
    block = _block(raw, "ucfm", {"m", "anchors", "restrictions"})
    m = _int(block.get("m"), "ucfm.m", low=1)
    if ("anchors" in block) == ("restrictions" in block):
        raise ConfigError("ucfm", "give exactly one of 'anchors' or 'restrictions'")
    if "anchors" in block:
        rows = _rows(block["anchors"], "ucfm.anchors")
        if len(rows) != m:
            raise ConfigError("ucfm.anchors", f"expected {m} anchor rows, got {len(rows)}")
        try:
            return UcfmSpec.from_anchors([r - 1 for r in rows])
        except ValueError as exc:
            raise ConfigError("ucfm.anchors", str(exc)) from None
    lines = block["restrictions"]
    if not isinstance(lines, list) or not all(isinstance(s, str) for s in lines):
        raise ConfigError("ucfm.restrictions", "expected a list of strings such as 'L[3,1] = 0'")
    try:
        return parse_spec("\n".join([f"[ucfm m={m}]"] + lines))
    except DslError as exc:
        raise ConfigError("ucfm.restrictions", str(exc)) from None


def parse_config(raw, source: Path) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(raw) - _BLOCKS)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    base = source.parent
    seed = _int(raw.get("seed", 0), "seed", low=0)

    data = _block(raw, "data", {"path", "log_columns"})
    if "path" not in data or not isinstance(data["path"], str):
        raise ConfigError("data.path", "required string")
    logs = data.get("log_columns") or []
    if not isinstance(logs, list) or not all(isinstance(c, str) for c in logs):
        raise ConfigError("data.log_columns", "expected a list of column names")

    pb = _block(raw, "prior", {"loading_variance", "psi_shape", "psi_rate", "phi_df", "training_fraction"})
    kwargs = {}
    for key in ("loading_variance", "psi_shape", "psi_rate"):
        if key in pb:
            kwargs[key] = _num(pb[key], f"prior.{key}")
    for key in ("phi_df", "training_fraction"):
        if key in pb:
            kwargs[key] = _num(pb[key], f"prior.{key}", allow_none=True)
    try:
        prior = PriorSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError("prior", str(exc)) from None

    cb = _block(raw, "chain", {"iterations", "burn_in", "chains"})
    chain = ChainSettings(
        _int(cb.get("iterations", 50_000), "chain.iterations", low=2),
        _int(cb.get("burn_in", 10_000), "chain.burn_in", low=0),
        _int(cb.get("chains", 1), "chain.chains", low=1),
    )
    if chain.burn_in >= chain.iterations:
        raise ConfigError("chain.burn_in", "must be smaller than chain.iterations")

    db = _block(raw, "dimension", {"max_m", "splits", "anchors"})
    anchors = db.get("anchors") or {}
    if not isinstance(anchors, dict):
        raise ConfigError("dimension.anchors", "expected a mapping m -> list of rows")
    anchors = {_int(k, f"dimension.anchors.{k}", low=1): _rows(v, f"dimension.anchors.{k}")
               for k, v in anchors.items()}
    for k, rows in anchors.items():
        if len(rows) != k:
            raise ConfigError(f"dimension.anchors.{k}", f"expected {k} rows, got {len(rows)}")
    dim = DimensionSettings(
        _int(db.get("max_m"), "dimension.max_m", low=1, allow_none=True),
        _int(db.get("splits", 5), "dimension.splits", low=0),
        anchors,
    )

    mb = _block(raw, "models", {"path", "prior_draws", "prior_probs"})
    mpath = mb.get("path")
    if mpath is not None and not isinstance(mpath, str):
        raise ConfigError("models.path", "expected a string")
    probs = mb.get("prior_probs")
    if probs is not None:
        if not isinstance(probs, list):
            raise ConfigError("models.prior_probs", "expected a list of numbers")
        probs = tuple(_num(v, f"models.prior_probs[{i}]") for i, v in enumerate(probs))
    models = ModelSettings(
        base / mpath if mpath else None,
        _int(mb.get("prior_draws", 1_000_000), "models.prior_draws", low=1000),
        probs,
    )
    return Config(source, seed, base / data["path"], tuple(logs), prior, chain, dim, _ucfm(raw), models)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return parse_config(raw, path.resolve())
