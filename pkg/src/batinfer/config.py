"""Run configuration (JSON) and CSV data ingestion.

A config file is a JSON object; every block is optional::

    {
      "model": "knee2",
      "models": ["knee1", "knee2"],
      "prior": [{"name": "...", "transform": "log", "family": "normal",
                 "lower": 1e-5, "upper": 1e-3}, ...],
      "priors": {"knee1": [...], "knee2": [...]},
      "sober": {"n_initial": 16, "n_iterations": 7, "batch_size": 16, ...},
      "basq": {"n_nodes": null, "n_function_draws": 256, "slack": 0.1, ...},
      "ep": {"features": [{"label": "early", "x_range": [0, 100]}, ...],
             "passes": 2, "alpha_final": 0.5},
      "gis": {"n_initial": 128, "n_iterations": 3, "batch_size": 128},
      "report": {"predictive_draws": 100, "bins": 20}
    }

Unknown keys are rejected with the path of the offending field.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .distributions import build_prior
from .exceptions import ValidationError
from .gis import GisConfig
from .models import REGISTRY, Dataset, default_prior, get_model
from .sober import SoberConfig


@dataclass(frozen=True)
class BasqConfig:
    n_nodes: int | None = None  # None: 3 ** d
    n_function_draws: int = 256
    slack: float = 0.1
    inflation: float = 1.5
    defensive: float = 0.0
    dimensionality_correction: bool = False

    def __post_init__(self):
        if self.n_nodes is not None and self.n_nodes < 2:
            raise ValidationError("basq.n_nodes must be >= 2")
        if self.n_function_draws < 16:
            raise ValidationError("basq.n_function_draws must be >= 16")
        if self.slack < 0:
            raise ValidationError("basq.slack must be >= 0")
        if self.inflation <= 0:
            raise ValidationError("basq.inflation must be > 0")
        if not 0.0 <= self.defensive < 1.0:
            raise ValidationError("basq.defensive must lie in [0, 1)")


@dataclass(frozen=True)
class EpConfig:
    features: tuple
    passes: int = 2
    alpha_final: float = 0.5


@dataclass(frozen=True)
class ReportConfig:
    predictive_draws: int = 100
    bins: int = 20

    def __post_init__(self):
        if self.predictive_draws < 1:
            raise ValidationError("report.predictive_draws must be >= 1")
        if self.bins < 2:
            raise ValidationError("report.bins must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    model: str | None = None
    models: tuple = ()
    priors: dict = field(default_factory=dict)  # model name -> prior records
    sober: SoberConfig = field(default_factory=SoberConfig)
    basq: BasqConfig = field(default_factory=BasqConfig)
    ep: EpConfig | None = None
    gis: GisConfig = field(default_factory=GisConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def prior_for(self, name: str):
        if name in self.priors:
            return build_prior(self.priors[name])
        return default_prior(name)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["models"] = list(self.models)
        if self.ep is not None:
            out["ep"]["features"] = [dict(f) for f in self.ep.features]
        return out

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _block(cls, raw, path: str, drop=()):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected an object")
    allowed = {f.name for f in fields(cls)} - set(drop)
    for key in raw:
        if key not in allowed:
            raise ValidationError(f"{path}.{key}: unknown field (allowed: {sorted(allowed)})")
    try:
        return cls(**raw)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _check_model(name, path: str) -> str:
    if not isinstance(name, str) or name not in REGISTRY:
        raise ValidationError(f"{path}: unknown model {name!r}; available: {list(REGISTRY)}")
    return name


def _check_prior(name: str, records, path: str) -> list:
    if not isinstance(records, list):
        raise ValidationError(f"{path}: expected a list of prior records")
    expected = get_model(name).parameter_names
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ValidationError(f"{path}[{i}]: expected an object")
        if i < len(expected) and rec.get("name") != expected[i]:
            raise ValidationError(f"{path}[{i}].name: expected {expected[i]!r}, got {rec.get('name')!r}")
    if len(records) != len(expected):
        raise ValidationError(f"{path}: model {name} needs {len(expected)} parameters {list(expected)}, got {len(records)}")
    try:
        build_prior(records)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return records


def _ep_block(raw, path: str) -> EpConfig | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected an object")
    unknown = set(raw) - {"features", "passes", "alpha_final"}
    if unknown:
        raise ValidationError(f"{path}.{sorted(unknown)[0]}: unknown field")
    feats = raw.get("features")
    if not isinstance(feats, list) or not feats:
        raise ValidationError(f"{path}.features: expected a non-empty list")
    out = []
    for i, f in enumerate(feats):
        fp = f"{path}.features[{i}]"
        if not isinstance(f, dict):
            raise ValidationError(f"{fp}: expected an object")
        has_rows, has_range = "row_indices" in f, "x_range" in f
        if has_rows == has_range:
            raise ValidationError(f"{fp}: give exactly one of row_indices or x_range")
        if has_range and (not isinstance(f["x_range"], list) or len(f["x_range"]) != 2):
            raise ValidationError(f"{fp}.x_range: expected [lower, upper]")
        out.append({"label": str(f.get("label", f"feature_{i}")), **({"row_indices": list(f["row_indices"])} if has_rows else {"x_range": list(f["x_range"])})})
    passes = raw.get("passes", 2)
    alpha = raw.get("alpha_final", 0.5)
    if not isinstance(passes, int) or passes < 1:
        raise ValidationError(f"{path}.passes: must be an integer >= 1")
    if not isinstance(alpha, (int, float)) or not 0 < alpha <= 1:
        raise ValidationError(f"{path}.alpha_final: must lie in (0, 1]")
    return EpConfig(tuple(out), passes, float(alpha))


def config_from_dict(raw: dict, path: str = "config") -> RunConfig:
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    known = {"model", "models", "prior", "priors", "sober", "basq", "ep", "gis", "report"}
    for key in raw:
        if key not in known:
            raise ValidationError(f"{path}.{key}: unknown field (allowed: {sorted(known)})")
    model = raw.get("model")
    if model is not None:
        _check_model(model, f"{path}.model")
    models = raw.get("models", [])
    if not isinstance(models, list):
        raise ValidationError(f"{path}.models: expected a list")
    for i, m in enumerate(models):
        _check_model(m, f"{path}.models[{i}]")
    priors = {}
    if "prior" in raw:
        if model is None:
            raise ValidationError(f"{path}.prior: needs {path}.model (use {path}.priors for several models)")
        priors[model] = _check_prior(model, raw["prior"], f"{path}.prior")
    for name, recs in (raw.get("priors") or {}).items():
        _check_model(name, f"{path}.priors.{name}")
        priors[name] = _check_prior(name, recs, f"{path}.priors.{name}")
    return RunConfig(
        model=model,
        models=tuple(models),
        priors=priors,
        sober=_block(SoberConfig, raw.get("sober"), f"{path}.sober", drop=("seed", "workers")),
        basq=_block(BasqConfig, raw.get("basq"), f"{path}.basq"),
        ep=_ep_block(raw.get("ep"), f"{path}.ep"),
        gis=_block(GisConfig, raw.get("gis"), f"{path}.gis", drop=("seed", "workers")),
        report=_block(ReportConfig, raw.get("report"), f"{path}.report"),
    )


def parse_config(path) -> RunConfig:
    """Read and validate a JSON run configuration; ``None`` gives defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(raw)


def load_csv(path, require_increasing: bool = False) -> Dataset:
    """Read ``x,y`` columns; lines starting with ``#`` are comments."""
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"data file not found: {p}")
    xs, ys = [], []
    header = None
    with p.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()) or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if header is None:
                header = [c.lower() for c in cells]
                if header[:2] != ["x", "y"]:
                    raise ValidationError(f"{p}:{lineno}: header must start with 'x,y', got {','.join(cells)}")
                continue
            if len(cells) < 2 or not cells[0] or not cells[1]:
                raise ValidationError(f"{p}:{lineno}: blank cell")
            try:
                x, y = float(cells[0]), float(cells[1])
            except ValueError as exc:
                raise ValidationError(f"{p}:{lineno}: non-numeric cell in {','.join(cells)}") from exc
            if x != x or y != y:
                raise ValidationError(f"{p}:{lineno}: NaN cell")
            xs.append(x)
            ys.append(y)
    if header is None:
        raise ValidationError(f"{p}: missing 'x,y' header")
    data = Dataset(xs, ys)
    if require_increasing:
        data.check_increasing()
    return data


def write_csv(path, data: Dataset, comment: str | None = None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in zip(data.x, data.y):
            w.writerow([repr(float(x)), repr(float(y))])
