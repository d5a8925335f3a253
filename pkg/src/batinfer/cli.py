"""Command-line interface.

Subcommands: ``fit``, ``select``, ``evidence``, ``surrogate``, ``gis predict``,
``sizing_demo`` and ``simulate``. Exit codes: 0 success, 2 validation
error, 3 numerical failure. Progress goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import covariance_grid, predictive_posterior, summarize
from .basq import compare_models, dimensionality_correction, run_selection
from .config import RunConfig, load_csv, parse_config, write_csv
from .exceptions import NumericalError, ValidationError
from .gis import InverseSurrogate, train
from .models import Dataset, get_model, sizing_dataset, synthetic_knee_data
from .sober import run

logger = logging.getLogger("batinfer")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


# ------------------------------------------------------------------ output
def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_manifest(out: Path, command: str, cfg: RunConfig, seed: int, extra: dict, files: list):
    import scipy
    import sklearn

    _dump_json(
        out / "run_manifest.json",
        {
            "command": command,
            "seed": seed,
            "config": cfg.to_dict(),
            "config_sha256": cfg.digest(),
            "inputs": extra,
            "outputs": sorted(files + ["run_manifest.json"]),
            "versions": {
                "batinfer": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "scikit-learn": sklearn.__version__,
            },
        },
    )


def _write_samples(path: Path, samples):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(samples.names) + ["weight"])
        for row, wt in zip(samples.samples, samples.weights):
            w.writerow([repr(float(v)) for v in row] + [repr(float(wt))])


def _write_predictive(path: Path, pred):
    """One column per posterior draw; the last row holds the draw weights."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x"] + [f"draw_{i}" for i in range(pred.curves.shape[0])])
        for j, x in enumerate(pred.x):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in pred.curves[:, j]])
        w.writerow(["weight"] + [repr(float(v)) for v in pred.weights])


# ---------------------------------------------------------------- commands
def _model_name(args, cfg: RunConfig) -> str:
    name = args.model or cfg.model
    if name is None:
        raise ValidationError("no model given: use --model or config.model")
    get_model(name)
    return name


def _data_for(name: str, args, required: bool = True) -> Dataset | None:
    model = get_model(name)
    if args.data is None:
        if required:
            raise ValidationError("--data is required for this command")
        return None
    return load_csv(args.data, require_increasing=model.time_series)


def _sober_cfg(cfg: RunConfig, args):
    return replace(cfg.sober, seed=args.seed, workers=args.workers)


def _fit_result(name: str, data: Dataset, cfg: RunConfig, args):
    model = get_model(name)
    prior = cfg.prior_for(name)
    sober_cfg = _sober_cfg(cfg, args)
    if cfg.ep is None:
        return run(model, data, prior, sober_cfg), prior
    from .ep import EpSchedule, FeatureSplit, ep_run

    ranges = [tuple(f["x_range"]) for f in cfg.ep.features if "x_range" in f]
    by_range = iter(FeatureSplit.from_x_ranges(data.x, ranges).features if ranges else ())
    feats, labels = [], []
    for f in cfg.ep.features:
        labels.append(f["label"])
        if "row_indices" in f:
            feats.append(np.asarray(f["row_indices"], dtype=int))
        else:
            feats.append(next(by_range))
    split = FeatureSplit(tuple(feats), tuple(labels))
    schedule = EpSchedule(len(split), cfg.ep.passes, cfg.ep.alpha_final)
    return ep_run(model, data, split, prior, sober_cfg, schedule), prior


def _summary_dict(name: str, result, prior, extra=None) -> dict:
    summary = summarize(result.posterior_samples, result.map)
    out = {
        "model": name,
        "synthetic": get_model(name).synthetic,
        "parameters": list(prior.names),
        "epsilon": result.epsilon,
        "epsilon_trace": [float(e) for e in result.epsilon_trace],
        "n_evaluations": result.n_evaluations,
        "evaluation_failures": result.evaluation_failures,
        "effective_sample_size": result.posterior_samples.effective_sample_size,
        **summary.to_dict(),
    }
    out.update(extra or {})
    return out


def cmd_fit(args) -> list:
    cfg = parse_config(args.config)
    name = _model_name(args, cfg)
    data = _data_for(name, args)
    result, prior = _fit_result(name, data, cfg, args)
    out = Path(args.out)
    model = get_model(name)
    pred = predictive_posterior(model, result.posterior_samples, data.x, cfg.report.predictive_draws, args.seed)
    extra = {"predictive_coverage_95": pred.coverage(data.y), "predictive_failures": pred.failures}
    _dump_json(out / "summary.json", _summary_dict(name, result, prior, extra))
    _write_samples(out / "posterior_samples.csv", result.posterior_samples)
    _write_predictive(out / "predictive.csv", pred)
    _dump_json(out / "grid.json", covariance_grid(result.posterior_samples, cfg.report.bins))
    return ["summary.json", "posterior_samples.csv", "predictive.csv", "grid.json"]


def _evidence_records(names, data, cfg: RunConfig, args, shared: bool):
    for name in names:
        if get_model(name).time_series:
            data.check_increasing()
    b = cfg.basq
    estimates, threshold, _ = run_selection(
        {name: (get_model(name), cfg.prior_for(name)) for name in names},
        data,
        _sober_cfg(cfg, args),
        b.n_nodes,
        b.slack,
        b.n_function_draws,
        b.defensive,
        b.inflation,
        shared,
    )
    if b.dimensionality_correction and len(estimates) > 1:
        d_max = max(cfg.prior_for(n).dimension for n, _ in estimates)
        estimates = [(n, dimensionality_correction(e, cfg.prior_for(n).dimension, d_max)) for n, e in estimates]
    return estimates, threshold


def cmd_evidence(args) -> list:
    cfg = parse_config(args.config)
    name = _model_name(args, cfg)
    data = _data_for(name, args)
    (label, est), = _evidence_records([name], data, cfg, args, shared=False)[0]
    _dump_json(Path(args.out) / "evidence.json", est.to_dict(label))
    return ["evidence.json"]


def cmd_select(args) -> list:
    cfg = parse_config(args.config)
    names = list(args.models or cfg.models)
    if len(names) < 2:
        raise ValidationError("select needs at least two models (--models or config.models)")
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate models in {names}")
    for n in names:
        get_model(n)
    if args.data is None:
        raise ValidationError("--data is required for this command")
    data = load_csv(args.data)
    estimates, threshold = _evidence_records(names, data, cfg, args, shared=True)
    ranking = compare_models(estimates)
    for r in ranking:
        logger.info("rank=%d model=%s evidence=%.6g sd=%.3g reliable=%s", r.rank, r.label, r.mean, np.sqrt(r.variance), r.reliable)
    _dump_json(
        Path(args.out) / "evidence.json",
        {
            "threshold": threshold,
            "models": [est.to_dict(lab) for lab, est in estimates],
            "ranking": [r.to_dict() for r in ranking],
        },
    )
    return ["evidence.json"]


def cmd_surrogate(args) -> list:
    cfg = parse_config(args.config)
    name = args.model or cfg.model or "pulse_toy"
    model = get_model(name)
    gis_cfg = replace(cfg.gis, seed=args.seed, workers=args.workers)
    surrogate = train(model, cfg.prior_for(name), gis_cfg)
    surrogate.write_archive(Path(args.out) / "surrogate_archive.csv")
    return ["surrogate_archive.csv"]


def _read_archive(path, prior):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValidationError(f"{path}: empty archive")
    header, body = rows[0], rows[1:]
    d = prior.dimension
    if list(header[:d]) != list(prior.names):
        raise ValidationError(f"{path}: archive columns {header[:d]} do not match parameters {list(prior.names)}")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric archive cell") from exc
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] <= d:
        raise ValidationError(f"{path}: archive needs at least two rows of parameters and outputs")
    return arr[:, :d], arr[:, d:]


def cmd_gis_predict(args) -> list:
    cfg = parse_config(args.config)
    name = args.model or cfg.model or "pulse_toy"
    prior = cfg.prior_for(name)
    thetas, outputs = _read_archive(args.archive, prior)
    try:
        y = np.array([float(v) for v in args.y.split(",")])
    except ValueError as exc:
        raise ValidationError(f"--y must be comma-separated numbers, got {args.y!r}") from exc
    surrogate = InverseSurrogate(prior, thetas, outputs, replace(cfg.gis, seed=args.seed))
    mean, cov = surrogate.predict(y)
    sd = np.sqrt(np.diag(cov))
    record = {"y": y.tolist(), "parameters": list(prior.names), "mean": mean.tolist(), "sd": sd.tolist()}
    for n, m, s in zip(prior.names, mean, sd):
        print(f"{n} = {m:.6g} +/- {s:.3g}")
    if args.out:
        _dump_json(Path(args.out) / "prediction.json", record)
        return ["prediction.json"]
    return []


def cmd_sizing_demo(args) -> list:
    cfg = parse_config(args.config)
    data = sizing_dataset()
    result = run(get_model("sizing"), data, cfg.prior_for("sizing"), _sober_cfg(cfg, args))
    mode = float(result.map[0])
    print(f"posterior mode oversize factor = {mode:.4f} (synthetic gain model)")
    out = Path(args.out)
    _dump_json(out / "summary.json", _summary_dict("sizing", result, cfg.prior_for("sizing"), {"mode": mode}))
    _write_samples(out / "posterior_samples.csv", result.posterior_samples)
    return ["summary.json", "posterior_samples.csv"]


def cmd_simulate(args) -> list:
    name = args.model or "knee2"
    if name != "knee2":
        raise ValidationError("simulate supports the knee2 synthetic data set only")
    path = Path(args.out) / "data.csv"
    write_csv(path, synthetic_knee_data(args.seed), comment=f"synthetic two-knee capacity fade, seed {args.seed}")
    return ["data.csv"]


# ------------------------------------------------------------------ parser
def _common(p: argparse.ArgumentParser, data: bool = True):
    p.add_argument("--model", help="registered model name")
    if data:
        p.add_argument("--data", help="CSV file with an 'x,y' header")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel model evaluations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batinfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"batinfer {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="posterior for one model")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="rank models by evidence")
    _common(p)
    p.add_argument("--models", nargs="+", help="models to compare (default: config.models)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evidence", help="evidence of one model")
    _common(p)
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("surrogate", help="train an inverse surrogate")
    _common(p, data=False)
    p.set_defaults(func=cmd_surrogate)

    gis = sub.add_parser("gis", help="inverse surrogate tools")
    gsub = gis.add_subparsers(dest="gis_command", required=True)
    p = gsub.add_parser("train", help="same as 'surrogate'")
    _common(p, data=False)
    p.set_defaults(func=cmd_surrogate)
    p = gsub.add_parser("predict", help="parameters for one observation")
    _common(p, data=False)
    p.set_defaults(out=None)
    p.add_argument("--archive", required=True, help="surrogate_archive.csv from training")
    p.add_argument("--y", required=True, help="observation, comma-separated")
    p.set_defaults(func=cmd_gis_predict)

    for alias in ("sizing_demo", "sizing-demo"):
        p = sub.add_parser(alias, help="battery sizing demo on a synthetic gain")
        _common(p, data=False)
        p.set_defaults(func=cmd_sizing_demo)

    p = sub.add_parser("simulate", help="write the synthetic two-knee data set")
    _common(p, data=False)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        if getattr(args, "workers", 1) < 1:
            raise ValidationError("--workers must be >= 1")
        if args.out is not None:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        files = args.func(args)
        if args.out is not None:
            cfg = parse_config(args.config)
            inputs = {k: getattr(args, k, None) for k in ("model", "models", "archive", "y") if getattr(args, k, None) is not None}
            if getattr(args, "data", None):
                inputs["data_sha256"] = _sha256(args.data)
            _write_manifest(Path(args.out), args.command, cfg, args.seed, inputs, files)
    except ValidationError as exc:
        logger.error("error: %s", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


def _sha256(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


if __name__ == "__main__":
    sys.exit(main())
