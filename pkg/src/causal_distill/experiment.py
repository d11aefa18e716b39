"""Seeded end-to-end experiments: data, oracle, distilled vs baseline learners, reports.

Every stage reads its inputs from and writes its outputs to ``output_dir``::

    output_dir/
      data/seed_<s>/    dataset.csv, dgp.json, train.csv, valid.csv, test.csv
      models/seed_<s>/  oracle.json, <learner>__ours.json, <learner>__baseline.json
      reports/seed_<s>/ eval.json, bounds.json
      reports/          per_seed.csv, summary.csv|json, depth_curve.csv
      manifest.json

so running the stages one at a time gives exactly what ``run_experiment`` does.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from . import interpretable, oracle
from .data import CsvSchema, ObservationalDataset, SplitSpec, load_dataset, save_dataset, split, fmt
from .datagen import (
    DgpConfig,
    JobsLikeConfig,
    draw_jobs_parameters,
    draw_parameters,
    generate_jobs_like,
    generate_observational,
    write_sidecar,
)
from .distill import distill, fit_baseline
from .interpretable import LearnerSpec, expand_learners
from .metrics import (
    EvalReport,
    aggregate,
    evaluate_model,
    reports_csv,
    verify_theorem1,
    verify_theorem2,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ORACLE_LABEL = "cfr_net"


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    dgp: dict
    oracle: oracle.TrainConfig
    learners: list[LearnerSpec]
    seeds: list[int]
    split_fractions: tuple = (0.63, 0.27, 0.10)
    b_phi: float = 1.0
    output_dir: str = "results"
    name: str = "experiment"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "ExperimentConfig":
        try:
            dgp = dict(raw["dgp"])
            kind = dgp.get("type", "observational")
            if kind == "observational":
                DgpConfig(**_strip(dgp))
            elif kind == "jobs_like":
                JobsLikeConfig(**_strip(dgp))
            elif kind == "csv":
                if "path" not in dgp and "paths" not in dgp:
                    raise ConfigError("csv dgp needs 'path' or 'paths'")
                for key in ("path",):
                    if key in dgp:
                        dgp[key] = os.path.join(base_dir, dgp[key])
                if "paths" in dgp:
                    dgp["paths"] = [os.path.join(base_dir, p) for p in dgp["paths"]]
                CsvSchema.from_dict(dgp.get("schema", {}))
            else:
                raise ConfigError(f"unknown dgp type {kind!r}")
            learners = expand_learners(raw["learners"])
            if not learners:
                raise ConfigError("at least one learner is required")
            seeds = [int(s) for s in raw["seeds"]]
            if not seeds:
                raise ConfigError("at least one seed is required")
            if len(set(seeds)) != len(seeds):
                raise ConfigError("seeds must be distinct")
            if kind == "csv" and "paths" in dgp and len(dgp["paths"]) != len(seeds):
                raise ConfigError("'paths' must list one file per seed")
            fractions = tuple(raw.get("split", {}).get("fractions", (0.63, 0.27, 0.10)))
            SplitSpec(fractions)
            train_cfg = oracle.TrainConfig.from_dict(raw.get("oracle", {}))
            b_phi = float(raw.get("b_phi", 1.0))
            if not b_phi > 0:
                raise ConfigError("b_phi must be positive")
            out = raw.get("output_dir", "results")
            return cls(dgp, train_cfg, learners, seeds, fractions, b_phi,
                       os.path.join(base_dir, out), raw.get("name", "experiment"), raw)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc


def _strip(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "type"}


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw, os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# layout


def seed_dir(cfg: ExperimentConfig, area: str, seed: int) -> str:
    return os.path.join(cfg.output_dir, area, f"seed_{seed}")


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing upstream artifact: {path}")
    return path


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def model_filename(spec: LearnerSpec, variant: str) -> str:
    return f"{spec.label}__{variant}.json"


def _noise_sd(cfg, seed) -> Optional[float]:
    path = os.path.join(seed_dir(cfg, "data", seed), "dgp.json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        meta = json.load(fh)
    return meta.get("noise_sd")


def load_split(cfg: ExperimentConfig, seed: int, part: str) -> ObservationalDataset:
    path = _require(os.path.join(seed_dir(cfg, "data", seed), f"{part}.csv"))
    return load_dataset(path, name=part, noise_sd=_noise_sd(cfg, seed))


# ---------------------------------------------------------------------------
# stages


def stage_gen_data(cfg: ExperimentConfig, seed: int) -> None:
    out = seed_dir(cfg, "data", seed)
    os.makedirs(out, exist_ok=True)
    dgp = dict(cfg.dgp)
    kind = dgp.pop("type", "observational")
    data_seed = derive_seed(seed, "data")
    meta: dict = {"type": kind, "data_seed": data_seed, "noise_sd": None}
    if kind == "observational":
        dcfg = DgpConfig(**{**dgp, "seed": data_seed})
        ds = generate_observational(dcfg, name=cfg.name)
        write_sidecar(os.path.join(out, "dgp_parameters.json"), dcfg, draw_parameters(dcfg))
        meta["noise_sd"] = dcfg.noise_sd
    elif kind == "jobs_like":
        jcfg = JobsLikeConfig(**{**dgp, "seed": data_seed})
        ds = generate_jobs_like(jcfg, name=cfg.name)
        write_sidecar(os.path.join(out, "dgp_parameters.json"), jcfg, draw_jobs_parameters(jcfg))
    else:
        schema = CsvSchema.from_dict(dgp.get("schema", {}))
        path = dgp["paths"][cfg.seeds.index(seed)] if "paths" in dgp else dgp["path"]
        ds = load_dataset(path, schema, name=cfg.name, noise_sd=dgp.get("noise_sd"))
        meta.update(source=os.path.abspath(path), noise_sd=dgp.get("noise_sd"))
    save_dataset(ds, os.path.join(out, "dataset.csv"))
    parts = split(ds, SplitSpec(cfg.split_fractions, derive_seed(seed, "split")))
    for part, name in zip(parts, ("train", "valid", "test")):
        save_dataset(part, os.path.join(out, f"{name}.csv"))
    _write_json(os.path.join(out, "dgp.json"), meta)


def stage_train_oracle(cfg: ExperimentConfig, seed: int) -> None:
    train, valid = load_split(cfg, seed, "train"), load_split(cfg, seed, "valid")
    tcfg = oracle.TrainConfig.from_dict({**cfg.oracle.to_dict(), "seed": derive_seed(seed, "oracle")})
    model = oracle.train_oracle(train, valid, tcfg)
    out = seed_dir(cfg, "models", seed)
    os.makedirs(out, exist_ok=True)
    oracle.save_model(model, os.path.join(out, "oracle.json"))


def load_oracle(cfg, seed) -> oracle.CfrModel:
    return oracle.load_model(_require(os.path.join(seed_dir(cfg, "models", seed), "oracle.json")))


def stage_distill(cfg: ExperimentConfig, seed: int) -> None:
    train = load_split(cfg, seed, "train")
    f_star = load_oracle(cfg, seed)
    out = seed_dir(cfg, "models", seed)
    for k, spec in enumerate(cfg.learners):
        spec = spec.with_seed(derive_seed(seed, "learner", k))
        ours = distill(train, f_star, spec)
        base = fit_baseline(train, spec)
        interpretable.save_model(ours, os.path.join(out, model_filename(spec, "ours")))
        interpretable.save_model(base, os.path.join(out, model_filename(spec, "baseline")))


def _iter_models(cfg, seed):
    mdir = seed_dir(cfg, "models", seed)
    for spec in cfg.learners:
        for variant in ("ours", "baseline"):
            path = _require(os.path.join(mdir, model_filename(spec, variant)))
            yield spec.label, variant, interpretable.load_model(path)


def stage_evaluate(cfg: ExperimentConfig, seed: int) -> list[dict]:
    test = load_split(cfg, seed, "test")
    f_star = load_oracle(cfg, seed)
    rows = [{"model": ORACLE_LABEL, "variant": "oracle", "seed": seed,
             **evaluate_model(f_star, test).to_dict()}]
    for label, variant, model in _iter_models(cfg, seed):
        rows.append({"model": label, "variant": variant, "seed": seed,
                     **evaluate_model(model, test, f_star).to_dict()})
    out = seed_dir(cfg, "reports", seed)
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "eval.json"), rows)
    return rows


def stage_bound_report(cfg: ExperimentConfig, seed: int) -> list[dict]:
    """Bound reports on the test fold; empty when the data carries no noise model."""
    test = load_split(cfg, seed, "test")
    f_star = load_oracle(cfg, seed)
    rows = []
    if test.has_ground_truth and test.noise_sd is not None:
        rep = verify_theorem1(f_star, test, cfg.b_phi)
        rows.append({"model": ORACLE_LABEL, "variant": "oracle", "seed": seed, **rep.to_dict()})
        for label, variant, model in _iter_models(cfg, seed):
            rep = verify_theorem2(model, f_star, test, b_phi=cfg.b_phi)
            rows.append({"model": label, "variant": variant, "seed": seed, **rep.to_dict()})
    out = seed_dir(cfg, "reports", seed)
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "bounds.json"), rows)
    return rows


STAGES = {
    "gen-data": stage_gen_data,
    "train-oracle": stage_train_oracle,
    "distill": stage_distill,
    "evaluate": stage_evaluate,
    "bound-report": stage_bound_report,
}


def run_seed(cfg: ExperimentConfig, seed: int) -> int:
    for name, stage in STAGES.items():
        logger.info("seed %s: %s", seed, name)
        stage(cfg, seed)
    return seed


def _run_seed_job(args):
    cfg, seed = args
    try:
        run_seed(cfg, seed)
        return seed, None
    except Exception as exc:  # reported in the manifest
        logger.exception("seed %s failed", seed)
        return seed, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# aggregation


def _read_json(path):
    with open(_require(path)) as fh:
        return json.load(fh)


def aggregate_results(cfg: ExperimentConfig, seeds, fmt_kind: str = "csv") -> dict:
    """Per-seed long table, summary (mean, stderr) and the tree depth curve."""
    per_seed, bounds = [], []
    for s in seeds:
        per_seed += _read_json(os.path.join(seed_dir(cfg, "reports", s), "eval.json"))
        bpath = os.path.join(seed_dir(cfg, "reports", s), "bounds.json")
        if os.path.exists(bpath):
            bounds += _read_json(bpath)

    long_rows, cells = [], {}
    for r in per_seed:
        rep = EvalReport.from_dict(r)
        for metric, value in rep.metric_items():
            long_rows.append({"model": r["model"], "variant": r["variant"], "seed": r["seed"],
                              "metric": metric, "value": fmt(value)})
            cells.setdefault((r["model"], r["variant"], metric), []).append(value)

    summary = []
    for (model, variant, metric), vals in cells.items():
        mean, se = aggregate(vals)
        summary.append({"model": model, "variant": variant, "metric": metric,
                        "mean": mean, "stderr": se, "n_seeds": len(vals)})

    curve = []
    for row in summary:
        spec = next((s for s in cfg.learners if s.label == row["model"]), None)
        if spec and spec.kind in ("cart", "honest_tree") and row["metric"] == "sqrt_pehe":
            curve.append({"kind": spec.kind, "depth": spec.max_depth, "variant": row["variant"],
                          "mean": row["mean"], "stderr": row["stderr"], "n_seeds": row["n_seeds"]})
    curve.sort(key=lambda r: (r["kind"], r["variant"], r["depth"]))

    rdir = os.path.join(cfg.output_dir, "reports")
    os.makedirs(rdir, exist_ok=True)
    with open(os.path.join(rdir, "per_seed.csv"), "w") as fh:
        fh.write(reports_csv(long_rows))

    def fmt_rows(rows):
        return [{k: (fmt(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows]

    if fmt_kind == "json":
        _write_json(os.path.join(rdir, "summary.json"), summary)
    else:
        with open(os.path.join(rdir, "summary.csv"), "w") as fh:
            fh.write(reports_csv(fmt_rows(summary)))
    with open(os.path.join(rdir, "depth_curve.csv"), "w") as fh:
        fh.write(reports_csv(fmt_rows(curve)))
    if bounds:
        with open(os.path.join(rdir, "bounds.csv"), "w") as fh:
            fh.write(reports_csv(fmt_rows(bounds)))
    return {"per_seed": per_seed, "summary": summary, "depth_curve": curve, "bounds": bounds}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: ExperimentConfig, completed, failed: dict, status: str) -> None:
    artifacts = []
    for root, _, files in os.walk(cfg.output_dir):
        for f in files:
            p = os.path.join(root, f)
            rel = os.path.relpath(p, cfg.output_dir)
            if rel == "manifest.json":
                continue
            artifacts.append({"path": rel, "sha256": _sha256(p), "config_hash": cfg.config_hash})
    artifacts.sort(key=lambda a: a["path"])
    _write_json(os.path.join(cfg.output_dir, "manifest.json"), {
        "name": cfg.name,
        "config_hash": cfg.config_hash,
        "status": status,
        "completed_seeds": sorted(completed),
        "failed_seeds": {str(k): v for k, v in sorted(failed.items())},
        "artifacts": artifacts,
    })


@dataclass
class ExperimentResult:
    completed: list
    failed: dict
    tables: Optional[dict]

    @property
    def bound_failures(self) -> list[dict]:
        if not self.tables:
            return []
        return [b for b in self.tables["bounds"] if not b["holds_first"]]


def run_experiment(cfg: ExperimentConfig, seeds=None, workers: int = 1,
                   fmt_kind: str = "csv") -> ExperimentResult:
    seeds = list(cfg.seeds if seeds is None else seeds)
    os.makedirs(cfg.output_dir, exist_ok=True)
    completed, failed = [], {}
    jobs = [(cfg, s) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_seed_job(job))
            done = [s for s, e in results if e is None]
            errs = {s: e for s, e in results if e is not None}
            write_manifest(cfg, done, errs, "running")
    for s, err in results:
        if err is None:
            completed.append(s)
        else:
            failed[s] = err
    tables = aggregate_results(cfg, completed, fmt_kind) if completed else None
    write_manifest(cfg, completed, failed, "complete" if not failed else "partial")
    return ExperimentResult(completed, failed, tables)
