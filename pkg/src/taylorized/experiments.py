"""Config-driven experiment orchestration and artifact emission."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .charts import COS_FUNC, COS_PARAM, PCA, TEST_ACC, TRAIN_LOSS, ChartSpec, emit_chart
from .config import ConfigError, ExperimentConfig, load_config, parse_rate
from .data import Dataset, IdxFormatError, idx_dataset, make_blobs, make_sphere
from .manifest import write_manifest
from .metrics import (layer_movement, pca_of_records, similarity_series, write_layer_movement_csv,
                      write_pca_csv, write_similarity_csv)
from .theory import GradientFlowConfig, width_scaling_experiment, write_scaling_report
from .train import paired_run, write_checkpoint, write_trajectory_csv

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_ERROR = 0, 2, 3, 4, 1


class AllDivergedError(RuntimeError):
    pass


class DatasetLoadError(RuntimeError):
    pass


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    """Materialize the configured dataset; any load problem becomes ``DatasetLoadError``."""
    try:
        data = _build_dataset(cfg)
        data.check_nonempty()
    except (OSError, IdxFormatError, ValueError) as err:
        raise DatasetLoadError(str(err)) from err
    return data


def _build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    if d.source == "synthetic-blobs":
        return make_blobs(d.n_train, d.n_test, d.dim, d.classes, d.clusters_per_class, d.spread,
                          d.separation, d.informative or None, d.seed, d.standardize)
    if d.source == "synthetic-sphere":
        return make_sphere(d.n_train, d.n_test, d.dim, d.seed)
    return idx_dataset(d.train_images, d.train_labels, d.test_images, d.test_labels,
                       d.n_train, d.n_test, d.standardize, d.classes)


def _paired(cfg: ExperimentConfig, data: Dataset, out: Path, seed: int, arch=None,
            scheme=None, rate=None, tag_prefix="") -> dict:
    """One paired run plus its CSVs; returns a per-model summary."""
    arch = arch or cfg.build_architecture()
    scheme = scheme or cfg.architecture.scheme
    opt = cfg.optimizer(data.n_train, rate)
    recs = paired_run(arch, cfg.experiment.orders, opt, data, seed=seed, scheme=scheme,
                      threads=cfg.experiment.threads)
    if all(r.diverged_at is not None for r in recs.values()):
        raise AllDivergedError(f"every model diverged (seed {seed})")
    stem = f"{tag_prefix}seed{seed}"
    write_trajectory_csv(recs, out / f"trajectory_{stem}.csv")
    series = [similarity_series(recs["full"], r) for t, r in recs.items() if t != "full"]
    write_similarity_csv(series, out / f"similarity_{stem}.csv")
    write_layer_movement_csv(recs, out / f"layer_movement_{stem}.csv", scheme)
    write_pca_csv(pca_of_records(recs), out / f"pca_{stem}.csv")
    for rec in recs.values():
        write_checkpoint(out / "checkpoints" / stem, rec, len(rec.steps) - 1, scheme)
    summary = {}
    full_final = layer_movement(recs["full"].params_at(-1, scheme))
    for tag, rec in recs.items():
        entry = {"final_test_acc": rec.test_acc[-1], "final_train_loss": rec.train_loss[-1],
                 "diverged_at": rec.diverged_at,
                 "layer_movement": dict(zip(full_final.layers,
                                            layer_movement(rec.params_at(-1, scheme)).normalized.tolist()))}
        s = next((s for s in series if s.tag == tag), None)
        if s is not None:
            entry.update(mean_cos_func=s.mean_cos_func(), mean_cos_param=s.mean_cos_param(),
                         final_cos_func=float(s.cos_func[-1]), final_cos_param=float(s.cos_param[-1]))
        summary[tag] = entry
    return summary


def _charts(out: Path) -> list:
    made = []
    for csv_path in sorted(out.glob("*.csv")):
        name = csv_path.name
        specs = []
        if name.startswith("similarity_"):
            specs = [(COS_FUNC, "_cos_func"), (COS_PARAM, "_cos_param")]
        elif name.startswith("trajectory_"):
            specs = [(TRAIN_LOSS, "_loss"), (TEST_ACC, "_acc")]
        elif name.startswith("pca_"):
            specs = [(PCA, "")]
        elif name == "scaling.csv":
            specs = [(ChartSpec("width", "sup_param_dev", group="k", kind="scatter", logx=True, logy=True,
                                title="Sup parameter deviation vs width",
                                where=(("seed", _first_seed(csv_path)),)), "")]
        for spec, suffix in specs:
            made.append(emit_chart(csv_path, spec, csv_path.with_name(csv_path.stem + suffix + ".svg")))
    return made


def _first_seed(csv_path) -> str:
    import csv
    with open(csv_path, newline="") as fh:
        row = next(csv.DictReader(fh), None)
    return row["seed"] if row else "0"


def train_compare(cfg: ExperimentConfig, out: Path) -> dict:
    data = build_dataset(cfg)
    return {f"seed{s}": _paired(cfg, data, out, s) for s in cfg.experiment.seeds}


def ablation_lr_param(cfg: ExperimentConfig, out: Path) -> dict:
    """Standard/high LR vs standard/low LR vs NTK parameterization, constant LR."""
    data = build_dataset(cfg)
    flat = replace(cfg, training=replace(cfg.training, lr_decay_schedule="none"))
    a = cfg.ablation
    variants = {"standard-lr-high": ("standard", a.high_rate), "standard-lr-low": ("standard", a.low_rate),
                "ntk-param": ("ntk", a.ntk_rate)}
    result = {}
    for name, (scheme, rate) in variants.items():
        result[name] = {f"seed{s}": _paired(flat, data, out, s, scheme=scheme, rate=rate, tag_prefix=f"{name}_")
                        for s in cfg.experiment.seeds}
    return result


def ablation_width(cfg: ExperimentConfig, out: Path) -> dict:
    data = build_dataset(cfg)
    if cfg.architecture.kind != "mlp":
        raise ConfigError("width ablation is implemented for MLPs")
    dims = cfg.architecture.dims
    result = {}
    for w in cfg.ablation.widths:
        arch = cfg.build_architecture((dims[0],) + (w,) * (len(dims) - 2) + (dims[-1],))
        result[f"width{w}"] = {f"seed{s}": _paired(cfg, data, out, s, arch=arch, tag_prefix=f"width{w}_")
                               for s in cfg.experiment.seeds}
    return result


def theory_scaling(cfg: ExperimentConfig, out: Path) -> dict:
    th = cfg.theory
    gf = GradientFlowConfig(th.eta0, 1.0, th.h, th.record_every)
    t0 = None if th.t0 == "auto" else parse_rate(th.t0)
    fit = width_scaling_experiment(th.widths, cfg.experiment.orders, cfg.experiment.seeds, gf,
                                   n=th.n, d=th.d, activation=th.activation, data_seed=th.data_seed, t0=t0)
    write_scaling_report(fit, out / "scaling.csv", out / "scaling.json")
    return json.loads((out / "scaling.json").read_text())


RUNNERS = {
    "train-compare": train_compare,
    "theory-scaling": theory_scaling,
    "ablation-width": ablation_width,
    "ablation-lr-param": ablation_lr_param,
}


def run_config(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run ``cfg`` and write all artifacts; raises on failure."""
    out = Path(out_dir or cfg.experiment.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "failure.json").unlink(missing_ok=True)
    (out / "config.ini").write_text(cfg.canonical().to_text())
    summary = RUNNERS[cfg.experiment.kind](cfg, out)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _charts(out)
    write_manifest(out, cfg.digest(), cfg.experiment.seeds, __version__,
                   {"kind": cfg.experiment.kind})
    return summary


def run_experiment(config_path, out_dir=None, expected_kind=None, **overrides) -> int:
    """CLI-facing wrapper: returns an exit code and writes ``failure.json`` on error."""
    from .config import with_overrides
    out = Path(out_dir) if out_dir else None
    try:
        cfg = with_overrides(load_config(config_path), output=str(out) if out else None, **overrides)
        if expected_kind and cfg.experiment.kind not in expected_kind:
            raise ConfigError(f"config kind {cfg.experiment.kind!r} does not match this command")
        out = Path(cfg.experiment.output)
        run_config(cfg, out)
        return EXIT_OK
    except (ConfigError, OSError) as err:
        code, kind, failure = EXIT_CONFIG, "invalid-config", err
    except DatasetLoadError as err:
        code, kind, failure = EXIT_DATA, "dataset", err
    except AllDivergedError as err:
        code, kind, failure = EXIT_DIVERGED, "all-diverged", err
    except Exception as err:  # recorded, not swallowed: the code is nonzero
        code, kind, failure = EXIT_ERROR, type(err).__name__, err
    log.error("%s: %s", kind, failure)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "failure.json").write_text(json.dumps({"error": kind, "message": str(failure),
                                                      "exit_code": code}, indent=2) + "\n")
    return code


def report(out_dir) -> list:
    """Re-render every chart in ``out_dir`` and verify the manifest hashes."""
    from .manifest import verify_manifest
    out = Path(out_dir)
    _charts(out)
    return verify_manifest(out) if (out / "manifest.json").exists() else []
