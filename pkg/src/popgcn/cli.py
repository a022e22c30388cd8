"""Command-line front end.

Subcommands: synth (generate a synthetic cohort), graph (build and export a
population graph), run (one cross-validated experiment from a config file),
sweep (repeat run over a list of values for one config key), report (print a
saved report). Every run writes a machine-readable echo of the fully resolved
configuration; outputs contain no timestamps, so a fixed config and seed give
byte-identical files.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict

from . import dataset as ds
from .baselines import BaselineConfig
from .errors import PopgcnError
from .featsel import SelectorConfig
from .gcn import GcnConfig
from .harness import ExperimentDescriptor, ExperimentReport, run_experiment
from .popgraph import GraphSpec, build_graph, save_graph


class ConfigValidationError(PopgcnError):
    """Invalid experiment config; message carries the section.key path."""


def _cast_bool(text: str) -> bool:
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _cast_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip() != "")


def _cast_measures(text: str) -> tuple[str, ...]:
    return tuple(part.strip().upper() for part in text.split(",") if part.strip() != "")


def _cast_auto_int(text: str):
    return None if text.lower() == "auto" else int(text)


def _cast_auto_float(text: str):
    return None if text.lower() == "auto" else float(text)


# section -> key -> caster. Unknown sections or keys are rejected before any
# computation starts.
CONFIG_SCHEMA: dict[str, dict[str, object]] = {
    "experiment": {"name": str},
    "dataset": {
        "features": str,
        "phenotypes": str,
        "synthetic": _cast_bool,
        "subjects": int,
        "scans_min": int,
        "scans_max": int,
        "sites": int,
        "n_features": int,
        "class_separation": float,
        "site_shift": float,
        "sex_effect": float,
        "noise": float,
        "data_seed": int,
    },
    "selector": {
        "kind": str,
        "target_c": int,
        "ridge_alpha": float,
        "rfe_step_fraction": float,
        "mlp_epochs": int,
        "mlp_lr": float,
        "ae_epochs": int,
        "ae_lr": float,
        "seed": int,
    },
    "graph": {
        "strategy": str,
        "measures": _cast_measures,
        "sim": str,
        "theta": float,
        "lambda": float,
        "k": int,
        "sigma": _cast_auto_float,
        "sigma_pairs": str,
        "seed": int,
    },
    "model": {
        "kind": str,
        "hidden_layers": int,
        "hidden_width": _cast_auto_int,
        "cheb_order": int,
        "dropout": float,
        "l2": float,
        "lr": float,
        "epochs": int,
        "ridge_alpha": float,
        "mlp_epochs": int,
    },
    "cv": {"folds": int, "seeds": _cast_seeds, "fold_seed": int},
}


def parse_config(path: str, overrides: list[str] | None = None) -> dict:
    """Read and validate an INI experiment config into {section: {key: value}}."""
    if not os.path.exists(path):
        raise ConfigValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigValidationError(f"{path}: {exc}") from None

    raw: dict[str, dict[str, str]] = {
        section: dict(parser.items(section)) for section in parser.sections()
    }
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigValidationError(f"override must look like section.key=value: {item!r}")
        key_path, value = item.split("=", 1)
        section, key = key_path.split(".", 1)
        raw.setdefault(section.strip(), {})[key.strip()] = value

    config: dict[str, dict] = {}
    for section, entries in raw.items():
        if section not in CONFIG_SCHEMA:
            raise ConfigValidationError(f"unknown config section [{section}]")
        config[section] = {}
        for key, text in entries.items():
            caster = CONFIG_SCHEMA[section].get(key)
            if caster is None:
                raise ConfigValidationError(f"unknown config key {section}.{key}")
            try:
                config[section][key] = caster(text)
            except ValueError as exc:
                raise ConfigValidationError(f"{section}.{key}: {exc}") from None
    return config


def write_config_echo(config: dict, path):
    """Resolved config as INI, keys in schema order: rerunning it reproduces the run."""
    echo = configparser.ConfigParser()
    for section in CONFIG_SCHEMA:
        if section not in config or not config[section]:
            continue
        echo.add_section(section)
        for key in CONFIG_SCHEMA[section]:
            if key not in config[section]:
                continue
            value = config[section][key]
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif value is None:
                text = "auto"
            else:
                text = str(value)
            echo.set(section, key, text)
    with open(path, "w", encoding="utf-8") as fh:
        echo.write(fh)


def _load_or_generate_dataset(config: dict):
    sec = config.get("dataset", {})
    if sec.get("synthetic", False):
        syn = ds.SyntheticConfig(
            n_subjects=sec.get("subjects", 600),
            scans_per_subject=(sec.get("scans_min", 1), sec.get("scans_max", 3)),
            n_sites=sec.get("sites", 4),
            n_features=sec.get("n_features", 12),
            class_separation=sec.get("class_separation", 2.5),
            site_shift_scale=sec.get("site_shift", 1.5),
            sex_effect=sec.get("sex_effect", 0.8),
            noise_scale=sec.get("noise", 1.0),
            seed=sec.get("data_seed", 0),
        )
        return ds.generate_synthetic(syn)
    for key in ("features", "phenotypes"):
        if key not in sec:
            raise ConfigValidationError(f"dataset.{key} is required unless dataset.synthetic=true")
        if not os.path.exists(sec[key]):
            raise ConfigValidationError(f"dataset.{key}: file not found: {sec[key]}")
    return ds.load_dataset(sec["features"], sec["phenotypes"])


def build_descriptor(config: dict) -> ExperimentDescriptor:
    features, records = _load_or_generate_dataset(config)

    sel = config.get("selector", {})
    selector = SelectorConfig(
        kind=sel.get("kind", "none"),
        target_c=sel.get("target_c", 0),
        ridge_alpha=sel.get("ridge_alpha", 1.0),
        rfe_step_fraction=sel.get("rfe_step_fraction", 0.1),
        mlp_epochs=sel.get("mlp_epochs", 100),
        mlp_lr=sel.get("mlp_lr", 1e-3),
        ae_epochs=sel.get("ae_epochs", 100),
        ae_lr=sel.get("ae_lr", 5e-4),
        seed=sel.get("seed", 0),
    )

    gr = config.get("graph", {})
    sigma = gr.get("sigma", None)
    spec = GraphSpec(
        strategy=gr.get("strategy", "phenotypic"),
        measures=gr.get("measures", ("SEX", "SITE")),
        sim_mode=gr.get("sim", "correlation_kernel"),
        theta=gr.get("theta", 2.0),
        lam=gr.get("lambda", 10.0),
        k=gr.get("k", 10),
        sigma_mode="mean_rho" if sigma is None else "fixed",
        sigma_value=sigma,
        seed=gr.get("seed", 0),
    )

    mo = config.get("model", {})
    gcn_config = GcnConfig(
        hidden_layers=mo.get("hidden_layers", 1),
        hidden_width=mo.get("hidden_width", None),
        cheb_order=mo.get("cheb_order", 3),
        dropout_rate=mo.get("dropout", 0.3),
        l2_coeff=mo.get("l2", 5e-4),
        learning_rate=mo.get("lr", 0.005),
        epochs=mo.get("epochs", 150),
    )
    baseline = BaselineConfig(
        kind=mo.get("kind", "gcn") if mo.get("kind") in ("ridge", "mlp") else "ridge",
        ridge_alpha=mo.get("ridge_alpha", 1.0),
        mlp_epochs=mo.get("mlp_epochs", 200),
        mlp_hidden_layers=mo.get("hidden_layers", 1),
        mlp_width=mo.get("hidden_width", None),
        mlp_dropout=mo.get("dropout", 0.3),
        mlp_l2=mo.get("l2", 5e-4),
        mlp_lr=mo.get("lr", 0.005),
    )

    cv = config.get("cv", {})
    return ExperimentDescriptor(
        features=features,
        records=records,
        model=mo.get("kind", "gcn"),
        graph_spec=spec,
        gcn_config=gcn_config,
        baseline_config=baseline,
        selector_config=selector,
        folds=cv.get("folds", 10),
        seeds=cv.get("seeds", tuple(range(10))),
        fold_seed=cv.get("fold_seed", 0),
        sigma_pairs=gr.get("sigma_pairs", "train"),
        name=config.get("experiment", {}).get("name", "experiment"),
    )


def _write_report_files(report: ExperimentReport, out_dir: str):
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    report.write_csv(os.path.join(out_dir, "results.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.summary_table())
        fh.write("\n")


def _cmd_synth(args) -> int:
    cfg = ds.SyntheticConfig(
        n_subjects=args.subjects,
        scans_per_subject=(args.scans_min, args.scans_max),
        n_sites=args.sites,
        n_features=args.features,
        class_separation=args.class_separation,
        site_shift_scale=args.site_shift,
        sex_effect=args.sex_effect,
        noise_scale=args.noise,
        seed=args.seed,
    )
    features, records = ds.generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    ds.write_features(features, os.path.join(args.out, "features.csv"))
    ds.write_phenotypes(records, os.path.join(args.out, "phenotypes.csv"))
    with open(os.path.join(args.out, "synth_config.json"), "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote {len(records)} acquisitions ({cfg.n_subjects} subjects) to {args.out}")
    return 0


def _cmd_graph(args) -> int:
    for path in (args.features, args.phenotypes):
        if not os.path.exists(path):
            print(f"error: file not found: {path}", file=sys.stderr)
            return 1
    features, records = ds.load_dataset(args.features, args.phenotypes)
    spec = GraphSpec(
        strategy=args.strategy,
        measures=_cast_measures(args.measures),
        sim_mode=args.sim,
        theta=args.theta,
        lam=getattr(args, "lambda"),
        k=args.k,
        sigma_mode="mean_rho" if args.sigma is None else "fixed",
        sigma_value=args.sigma,
        seed=args.seed,
    )
    graph = build_graph(features, records, spec)
    save_graph(graph, args.out)
    print(f"wrote graph with {graph.n_nodes} nodes, {graph.n_edges} edges to {args.out}")
    return 0


def _cmd_run(args) -> int:
    config = parse_config(args.config, args.set or [])
    descriptor = build_descriptor(config)
    os.makedirs(args.out, exist_ok=True)
    write_config_echo(config, os.path.join(args.out, "config_echo.cfg"))

    # One JSON record per (fold, seed), flushed as produced so partial
    # results survive an abort.
    records_path = os.path.join(args.out, "records.jsonl")
    with open(records_path, "w", encoding="utf-8") as sink_fh:

        def sink(record):
            sink_fh.write(json.dumps(asdict(record), sort_keys=True))
            sink_fh.write("\n")
            sink_fh.flush()

        report = run_experiment(descriptor, jobs=args.jobs, record_sink=sink)
    _write_report_files(report, args.out)
    print(report.summary_table())
    return 0


def _cmd_sweep(args) -> int:
    if "." not in args.param:
        print(f"error: --param must look like section.key, got {args.param!r}", file=sys.stderr)
        return 1
    values = [v for v in args.values.split(",") if v != ""]
    if not values:
        print("error: --values is empty", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    combined: list[str] = ["experiment,fold,seed,accuracy,auc"]
    summaries: list[str] = []
    for value in values:
        overrides = list(args.set or []) + [f"{args.param}={value}"]
        config = parse_config(args.config, overrides)
        name = config.get("experiment", {}).get("name", "experiment")
        run_name = f"{name}[{args.param}={value}]"
        config.setdefault("experiment", {})["name"] = run_name
        descriptor = build_descriptor(config)
        sub_dir = os.path.join(args.out, f"{args.param.replace('.', '_')}_{value}")
        os.makedirs(sub_dir, exist_ok=True)
        write_config_echo(config, os.path.join(sub_dir, "config_echo.cfg"))
        report = run_experiment(descriptor, jobs=args.jobs)
        _write_report_files(report, sub_dir)
        for rec in report.records:
            auc = "" if rec.auc is None else repr(rec.auc)
            combined.append(f"{run_name},{rec.fold},{rec.seed},{repr(rec.accuracy)},{auc}")
        summaries.append(report.summary_table())
    with open(os.path.join(args.out, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(combined))
        fh.write("\n")
    with open(os.path.join(args.out, "sweep_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(summaries))
        fh.write("\n")
    print("\n\n".join(summaries))
    return 0


def _cmd_report(args) -> int:
    if not os.path.exists(args.report):
        print(f"error: file not found: {args.report}", file=sys.stderr)
        return 1
    with open(args.report, encoding="utf-8") as fh:
        report = ExperimentReport.from_json(fh.read())
    print(report.summary_table())
    if args.csv:
        report.write_csv(args.csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popgcn", description="Population-graph GCN toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic cohort as CSV files")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--subjects", type=int, default=600)
    p_synth.add_argument("--scans-min", type=int, default=1)
    p_synth.add_argument("--scans-max", type=int, default=3)
    p_synth.add_argument("--sites", type=int, default=4)
    p_synth.add_argument("--features", type=int, default=12)
    p_synth.add_argument("--class-separation", type=float, default=2.5)
    p_synth.add_argument("--site-shift", type=float, default=1.5)
    p_synth.add_argument("--sex-effect", type=float, default=0.8)
    p_synth.add_argument("--noise", type=float, default=1.0)
    p_synth.set_defaults(func=_cmd_synth)

    p_graph = sub.add_parser("graph", help="build a population graph and export it as CSV")
    p_graph.add_argument("--features", required=True, help="features.csv path")
    p_graph.add_argument("--phenotypes", required=True, help="phenotypes.csv path")
    p_graph.add_argument("--out", required=True, help="output edge-list CSV")
    p_graph.add_argument(
        "--strategy", default="phenotypic", choices=["phenotypic", "knn", "complete", "all", "random"]
    )
    p_graph.add_argument("--measures", default="SEX,SITE", help="comma list of SEX,SITE,AGE,GENE")
    p_graph.add_argument(
        "--sim", default="correlation_kernel", choices=["correlation_kernel", "longitudinal", "none"]
    )
    p_graph.add_argument("--theta", type=float, default=2.0, help="age agreement window, years")
    p_graph.add_argument("--lambda", type=float, default=10.0, help="same-subject link weight")
    p_graph.add_argument("--k", type=int, default=10, help="neighbour count for knn")
    p_graph.add_argument(
        "--sigma", type=_cast_auto_float, default=None, help="kernel width; 'auto' = mean distance"
    )
    p_graph.add_argument("--seed", type=int, default=0, help="seed for the random strategy")
    p_graph.set_defaults(func=_cmd_graph)

    p_run = sub.add_parser("run", help="run one cross-validated experiment from a config file")
    p_run.add_argument("--config", required=True, help="INI experiment config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel fold workers (default 1)")
    p_run.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry"
    )
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run an experiment over a list of values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--param", required=True, help="config key to vary, e.g. model.cheb_order")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_report = sub.add_parser("report", help="print a saved report; optionally emit plot CSV")
    p_report.add_argument("--report", required=True, help="path to report.json")
    p_report.add_argument("--csv", default=None, help="also write plot-ready CSV here")
    p_report.set_defaults(func=_cmd_report)
    return parser


def dispatch(argv) -> int:
    """Parse argv and execute; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit 2 for usage errors
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PopgcnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
