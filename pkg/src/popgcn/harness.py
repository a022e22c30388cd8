"""Grouped stratified cross-validation, metrics, seed ensembling, and the
experiment driver.

Folds partition acquisitions with all of a subject's scans kept together and
subject-level class counts balanced greedily. Accuracy thresholds positive
probabilities at 0.5 (ties -> class 0); AUC is the exact pairwise
Mann-Whitney statistic, ties counted half. Experiments refit the feature
selector and rebuild the graph inside every fold, estimate the kernel width
from training-node pairs only, and hide test labels from training entirely.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace, asdict
from typing import NamedTuple

import json
import numpy as np

from .baselines import BaselineConfig, mlp_classify, ridge_classify
from .dataset import UNKNOWN_LABEL, AcquisitionRecord, FeatureMatrix, labels_array
from .errors import ContractError, IntegrityError, ParameterError
from .featsel import FeatureSelector, SelectorConfig
from .gcn import GcnConfig
from . import gcn as gcn_mod
from .popgraph import GraphSpec, build_graph, estimate_sigma


@dataclass
class FoldAssignment:
    folds: np.ndarray  # fold index per acquisition
    k: int
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)


def stratified_group_kfold(records: list[AcquisitionRecord], k: int, seed: int = 0) -> FoldAssignment:
    """Assign whole subjects to folds, balancing subject-level class counts.

    Groups are processed largest first (ties shuffled by seed); each goes to
    the fold with the fewest subjects of its class, breaking ties by fewer
    acquisitions, then lower fold index. Unlabeled subjects balance on
    acquisition count alone.
    """
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    subject_order: list[str] = []
    by_subject: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        if rec.subject_id not in by_subject:
            by_subject[rec.subject_id] = []
            subject_order.append(rec.subject_id)
        by_subject[rec.subject_id].append(i)
    if len(subject_order) < k:
        raise ParameterError(
            f"need at least k={k} distinct subjects, got {len(subject_order)}"
        )

    groups = []
    for subject in subject_order:
        idx = by_subject[subject]
        group_labels = {records[i].label for i in idx}
        if len(group_labels) > 1:
            raise IntegrityError(f"subject {subject!r} has inconsistent labels")
        groups.append((idx, group_labels.pop()))

    rng = np.random.default_rng(seed)
    tie_order = rng.permutation(len(groups))
    order = sorted(range(len(groups)), key=lambda g: (-len(groups[g][0]), tie_order[g]))

    class_counts = np.zeros((k, 2), dtype=np.int64)  # subject-level
    acq_counts = np.zeros(k, dtype=np.int64)
    folds = np.empty(len(records), dtype=np.int64)
    for g in order:
        idx, label = groups[g]
        if label in (0, 1):
            best = min(range(k), key=lambda f: (class_counts[f, label], acq_counts[f], f))
            class_counts[best, label] += 1
        else:
            best = min(range(k), key=lambda f: (acq_counts[f], f))
        acq_counts[best] += len(idx)
        folds[idx] = best
    return FoldAssignment(folds=folds, k=k, seed=seed)


class Metrics(NamedTuple):
    accuracy: float
    auc: float | None


def _fractional_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def compute_metrics(probs, labels) -> Metrics:
    """Accuracy at threshold 0.5 (ties -> class 0) and exact Mann-Whitney AUC.

    The rank formulation with tie-averaged ranks equals the pairwise count
    P(score+ > score-) + 0.5 P(equal). AUC is None when only one class is
    present.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape != labels.shape:
        raise ContractError("probs and labels must have equal length")
    if np.any((labels != 0) & (labels != 1)):
        raise ContractError("labels must be 0 or 1")
    if np.any((probs < 0) | (probs > 1)):
        raise ContractError("probabilities must lie in [0, 1]")
    preds = (probs > 0.5).astype(np.int64)
    accuracy = float(np.mean(preds == labels))
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return Metrics(accuracy=accuracy, auc=None)
    ranks = _fractional_ranks(probs)
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return Metrics(accuracy=accuracy, auc=float(auc))


class EnsembleResult(NamedTuple):
    labels: np.ndarray
    accuracy: float
    auc: float | None


def ensemble_seeds(pred_labels, probs, true_labels, mode: str) -> EnsembleResult:
    """Combine per-seed predictions over the same nodes.

    'average': reported accuracy/AUC are the means of the per-seed metrics;
    labels come from the mean positive probability (ties -> class 0).
    'majority_vote': per-node modal label, even splits resolved by the mean
    positive probability against 0.5; metrics are computed on the ensembled
    labels / mean probabilities.
    """
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if pred_labels.ndim != 2 or pred_labels.shape != probs.shape:
        raise ContractError("need aligned (seeds, nodes) prediction arrays")
    if pred_labels.shape[0] < 1:
        raise ContractError("need at least one seed")
    if mode not in ("average", "majority_vote"):
        raise ParameterError(f"unknown ensemble mode {mode!r}")

    mean_probs = probs.mean(axis=0)
    if mode == "average":
        per_seed = [compute_metrics(probs[s], true_labels) for s in range(probs.shape[0])]
        accuracy = float(np.mean([m.accuracy for m in per_seed]))
        aucs = [m.auc for m in per_seed]
        auc = None if any(a is None for a in aucs) else float(np.mean(aucs))
        labels = (mean_probs > 0.5).astype(np.int64)
        return EnsembleResult(labels=labels, accuracy=accuracy, auc=auc)

    votes_one = (pred_labels == 1).sum(axis=0)
    votes_zero = pred_labels.shape[0] - votes_one
    labels = np.where(
        votes_one > votes_zero, 1, np.where(votes_one < votes_zero, 0, mean_probs > 0.5)
    ).astype(np.int64)
    metrics = compute_metrics(mean_probs, true_labels)
    accuracy = float(np.mean(labels == true_labels))
    return EnsembleResult(labels=labels, accuracy=accuracy, auc=metrics.auc)


@dataclass(frozen=True)
class ExperimentDescriptor:
    """Everything run_experiment needs; configs echo into the report."""

    features: FeatureMatrix
    records: list[AcquisitionRecord]
    model: str = "gcn"  # gcn | ridge | mlp
    graph_spec: GraphSpec = field(default_factory=GraphSpec)
    gcn_config: GcnConfig = field(default_factory=GcnConfig)
    baseline_config: BaselineConfig = field(default_factory=BaselineConfig)
    selector_config: SelectorConfig = field(default_factory=SelectorConfig)
    folds: int = 10
    seeds: tuple[int, ...] = tuple(range(10))
    fold_seed: int = 0
    sigma_pairs: str = "train"  # 'train' (leakage-safe) or 'all' (strict replication)
    name: str = "experiment"

    def validate(self):
        if self.model not in ("gcn", "ridge", "mlp"):
            raise ParameterError(f"unknown model {self.model!r}")
        if self.folds < 2:
            raise ParameterError("folds must be >= 2")
        if not self.seeds:
            raise ParameterError("need at least one seed")
        if self.sigma_pairs not in ("train", "all"):
            raise ParameterError("sigma_pairs must be 'train' or 'all'")
        if self.features.ids != [r.acquisition_id for r in self.records]:
            raise ContractError("features and records must be aligned")


@dataclass
class FoldSeedRecord:
    fold: int
    seed: int
    test_indices: list[int]
    true_labels: list[int]
    pred_labels: list[int]
    probs: list[float]
    accuracy: float
    auc: float | None
    sigma: float | None = None


@dataclass
class ExperimentReport:
    name: str
    config: dict
    records: list[FoldSeedRecord]
    summary: dict

    def compute_summary(self) -> dict:
        """Recompute all aggregates from the per-(fold, seed) records."""
        seeds = sorted({r.seed for r in self.records})
        folds = sorted({r.fold for r in self.records})
        by_key = {(r.fold, r.seed): r for r in self.records}
        per_seed = {}
        for s in seeds:
            accs = [by_key[(f, s)].accuracy for f in folds]
            aucs = [by_key[(f, s)].auc for f in folds]
            per_seed[s] = {
                "mean_accuracy": float(np.mean(accs)),
                "std_accuracy": float(np.std(accs)),
                "mean_auc": None if any(a is None for a in aucs) else float(np.mean(aucs)),
            }
        seed_avg_acc = float(np.mean([per_seed[s]["mean_accuracy"] for s in seeds]))
        seed_aucs = [per_seed[s]["mean_auc"] for s in seeds]
        seed_avg_auc = None if any(a is None for a in seed_aucs) else float(np.mean(seed_aucs))

        # Majority-vote ensemble across seeds, fold by fold.
        ens_accs, ens_aucs = [], []
        for f in folds:
            recs = [by_key[(f, s)] for s in seeds]
            result = ensemble_seeds(
                np.array([r.pred_labels for r in recs]),
                np.array([r.probs for r in recs]),
                np.array(recs[0].true_labels),
                mode="majority_vote",
            )
            ens_accs.append(result.accuracy)
            ens_aucs.append(result.auc)
        return {
            "per_seed": {str(s): per_seed[s] for s in seeds},
            "seed_averaged": {"accuracy": seed_avg_acc, "auc": seed_avg_auc},
            "ensembled": {
                "accuracy": float(np.mean(ens_accs)),
                "auc": None if any(a is None for a in ens_aucs) else float(np.mean(ens_aucs)),
            },
        }

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "config": self.config,
            "summary": self.summary,
            "records": [asdict(r) for r in self.records],
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        payload = json.loads(text)
        return cls(
            name=payload["name"],
            config=payload["config"],
            summary=payload["summary"],
            records=[FoldSeedRecord(**r) for r in payload["records"]],
        )

    def write_csv(self, path):
        """Plot-ready CSV: experiment,fold,seed,accuracy,auc."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("experiment,fold,seed,accuracy,auc\n")
            for r in self.records:
                auc = "" if r.auc is None else repr(r.auc)
                fh.write(f"{self.name},{r.fold},{r.seed},{repr(r.accuracy)},{auc}\n")

    def summary_table(self) -> str:
        lines = [f"experiment: {self.name}"]
        for s, stats in self.summary["per_seed"].items():
            auc = stats["mean_auc"]
            auc_str = "n/a" if auc is None else f"{auc:.4f}"
            lines.append(
                f"  seed {s}: accuracy {stats['mean_accuracy']:.4f}"
                f" +/- {stats['std_accuracy']:.4f}, auc {auc_str}"
            )
        sa = self.summary["seed_averaged"]
        en = self.summary["ensembled"]
        sa_auc = "n/a" if sa["auc"] is None else f"{sa['auc']:.4f}"
        en_auc = "n/a" if en["auc"] is None else f"{en['auc']:.4f}"
        lines.append(f"  seed-averaged: accuracy {sa['accuracy']:.4f}, auc {sa_auc}")
        lines.append(f"  majority-vote ensemble: accuracy {en['accuracy']:.4f}, auc {en_auc}")
        return "\n".join(lines)


def _config_echo(desc: ExperimentDescriptor) -> dict:
    return {
        "name": desc.name,
        "model": desc.model,
        "graph": {**asdict(desc.graph_spec)},
        "gcn": asdict(desc.gcn_config),
        "baseline": asdict(desc.baseline_config),
        "selector": asdict(desc.selector_config),
        "folds": desc.folds,
        "seeds": list(desc.seeds),
        "fold_seed": desc.fold_seed,
        "sigma_pairs": desc.sigma_pairs,
        "n_acquisitions": desc.features.n_acquisitions,
        "n_features": desc.features.n_features,
    }


def _needs_kernel(spec: GraphSpec) -> bool:
    if spec.strategy in ("knn", "all"):
        return True
    if spec.strategy in ("phenotypic", "random"):
        return spec.sim_mode == "correlation_kernel"
    return False


def _run_fold(desc: ExperimentDescriptor, assignment: FoldAssignment, fold: int):
    labels = labels_array(desc.records)
    labeled = labels != UNKNOWN_LABEL
    in_fold = assignment.folds == fold
    train_mask = labeled & ~in_fold
    test_idx = np.flatnonzero(labeled & in_fold)
    if not train_mask.any() or len(test_idx) == 0:
        raise IntegrityError(f"fold {fold} leaves no training or no test nodes")

    x = desc.features.values
    selector = FeatureSelector(desc.selector_config)
    selector.fit(x[train_mask], labels[train_mask])
    x_red = selector.transform(x)

    records: list[FoldSeedRecord] = []
    if desc.model == "gcn":
        spec = desc.graph_spec
        sigma = None
        if _needs_kernel(spec) and spec.sigma_mode == "mean_rho":
            subset = np.flatnonzero(train_mask) if desc.sigma_pairs == "train" else None
            sigma = estimate_sigma(x_red, node_subset=subset)
            spec = replace(spec, sigma_mode="fixed", sigma_value=sigma)
        reduced = FeatureMatrix(ids=list(desc.features.ids), values=x_red)
        graph = build_graph(reduced, desc.records, spec)

        # Test labels are hidden from training: only training-mask labels are
        # visible, everything else is passed as unknown.
        visible = np.where(train_mask, labels, UNKNOWN_LABEL)
        for seed in desc.seeds:
            cfg = replace(desc.gcn_config, seed=seed)
            model, _ = gcn_mod.train(cfg, graph, x_red, visible, train_mask)
            probs, preds = gcn_mod.predict(model, graph, x_red)
            pos = probs[test_idx, 1]
            metrics = compute_metrics(pos, labels[test_idx])
            records.append(
                FoldSeedRecord(
                    fold=fold,
                    seed=seed,
                    test_indices=test_idx.tolist(),
                    true_labels=labels[test_idx].tolist(),
                    pred_labels=preds[test_idx].tolist(),
                    probs=pos.tolist(),
                    accuracy=metrics.accuracy,
                    auc=metrics.auc,
                    sigma=sigma,
                )
            )
        return records

    x_train = x_red[train_mask]
    y_train = labels[train_mask]
    x_test = x_red[test_idx]
    if desc.model == "ridge":
        preds, probs = ridge_classify(x_train, y_train, x_test, desc.baseline_config.ridge_alpha)
        metrics = compute_metrics(probs, labels[test_idx])
        for seed in desc.seeds:  # deterministic: identical across seeds
            records.append(
                FoldSeedRecord(
                    fold=fold,
                    seed=seed,
                    test_indices=test_idx.tolist(),
                    true_labels=labels[test_idx].tolist(),
                    pred_labels=preds.tolist(),
                    probs=probs.tolist(),
                    accuracy=metrics.accuracy,
                    auc=metrics.auc,
                )
            )
        return records

    for seed in desc.seeds:
        cfg = replace(desc.baseline_config, kind="mlp", seed=seed)
        preds, probs2 = mlp_classify(x_train, y_train, x_test, cfg)
        pos = probs2[:, 1]
        metrics = compute_metrics(pos, labels[test_idx])
        records.append(
            FoldSeedRecord(
                fold=fold,
                seed=seed,
                test_indices=test_idx.tolist(),
                true_labels=labels[test_idx].tolist(),
                pred_labels=preds.tolist(),
                probs=pos.tolist(),
                accuracy=metrics.accuracy,
                auc=metrics.auc,
            )
        )
    return records


def _run_fold_args(args):
    return _run_fold(*args)


def run_experiment(desc: ExperimentDescriptor, jobs: int = 1, record_sink=None) -> ExperimentReport:
    """Cross-validated experiment over folds x seeds.

    Per fold: fit the selector on training rows, build the graph over all
    nodes (kernel width from training pairs unless sigma_pairs='all'), train
    with the training mask, score the held-out fold. record_sink, when given,
    is called with each FoldSeedRecord as it is produced, so partial results
    survive an abort.
    """
    desc.validate()
    assignment = stratified_group_kfold(desc.records, desc.folds, desc.fold_seed)
    all_records: list[FoldSeedRecord] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for fold_records in pool.map(
                _run_fold_args, [(desc, assignment, f) for f in range(desc.folds)]
            ):
                all_records.extend(fold_records)
                if record_sink is not None:
                    for rec in fold_records:
                        record_sink(rec)
    else:
        for fold in range(desc.folds):
            fold_records = _run_fold(desc, assignment, fold)
            all_records.extend(fold_records)
            if record_sink is not None:
                for rec in fold_records:
                    record_sink(rec)
    all_records.sort(key=lambda r: (r.fold, r.seed))
    report = ExperimentReport(
        name=desc.name, config=_config_echo(desc), records=all_records, summary={}
    )
    report.summary = report.compute_summary()
    return report
