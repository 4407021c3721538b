"""Evaluation protocol: 75/25 split, stratified CV, bootstrap, RFE, and the
six-cell experiment grid ({fda, svm} x {L1+L2, all features, RFE-selected}).

Randomness policy
-----------------
Every random choice flows from one pinned generator (see ``rng``) seeded
once per plan, consumed in a fixed, documented order: shuffle the vulnerable
indices, shuffle the benign indices, then draw the bootstrap resamples.
Folds are dealt round-robin from the already-shuffled per-class orders and
consume no randomness of their own. Two calls with the same dataset order
and seed therefore produce identical plans on any platform.

Split sizing
------------
The test share is 25% rounded to nearest (n_test = floor(0.25 n + 0.5)),
allocated across classes by largest remainder. Each class with at least two
instances keeps at least one instance on each side of the split; datasets
too small to honor that get a smaller (possibly empty) test set and a
warning rather than an error, so degenerate corpora still produce reports.

Leakage rules
-------------
Imputation, standardization, instance weights, and the RFE mask are always
fitted on training rows only. Instance weighting applies only when the
active feature mask contains layer-3 features; the L1+L2 experiment is
therefore unweighted by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, Label, Layer, atomic_write_text
from .errors import ModelError, ValidationError
from .learn import (
    TrainedModel,
    build_design_matrix,
    decision_values,
    layer3_instance_weights,
    train_fda,
    train_svm,
)
from .rng import Xoshiro256

REPORT_SCHEMA_VERSION = "1"

SUBSET_L1L2 = "L1+L2"
SUBSET_ALL = "all"
SUBSET_RFE = "RFE"
SUBSETS = (SUBSET_L1L2, SUBSET_ALL, SUBSET_RFE)
MODEL_KINDS = ("fda", "svm")


@dataclass(frozen=True)
class EvalConfig:
    """Hyperparameters shared across the protocol; defaults per module docs."""

    beta: float = 1.0
    C: float = 1.0
    ridge_lambda: float = 1e-6
    tol: float = 1e-6
    max_iter: int = 10000
    rfe_step: int = 1
    folds: int = 10
    bootstraps: int = 100

    def snapshot(self) -> dict:
        return {
            "beta": self.beta,
            "C": self.C,
            "ridge_lambda": self.ridge_lambda,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "rfe_step": self.rfe_step,
            "folds": self.folds,
            "bootstraps": self.bootstraps,
        }


@dataclass
class SplitPlan:
    seed: int
    train: tuple  # sorted dataset indices
    test: tuple  # sorted dataset indices
    folds: tuple  # per fold: sorted tuple of dataset indices (partition of train)
    bootstraps: tuple  # per resample: tuple of train indices, as drawn
    warnings: list = field(default_factory=list)


def _allocate_test(class_sizes, n_test, warnings) -> list:
    """Largest-remainder split of n_test across classes, then floor/cap fixes."""
    n = sum(class_sizes)
    quotas = [s * n_test / n for s in class_sizes]
    alloc = [int(q) for q in quotas]
    leftovers = n_test - sum(alloc)
    by_fraction = sorted(
        range(len(class_sizes)), key=lambda c: (-(quotas[c] - alloc[c]), c)
    )
    for c in by_fraction[:leftovers]:
        alloc[c] += 1
    for c, size in enumerate(class_sizes):
        if size <= 1:
            if alloc[c] > 0:
                warnings.append(
                    "class too small to appear in the test split; kept in training"
                )
                alloc[c] = 0
        else:
            if alloc[c] == 0:
                warnings.append("test allocation bumped to include one of each class")
                alloc[c] = 1
            if alloc[c] >= size:
                warnings.append("test allocation capped to keep one of each class in training")
                alloc[c] = size - 1
    return alloc


def make_split_plan(
    dataset: Dataset, seed: int, folds: int = 10, bootstraps: int = 100
) -> SplitPlan:
    """Deterministic stratified split + fold + resample plan; see module docs."""
    n = len(dataset.instances)
    if n == 0:
        raise ValidationError("empty dataset", rule="empty")
    labels = dataset.labels()
    vuln = [i for i, lab in enumerate(labels) if lab is Label.VULNERABLE]
    benign = [i for i, lab in enumerate(labels) if lab is Label.BENIGN_FLAW]
    if not vuln or not benign:
        raise ModelError("split requires both classes")
    if folds < 2:
        raise ValidationError("folds must be at least 2", rule="folds")
    if bootstraps < 0:
        raise ValidationError("bootstraps must be non-negative", rule="bootstraps")

    warnings = []
    rng = Xoshiro256(seed)
    rng.shuffle(vuln)
    rng.shuffle(benign)

    n_test = int(0.25 * n + 0.5)
    alloc = _allocate_test([len(vuln), len(benign)], n_test, warnings)
    test = sorted(vuln[: alloc[0]] + benign[: alloc[1]])
    train_vuln = vuln[alloc[0] :]
    train_benign = benign[alloc[1] :]
    train = sorted(train_vuln + train_benign)

    min_class = min(len(train_vuln), len(train_benign))
    folds_eff = max(2, min(folds, min_class)) if min_class else 2
    if folds_eff != folds:
        warnings.append(f"folds reduced from {folds} to {folds_eff} for stratification")

    fold_lists = [[] for _ in range(folds_eff)]
    for k, idx in enumerate(train_vuln):
        fold_lists[k % folds_eff].append(idx)
    for k, idx in enumerate(train_benign):
        fold_lists[k % folds_eff].append(idx)
    fold_tuples = tuple(tuple(sorted(f)) for f in fold_lists)

    resamples = []
    m = len(train)
    for _ in range(bootstraps):
        resamples.append(tuple(train[rng.randbelow(m)] for _ in range(m)))

    return SplitPlan(
        seed=seed,
        train=tuple(train),
        test=tuple(test),
        folds=fold_tuples,
        bootstraps=tuple(resamples),
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Fitting helpers


def _mask_has_layer3(dataset: Dataset, mask) -> bool:
    return any(dataset.dictionary.get(name).layer is Layer.L3 for name in mask)


def fit_subset(dataset: Dataset, indices, mask, kind: str, config: EvalConfig) -> TrainedModel:
    """Train one model on ``dataset[indices]`` restricted to ``mask``.

    This is the single fitting path used by CV folds, the held-out test
    model, and bootstrap resamples, so leakage checks can re-drive it
    directly. Instance weights are applied only when the mask carries
    layer-3 features.
    """
    subset = dataset.subset(indices)
    if _mask_has_layer3(dataset, mask) and config.beta > 0:
        weights = layer3_instance_weights(subset, config.beta)
    else:
        weights = None
    matrix = build_design_matrix(subset, mask, weights)
    if kind == "fda":
        return train_fda(matrix, ridge_lambda=config.ridge_lambda)
    if kind == "svm":
        return train_svm(matrix, C=config.C, tol=config.tol, max_iter=config.max_iter)
    raise ValidationError(f"unknown model kind {kind!r}", rule="model_kind")


def accuracy(model: TrainedModel, dataset: Dataset, indices) -> float | None:
    if not indices:
        return None
    subset = dataset.subset(indices)
    values = decision_values(model, subset)
    truth = np.array([lab is Label.VULNERABLE for lab in subset.labels()])
    predicted = values >= 0
    return float((predicted == truth).mean())


# ---------------------------------------------------------------------------
# Recursive feature elimination


@dataclass
class RfeTrace:
    eliminated: tuple  # (feature name, rank starting at 1, |w| at elimination)
    selected: tuple  # surviving feature names, dictionary order
    curve: tuple  # (size, inner-CV accuracy or None), in visiting order
    warnings: list = field(default_factory=list)


def _cv_accuracy(dataset: Dataset, plan: SplitPlan, mask, kind, config, warnings) -> tuple:
    """(mean accuracy or None, per-fold accuracies) over the plan's folds."""
    train_set = set(plan.train)
    accs = []
    for f, fold in enumerate(plan.folds):
        inner = sorted(train_set - set(fold))
        inner_labels = {dataset.instances[i].label for i in inner}
        if len(inner_labels) < 2:
            warnings.append(f"fold {f}: single-class training portion; skipped")
            continue
        model = fit_subset(dataset, inner, mask, kind, config)
        acc = accuracy(model, dataset, list(fold))
        if acc is not None:
            accs.append(acc)
    mean = float(np.mean(accs)) if accs else None
    return mean, accs


def run_rfe(
    dataset: Dataset, kind: str, plan: SplitPlan, step: int = 1,
    config: EvalConfig | None = None,
) -> RfeTrace:
    """Backward elimination by |w|, sized by inner-CV accuracy.

    Each round trains on the full training portion over the surviving
    features, records the fold-CV accuracy of that feature-set size, and
    drops the ``step`` features with smallest |w| (ties drop the feature
    later in dictionary order first; rank 1 is the first feature dropped).
    The selected size maximizes inner-CV accuracy, smaller size winning
    ties. If no fold is evaluable at any size, everything is kept and the
    trace reports no eliminations.
    """
    config = config or EvalConfig()
    if step < 1:
        raise ValidationError("step must be at least 1", rule="rfe_step")
    names = dataset.dictionary.names()
    position = {name: i for i, name in enumerate(names)}
    current = list(names)
    warnings = []
    eliminated = []
    states = []  # (size, surviving tuple, accuracy)
    train = list(plan.train)

    while True:
        acc, _ = _cv_accuracy(dataset, plan, current, kind, config, warnings)
        states.append((len(current), tuple(current), acc))
        if len(current) == 1:
            break
        model = fit_subset(dataset, train, current, kind, config)
        magnitude = {name: abs(float(w)) for name, w in zip(model.features, model.w)}
        drop_order = sorted(current, key=lambda n: (magnitude[n], -position[n]))
        n_drop = min(step, len(current) - 1)
        for name in drop_order[:n_drop]:
            eliminated.append((name, len(eliminated) + 1, magnitude[name]))
            current.remove(name)

    usable = [(size, mask, acc) for size, mask, acc in states if acc is not None]
    if not usable:
        warnings.append("no evaluable folds at any size; keeping all features")
        return RfeTrace((), tuple(names), tuple((s, a) for s, _, a in states), warnings)
    best_size, best_mask, _ = max(usable, key=lambda t: (t[2], -t[0]))
    n_eliminated = len(names) - best_size
    trace_elims = tuple(eliminated[:n_eliminated])
    curve = tuple((s, a) for s, _, a in states)
    return RfeTrace(trace_elims, best_mask, curve, warnings)


# ---------------------------------------------------------------------------
# Grid cells and the experiment report


@dataclass
class CellResult:
    model_kind: str
    subset: str
    mean_acc: float | None
    fold_std: float | None
    test_acc: float | None
    ci: tuple | None
    selected_features: tuple | None = None
    warnings: list = field(default_factory=list)


def subset_mask(dataset: Dataset, subset: str, rfe_trace: RfeTrace | None = None):
    if subset == SUBSET_L1L2:
        return dataset.dictionary.layer_names(Layer.L1, Layer.L2)
    if subset == SUBSET_ALL:
        return dataset.dictionary.names()
    if subset == SUBSET_RFE:
        if rfe_trace is None:
            raise ValidationError("RFE subset requires a trace", rule="subset")
        return list(rfe_trace.selected)
    raise ValidationError(f"unknown subset {subset!r}", rule="subset")


def evaluate_cell(
    dataset: Dataset, kind: str, subset: str, plan: SplitPlan,
    config: EvalConfig | None = None, rfe_trace: RfeTrace | None = None,
) -> CellResult:
    """One grid cell: fold-CV accuracy, held-out accuracy, bootstrap CI.

    Fold models train on the training portion minus the fold; the held-out
    model trains on the whole training portion; resample models train on
    bootstrap draws of the training portion and are scored on the fixed
    held-out split. Single-class folds or resamples are skipped with a
    warning, never an error.
    """
    config = config or EvalConfig()
    warnings = []
    mask = subset_mask(dataset, subset, rfe_trace)
    if rfe_trace is not None and subset == SUBSET_RFE:
        warnings.extend(rfe_trace.warnings)

    mean_acc, fold_accs = _cv_accuracy(dataset, plan, mask, kind, config, warnings)
    fold_std = float(np.std(fold_accs)) if fold_accs else None

    train = list(plan.train)
    test = list(plan.test)
    test_acc = None
    if test:
        held_out_model = fit_subset(dataset, train, mask, kind, config)
        test_acc = accuracy(held_out_model, dataset, test)
    else:
        warnings.append("empty test split; no held-out accuracy")

    ci = None
    if test and plan.bootstraps:
        boot_accs = []
        for r, resample in enumerate(plan.bootstraps):
            resample_labels = {dataset.instances[i].label for i in resample}
            if len(resample_labels) < 2:
                warnings.append(f"bootstrap {r}: single-class resample; skipped")
                continue
            model = fit_subset(dataset, list(resample), mask, kind, config)
            acc = accuracy(model, dataset, test)
            if acc is not None:
                boot_accs.append(acc)
        if boot_accs:
            lo, hi = np.percentile(boot_accs, [2.5, 97.5])
            ci = (float(lo), float(hi))

    selected = tuple(rfe_trace.selected) if subset == SUBSET_RFE and rfe_trace else None
    return CellResult(kind, subset, mean_acc, fold_std, test_acc, ci, selected, warnings)


@dataclass
class ExperimentReport:
    seed: int
    cells: list
    warnings: list
    config: dict


def run_table1_grid(
    dataset: Dataset, seed: int, config: EvalConfig | None = None
) -> ExperimentReport:
    """All six cells under one shared split plan (RFE run once per model kind)."""
    config = config or EvalConfig()
    plan = make_split_plan(dataset, seed, folds=config.folds, bootstraps=config.bootstraps)
    warnings = list(plan.warnings)
    cells = []
    for kind in MODEL_KINDS:
        trace = run_rfe(dataset, kind, plan, step=config.rfe_step, config=config)
        for subset in SUBSETS:
            cell = evaluate_cell(dataset, kind, subset, plan, config,
                                 rfe_trace=trace if subset == SUBSET_RFE else None)
            cells.append(cell)
    for cell in cells:
        warnings.extend(
            f"{cell.model_kind}/{cell.subset}: {w}" for w in dict.fromkeys(cell.warnings)
        )
    return ExperimentReport(seed=seed, cells=cells, warnings=warnings,
                            config=config.snapshot())


def report_to_json_dict(report: ExperimentReport) -> dict:
    cells = []
    for cell in report.cells:
        obj = {
            "model": cell.model_kind,
            "subset": cell.subset,
            "mean_acc": cell.mean_acc,
            "fold_std": cell.fold_std,
            "test_acc": cell.test_acc,
            "ci": list(cell.ci) if cell.ci is not None else None,
        }
        if cell.selected_features is not None:
            obj["selected_features"] = list(cell.selected_features)
        cells.append(obj)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": report.seed,
        "cells": cells,
        "warnings": list(report.warnings),
        "config": report.config,
    }


def report_to_json(report: ExperimentReport) -> str:
    return json.dumps(report_to_json_dict(report), indent=2) + "\n"


def save_report(report: ExperimentReport, path) -> None:
    atomic_write_text(path, report_to_json(report))


def render_table(report: ExperimentReport) -> str:
    """Plain-text grid: rows fda/svm, columns L1+L2 / all / RFE (mean CV acc)."""
    def fmt(value):
        return "  n/a" if value is None else f"{value:0.2f}"

    by_cell = {(c.model_kind, c.subset): c for c in report.cells}
    lines = [f"seed {report.seed}  (mean CV accuracy)"]
    header = f"{'model':<6}" + "".join(f"{s:>8}" for s in SUBSETS)
    lines.append(header)
    for kind in MODEL_KINDS:
        row = f"{kind.upper():<6}"
        for subset in SUBSETS:
            cell = by_cell.get((kind, subset))
            row += f"{fmt(cell.mean_acc if cell else None):>8}"
        lines.append(row)
    return "\n".join(lines) + "\n"
