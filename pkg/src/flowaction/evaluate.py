"""Per-account splits, metrics, the cluster-count sweep and full experiments."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .cluster import ClusterModel, DistanceConfig, Hierarchy
from .config import ExperimentConfig
from .features import ActionInstance, ActionWindow, build_dataset, format_dataset, windows_from_labels
from .forest import ForestModel, ForestParams, train
from .ingest import DeviceConfig, assemble_flows, read_capture, read_labels
from .preprocess import preprocess, read_owner_map

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Split:
    train: list
    test: list
    validation: list = field(default_factory=list)

    def accounts(self, part: str) -> set[str]:
        return {w.account for w in getattr(self, part)}


def split_by_account(windows: Iterable, test_accounts: Iterable[str], validation_accounts: Iterable[str] = ()) -> Split:
    """Route windows by account; accounts in neither set go to training."""
    test, val = set(test_accounts), set(validation_accounts)
    if not test:
        raise ValueError("the test account set is empty")
    if test & val:
        raise ValueError(f"accounts in both test and validation sets: {sorted(test & val)}")
    split = Split([], [], [])
    for w in windows:
        if w.account is None:
            raise ValueError("every window needs an account")
        if w.account in test:
            split.test.append(w)
        elif w.account in val:
            split.validation.append(w)
        else:
            split.train.append(w)
    return split


@dataclass
class EvalReport:
    labels: list[str]
    confusion: np.ndarray
    precision: list[float]
    recall: list[float]
    f_measure: list[float]
    support: list[int]

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f(self) -> float:
        return float(np.mean(self.f_measure))

    def confusion_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["true\\predicted"] + self.labels)
        for lab, row in zip(self.labels, self.confusion):
            writer.writerow([lab] + [int(v) for v in row])
        return out.getvalue()

    def text(self) -> str:
        width = max([len("Average")] + [len(lab) for lab in self.labels])
        lines = [f"{'Action':<{width}}  Precision  Recall  F-measure  Support"]
        for lab, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f_measure, self.support):
            lines.append(f"{lab:<{width}}  {p:9.4f}  {r:6.4f}  {f:9.4f}  {s:7d}")
        lines.append(f"{'Average':<{width}}  {self.macro_precision:9.4f}  {self.macro_recall:6.4f}  "
                     f"{self.macro_f:9.4f}  {sum(self.support):7d}")
        return "\n".join(lines) + "\n"


def metrics(confusion, labels: Optional[Sequence[str]] = None) -> EvalReport:
    """Per-class precision/recall/F from a confusion matrix (rows = truth).

    A class never predicted has precision 0; a class with no true instances
    has recall 0; F is 0 whenever precision + recall is 0.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    labels = list(labels) if labels is not None else [str(i) for i in range(cm.shape[0])]
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return EvalReport(labels, cm, precision.tolist(), recall.tolist(), f.tolist(), actual.astype(int).tolist())


def confusion_matrix(y_true: Sequence[str], y_pred: Sequence[str], labels: Optional[Sequence[str]] = None):
    labels = list(labels) if labels is not None else sorted(set(y_true) | set(y_pred))
    index = {lab: i for i, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[index[t], index[p]] += 1
    return cm, labels


def evaluate(forest: ForestModel, instances: Sequence[ActionInstance]) -> EvalReport:
    y_true = [i.label for i in instances]
    y_pred = forest.predict_many([i.features for i in instances])
    cm, labels = confusion_matrix(y_true, y_pred)
    return metrics(cm, labels)


def training_flows(windows: Sequence[ActionWindow]) -> list:
    return [f for w in windows for f in w.flows]


def sweep_clusters(
    train_windows: Sequence[ActionWindow],
    validation_windows: Sequence[ActionWindow],
    cfg: DistanceConfig,
    k_range: Sequence[int],
    params: ForestParams,
    hierarchy: Optional[Hierarchy] = None,
    jobs: int = 1,
) -> tuple[int, list[tuple[int, float]]]:
    """Validation macro-F for each cluster count; best is the smallest maximiser."""
    if not k_range:
        raise ValueError("k_range is empty")
    if not validation_windows:
        raise ValueError("no validation windows for the sweep")
    if hierarchy is None:
        hierarchy = Hierarchy(training_flows(train_windows), cfg)
    too_big = [k for k in k_range if k > len(hierarchy)]
    if too_big:
        raise ValueError(f"k values {too_big} exceed the {len(hierarchy)} training flows")
    curve = []
    for k in k_range:
        model = hierarchy.model(k)
        forest = train(build_dataset(train_windows, model), params, jobs=jobs)
        score = evaluate(forest, build_dataset(validation_windows, model)).macro_f
        logger.info("k=%d validation macro-F %.4f", k, score)
        curve.append((k, score))
    best_k = max(curve, key=lambda kv: (kv[1], -kv[0]))[0]
    return best_k, curve


def curve_csv(curve: Sequence[tuple[int, float]]) -> str:
    return "k,macro_f\n" + "".join(f"{k},{f:.10f}\n" for k, f in curve)


# Experiment driver ----------------------------------------------------------

def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (OSError, ValueError, KeyError) as exc:
                raise StageError(name, exc) from exc
        return inner
    return wrap


@_stage("ingest")
def load_windows(cfg: ExperimentConfig, captures=None, labels=None) -> list[ActionWindow]:
    """Capture + sidecar files -> filtered, labelled action windows."""
    captures = list(captures if captures is not None else cfg.captures)
    labels = list(labels if labels is not None else cfg.labels)
    if len(labels) != len(captures):
        raise ValueError("every capture needs a label sidecar")
    for p in captures + labels + [cfg.owner_map]:
        if not Path(p).exists():
            raise FileNotFoundError(f"input file not found: {p}")
    owners = read_owner_map(cfg.owner_map, cfg.target_owners)
    device = DeviceConfig(cfg.device_ip, cfg.timeout)
    known = set(cfg.actions) if cfg.actions else None
    windows = []
    for n, (cap, lab) in enumerate(zip(captures, labels)):
        flows = preprocess(assemble_flows(read_capture(cap), device), owners)
        ws = windows_from_labels(flows, read_labels(lab), known, gap=cfg.timeout)
        if len(captures) > 1:
            for w in ws:
                w.window_id = f"{n}:{w.window_id}"
        windows.extend(ws)
        logger.info("%s: %d filtered flows in %d windows", cap, len(flows), len(ws))
    return windows


@dataclass
class ExperimentResult:
    report: EvalReport
    k: int
    curve: list[tuple[int, float]]
    cluster_model: ClusterModel
    forest: ForestModel
    split: Split


def fit_pipeline(cfg: ExperimentConfig, windows: Sequence[ActionWindow], jobs: int = 1):
    """Cluster the training flows (sweeping k if configured) and train the forest."""
    split = _stage("split")(split_by_account)(windows, cfg.test_accounts, cfg.validation_accounts)
    if split.accounts("train") & split.accounts("test"):
        raise StageError("split", ValueError("train and test accounts overlap"))
    try:
        hierarchy = Hierarchy(training_flows(split.train), cfg.distance)
    except ValueError as exc:
        raise StageError("cluster", exc) from exc
    curve: list[tuple[int, float]] = []
    if cfg.k_values:
        best_k, curve = _stage("sweep")(sweep_clusters)(
            split.train, split.validation, cfg.distance, cfg.k_values, cfg.forest, hierarchy, jobs)
        k = best_k if cfg.k is None else cfg.k
    else:
        k = cfg.k
    if k > len(hierarchy):
        raise StageError("cluster", ValueError(f"k={k} exceeds {len(hierarchy)} training flows"))
    model = hierarchy.model(k)
    train_set = _stage("features")(build_dataset)(split.train, model)
    forest = _stage("train")(train)(train_set, cfg.forest, jobs)
    return split, hierarchy, model, forest, curve, train_set


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, windows: Optional[Sequence[ActionWindow]] = None) -> ExperimentResult:
    """Ingest, cluster, featurise, train and test; write all artefacts."""
    if windows is None:
        windows = load_windows(cfg)
    split, _, model, forest, curve, train_set = fit_pipeline(cfg, windows, jobs)
    test_set = _stage("features")(build_dataset)(split.test, model)
    report = _stage("test")(evaluate)(forest, test_set)

    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        header = (f"distance config: {cfg.distance.name}\nclusters: {model.k}\nseed: {cfg.seed}\n"
                  f"windows: train={len(split.train)} validation={len(split.validation)} test={len(split.test)}\n"
                  f"test accounts: {', '.join(sorted(split.accounts('test')))}\n\n")
        (out / "report.txt").write_text(header + report.text(), encoding="utf-8")
        (out / "confusion.csv").write_text(report.confusion_csv(), encoding="utf-8")
        if curve:
            (out / "curve.csv").write_text(curve_csv(curve), encoding="utf-8")
        model.save(out / "cluster_model.json")
        forest.save(out / "forest_model.json")
        (out / "train_dataset.csv").write_text(format_dataset(train_set, model.k), encoding="utf-8")
        (out / "test_dataset.csv").write_text(format_dataset(test_set, model.k), encoding="utf-8")
    except OSError as exc:
        raise StageError("report", exc) from exc
    return ExperimentResult(report, model.k, curve, model, forest, split)
