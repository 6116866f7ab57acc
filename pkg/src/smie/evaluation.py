"""Zero-shot inference on unseen classes and report export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import DEFAULT_FRAMES, ClassSplit, DataError, Dataset, preprocess
from .encoder import FrameEncoderParams, visual_feature
from .nn import Mlp3Params, ShapeError, mlp_forward


def score(model: Mlp3Params, v: np.ndarray, a: np.ndarray) -> float:
    x = np.concatenate([np.ravel(v), np.ravel(a)])
    if x.shape[0] != model.input_dim:
        raise ShapeError(f"pair has {x.shape[0]} dims, model expects {model.input_dim}")
    return float(mlp_forward(model, x[None, :])[0][0])


def score_matrix(model: Mlp3Params, visual: np.ndarray, semantic: np.ndarray) -> np.ndarray:
    """N x U scores of every visual feature against every semantic vector."""
    n, u = visual.shape[0], semantic.shape[0]
    x = np.concatenate([np.repeat(visual, u, axis=0), np.tile(semantic, (n, 1))], axis=1)
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"pair has {x.shape[1]} dims, model expects {model.input_dim}")
    return mlp_forward(model, x)[0].reshape(n, u)


def argmax_lowest_id(scores: Sequence[float], class_ids: Sequence[int]) -> int:
    """Class with the highest score; ties go to the smallest class id."""
    if len(class_ids) == 0:
        raise ValueError("no candidate classes")
    best = max(zip(scores, (-c for c in class_ids)))
    return -best[1]


def predict(model: Mlp3Params, v: np.ndarray, unseen_embeddings) -> int:
    """``unseen_embeddings``: mapping or sequence of (class_id, vector) pairs."""
    items = list(unseen_embeddings.items() if isinstance(unseen_embeddings, dict) else unseen_embeddings)
    if not items:
        raise ValueError("empty unseen set")
    ids = [c for c, _ in items]
    scores = score_matrix(model, np.asarray(v)[None, :], np.stack([a for _, a in items]))[0]
    return argmax_lowest_id(scores, ids)


@dataclass
class EvalReport:
    class_ids: list[int]
    class_names: list[str]
    sample_ids: list[int]
    true_classes: list[int]
    predicted: list[int]
    scores: np.ndarray  # N x U, columns follow class_ids
    confusion: np.ndarray  # U x U, rows true, columns predicted

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def top1_accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def per_class(self) -> dict[int, float]:
        rows = self.confusion.sum(axis=1)
        return {c: float(self.confusion[i, i] / rows[i]) if rows[i] else float("nan")
                for i, c in enumerate(self.class_ids)}


def build_report(scores: np.ndarray, true_classes, class_ids, sample_ids, class_names=None) -> EvalReport:
    """Tally predictions from a precomputed score table (columns follow ``class_ids``)."""
    order = np.argsort(class_ids)
    class_ids = [int(class_ids[i]) for i in order]
    scores = np.asarray(scores, dtype=np.float64)[:, order]
    names = [str(c) for c in class_ids] if class_names is None else [class_names[i] for i in order]
    col = {c: i for i, c in enumerate(class_ids)}
    predicted = [argmax_lowest_id(row, class_ids) for row in scores]
    confusion = np.zeros((len(class_ids), len(class_ids)), dtype=np.int64)
    for t, p in zip(true_classes, predicted):
        confusion[col[int(t)], col[p]] += 1
    return EvalReport(class_ids, names, [int(s) for s in sample_ids], [int(t) for t in true_classes],
                      predicted, scores, confusion)


def evaluate_features(score_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], visual: np.ndarray,
                      true_classes, sample_ids, embeddings: dict, class_names=None) -> EvalReport:
    """``score_fn(visual, semantic)`` returns the N x U score table."""
    ids = sorted(embeddings)
    semantic = np.stack([embeddings[c] for c in ids])
    names = None if class_names is None else [class_names[c] for c in ids]
    return build_report(score_fn(visual, semantic), true_classes, ids, sample_ids, names)


def evaluate(model: Mlp3Params, dataset: Dataset, split: ClassSplit, encoder: FrameEncoderParams,
             frames: int = DEFAULT_FRAMES) -> EvalReport:
    """Top-1 zero-shot evaluation on unseen-class test samples (no masking)."""
    unseen = sorted(split.unseen)
    samples = dataset.samples(unseen, subset="test")
    if not samples:
        raise DataError("no unseen-class test samples")
    visual = np.stack([visual_feature(encoder, preprocess(dataset.sequence(s.id), frames)) for s in samples])
    embeddings = {c: dataset.embedding(c) for c in unseen}
    names = {c: dataset.manifest.class_name(c) for c in unseen}
    return evaluate_features(lambda v, a: score_matrix(model, v, a), visual,
                             [s.class_id for s in samples], [s.id for s in samples], embeddings, names)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def export_reports(report: EvalReport, out_dir, extra_summary: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "confusion.csv", out / "per_class.csv", out / "scores.csv", out / "summary.json"]
    name_of = dict(zip(report.class_ids, report.class_names))

    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted"] + report.class_names)
        for name, row in zip(report.class_names, report.confusion):
            w.writerow([name] + [int(x) for x in row])

    counts = report.confusion.sum(axis=1)
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "class_name", "n_samples", "accuracy"])
        for i, c in enumerate(report.class_ids):
            w.writerow([c, name_of[c], int(counts[i]), _fmt(report.per_class[c])])

    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "true_class", "predicted_class"] + [f"score_{n}" for n in report.class_names])
        for sid, t, p, row in zip(report.sample_ids, report.true_classes, report.predicted, report.scores):
            w.writerow([sid, name_of[t], name_of[p]] + [_fmt(x) for x in row])

    summary = {
        "top1_accuracy": round(report.top1_accuracy, 6),
        "n_samples": report.total,
        "unseen_classes": report.class_ids,
        "per_class": {str(c): round(acc, 6) for c, acc in report.per_class.items()},
    }
    if extra_summary:
        summary.update(extra_summary)
    paths[3].write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return paths
