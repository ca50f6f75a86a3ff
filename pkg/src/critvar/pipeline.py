"""Dataset assembly, leave-one-program-out training, metrics and sweeps."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SWEEPS, ModelConfig
from .dfg import EnhancedDFG
from .models import MODELS, VariableSample
from .slicing import trees_for_instance

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("model", "setting", "accuracy", "precision", "recall", "f1", "seconds")
_AXIS_FIELD = {"layers": "layers", "depth": "k", "pooling": "pooling", "mcd": "use_mcd"}


@dataclass
class ProgramEntry:
    name: str
    graph: EnhancedDFG
    samples: list

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=bool)


@dataclass
class Corpus:
    programs: list
    model: str
    k: int
    use_mcd: bool

    def __len__(self):
        return len(self.programs)

    @property
    def counts(self) -> dict:
        return {p.name: len(p.samples) for p in self.programs}


def assemble(sources, model: str = "treelstm", k: int = 15, use_mcd: bool = True,
             follow_c: bool = True) -> Corpus:
    """Turn built programs into labeled samples for ``model``.

    ``sources`` yields objects with ``name`` and ``graph`` (an :class:`EnhancedDFG`
    whose instances carry labels). Only labeled instances become samples;
    ``follow_c`` controls whether define-flow slicing walks C edges backward.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    programs = []
    for src in sources:
        g = src.graph if use_mcd else src.graph.without_cdp()
        samples = []
        for inst in sorted(g.labels):
            vnodes = tuple(g.instances.get(inst, ()))
            if not vnodes:
                continue
            trees = trees_for_instance(g, inst, k, follow_c).trees if model == "treelstm" else None
            samples.append(VariableSample(src.name, inst, g, vnodes, trees, bool(g.labels[inst]),
                                          g.names.get(inst)))
        if not samples:
            raise ValueError(f"program {src.name!r} has no labeled variable instances")
        programs.append(ProgramEntry(src.name, g, samples))
    return Corpus(programs, model, k, use_mcd)


def folds(corpus: Corpus) -> list:
    """Leave-one-program-out splits as ``(train entries, test entry)``."""
    if len(corpus.programs) < 2:
        raise ValueError("leave-one-program-out needs at least 2 programs")
    return [([p for j, p in enumerate(corpus.programs) if j != i], test)
            for i, test in enumerate(corpus.programs)]


@dataclass
class FoldResult:
    held_out: str
    tp: int
    tn: int
    fp: int
    fn: int
    loss_curve: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self):
        return {"held_out": self.held_out, "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "loss_curve": list(self.loss_curve), "seconds": self.seconds}


def confusion(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    return (int(np.sum(y_true & y_pred)), int(np.sum(~y_true & ~y_pred)),
            int(np.sum(~y_true & y_pred)), int(np.sum(y_true & ~y_pred)))


def make_estimator(config: ModelConfig):
    return MODELS[config.model](**config.estimator_params())


def train(fold, config: ModelConfig):
    """Fit on the fold's training programs, score the held-out one."""
    train_entries, test = fold
    t0 = time.perf_counter()
    X = [s for p in train_entries for s in p.samples]
    est = make_estimator(config)
    est.fit(X, [s.label for s in X])
    pred = est.predict(test.samples)
    tp, tn, fp, fn = confusion(test.labels, pred)
    result = FoldResult(test.name, tp, tn, fp, fn, list(est.loss_curve_), time.perf_counter() - t0)
    log.info("fold %s: tp=%d tn=%d fp=%d fn=%d (%.1fs)", test.name, tp, tn, fp, fn, result.seconds)
    return est, result


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def to_dict(self):
        return {k: getattr(self, k) for k in ("accuracy", "precision", "recall", "f1", "tp", "tn", "fp", "fn")}


def _ratio(a, b):
    return a / b if b else 0.0


def aggregate(results) -> MetricsReport:
    """Sum confusion counts over folds, then compute metrics (0/0 counts as 0)."""
    results = list(results)
    if not results:
        raise ValueError("aggregate needs at least one fold result")
    tp = sum(r.tp for r in results)
    tn = sum(r.tn for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f1 = _ratio(2 * p * r, p + r)
    return MetricsReport(_ratio(tp + tn, tp + tn + fp + fn), p, r, f1, tp, tn, fp, fn)


def evaluate(sources, config: ModelConfig, corpus: Optional[Corpus] = None):
    """Run every leave-one-program-out fold; returns ``(report, fold results)``."""
    if corpus is None:
        corpus = assemble(sources, config.model, config.k, config.use_mcd, config.slice_follow_c)
    results = [train(f, config)[1] for f in folds(corpus)]
    return aggregate(results), results


@dataclass
class SweepRow:
    model: str
    setting: str
    report: MetricsReport
    seconds: float
    folds: list = field(default_factory=list)

    def as_csv(self):
        r = self.report
        return [self.model, self.setting, f"{r.accuracy:.6f}", f"{r.precision:.6f}",
                f"{r.recall:.6f}", f"{r.f1:.6f}", f"{self.seconds:.2f}"]


def sweep(sources, config: ModelConfig, axis: str, values=None) -> list:
    """Re-run all folds for each setting of ``axis`` (layers, depth, pooling or mcd)."""
    if axis not in SWEEPS:
        raise ValueError(f"axis must be one of {tuple(SWEEPS)}, got {axis!r}")
    sources = list(sources)
    rows = []
    cache = {}
    for value in (SWEEPS[axis] if values is None else values):
        cfg = config.with_(**{_AXIS_FIELD[axis]: value})
        key = (cfg.model, cfg.k, cfg.use_mcd, cfg.slice_follow_c)
        if key not in cache:
            cache[key] = assemble(sources, *key)
        t0 = time.perf_counter()
        report, results = evaluate(sources, cfg, cache[key])
        setting = f"{axis}={str(value).lower() if isinstance(value, bool) else value}"
        rows.append(SweepRow(cfg.model, setting, report, time.perf_counter() - t0, results))
        log.info("%s %s: acc=%.4f f1=%.4f", cfg.model, setting, report.accuracy, report.f1)
    return rows


def write_results(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow(row.as_csv())


def read_results(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, config: ModelConfig, **extra) -> None:
    doc = {"config": config.to_dict(), "seed": config.seed, **extra}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
