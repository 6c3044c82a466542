"""Accuracy matrices, forgetting, report files and 2-D projections."""
from __future__ import annotations

import csv
import io
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from frida.dannib import classify
from frida.errors import ContractError

FORGETTING_MODES = ("first_seen", "paper_literal")


def accuracy(model, test_set) -> float:
    """Fraction of ``test_set`` rows classified correctly. No domain id is used."""
    if test_set.labels is None:
        raise ContractError(f"test set for domain {test_set.domain} has no labels")
    pred, _ = classify(model, test_set.features)
    return float(np.mean(pred == test_set.labels))


def _threads():
    try:
        return max(1, int(os.environ.get("FRIDA_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(model, test_sets) -> list[float]:
    """One accuracy-matrix row: the model's accuracy on each given test set."""
    test_sets = list(test_sets)
    if any(ts is None for ts in test_sets):
        raise ContractError("missing test set")
    n = _threads()
    if n == 1 or len(test_sets) == 1:
        return [accuracy(model, ts) for ts in test_sets]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda ts: accuracy(model, ts), test_sets))


@dataclass
class AccuracyMatrix:
    """``entries[(k, tau)]``: accuracy at time ``k`` on domain ``tau``'s test set."""

    entries: dict = field(default_factory=dict)

    def set(self, k, tau, acc):
        if k < tau:
            raise ContractError(f"time {k} precedes domain {tau}")
        if not 0.0 <= acc <= 1.0 and not np.isnan(acc):
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self.entries[(int(k), int(tau))] = float(acc)

    def add_row(self, k, accs):
        for tau, a in enumerate(accs):
            self.set(k, tau, a)

    def get(self, k, tau):
        return self.entries.get((k, tau))

    @property
    def T(self) -> int:
        return max(k for k, _ in self.entries)

    @property
    def domains(self) -> list[int]:
        return sorted({tau for _, tau in self.entries})

    def first_seen(self, tau) -> int:
        ks = [k for k, t in self.entries if t == tau]
        if not ks:
            raise ContractError(f"domain {tau} has no entries")
        return min(ks)

    def history(self, tau) -> list[float]:
        """Accuracies of ``tau`` from first evaluation to ``T``; raises on gaps."""
        start = self.first_seen(tau)
        out = []
        for k in range(start, self.T + 1):
            a = self.get(k, tau)
            if a is None:
                raise ContractError(f"matrix incomplete: no entry for time {k}, domain {tau}")
            out.append(a)
        return out

    def rows(self):
        return sorted(self.entries.items(), key=lambda kv: (kv[0][1], kv[0][0]))


def forgetting(matrix: AccuracyMatrix, tau: int, mode: str = "first_seen") -> float:
    """Average per-step accuracy change of domain ``tau`` up to the final time.

    ``first_seen``: ``(A[T][tau] - A[f][tau]) / (T - f)`` with ``f`` the first
    evaluation time, 0 when ``T == f``. ``paper_literal``: the sum started
    one step early, ``(A[T][tau] - A[tau-1][tau]) / (T - tau + 1)``, which needs an entry
    before the domain is seen and so errors on ordinary matrices.
    Negative values mean accuracy dropped.
    """
    if mode not in FORGETTING_MODES:
        raise ValueError(f"mode must be one of {FORGETTING_MODES}")
    T = matrix.T
    if mode == "paper_literal":
        before = matrix.get(tau - 1, tau)
        if before is None or matrix.get(T, tau) is None:
            raise ContractError(f"undefined entry A[{tau - 1}][{tau}] required by the literal formula")
        return (matrix.get(T, tau) - before) / (T - tau + 1)
    hist = matrix.history(tau)
    if len(hist) == 1:
        return 0.0
    return (hist[-1] - hist[0]) / (len(hist) - 1)


@dataclass
class MetricsReport:
    domains: list
    average_accuracy: dict
    forgetting: dict
    source_average: dict
    target_average: dict
    T: int

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("average_accuracy", "forgetting"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return json.dumps(d, indent=2, sort_keys=True)


def report(matrix: AccuracyMatrix, mode: str = "first_seen") -> MetricsReport:
    if not matrix.entries:
        raise ContractError("empty accuracy matrix")
    domains = matrix.domains
    avg = {tau: float(np.mean(matrix.history(tau))) for tau in domains}
    fgt = {tau: forgetting(matrix, tau, mode) for tau in domains}
    targets = [t for t in domains if t >= 1]
    src = {"accuracy": avg[0], "forgetting": fgt[0]} if 0 in avg else {}
    tgt = ({"accuracy": float(np.mean([avg[t] for t in targets])),
            "forgetting": float(np.mean([fgt[t] for t in targets]))} if targets else {})
    return MetricsReport(domains, avg, fgt, src, tgt, matrix.T)


def metrics_csv(matrix: AccuracyMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "time", "accuracy"])
    for (k, tau), a in matrix.rows():
        w.writerow([tau, k, repr(a)])
    return buf.getvalue()


def read_metrics_csv(text) -> AccuracyMatrix:
    m = AccuracyMatrix()
    for row in csv.DictReader(io.StringIO(text)):
        m.set(int(row["time"]), int(row["domain"]), float(row["accuracy"]))
    return m


def write_reports(matrix: AccuracyMatrix, out_dir, mode="first_seen") -> MetricsReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = report(matrix, mode)
    (out / "metrics.csv").write_text(metrics_csv(matrix))
    (out / "report.json").write_text(rep.to_json() + "\n")
    return rep


def project2d(features, labels=None):
    """Scores on the top two principal axes of ``features``.

    Each axis is oriented so its largest-magnitude loading is positive. If the
    centered data has rank below 2, missing axes are zero-filled with a
    warning. Returns ``(coords, axes, variances)``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ContractError("need at least 3 samples to project")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    k = min(2, vecs.shape[1])
    axes = np.zeros((x.shape[1], 2))
    axes[:, :k] = vecs[:, :k]
    variances = np.zeros(2)
    variances[:k] = np.maximum(vals[:k], 0.0)
    tol = max(vals[0], 0.0) * 1e-12 * x.shape[1]
    for j in range(2):
        if variances[j] <= tol:
            if j < k:
                warnings.warn("data has rank < 2; padding projection axis with zeros", stacklevel=2)
            axes[:, j] = 0.0
            variances[j] = 0.0
            continue
        col = axes[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            axes[:, j] = -col
    return xc @ axes, axes, variances


def write_projection(path, coords, labels, domains, real_or_synth) -> None:
    n = coords.shape[0]
    labels = np.broadcast_to(np.asarray(labels), (n,))
    domains = np.broadcast_to(np.asarray(domains), (n,))
    kinds = np.broadcast_to(np.asarray(real_or_synth), (n,))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label", "domain", "real_or_synth"])
        for (a, b), y, t, s in zip(coords, labels, domains, kinds):
            w.writerow([repr(float(a)), repr(float(b)), int(y), int(t), s])
