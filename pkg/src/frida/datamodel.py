"""Feature datasets, domain codes, splits and the dataset text format."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from frida.errors import CapacityError, ContractError, ParseError, ShapeError

DEFAULT_CODE_WIDTH = 3
HEADER_MAGIC = "FRIDA-DS"
HEADER_VERSION = "v1"
UNLABELED = -1


def encode_domain(tau: int, width: int = DEFAULT_CODE_WIDTH) -> np.ndarray:
    """Little-endian binary code of ``tau`` as 0/1 floats (bit 0 first)."""
    if tau < 0:
        raise ValueError(f"domain index must be non-negative, got {tau}")
    if tau >= 1 << width:
        raise CapacityError(
            f"domain {tau} does not fit in a {width}-bit code; "
            f"configure domain.width >= {int(tau).bit_length()}")
    return np.array([(tau >> i) & 1 for i in range(width)], dtype=np.float64)


def encode_domains(taus, width: int = DEFAULT_CODE_WIDTH) -> np.ndarray:
    taus = np.asarray(taus, dtype=np.int64)
    if taus.size and (taus.min() < 0 or taus.max() >= 1 << width):
        bad = int(taus.max())
        raise CapacityError(
            f"domain {bad} does not fit in a {width}-bit code; "
            f"configure domain.width >= {bad.bit_length()}")
    return ((taus[:, None] >> np.arange(width)) & 1).astype(np.float64)


def one_hot(y: int, num_classes: int) -> np.ndarray:
    if not 0 <= y < num_classes:
        raise IndexError(f"class {y} outside [0, {num_classes})")
    v = np.zeros(num_classes)
    v[y] = 1.0
    return v


def one_hot_rows(ys, num_classes: int) -> np.ndarray:
    ys = np.asarray(ys, dtype=np.int64)
    if ys.size and (ys.min() < 0 or ys.max() >= num_classes):
        raise IndexError(f"class index outside [0, {num_classes})")
    out = np.zeros((ys.size, num_classes))
    out[np.arange(ys.size), ys] = 1.0
    return out


@dataclass(frozen=True)
class DomainId:
    tau: int
    width: int = DEFAULT_CODE_WIDTH

    def __post_init__(self):
        encode_domain(self.tau, self.width)  # validates capacity

    @property
    def code(self) -> np.ndarray:
        return encode_domain(self.tau, self.width)


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """``n x d`` features with optional labels, belonging to one domain.

    ``hidden`` marks labels that exist only for evaluation (synthetic target
    domains). Training code must go through :meth:`training_view`, which drops
    them.
    """

    features: np.ndarray
    labels: np.ndarray | None
    domain: int
    num_classes: int
    hidden: bool = False

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {x.shape}")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} rows")
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise ContractError(f"label outside [0, {self.num_classes})")
            object.__setattr__(self, "labels", y)
        elif self.hidden:
            raise ContractError("hidden labels require labels")
        if self.domain < 0:
            raise ContractError("domain index must be non-negative")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None and not self.hidden

    def training_view(self) -> FeatureDataset:
        if self.hidden:
            return replace(self, labels=None, hidden=False)
        return self

    def evaluation_view(self) -> FeatureDataset:
        if self.labels is None:
            raise ContractError(f"domain {self.domain} has no labels to evaluate against")
        return replace(self, hidden=False)

    def subset(self, idx) -> FeatureDataset:
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx],
                       labels=None if self.labels is None else self.labels[idx])

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise ContractError("unlabeled dataset")
        return np.bincount(self.labels, minlength=self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        if (self.domain, self.num_classes, self.hidden) != (other.domain, other.num_classes, other.hidden):
            return False
        if not np.array_equal(self.features, other.features):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)

    __hash__ = None


def concat(datasets, domain=None) -> FeatureDataset:
    """Stack labeled datasets into one; domain defaults to the first's."""
    datasets = list(datasets)
    if not datasets:
        raise ContractError("nothing to concatenate")
    first = datasets[0]
    if any(ds.labels is None for ds in datasets):
        raise ContractError("concat requires labeled datasets")
    return FeatureDataset(
        np.vstack([ds.features for ds in datasets]),
        np.concatenate([ds.labels for ds in datasets]),
        first.domain if domain is None else domain,
        first.num_classes)


@dataclass(frozen=True)
class EpisodeSpec:
    """Episode order: a labeled source followed by unlabeled targets."""

    sources: tuple
    num_classes: int
    d: int
    seed: int = 0

    def __post_init__(self):
        if not self.sources:
            raise ContractError("episode needs a source dataset")
        for i, ds in enumerate(self.sources):
            if ds.d != self.d or ds.num_classes != self.num_classes:
                raise ContractError(f"dataset {i} does not share d={self.d}, C={self.num_classes}")
            if (i == 0) != ds.labeled:
                raise ContractError("exactly the first dataset must be labeled")

    @property
    def T(self) -> int:
        return len(self.sources) - 1


def _test_count(n, fraction):
    return min(n - 1, max(1, int(round(n * fraction))))


def split(dataset: FeatureDataset, test_fraction: float, rng):
    """Deterministic train/test split, stratified by class when labels exist.

    Hidden labels are used for stratification too; they are part of the
    evaluation view and never leave this module as training labels.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if dataset.n < 2:
        raise ContractError("need at least two samples to split")
    if dataset.labels is None:
        perm = rng.permutation(dataset.n)
        test_idx = perm[:_test_count(dataset.n, test_fraction)]
    else:
        test_idx = []
        for c in range(dataset.num_classes):
            members = np.flatnonzero(dataset.labels == c)
            if members.size == 0:
                continue
            if members.size == 1:
                warnings.warn(f"class {c} has a single sample; it stays in train", stacklevel=2)
                continue
            perm = members[rng.permutation(members.size)]
            test_idx.extend(perm[:_test_count(members.size, test_fraction)])
        test_idx = np.asarray(test_idx, dtype=np.int64)
    mask = np.zeros(dataset.n, dtype=bool)
    mask[test_idx] = True
    return dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))


def write_dataset(dataset: FeatureDataset, path) -> None:
    path = Path(path)
    labels = dataset.labels if dataset.labels is not None else np.full(dataset.n, UNLABELED)
    lines = [f"{HEADER_MAGIC} {HEADER_VERSION} n={dataset.n} d={dataset.d} "
             f"C={dataset.num_classes} domain={dataset.domain}"]
    for row, y in zip(dataset.features, labels):
        lines.append(" ".join(format(v, ".17g") for v in row) + f" {int(y)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line):
    parts = line.split()
    if len(parts) != 6 or parts[0] != HEADER_MAGIC:
        raise ParseError(f"bad header {line!r}", 1)
    if parts[1] != HEADER_VERSION:
        raise ParseError(f"unsupported version {parts[1]!r}", 1)
    fields = {}
    for part, key in zip(parts[2:], ("n", "d", "C", "domain")):
        name, _, value = part.partition("=")
        if name != key:
            raise ParseError(f"expected field {key!r}, got {part!r}", 1)
        try:
            fields[key] = int(value)
        except ValueError:
            raise ParseError(f"field {key} is not an integer: {value!r}", 1) from None
    return fields


def read_dataset(path) -> FeatureDataset:
    """Parse a dataset file; an all-``-1`` label column means unlabeled."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ParseError("empty file", 1)
    h = _parse_header(text[0])
    n, d, C = h["n"], h["d"], h["C"]
    rows = [ln for ln in text[1:]]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != n:
        raise ParseError(f"header declares n={n} but file has {len(rows)} rows", len(rows) + 1)
    x = np.empty((n, d))
    y = np.empty(n, dtype=np.int64)
    for i, line in enumerate(rows):
        lineno = i + 2
        tok = line.split()
        if len(tok) != d + 1:
            raise ParseError(f"expected {d} values and a label, got {len(tok)} fields", lineno)
        try:
            x[i] = [float(t) for t in tok[:d]]
            y[i] = int(tok[d])
        except ValueError as e:
            raise ParseError(str(e), lineno) from None
        if not np.all(np.isfinite(x[i])):
            raise ParseError("non-finite value", lineno)
        if y[i] != UNLABELED and not 0 <= y[i] < C:
            raise ParseError(f"label {y[i]} outside [0, {C})", lineno)
    unlabeled = y == UNLABELED
    if unlabeled.all():
        labels = None
    elif unlabeled.any():
        raise ParseError(f"mixed labeled and unlabeled rows (first at line {int(np.argmax(unlabeled)) + 2})")
    else:
        labels = y
    return FeatureDataset(x, labels, h["domain"], C)
