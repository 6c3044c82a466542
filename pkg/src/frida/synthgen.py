"""Synthetic multi-domain feature benchmarks with controllable shift.

Each class has a prototype on a sphere of radius 4. A domain applies an affine
shift ``x -> scale * R x + translation`` to every prototype, where ``R``
rotates one 2-plane, then draws isotropic Gaussian samples around the shifted
prototypes.

The translation has two parts: a random-direction offset of fixed length, and
a drift along the line from prototype 0 to prototype 1 given as a fraction of
their distance. Drift makes later domains place class 0 where class 1 used to
be, so a learner that sees only the newest domain must overwrite what it knew.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from frida.datamodel import DEFAULT_CODE_WIDTH, FeatureDataset, read_dataset, write_dataset
from frida.errors import ConfigError, ContractError
from frida.numcore.rng import RngStream

PROTOTYPE_RADIUS = 4.0
MIN_SEPARATION = 2.0
MAX_TRIES = 10_000


@dataclass
class ShiftSpec:
    rotation_angle: float = 0.0
    translation: np.ndarray | None = None
    scale: float = 1.0
    noise_sigma: float = 0.5
    plane: tuple | None = None  # two orthonormal vectors; drawn at random if None

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractError("scale must be positive")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be non-negative")

    def matrix(self, d, rng=None) -> np.ndarray:
        """The linear part ``scale * R`` as a ``d x d`` matrix."""
        rot = np.eye(d)
        if self.rotation_angle != 0.0:
            u, v = self.plane if self.plane is not None else random_plane(d, rng)
            c, s = np.cos(self.rotation_angle), np.sin(self.rotation_angle)
            rot += (c - 1.0) * (np.outer(u, u) + np.outer(v, v)) + s * (np.outer(v, u) - np.outer(u, v))
        return self.scale * rot

    def apply(self, points, rng=None) -> np.ndarray:
        points = np.atleast_2d(points)
        out = points @ self.matrix(points.shape[1], rng).T
        if self.translation is not None:
            out = out + np.asarray(self.translation, dtype=np.float64)
        return out


def random_plane(d, rng):
    """Orthonormal pair spanning a uniformly random 2-plane of R^d."""
    if rng is None:
        raise ContractError("a random plane needs an rng")
    a, b = rng.normal(2, d)
    u = a / np.linalg.norm(a)
    b = b - (b @ u) * u
    return u, b / np.linalg.norm(b)


@dataclass
class BenchmarkSpec:
    num_classes: int = 4
    d: int = 16
    n_per_class: int = 150
    T: int = 2
    rotations: tuple = (0.0, 0.3, 0.6)
    translations: tuple = (0.0, 0.0, 0.0)  # lengths along per-domain random directions
    drift: tuple = (0.0, 0.0, 0.0)  # fractions of |p1 - p0| along p1 - p0
    scales: tuple = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.5
    seed: int = 0
    width: int = DEFAULT_CODE_WIDTH
    shifts: list = field(default=None, repr=False)  # explicit ShiftSpecs override the above

    def __post_init__(self):
        if self.T + 1 > 1 << self.width:
            raise ConfigError(f"T={self.T} needs more than the {self.width}-bit domain code holds")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be positive")
        if self.shifts is None:
            for name in ("rotations", "translations", "scales", "drift"):
                if len(getattr(self, name)) < self.T + 1:
                    raise ConfigError(f"{name} needs {self.T + 1} entries, got {len(getattr(self, name))}")
        elif len(self.shifts) != self.T + 1:
            raise ConfigError(f"need {self.T + 1} shifts, got {len(self.shifts)}")

    def domain_shifts(self, rng, prototypes=None) -> list[ShiftSpec]:
        if self.shifts is not None:
            return list(self.shifts)
        if any(self.drift) and prototypes is None:
            raise ContractError("drift needs the class prototypes")
        axis = prototypes[1] - prototypes[0] if prototypes is not None else 0.0
        out = []
        for tau in range(self.T + 1):
            sub = rng.spawn(tau)
            direction = sub.normal(1, self.d)[0]
            direction /= np.linalg.norm(direction)
            plane = random_plane(self.d, sub) if self.rotations[tau] else None
            out.append(ShiftSpec(rotation_angle=float(self.rotations[tau]),
                                 translation=float(self.translations[tau]) * direction
                                 + float(self.drift[tau]) * axis,
                                 scale=float(self.scales[tau]),
                                 noise_sigma=self.noise_sigma, plane=plane))
        return out

    # text form: flat key=value lines, lists comma-separated
    _KEYS = {"C": "num_classes", "d": "d", "n_per_class": "n_per_class", "T": "T",
             "rotation": "rotations", "translation": "translations", "scale": "scales",
             "drift": "drift",
             "noise_sigma": "noise_sigma", "seed": "seed", "width": "width"}

    @classmethod
    def from_text(cls, text) -> BenchmarkSpec:
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in cls._KEYS:
                raise ConfigError(f"benchmark spec line {lineno}: unknown entry {raw.strip()!r}")
            attr = cls._KEYS[key]
            try:
                if attr in ("rotations", "translations", "scales", "drift"):
                    kw[attr] = tuple(float(v) for v in value.split(","))
                elif attr == "noise_sigma":
                    kw[attr] = float(value)
                else:
                    kw[attr] = int(value)
            except ValueError:
                raise ConfigError(f"benchmark spec line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kw)

    def to_text(self) -> str:
        if self.shifts is not None:
            raise ConfigError("explicit shifts have no text form")
        inv = {v: k for k, v in self._KEYS.items()}
        lines = []
        for attr in ("num_classes", "d", "n_per_class", "T", "rotations", "translations",
                     "scales", "drift", "noise_sigma", "seed", "width"):
            v = getattr(self, attr)
            v = ",".join(repr(float(t)) for t in v) if isinstance(v, tuple) else v
            lines.append(f"{inv[attr]}={v}")
        return "\n".join(lines) + "\n"


def make_prototypes(num_classes, d, rng) -> np.ndarray:
    """Class centres on the radius-4 sphere, pairwise at least 2 apart."""
    if num_classes < 2 or d < 2:
        raise ConfigError("need at least 2 classes and 2 dimensions")
    protos = []
    for _ in range(MAX_TRIES):
        p = rng.normal(1, d)[0]
        p *= PROTOTYPE_RADIUS / np.linalg.norm(p)
        if all(np.linalg.norm(p - q) >= MIN_SEPARATION for q in protos):
            protos.append(p)
            if len(protos) == num_classes:
                return np.array(protos)
    raise ConfigError(f"could not place {num_classes} separated prototypes in d={d} "
                      f"after {MAX_TRIES} tries; lower C or raise d")


def make_domain(prototypes, shift: ShiftSpec, n_per_class, tau, rng, hidden=False) -> FeatureDataset:
    num_classes, d = prototypes.shape
    centres = shift.apply(prototypes, rng)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    x = centres[labels]
    if shift.noise_sigma > 0:
        x = x + shift.noise_sigma * rng.normal(x.shape[0], d)
    return FeatureDataset(x, labels, tau, num_classes, hidden=hidden)


def make_benchmark(spec: BenchmarkSpec) -> list[FeatureDataset]:
    """Source first, then targets in order; target labels are marked hidden."""
    root = RngStream(spec.seed)
    protos = make_prototypes(spec.num_classes, spec.d, root.spawn(1000))
    shifts = spec.domain_shifts(root.spawn(2000), protos)
    return [make_domain(protos, shift, spec.n_per_class, tau, root.spawn(3000, tau), hidden=tau > 0)
            for tau, shift in enumerate(shifts)]


def benchmark_prototypes(spec: BenchmarkSpec):
    """Shifted class centres per domain, for nearest-prototype oracles."""
    root = RngStream(spec.seed)
    protos = make_prototypes(spec.num_classes, spec.d, root.spawn(1000))
    return [s.apply(protos) for s in spec.domain_shifts(root.spawn(2000), protos)]


def write_benchmark(datasets, out_dir) -> Path:
    """One dataset file per domain plus ``manifest.txt`` listing episode order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# FRIDA benchmark manifest: tau role file"]
    for ds in datasets:
        name = f"domain_{ds.domain}.txt"
        write_dataset(ds, out / name)
        role = "source" if ds.domain == 0 else "target"
        lines.append(f"{ds.domain} {role} {name}")
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def read_benchmark(manifest) -> list[FeatureDataset]:
    manifest = Path(manifest)
    out = []
    for raw in manifest.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tau, role, name = line.split()
        ds = read_dataset(manifest.parent / name)
        if int(tau) != ds.domain:
            raise ConfigError(f"manifest says domain {tau} but {name} holds domain {ds.domain}")
        if role == "target" and ds.labels is not None:
            ds = FeatureDataset(ds.features, ds.labels, ds.domain, ds.num_classes, hidden=True)
        out.append(ds)
    if [ds.domain for ds in out] != list(range(len(out))):
        raise ConfigError("manifest domains must be 0, 1, ... in order")
    return out
