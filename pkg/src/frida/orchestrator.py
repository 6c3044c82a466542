"""Episode loop: replay synthesis, adaptation, pseudo-labeling, GAN update.

Episode 0 trains the GAN on the labeled source. Every later episode ``tau``
receives exactly one unlabeled dataset and

1. regenerates ``per_class`` samples per class for each past domain from
   ``GAN_{tau-1}``,
2. trains ``DA_tau``, warm-started from ``DA_{tau-1}``, with the replay
   union as source and the new data as target,
3. pseudo-labels the new data with ``DA_tau``,
4. trains ``GAN_tau``, warm-started from ``GAN_{tau-1}``, on the replay union
   plus the pseudo-labeled set.

Episode 0 also fits a source-only classifier ``DA_0``; it is evaluated at
time 0 and initialises ``DA_1``.

With replay disabled, episode ``tau`` instead pseudo-labels the new data with
``DA_{tau-1}`` and fine-tunes on those labels alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from frida import checkpoint
from frida.config import RunConfig
from frida.datamodel import DomainId, FeatureDataset, concat, read_dataset, split, write_dataset
from frida.dannib import MODES, DannIbModel, pseudo_label, train_dannib, train_source_only
from frida.dgacgan import GanModel, sample_features, train_gan
from frida.errors import CheckpointError, ContractError
from frida.evaluation import AccuracyMatrix, evaluate, read_metrics_csv, write_reports
from frida.numcore import RngStream
from frida.persist import da_from_records, da_records, gan_from_records, gan_records
from frida.synthgen import BenchmarkSpec, make_benchmark, read_benchmark

log = logging.getLogger(__name__)

# substream tags; every random draw is keyed by (tag, tau, ...) off the run seed
SPLIT, GAN_INIT, GAN_TRAIN, DA_INIT, DA_TRAIN, REPLAY, SRC_INIT, SRC_TRAIN, SAMPLE = range(9)

MANIFEST_MAGIC = "# FRIDA run manifest"


@dataclass
class EpisodeInfo:
    """Diagnostics of one episode; not persisted."""

    gan_history: object = None
    da_history: object = None
    replay_size: int = 0
    pseudo: object = None
    pseudo_before: object = None


@dataclass
class EpisodeState:
    tau: int
    gan: GanModel | None
    da: DannIbModel | None
    registry: list
    rng: RngStream
    config_hash: str
    info: EpisodeInfo = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.registry) != self.tau + 1:
            raise ContractError(f"registry holds {len(self.registry)} domains at tau={self.tau}")
        if self.da is None and self.tau > 0:
            raise ContractError("adaptation model missing after episode 0")


def _check_compatible(config: RunConfig, state: EpisodeState):
    if config.digest() != state.config_hash:
        raise ContractError("config hash differs from the one the state was produced with")


def run_episode_0(config: RunConfig, source: FeatureDataset) -> EpisodeState:
    if not source.labeled:
        raise ContractError("the source dataset must be labeled")
    root = RngStream(config.seed)
    gan = None
    info = EpisodeInfo()
    if config.replay:
        gan = GanModel.init(source.d, source.num_classes, config.gan, root.spawn(GAN_INIT, 0), config.width)
        gan, info.gan_history = train_gan(gan, [source], config.gan, root.spawn(GAN_TRAIN, 0))
    da = DannIbModel.init(source.d, source.num_classes, config.da, root.spawn(SRC_INIT, 0))
    da, info.da_history = train_source_only(
        da, source, replace(config.da, epochs=config.source_model_epochs), root.spawn(SRC_TRAIN, 0))
    return EpisodeState(0, gan, da, [DomainId(0, config.width)], root, config.digest(), info)


def warm_start_gan(state: EpisodeState) -> GanModel:
    return state.gan.copy()


def warm_start_da(state: EpisodeState) -> DannIbModel:
    return state.da.copy()


def replay_sets(state: EpisodeState, config: RunConfig) -> list[FeatureDataset]:
    tau = state.tau + 1
    return [sample_features(state.gan, k, config.per_class, state.rng.spawn(REPLAY, tau, k))
            for k in range(tau)]


def run_episode(state: EpisodeState, data: FeatureDataset, config: RunConfig) -> EpisodeState:
    """Advance ``state`` by one domain using only ``data`` (unlabeled)."""
    _check_compatible(config, state)
    tau = state.tau + 1
    domain = DomainId(tau, config.width)
    if data.labels is not None:
        raise ContractError("target data must be unlabeled; pass its training view")
    if data.d != state.da.d or data.num_classes != state.da.num_classes:
        raise ContractError("new domain does not share d and C with the run")
    if data.domain != tau:
        data = replace(data, domain=tau)
    root = state.rng
    info = EpisodeInfo()
    if config.replay:
        replay = replay_sets(state, config)
        info.replay_size = sum(ds.n for ds in replay)
        da = warm_start_da(state)
        da, info.da_history = train_dannib(da, concat(replay, domain=0), data, config.da,
                                           root.spawn(DA_TRAIN, tau))
        info.pseudo = pseudo_label(da, data, config.threshold, config.fallback)
        if info.pseudo.selected.n == 0:
            raise ContractError(f"pseudo-labeling selected no samples at tau={tau} (threshold "
                                f"{config.threshold}, fallback off); lower pl.threshold")
        gan = warm_start_gan(state)
        gan, info.gan_history = train_gan(gan, replay + [info.pseudo.selected], config.gan,
                                          root.spawn(GAN_TRAIN, tau))
    else:
        # ablation: self-training on the current domain only
        info.pseudo_before = pseudo_label(state.da, data, config.threshold, config.fallback)
        if info.pseudo_before.selected.n == 0:
            raise ContractError(f"pseudo-labeling selected no samples at tau={tau}")
        da = state.da.copy()
        da, info.da_history = train_source_only(da, info.pseudo_before.selected, config.da,
                                                root.spawn(DA_TRAIN, tau))
        info.pseudo = pseudo_label(da, data, config.threshold, config.fallback)
        gan = None
    return EpisodeState(tau, gan, da, state.registry + [domain], root, state.config_hash, info)


def state_bytes(state: EpisodeState, config_text: str) -> bytes:
    tensors, meta = {}, {"tau": state.tau, "registry": [[d.tau, d.width] for d in state.registry],
                         "rng": [str(state.rng.seed), str(state.rng.counter)],
                         "config_hash": state.config_hash, "config": config_text}
    if state.gan is not None:
        t, m = gan_records(state.gan, "gan/")
        tensors.update(t)
        meta["gan"] = m
    if state.da is not None:
        t, m = da_records(state.da, "da/")
        tensors.update(t)
        meta["da"] = m
    return checkpoint.encode("state", state.tau, tensors, meta)


def save_state(state: EpisodeState, path, config: RunConfig) -> None:
    Path(path).write_bytes(state_bytes(state, config.to_text()))


def load_state(path):
    """Returns ``(state, config)``; verifies header, checksum and config hash."""
    _, tau, tensors, meta = checkpoint.load(path, "state")
    if meta is None or meta.get("tau") != tau:
        raise CheckpointError("state metadata missing or inconsistent with header")
    config = RunConfig.from_text(meta["config"])
    if config.digest() != meta["config_hash"]:
        raise CheckpointError("config hash mismatch: embedded config was altered")
    gan = gan_from_records(tensors, meta["gan"], "gan/") if "gan" in meta else None
    da = da_from_records(tensors, meta["da"], "da/") if "da" in meta else None
    registry = [DomainId(t, w) for t, w in meta["registry"]]
    rng = RngStream(int(meta["rng"][0]), int(meta["rng"][1]))
    return EpisodeState(tau, gan, da, registry, rng, meta["config_hash"]), config


# ---------------------------------------------------------------- harness

@dataclass
class RunResult:
    matrix: AccuracyMatrix
    states: list
    infos: list
    precision: dict = field(default_factory=dict)  # tau -> pseudo-label precision
    out_dir: Path | None = None


def load_datasets(config: RunConfig) -> list[FeatureDataset]:
    """Domains named by the config; the default benchmark is drawn with the run seed."""
    if config.manifest:
        return read_benchmark(config.manifest)
    if config.benchmark:
        return make_benchmark(BenchmarkSpec.from_text(Path(config.benchmark).read_text()))
    return make_benchmark(BenchmarkSpec(seed=config.seed))


def split_domains(datasets, config: RunConfig):
    """``(train, test)`` lists; training views drop hidden target labels."""
    root = RngStream(config.seed)
    train, test = [], []
    for ds in datasets:
        tr, te = split(ds.evaluation_view(), config.test_fraction, root.spawn(SPLIT, ds.domain))
        if ds.domain > 0:
            tr = FeatureDataset(tr.features, tr.labels, tr.domain, tr.num_classes, hidden=True)
        train.append(tr)
        test.append(te)
    return train, test


def _precision(info, train_eval):
    if info is None or info.pseudo is None or train_eval.labels is None:
        return None
    sel = info.pseudo
    if sel.selected.n == 0:
        return None
    return float(np.mean(sel.selected.labels == train_eval.labels[sel.indices]))


def _write_manifest(out: Path, config: RunConfig, T, upto):
    lines = [MANIFEST_MAGIC, f"config_hash={config.digest()}", f"seed={config.seed}", f"T={T}"]
    lines += [f"state {k} state_{k}.ckpt" for k in range(upto + 1)]
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def read_manifest(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise ContractError(f"{path} is not a run manifest")
    info, states = {}, {}
    for line in lines[1:]:
        if line.startswith("state "):
            _, k, name = line.split()
            states[int(k)] = path.parent / name
        elif "=" in line:
            key, _, value = line.partition("=")
            info[key] = value
    return info, states


def run(config: RunConfig, datasets=None, out_dir=None, stop_after=None) -> RunResult:
    """Full sequence with evaluation after every episode.

    With ``out_dir``, writes train/test splits, one state per episode, the
    run manifest, ``metrics.csv`` and ``report.json``. ``stop_after`` ends
    the run early (for resumption tests).
    """
    datasets = load_datasets(config) if datasets is None else datasets
    train, test = split_domains(datasets, config)
    T = len(datasets) - 1
    last = T if stop_after is None else min(stop_after, T)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "train").mkdir(parents=True, exist_ok=True)
        (out / "test").mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(config.to_text())
        for tr, te in zip(train, test):
            write_dataset(tr.training_view(), out / "train" / f"domain_{tr.domain}.txt")
            write_dataset(te, out / "test" / f"domain_{te.domain}.txt")
    matrix = AccuracyMatrix()
    state = run_episode_0(config, train[0])
    states, infos, precision = [state], [state.info], {}
    matrix.add_row(0, evaluate(state.da, test[:1]))
    if out is not None:
        save_state(state, out / "state_0.ckpt", config)
    for tau in range(1, last + 1):
        state = run_episode(state, train[tau].training_view(), config)
        states.append(state)
        infos.append(state.info)
        precision[tau] = _precision(state.info, train[tau])
        matrix.add_row(tau, evaluate(state.da, test[:tau + 1]))
        if out is not None:
            save_state(state, out / f"state_{tau}.ckpt", config)
    if out is not None:
        _write_manifest(out, config, T, last)
        write_reports(matrix, out)
    return RunResult(matrix, states, infos, precision, out)


def resume(state_path, data_path) -> RunResult:
    """Continue a run directory from ``state_path`` with one new domain file."""
    state_path = Path(state_path)
    out = state_path.parent
    state, config = load_state(state_path)
    data = read_dataset(data_path).training_view()
    if data.labels is not None:
        data = replace(data, labels=None)
    if data.domain != state.tau + 1:
        raise ContractError(f"state is at tau={state.tau}; expected data for domain {state.tau + 1}, "
                            f"got domain {data.domain}")
    new_state = run_episode(state, data, config)
    tau = new_state.tau
    tests = [read_dataset(out / "test" / f"domain_{k}.txt") for k in range(tau + 1)]
    metrics_path = out / "metrics.csv"
    matrix = AccuracyMatrix()
    if metrics_path.exists():
        old = read_metrics_csv(metrics_path.read_text())
        for (k, t), a in old.entries.items():
            if k < tau:
                matrix.set(k, t, a)
    matrix.add_row(tau, evaluate(new_state.da, tests))
    save_state(new_state, out / f"state_{tau}.ckpt", config)
    manifest = out / "run_manifest.txt"
    T = int(read_manifest(manifest)[0].get("T", tau)) if manifest.exists() else tau
    _write_manifest(out, config, max(T, tau), tau)
    write_reports(matrix, out)
    return RunResult(matrix, [new_state], [new_state.info], {}, out)


def evaluate_states(state_paths, test_dir) -> AccuracyMatrix:
    matrix = AccuracyMatrix()
    test_dir = Path(test_dir)
    for path in state_paths:
        state, _ = load_state(path)
        tests = []
        for k in range(state.tau + 1):
            p = test_dir / f"domain_{k}.txt"
            if not p.is_file():
                raise ContractError(f"missing test set for domain {k}: {p}")
            tests.append(read_dataset(p))
        matrix.add_row(state.tau, evaluate(state.da, tests))
    return matrix


@dataclass
class AblationResult:
    """Target accuracy per adaptation mode and seed on the first source/target pair."""

    accuracies: dict  # mode -> list of accuracies, one per seed
    seeds: list

    def median(self, mode) -> float:
        return float(np.median(self.accuracies[mode]))

    def table(self) -> str:
        head = "mode             " + " ".join(f"seed{s:<4d}" for s in self.seeds) + " median"
        lines = [head]
        for mode, accs in self.accuracies.items():
            cells = " ".join(f"{a:<8.4f}" for a in accs)
            lines.append(f"{mode:<16s} {cells} {self.median(mode):.4f}")
        return "\n".join(lines) + "\n"


def ablate_pair(config: RunConfig, modes=MODES, seeds=None, datasets_for=None) -> AblationResult:
    """Adapt domain 0 -> domain 1 once per mode and seed; no replay involved.

    Each seed regenerates the benchmark with that seed unless
    ``datasets_for(seed)`` supplies the domains. As in a full run, the adapter
    is first fitted to the labeled source alone and then adapted.
    """
    seeds = list(range(config.seed, config.seed + config.ablate_seeds)) if seeds is None else list(seeds)
    out = {m: [] for m in modes}
    for seed in seeds:
        cfg = replace(config, seed=seed)
        if datasets_for is not None:
            datasets = datasets_for(seed)
        else:
            datasets = load_datasets(cfg)
        if len(datasets) < 2:
            raise ContractError("ablation needs a source and at least one target domain")
        train, test = split_domains(datasets[:2], cfg)
        root = RngStream(seed)
        for mode in modes:
            da_cfg = replace(config.da, mode=mode)
            model = DannIbModel.init(train[0].d, train[0].num_classes, da_cfg, root.spawn(SRC_INIT, 0))
            train_source_only(model, train[0], replace(da_cfg, epochs=config.source_model_epochs),
                              root.spawn(SRC_TRAIN, 0))
            train_dannib(model, train[0], train[1].training_view(), da_cfg, root.spawn(DA_TRAIN, 1))
            out[mode].append(evaluate(model, [test[1]])[0])
    return AblationResult(out, seeds)
