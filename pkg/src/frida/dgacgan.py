"""Domain- and class-conditioned feature GAN used as the replay memory.

The generator maps ``[z | one_hot(y) | code(tau)]`` to a feature vector. The
discriminator trunk reads ``[x | code(tau)]`` and feeds two single-layer
heads: a real/fake logit and ``C`` auxiliary class logits.

Losses are kept as negative log-likelihoods. With equal weight on the real
and fake halves of a batch::

    l_source = (BCE(real -> real) + BCE(fake -> fake)) / 2
    l_class  = (CE(real, y) + CE(fake, y_fake)) / 2
    r_gan    = mean_i ||G(z_i, y_i, tau_i) - x_pair(i)||^2

The discriminator minimises ``l_source + l_class``. The generator minimises
``BCE(fake -> real) + CE(fake, y_fake) + r_weight * r_gan`` (non-saturating),
or ``-BCE(fake -> fake) + CE(fake, y_fake) + r_weight * r_gan`` when
``literal`` is set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from frida.datamodel import DEFAULT_CODE_WIDTH, FeatureDataset, encode_domains, one_hot_rows
from frida.errors import ContractError, DivergenceError, ShapeError
from frida.numcore import AdamState, Dense, DenseNet, adam_step, backward, forward_cached
from frida.numcore.losses import sigmoid_xent, softmax_xent
from frida.numcore.nn import dense_backward

log = logging.getLogger(__name__)

PAIRINGS = ("random", "class_mean")


@dataclass
class GanConfig:
    z_dim: int = 2000
    gen_hidden: tuple = (1024, 1024)
    trunk_hidden: tuple = (512, 256, 128)
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    r_weight: float = 1.0
    literal: bool = False
    pairing: str = "random"

    def __post_init__(self):
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")


@dataclass
class GanModel:
    generator: DenseNet
    trunk: DenseNet
    head_rf: Dense
    head_cls: Dense
    z_dim: int
    num_classes: int
    d: int
    width: int = DEFAULT_CODE_WIDTH
    domains_seen: int = 0

    def __post_init__(self):
        C, W = self.num_classes, self.width
        if self.generator.n_in != self.z_dim + C + W or self.generator.n_out != self.d:
            raise ShapeError("generator must map z_dim + C + W inputs to d outputs")
        if self.trunk.n_in != self.d + W:
            raise ShapeError("trunk must read d + W inputs")
        h = self.trunk.n_out
        if (self.head_rf.n_in, self.head_rf.n_out) != (h, 1):
            raise ShapeError("real/fake head must map trunk output to one logit")
        if (self.head_cls.n_in, self.head_cls.n_out) != (h, C):
            raise ShapeError("class head must map trunk output to C logits")

    @classmethod
    def init(cls, d, num_classes, config: GanConfig, rng, width=DEFAULT_CODE_WIDTH) -> GanModel:
        g_widths = [config.z_dim + num_classes + width, *config.gen_hidden, d]
        t_widths = [d + width, *config.trunk_hidden]
        gen = DenseNet.init(g_widths, ["relu"] * len(config.gen_hidden) + ["identity"], rng)
        trunk = DenseNet.init(t_widths, ["leaky_relu"] * len(config.trunk_hidden), rng)
        h = t_widths[-1]
        return cls(gen, trunk, Dense.init(h, 1, "identity", rng),
                   Dense.init(h, num_classes, "identity", rng),
                   config.z_dim, num_classes, d, width)

    def disc_params(self) -> list:
        return self.trunk.params() + [self.head_rf.weight, self.head_rf.bias,
                                      self.head_cls.weight, self.head_cls.bias]

    def gen_params(self) -> list:
        return self.generator.params()

    def named_params(self) -> dict:
        out = {}
        for prefix, net in (("generator", self.generator), ("trunk", self.trunk)):
            for i, layer in enumerate(net.layers):
                out[f"{prefix}.{i}.weight"] = layer.weight
                out[f"{prefix}.{i}.bias"] = layer.bias
        for name in ("head_rf", "head_cls"):
            layer = getattr(self, name)
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.bias"] = layer.bias
        return out

    def copy(self) -> GanModel:
        return GanModel(self.generator.copy(), self.trunk.copy(), self.head_rf.copy(),
                        self.head_cls.copy(), self.z_dim, self.num_classes, self.d,
                        self.width, self.domains_seen)


@dataclass
class GanBatchLoss:
    l_source: float
    l_class: float
    r_gan: float
    unpaired: int = 0
    d_loss: float = 0.0
    g_loss: float = 0.0

    def __post_init__(self):
        if self.r_gan < 0:
            raise ValueError("r_gan must be non-negative")

    def finite(self) -> bool:
        return all(np.isfinite([self.l_source, self.l_class, self.r_gan, self.d_loss, self.g_loss]))


@dataclass
class RealBatch:
    """Labeled real features with a per-row domain index."""

    x: np.ndarray
    y: np.ndarray
    tau: np.ndarray

    @classmethod
    def from_datasets(cls, datasets) -> RealBatch:
        if isinstance(datasets, FeatureDataset):
            datasets = [datasets]
        xs, ys, ts = [], [], []
        for ds in datasets:
            if not ds.labeled:
                raise ContractError(f"GAN training data for domain {ds.domain} is unlabeled")
            xs.append(ds.features)
            ys.append(ds.labels)
            ts.append(np.full(ds.n, ds.domain, dtype=np.int64))
        return cls(np.vstack(xs), np.concatenate(ys), np.concatenate(ts))

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx) -> RealBatch:
        return RealBatch(self.x[idx], self.y[idx], self.tau[idx])


def _taus(tau, n):
    tau = np.asarray(tau, dtype=np.int64)
    return np.full(n, int(tau)) if tau.ndim == 0 else tau


def _gen_input(model, z, y, tau):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.z_dim:
        raise ShapeError(f"z must have {model.z_dim} columns, got shape {z.shape}")
    n = z.shape[0]
    y = np.asarray(y, dtype=np.int64)
    y = np.full(n, int(y)) if y.ndim == 0 else y
    return np.hstack([z, one_hot_rows(y, model.num_classes),
                      encode_domains(_taus(tau, n), model.width)])


def gen_forward(model: GanModel, z, y, tau) -> np.ndarray:
    """Synthetic features for noise ``z`` conditioned on class ``y`` and domain ``tau``."""
    out, _ = forward_cached(model.generator, _gen_input(model, z, y, tau))
    return out


def _disc_cached(model, x, tau):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ShapeError(f"discriminator input must have {model.d} columns, got shape {x.shape}")
    h, cache = forward_cached(model.trunk, np.hstack([x, encode_domains(_taus(tau, x.shape[0]), model.width)]))
    rf = h @ model.head_rf.weight + model.head_rf.bias
    cls = h @ model.head_cls.weight + model.head_cls.bias
    return rf, cls, (h, cache)


def _disc_backward(model, state, drf, dcls, need_x=False):
    h, cache = state
    g_rf, dh_rf = dense_backward(model.head_rf, h, drf)
    g_cls, dh_cls = dense_backward(model.head_cls, h, dcls)
    grads, dinp = backward(model.trunk, cache, dh_rf + dh_cls, need_input_grad=need_x)
    dx = dinp[:, :model.d] if need_x else None
    return grads + g_rf + g_cls, dx


def disc_forward(model: GanModel, x, tau):
    """``(rf_logit, cls_logits)`` for features ``x`` seen as domain ``tau``."""
    rf, cls, _ = _disc_cached(model, x, tau)
    return rf, cls


def pair_indices(real_y, real_tau, fake_y, fake_tau, num_classes, u):
    """Index of a uniformly chosen same-(tau, y) real row per fake row, -1 if none.

    ``u`` holds one uniform draw in [0, 1) per fake row.
    """
    real_key = real_tau * num_classes + real_y
    fake_key = fake_tau * num_classes + fake_y
    order = np.argsort(real_key, kind="stable")
    sorted_key = real_key[order]
    lo = np.searchsorted(sorted_key, fake_key, "left")
    count = np.searchsorted(sorted_key, fake_key, "right") - lo
    pick = lo + np.minimum((u * count).astype(np.int64), np.maximum(count - 1, 0))
    pick = np.minimum(pick, len(order) - 1)
    return np.where(count > 0, order[pick], -1)


def _pair_targets(real: RealBatch, y_fake, tau_fake, num_classes, pairing, rng):
    """Per-fake-row regression targets and a mask of rows that have one."""
    n = len(y_fake)
    if pairing == "random":
        idx = pair_indices(real.y, real.tau, y_fake, tau_fake, num_classes, rng.uniform(n))
        ok = idx >= 0
        targets = np.zeros((n, real.x.shape[1]))
        targets[ok] = real.x[idx[ok]]
        return targets, ok
    targets = np.zeros((n, real.x.shape[1]))
    ok = np.zeros(n, dtype=bool)
    real_key = real.tau * num_classes + real.y
    fake_key = tau_fake * num_classes + y_fake
    for k in np.unique(fake_key):
        members = real_key == k
        if members.any():
            rows = fake_key == k
            targets[rows] = real.x[members].mean(axis=0)
            ok[rows] = True
    return targets, ok


def _r_gan(fake, targets, ok):
    m = int(ok.sum())
    if m == 0:
        return 0.0, np.zeros_like(fake)
    diff = np.where(ok[:, None], fake - targets, 0.0)
    return float((diff * diff).sum() / m), 2.0 * diff / m


def _discriminator_terms(model, real, fake, y_fake, tau_fake):
    """``l_source``, ``l_class`` and their gradients w.r.t. both inputs' logits."""
    rf_r, cls_r, st_r = _disc_cached(model, real.x, real.tau)
    rf_f, cls_f, st_f = _disc_cached(model, fake, tau_fake)
    ls_r, g_rf_r = sigmoid_xent(rf_r, 1.0)
    ls_f, g_rf_f = sigmoid_xent(rf_f, 0.0)
    lc_r, g_cls_r = softmax_xent(cls_r, real.y)
    lc_f, g_cls_f = softmax_xent(cls_f, y_fake)
    return (0.5 * (ls_r + ls_f), 0.5 * (lc_r + lc_f),
            (st_r, 0.5 * g_rf_r, 0.5 * g_cls_r), (st_f, 0.5 * g_rf_f, 0.5 * g_cls_f))


def discriminator_grads(model, real: RealBatch, fake, y_fake, tau_fake):
    """Value and parameter gradients of ``l_source + l_class`` (fake held fixed)."""
    l_s, l_c, (st_r, grf_r, gcl_r), (st_f, grf_f, gcl_f) = _discriminator_terms(
        model, real, fake, y_fake, tau_fake)
    g_r, _ = _disc_backward(model, st_r, grf_r, gcl_r)
    g_f, _ = _disc_backward(model, st_f, grf_f, gcl_f)
    return l_s, l_c, [a + b for a, b in zip(g_r, g_f)]


def generator_grads(model, z, y_fake, tau_fake, targets, ok, r_weight=1.0, literal=False):
    """Generator objective value, its parts, and gradients w.r.t. generator params."""
    inp = _gen_input(model, z, y_fake, tau_fake)
    fake, g_cache = forward_cached(model.generator, inp)
    rf, cls, st = _disc_cached(model, fake, tau_fake)
    if literal:
        adv, g_rf = sigmoid_xent(rf, 0.0)
        adv, g_rf = -adv, -g_rf
    else:
        adv, g_rf = sigmoid_xent(rf, 1.0)
    ce, g_cls = softmax_xent(cls, y_fake)
    r, g_r = _r_gan(fake, targets, ok)
    _, dfake = _disc_backward(model, st, g_rf, g_cls, need_x=True)
    dfake = dfake + r_weight * g_r
    grads, _ = backward(model.generator, g_cache, dfake)
    return adv + ce + r_weight * r, (adv, ce, r), grads


def gan_losses(model: GanModel, real, z, y_fake, tau_fake, rng, pairing="random") -> GanBatchLoss:
    """Batch losses for a labeled real batch and a fake batch drawn from ``z``.

    ``real`` is a :class:`RealBatch` or a labeled :class:`FeatureDataset`.
    Fake rows whose ``(tau, y)`` has no real counterpart are left out of
    ``r_gan`` and counted in ``unpaired``.
    """
    if not isinstance(real, RealBatch):
        real = RealBatch.from_datasets(real)
    y_fake = np.asarray(y_fake, dtype=np.int64)
    tau_fake = _taus(tau_fake, len(y_fake))
    if len(real) == 0 or len(y_fake) == 0:
        raise ContractError("real and fake batches must be non-empty")
    fake = gen_forward(model, z, y_fake, tau_fake)
    l_s, l_c, _, _ = _discriminator_terms(model, real, fake, y_fake, tau_fake)
    targets, ok = _pair_targets(real, y_fake, tau_fake, model.num_classes, pairing, rng)
    r, _ = _r_gan(fake, targets, ok)
    unpaired = int((~ok).sum())
    if unpaired:
        log.warning("%d generated samples had no same-(tau, y) real partner", unpaired)
    return GanBatchLoss(l_s, l_c, r, unpaired)


def _mean_losses(items) -> GanBatchLoss:
    kw = {f.name: float(np.mean([getattr(b, f.name) for b in items])) for f in fields(GanBatchLoss)}
    kw["unpaired"] = int(sum(b.unpaired for b in items))
    return GanBatchLoss(**kw)


@dataclass
class GanHistory:
    epochs: list = field(default_factory=list)

    def series(self, name) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])

    def __len__(self):
        return len(self.epochs)


def train_gan(model: GanModel, real_data, config: GanConfig, rng) -> tuple[GanModel, GanHistory]:
    """Alternate one discriminator and one generator Adam step per batch.

    ``model`` is updated in place (copy it first to keep a snapshot).
    """
    real = RealBatch.from_datasets(real_data)
    if len(real) == 0:
        raise ContractError("no real data")
    if real.x.shape[1] != model.d:
        raise ShapeError(f"real features have {real.x.shape[1]} columns, model expects {model.d}")
    opt_kw = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = AdamState.for_params(model.disc_params(), **opt_kw)
    opt_g = AdamState.for_params(model.gen_params(), **opt_kw)
    history = GanHistory()
    for epoch in range(config.epochs):
        order = rng.permutation(len(real))
        batch_losses = []
        for start in range(0, len(real), config.batch_size):
            batch = real.take(order[start:start + config.batch_size])
            n = len(batch)
            z = rng.normal(n, model.z_dim)
            y_fake, tau_fake = batch.y, batch.tau
            fake = gen_forward(model, z, y_fake, tau_fake)
            l_s, l_c, d_grads = discriminator_grads(model, batch, fake, y_fake, tau_fake)
            targets, ok = _pair_targets(batch, y_fake, tau_fake, model.num_classes, config.pairing, rng)
            r, _ = _r_gan(fake, targets, ok)
            adam_step(model.disc_params(), d_grads, opt_d)
            g_loss, _, g_grads = generator_grads(model, z, y_fake, tau_fake, targets, ok,
                                                 config.r_weight, config.literal)
            adam_step(model.gen_params(), g_grads, opt_g)
            loss = GanBatchLoss(l_s, l_c, r, int((~ok).sum()), l_s + l_c, g_loss)
            if not loss.finite():
                raise DivergenceError("GAN loss became non-finite", epoch)
            batch_losses.append(loss)
        history.epochs.append(_mean_losses(batch_losses))
    model.domains_seen = max(model.domains_seen, int(real.tau.max()) + 1)
    return model, history


def sample_features(model: GanModel, tau: int, per_class: int, rng) -> FeatureDataset:
    """``per_class`` synthetic samples for every class of domain ``tau``."""
    if per_class <= 0:
        raise ContractError("per_class must be positive; an empty replay set is not allowed")
    if not 0 <= tau < model.domains_seen:
        raise ContractError(f"model has been trained on domains < {model.domains_seen}, not {tau}")
    y = np.repeat(np.arange(model.num_classes), per_class)
    z = rng.normal(y.size, model.z_dim)
    return FeatureDataset(gen_forward(model, z, y, tau), y, tau, model.num_classes)
