"""Domain-adversarial adapter with a variational bottleneck, plus pseudo-labeling.

The encoder outputs ``2 * latent_dim`` values read as (mean, log-variance).
A task head predicts the ``C`` classes from the latent code; the domain head
predicts ``C + 1`` outputs (source samples use their class, target samples
use index ``C``) or, in ``dann_binary`` mode, source 0 / target 1.

The minimised objective is::

    total = l_task - lam * l_dom + beta * r_ib

and is what training reports. Heads are trained on their own losses (the
domain head minimises ``l_dom``). How the encoder is pushed against the
domain head is set by ``adversary``: ``reversal`` hands it ``d total``
(gradient reversal at the encoder output), while the default ``target``
makes target rows look like source rows, the non-saturating counterpart
that keeps class structure intact in the ``C + 1`` head. ``conditional``
aligns each target row with the source slot of its predicted class.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from frida.datamodel import FeatureDataset
from frida.errors import ContractError, DivergenceError, NumericError, ShapeError
from frida.numcore import AdamState, Dense, DenseNet, adam_step, backward, forward_cached
from frida.numcore.losses import log_softmax, softmax, softmax_xent
from frida.numcore.nn import dense_backward

MODES = ("dann_binary", "dann_multiclass", "dann_ib")
ADVERSARIES = ("reversal", "target", "conditional")
GAMMA = 10.0  # lambda schedule steepness


@dataclass
class DannConfig:
    latent_dim: int = 256
    hidden: tuple = (512, 512)
    mode: str = "dann_ib"
    beta: float = 0.01
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    adversary: str = "target"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"adversary must be one of {ADVERSARIES}, got {self.adversary!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class DannIbModel:
    encoder: DenseNet
    head_task: Dense
    head_dom: Dense
    latent_dim: int
    num_classes: int
    d: int
    mode: str = "dann_ib"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.latent_dim <= 0:
            raise ShapeError("latent_dim must be positive")
        if self.encoder.n_in != self.d or self.encoder.n_out != 2 * self.latent_dim:
            raise ShapeError("encoder must map d inputs to 2 * latent_dim outputs")
        if (self.head_task.n_in, self.head_task.n_out) != (self.latent_dim, self.num_classes):
            raise ShapeError("task head must map latent_dim to C")
        if (self.head_dom.n_in, self.head_dom.n_out) != (self.latent_dim, self.dom_width):
            raise ShapeError(f"domain head must map latent_dim to {self.dom_width}")

    @property
    def dom_width(self) -> int:
        return 2 if self.mode == "dann_binary" else self.num_classes + 1

    @property
    def stochastic(self) -> bool:
        return self.mode == "dann_ib"

    @classmethod
    def init(cls, d, num_classes, config: DannConfig, rng) -> DannIbModel:
        widths = [d, *config.hidden, 2 * config.latent_dim]
        enc = DenseNet.init(widths, ["relu"] * len(config.hidden) + ["identity"], rng)
        dom = 2 if config.mode == "dann_binary" else num_classes + 1
        return cls(enc, Dense.init(config.latent_dim, num_classes, "identity", rng),
                   Dense.init(config.latent_dim, dom, "identity", rng),
                   config.latent_dim, num_classes, d, config.mode)

    def params(self) -> list:
        return self.encoder.params() + [self.head_task.weight, self.head_task.bias,
                                        self.head_dom.weight, self.head_dom.bias]

    def named_params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.encoder.layers):
            out[f"encoder.{i}.weight"] = layer.weight
            out[f"encoder.{i}.bias"] = layer.bias
        for name in ("head_task", "head_dom"):
            layer = getattr(self, name)
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.bias"] = layer.bias
        return out

    def copy(self) -> DannIbModel:
        return DannIbModel(self.encoder.copy(), self.head_task.copy(), self.head_dom.copy(),
                           self.latent_dim, self.num_classes, self.d, self.mode)


@dataclass
class DannLossReport:
    l_task: float
    l_dom: float
    r_ib: float
    lam: float
    total: float
    l_align: float = 0.0

    def finite(self) -> bool:
        return bool(np.all(np.isfinite([self.l_task, self.l_dom, self.r_ib, self.total])))


@dataclass
class PseudoLabelReport:
    selected: FeatureDataset
    per_class: np.ndarray
    rejected: int
    threshold: float
    fallback_classes: list = field(default_factory=list)
    indices: np.ndarray = None  # rows of the input that were selected


def _encode_cached(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ShapeError(f"input must have {model.d} columns, got shape {x.shape}")
    out, cache = forward_cached(model.encoder, x)
    return out[:, :model.latent_dim], out[:, model.latent_dim:], cache


def encode(model: DannIbModel, x, rng=None, stochastic=True, eps=None):
    """``(mu, logvar, sample)``; the sample is ``mu`` unless stochastic.

    Noise comes from ``eps`` if given, else from ``rng``.
    """
    mu, logvar, _ = _encode_cached(model, x)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
        raise NumericError("non-finite encoder output")
    if not stochastic:
        return mu, logvar, mu
    if eps is None:
        if rng is None:
            raise ContractError("stochastic encoding needs rng or eps")
        eps = rng.normal(*mu.shape)
    return mu, logvar, mu + np.exp(0.5 * logvar) * eps


def kl_regularizer(mu, logvar) -> float:
    """Mean over rows of ``KL(N(mu, exp(logvar)) || N(0, I))``."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    logvar = np.atleast_2d(np.asarray(logvar, dtype=np.float64))
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    return float(np.mean(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1)))


def _kl_grads(mu, logvar):
    n = mu.shape[0]
    return mu / n, 0.5 * (np.exp(logvar) - 1.0) / n


def lambda_schedule(progress: float) -> float:
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    return float(2.0 / (1.0 + np.exp(-GAMMA * progress)) - 1.0)


@dataclass
class _Side:
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    cache: list


def _side(model, x, eps):
    mu, logvar, cache = _encode_cached(model, x)
    if model.stochastic:
        z = mu + np.exp(0.5 * logvar) * eps
    else:
        z = mu
    return _Side(mu, logvar, eps, z, cache)


def _side_backward(model, side, dz, dmu_extra=None, dlv_extra=None):
    """Encoder gradients from ``dz`` (plus direct mean/log-variance terms)."""
    dmu = dz.copy()
    dlv = np.zeros_like(side.logvar)
    if model.stochastic:
        dlv += dz * side.eps * 0.5 * np.exp(0.5 * side.logvar)
    if dmu_extra is not None:
        dmu += dmu_extra
        dlv += dlv_extra
    grads, _ = backward(model.encoder, side.cache, np.hstack([dmu, dlv]))
    return grads


def _source_mass_loss(logits, source_cols):
    """``-mean log P(any source output)`` and its gradient w.r.t. ``logits``."""
    logp = log_softmax(logits)
    log_q = np.logaddexp.reduce(logp[:, source_cols], axis=1)
    p = np.exp(logp)
    r = np.zeros_like(p)
    r[:, source_cols] = np.exp(logp[:, source_cols] - log_q[:, None])
    return float(-log_q.mean()), (p - r) / logits.shape[0]


def dannib_loss(model: DannIbModel, xs, ys, xt, lam, beta=0.0, rng=None, eps_s=None, eps_t=None,
                adversary="reversal"):
    """Loss report and parameter gradients for one source/target batch pair.

    Gradients follow ``model.params()`` order. Heads always get the gradient
    of their own loss. The encoder gets the gradient of

    * ``reversal``: ``l_task - lam * l_dom + beta * r_ib`` (the reported total),
    * ``target``: ``l_task + lam * l_align + beta * r_ib``, where ``l_align``
      is ``-log P(some source output)`` of the domain head on target rows,
    * ``conditional``: as ``target``, but ``l_align`` is the cross-entropy of
      the domain head on target rows toward the task head's predicted class
      (same as ``target`` in binary mode).

    Noise for the stochastic encoder comes from ``eps_s``/``eps_t`` when
    given (frozen-noise checks), otherwise from ``rng``.
    """
    if adversary not in ADVERSARIES:
        raise ValueError(f"adversary must be one of {ADVERSARIES}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.shape[0] == 0 or xt.shape[0] == 0:
        raise ContractError("source and target batches must be non-empty")
    L, C = model.latent_dim, model.num_classes
    if model.stochastic:
        if eps_s is None:
            eps_s = rng.normal(xs.shape[0], L)
        if eps_t is None:
            eps_t = rng.normal(xt.shape[0], L)
    s = _side(model, xs, eps_s)
    t = _side(model, xt, eps_t)

    l_task, g_task = softmax_xent(s.z @ model.head_task.weight + model.head_task.bias, ys)
    if model.mode == "dann_binary":
        dom_s_target = np.zeros_like(ys)
        dom_t_target = np.ones(xt.shape[0], dtype=np.int64)
    else:
        dom_s_target = ys
        dom_t_target = np.full(xt.shape[0], C, dtype=np.int64)
    dom_logits_t = t.z @ model.head_dom.weight + model.head_dom.bias
    ld_s, g_dom_s = softmax_xent(s.z @ model.head_dom.weight + model.head_dom.bias, dom_s_target)
    ld_t, g_dom_t = softmax_xent(dom_logits_t, dom_t_target)
    # one domain-classification loss over the pooled source and target rows
    w_s = xs.shape[0] / (xs.shape[0] + xt.shape[0])
    l_dom = w_s * ld_s + (1.0 - w_s) * ld_t
    g_dom_s, g_dom_t = w_s * g_dom_s, (1.0 - w_s) * g_dom_t
    if adversary == "conditional" and model.mode != "dann_binary":
        task_t = t.mu @ model.head_task.weight + model.head_task.bias
        l_align, g_align = softmax_xent(dom_logits_t, np.argmax(task_t, axis=1))
    else:
        source_cols = [0] if model.mode == "dann_binary" else list(range(C))
        l_align, g_align = _source_mass_loss(dom_logits_t, source_cols)

    if model.stochastic:
        r_ib = kl_regularizer(s.mu, s.logvar) + kl_regularizer(t.mu, t.logvar)
    else:
        r_ib = 0.0
    total = l_task - lam * l_dom + beta * r_ib
    report = DannLossReport(l_task, l_dom, r_ib, lam, total, l_align)

    gw_task, dz_task = dense_backward(model.head_task, s.z, g_task)
    gw_dom_s, dz_dom_s = dense_backward(model.head_dom, s.z, g_dom_s)
    gw_dom_t, dz_dom_t = dense_backward(model.head_dom, t.z, g_dom_t)

    if adversary == "reversal":
        # the encoder sees -lam times the domain-loss gradient
        dz_s = dz_task - lam * dz_dom_s
        dz_t = -lam * dz_dom_t
    else:
        dz_s = dz_task
        dz_t = lam * (g_align @ model.head_dom.weight.T)
    if model.stochastic and beta:
        kmu_s, klv_s = _kl_grads(s.mu, s.logvar)
        kmu_t, klv_t = _kl_grads(t.mu, t.logvar)
        enc_s = _side_backward(model, s, dz_s, beta * kmu_s, beta * klv_s)
        enc_t = _side_backward(model, t, dz_t, beta * kmu_t, beta * klv_t)
    else:
        enc_s = _side_backward(model, s, dz_s)
        enc_t = _side_backward(model, t, dz_t)
    grads = [a + b for a, b in zip(enc_s, enc_t)]
    grads += gw_task + [gw_dom_s[0] + gw_dom_t[0], gw_dom_s[1] + gw_dom_t[1]]
    return report, grads


@dataclass
class DannHistory:
    epochs: list = field(default_factory=list)

    def series(self, name) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])

    def __len__(self):
        return len(self.epochs)


def _mean_report(items) -> DannLossReport:
    return DannLossReport(**{f.name: float(np.mean([getattr(r, f.name) for r in items]))
                             for f in fields(DannLossReport)})


def train_dannib(model: DannIbModel, src: FeatureDataset, tgt: FeatureDataset,
                 config: DannConfig, rng) -> tuple[DannIbModel, DannHistory]:
    """Adversarial adaptation from labeled ``src`` to unlabeled ``tgt``; in place."""
    if not src.labeled:
        raise ContractError("source must be labeled")
    if tgt.labels is not None:
        raise ContractError("target must be unlabeled; pass its training view")
    if src.d != model.d or tgt.d != model.d:
        raise ShapeError("source/target feature width differs from the model")
    if src.num_classes != model.num_classes or tgt.num_classes != model.num_classes:
        raise ContractError("source/target class count differs from the model")
    beta = config.beta if model.stochastic else 0.0
    opt = AdamState.for_params(model.params(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    history = DannHistory()
    bs = config.batch_size
    t_order = rng.permutation(tgt.n)
    t_pos = 0
    for epoch in range(config.epochs):
        lam = lambda_schedule(epoch / config.epochs)
        order = rng.permutation(src.n)
        reports = []
        for start in range(0, src.n, bs):
            idx = order[start:start + bs]
            if t_pos + len(idx) > tgt.n:
                t_order = rng.permutation(tgt.n)
                t_pos = 0
            t_idx = t_order[t_pos:t_pos + len(idx)]
            t_pos += len(idx)
            report, grads = dannib_loss(model, src.features[idx], src.labels[idx],
                                        tgt.features[t_idx], lam, beta, rng,
                                        adversary=config.adversary)
            if not report.finite() or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergenceError("adaptation loss became non-finite", epoch)
            adam_step(model.params(), grads, opt)
            reports.append(report)
        history.epochs.append(_mean_report(reports))
    return model, history


def train_source_only(model: DannIbModel, src: FeatureDataset, config: DannConfig, rng):
    """Supervised training of encoder and task head on labeled data alone.

    The domain head is untouched. Used for the time-0 reference classifier.
    """
    if not src.labeled:
        raise ContractError("source must be labeled")
    beta = config.beta if model.stochastic else 0.0
    params = model.encoder.params() + [model.head_task.weight, model.head_task.bias]
    opt = AdamState.for_params(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    history = DannHistory()
    for epoch in range(config.epochs):
        order = rng.permutation(src.n)
        reports = []
        for start in range(0, src.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = src.features[idx], src.labels[idx]
            eps = rng.normal(len(idx), model.latent_dim) if model.stochastic else None
            s = _side(model, x, eps)
            l_task, g_task = softmax_xent(s.z @ model.head_task.weight + model.head_task.bias, y)
            gw, dz = dense_backward(model.head_task, s.z, g_task)
            r_ib = kl_regularizer(s.mu, s.logvar) if model.stochastic else 0.0
            if model.stochastic and beta:
                kmu, klv = _kl_grads(s.mu, s.logvar)
                enc = _side_backward(model, s, dz, beta * kmu, beta * klv)
            else:
                enc = _side_backward(model, s, dz)
            report = DannLossReport(l_task, 0.0, r_ib, 0.0, l_task + beta * r_ib)
            if not report.finite():
                raise DivergenceError("source-only loss became non-finite", epoch)
            adam_step(params, enc + gw, opt)
            reports.append(report)
        history.epochs.append(_mean_report(reports))
    return model, history


def classify(model: DannIbModel, x):
    """Predicted classes and posteriors from the deterministic (mean) encoding.

    Ties go to the lower class index.
    """
    mu, _, _ = _encode_cached(model, x)
    post = softmax(mu @ model.head_task.weight + model.head_task.bias)
    return np.argmax(post, axis=1), post


def pseudo_label(model: DannIbModel, data: FeatureDataset, threshold: float = 0.95,
                 fallback: bool = True) -> PseudoLabelReport:
    """Keep samples whose top posterior reaches ``threshold``, labeled by argmax.

    With ``fallback``, a class left without any selection receives its single
    highest-posterior unselected sample so every class stays represented.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    pred, post = classify(model, data.features)
    selected = post.max(axis=1) >= threshold
    labels = pred.copy()
    used = []
    if fallback:
        for c in range(model.num_classes):
            if np.any(selected & (labels == c)):
                continue
            score = np.where(selected, -np.inf, post[:, c])
            if not np.isfinite(score.max()):
                continue
            i = int(np.argmax(score))
            selected[i] = True
            labels[i] = c
            used.append(c)
    idx = np.flatnonzero(selected)
    ds = FeatureDataset(data.features[idx], labels[idx], data.domain, data.num_classes)
    return PseudoLabelReport(ds, np.bincount(labels[idx], minlength=model.num_classes),
                             int(data.n - idx.size), threshold, used, idx)
