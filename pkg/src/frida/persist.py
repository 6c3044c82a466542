"""Model <-> checkpoint record conversion."""
from __future__ import annotations

from frida import checkpoint
from frida.dannib import DannIbModel
from frida.dgacgan import GanModel
from frida.errors import CheckpointError
from frida.numcore import Dense, DenseNet


def _net_meta(net):
    return [layer.activation for layer in net.layers]


def _net_from(tensors, prefix, activations):
    try:
        return DenseNet([Dense(tensors[f"{prefix}.{i}.weight"], tensors[f"{prefix}.{i}.bias"], act)
                         for i, act in enumerate(activations)])
    except KeyError as e:
        raise CheckpointError(f"missing tensor {e}") from None


def _head_from(tensors, name):
    try:
        return Dense(tensors[f"{name}.weight"], tensors[f"{name}.bias"])
    except KeyError as e:
        raise CheckpointError(f"missing tensor {e}") from None


def gan_records(model: GanModel, prefix=""):
    tensors = {prefix + k: v for k, v in model.named_params().items()}
    meta = {"z_dim": model.z_dim, "C": model.num_classes, "d": model.d, "width": model.width,
            "domains_seen": model.domains_seen, "generator": _net_meta(model.generator),
            "trunk": _net_meta(model.trunk)}
    return tensors, meta


def gan_from_records(tensors, meta, prefix="") -> GanModel:
    t = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    return GanModel(_net_from(t, "generator", meta["generator"]), _net_from(t, "trunk", meta["trunk"]),
                    _head_from(t, "head_rf"), _head_from(t, "head_cls"), meta["z_dim"], meta["C"],
                    meta["d"], meta["width"], meta["domains_seen"])


def da_records(model: DannIbModel, prefix=""):
    tensors = {prefix + k: v for k, v in model.named_params().items()}
    meta = {"latent_dim": model.latent_dim, "C": model.num_classes, "d": model.d,
            "mode": model.mode, "encoder": _net_meta(model.encoder)}
    return tensors, meta


def da_from_records(tensors, meta, prefix="") -> DannIbModel:
    t = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    return DannIbModel(_net_from(t, "encoder", meta["encoder"]), _head_from(t, "head_task"),
                       _head_from(t, "head_dom"), meta["latent_dim"], meta["C"], meta["d"], meta["mode"])


def save_gan(model: GanModel, path, tau=None):
    tensors, meta = gan_records(model)
    checkpoint.save(path, "gan", max(model.domains_seen - 1, 0) if tau is None else tau, tensors, meta)


def load_gan(path) -> GanModel:
    _, _, tensors, meta = checkpoint.load(path, "gan")
    return gan_from_records(tensors, meta)


def save_dannib(model: DannIbModel, path, tau=0):
    tensors, meta = da_records(model)
    checkpoint.save(path, "dannib", tau, tensors, meta)


def load_dannib(path) -> DannIbModel:
    _, _, tensors, meta = checkpoint.load(path, "dannib")
    return da_from_records(tensors, meta)
