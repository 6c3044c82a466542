"""Binary checkpoint format and model persistence."""
import hashlib
import struct

import numpy as np
import pytest

from frida import checkpoint
from frida.dannib import DannConfig, DannIbModel
from frida.dgacgan import GanConfig, GanModel
from frida.errors import CheckpointError
from frida.numcore import RngStream
from frida.persist import load_dannib, load_gan, save_dannib, save_gan


def _tensors():
    rng = RngStream(0)
    return {"a": rng.normal(2, 3), "b.bias": rng.normal(1, 4) * 1e300, "c": np.zeros((0, 5))}


class TestFormat:
    def test_layout_by_hand(self):
        """A one-record file decoded with struct alone."""
        blob = checkpoint.encode("gan", 2, {"w": np.array([[1.5, -2.0]])})
        header = b"FRIDA-CKPT v1 gan tau=2\n"
        assert blob.startswith(header)
        pos = len(header)
        assert struct.unpack_from("<I", blob, pos) == (1,)
        assert struct.unpack_from("<I", blob, pos + 4) == (1,)
        assert blob[pos + 8:pos + 9] == b"w"
        assert struct.unpack_from("<II", blob, pos + 9) == (1, 2)
        assert struct.unpack_from("<2d", blob, pos + 17) == (1.5, -2.0)
        assert blob[-32:] == hashlib.sha256(blob[:-32]).digest()
        assert len(blob) == pos + 17 + 16 + 32

    def test_round_trip_bit_exact(self):
        t = _tensors()
        comp, tau, back, meta = checkpoint.decode(checkpoint.encode("x", 7, t, {"k": [1, "two"]}))
        assert (comp, tau, meta) == ("x", 7, {"k": [1, "two"]})
        assert list(back) == list(t)
        for k in t:
            assert back[k].tobytes() == t[k].tobytes()
            assert back[k].shape == t[k].shape

    def test_special_values_survive(self):
        t = {"s": np.array([[np.nan, np.inf, -0.0, 5e-324]])}
        back = checkpoint.decode(checkpoint.encode("x", 0, t))[2]["s"]
        assert back.tobytes() == t["s"].tobytes()

    def test_component_mismatch(self):
        blob = checkpoint.encode("gan", 0, {})
        with pytest.raises(CheckpointError, match="expected a 'dannib'"):
            checkpoint.decode(blob, "dannib")

    def test_corruption_detected(self):
        blob = bytearray(checkpoint.encode("gan", 0, _tensors()))
        blob[40] ^= 1
        with pytest.raises(CheckpointError, match="checksum"):
            checkpoint.decode(bytes(blob))

    def test_truncation_detected(self):
        blob = checkpoint.encode("gan", 0, _tensors())
        for cut in (10, len(blob) // 2, len(blob) - 1):
            with pytest.raises(CheckpointError):
                checkpoint.decode(blob[:cut])

    def test_version_checked(self):
        body = b"FRIDA-CKPT v9 gan tau=0\n" + struct.pack("<I", 0)
        with pytest.raises(CheckpointError, match="version v9"):
            checkpoint.decode(body + hashlib.sha256(body).digest())

    def test_trailing_bytes(self):
        body = b"FRIDA-CKPT v1 gan tau=0\n" + struct.pack("<I", 0) + b"xx"
        with pytest.raises(CheckpointError, match="trailing"):
            checkpoint.decode(body + hashlib.sha256(body).digest())

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "junk"
        p.write_bytes(b"hello" * 20)
        with pytest.raises(CheckpointError, match="bad header"):
            checkpoint.load(p)
        with pytest.raises(CheckpointError, match="cannot read"):
            checkpoint.load(tmp_path / "missing")


class TestModelPersistence:
    def test_gan_round_trip(self, tmp_path):
        cfg = GanConfig(z_dim=4, gen_hidden=(6,), trunk_hidden=(5, 3))
        m = GanModel.init(3, 2, cfg, RngStream(1))
        m.domains_seen = 2
        save_gan(m, tmp_path / "g.ckpt")
        back = load_gan(tmp_path / "g.ckpt")
        assert back.domains_seen == 2 and back.z_dim == 4
        for k, v in m.named_params().items():
            assert back.named_params()[k].tobytes() == v.tobytes()
        assert checkpoint.load(tmp_path / "g.ckpt")[1] == 1

    def test_dannib_round_trip(self, tmp_path):
        cfg = DannConfig(latent_dim=3, hidden=(5,), mode="dann_binary")
        m = DannIbModel.init(4, 3, cfg, RngStream(2))
        save_dannib(m, tmp_path / "d.ckpt", tau=1)
        back = load_dannib(tmp_path / "d.ckpt")
        assert back.mode == "dann_binary" and back.head_dom.weight.shape == (3, 2)
        for k, v in m.named_params().items():
            assert back.named_params()[k].tobytes() == v.tobytes()

    def test_wrong_component(self, tmp_path):
        m = DannIbModel.init(2, 2, DannConfig(latent_dim=2, hidden=(3,)), RngStream(0))
        save_dannib(m, tmp_path / "d.ckpt")
        with pytest.raises(CheckpointError):
            load_gan(tmp_path / "d.ckpt")
