"""Episode loop, persistence, resumption and the single-pair ablation."""
from dataclasses import replace

import numpy as np
import pytest

from frida.config import RunConfig
from frida.dannib import DannConfig
from frida.datamodel import FeatureDataset
from frida.dgacgan import GanConfig, sample_features
from frida.errors import CheckpointError, ContractError
from frida.numcore import RngStream
from frida.orchestrator import (ablate_pair, evaluate_states, load_state, read_manifest,
                                replay_sets, resume, run, run_episode, run_episode_0,
                                save_state, split_domains, state_bytes)
from frida.synthgen import BenchmarkSpec, make_benchmark

TINY = RunConfig(gan=GanConfig(z_dim=6, gen_hidden=(16,), trunk_hidden=(16, 8), epochs=3),
                 da=DannConfig(latent_dim=4, hidden=(16,), epochs=3), per_class=10)


def tiny_data(seed=0):
    return make_benchmark(BenchmarkSpec(num_classes=3, d=6, n_per_class=30, seed=seed))


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run(TINY, tiny_data(), out_dir=out)


class TestEpisodes:
    def test_episode_zero(self):
        train, _ = split_domains(tiny_data(), TINY)
        state = run_episode_0(TINY, train[0])
        assert state.tau == 0 and len(state.registry) == 1
        synth = sample_features(state.gan, 0, TINY.per_class, RngStream(0))
        assert synth.n == TINY.per_class * 3 and synth.labeled

    def test_unlabeled_source_rejected(self):
        train, _ = split_domains(tiny_data(), TINY)
        with pytest.raises(ContractError):
            run_episode_0(TINY, train[1])

    def test_labeled_target_rejected(self):
        train, _ = split_domains(tiny_data(), TINY)
        state = run_episode_0(TINY, train[0])
        with pytest.raises(ContractError):
            run_episode(state, train[0], TINY)

    def test_replay_size(self, full_run):
        """Episode tau replays tau * per_class * C samples."""
        for tau, info in enumerate(full_run.infos[1:], start=1):
            assert info.replay_size == tau * TINY.per_class * 3

    def test_first_replay_is_source_only(self, full_run):
        sets = replay_sets(full_run.states[0], TINY)
        assert [s.domain for s in sets] == [0]

    def test_registry_grows_by_one(self, full_run):
        assert [len(s.registry) for s in full_run.states] == [1, 2, 3]
        assert [d.tau for d in full_run.states[-1].registry] == [0, 1, 2]

    def test_histories_finite(self, full_run):
        for info in full_run.infos:
            assert all(r.finite() for r in info.da_history.epochs)
            assert all(r.finite() for r in info.gan_history.epochs)

    def test_matrix_shape(self, full_run):
        m = full_run.matrix
        assert m.T == 2
        assert sorted(m.entries) == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]

    def test_config_hash_checked(self, full_run):
        other = replace(TINY, per_class=11)
        train, _ = split_domains(tiny_data(), TINY)
        with pytest.raises(ContractError):
            run_episode(full_run.states[0], train[1].training_view(), other)

    def test_episode_sees_only_given_domain(self, full_run, monkeypatch):
        """No raw data from earlier domains is read once an episode starts."""
        import frida.orchestrator as orch
        seen = []
        real_train = orch.train_dannib

        def spy(model, src, tgt, cfg, rng):
            seen.append((src.domain, tgt.domain))
            return real_train(model, src, tgt, cfg, rng)

        monkeypatch.setattr(orch, "train_dannib", spy)
        monkeypatch.setattr(orch, "read_dataset", lambda *a: pytest.fail("read raw data"))
        train, _ = split_domains(tiny_data(), TINY)
        run_episode(full_run.states[1], train[2].training_view(), TINY)
        assert seen == [(0, 2)]

    def test_no_replay_runs(self):
        res = run(replace(TINY, replay=False), tiny_data())
        assert res.states[-1].gan is None
        assert res.matrix.T == 2


class TestPersistence:
    def test_round_trip_bytes(self, full_run, tmp_path):
        state = full_run.states[1]
        p = tmp_path / "s.ckpt"
        save_state(state, p, TINY)
        loaded, cfg = load_state(p)
        assert state_bytes(loaded, cfg.to_text()) == p.read_bytes()
        assert loaded.rng == state.rng and cfg == TINY

    def test_tampered_byte(self, full_run, tmp_path):
        p = tmp_path / "s.ckpt"
        save_state(full_run.states[1], p, TINY)
        blob = bytearray(p.read_bytes())
        blob[len(blob) // 2] ^= 1
        p.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_state(p)

    def test_same_seed_same_files(self, full_run, tmp_path):
        again = run(TINY, tiny_data(), out_dir=tmp_path)
        for k in range(3):
            name = f"state_{k}.ckpt"
            assert (tmp_path / name).read_bytes() == (full_run.out_dir / name).read_bytes()
        assert (tmp_path / "metrics.csv").read_text() == (full_run.out_dir / "metrics.csv").read_text()
        assert again.matrix == full_run.matrix

    def test_manifest(self, full_run):
        info, states = read_manifest(full_run.out_dir / "run_manifest.txt")
        assert info["config_hash"] == TINY.digest() and info["T"] == "2"
        assert sorted(states) == [0, 1, 2]

    def test_resume_equals_uninterrupted(self, full_run, tmp_path):
        run(TINY, tiny_data(), out_dir=tmp_path, stop_after=1)
        res = resume(tmp_path / "state_1.ckpt", tmp_path / "train" / "domain_2.txt")
        assert (tmp_path / "state_2.ckpt").read_bytes() == (full_run.out_dir / "state_2.ckpt").read_bytes()
        assert (tmp_path / "metrics.csv").read_text() == (full_run.out_dir / "metrics.csv").read_text()
        assert res.matrix == full_run.matrix

    def test_resume_wrong_domain(self, full_run, tmp_path):
        run(TINY, tiny_data(), out_dir=tmp_path, stop_after=1)
        with pytest.raises(ContractError):
            resume(tmp_path / "state_1.ckpt", tmp_path / "train" / "domain_1.txt")

    def test_evaluate_states(self, full_run):
        _, states = read_manifest(full_run.out_dir / "run_manifest.txt")
        m = evaluate_states([states[k] for k in sorted(states)], full_run.out_dir / "test")
        assert m == full_run.matrix


class TestAblation:
    def test_table_and_medians(self):
        res = ablate_pair(replace(TINY, ablate_seeds=2), datasets_for=tiny_data)
        assert res.seeds == [0, 1]
        assert set(res.accuracies) == {"dann_binary", "dann_multiclass", "dann_ib"}
        lines = res.table().splitlines()
        assert lines[0].split() == ["mode", "seed0", "seed1", "median"]
        assert len(lines) == 4
        for accs in res.accuracies.values():
            assert all(0.0 <= a <= 1.0 for a in accs)

    def test_deterministic(self):
        a = ablate_pair(TINY, seeds=[3], datasets_for=tiny_data)
        b = ablate_pair(TINY, seeds=[3], datasets_for=tiny_data)
        assert a.accuracies == b.accuracies
