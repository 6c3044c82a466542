"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (also repeated
in the terminal summary). Training-based criteria use the packaged desk
preset on the default benchmark, five seeds.

    pytest tests/test_acceptance.py -v
"""
import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import central_diff, record_criterion, rel_error
from frida.config import preset
from frida.dannib import (ADVERSARIES, MODES, DannConfig, DannIbModel, dannib_loss, kl_regularizer,
                          pseudo_label, train_dannib)
from frida.dannib import _kl_grads
from frida.datamodel import FeatureDataset, concat
from frida.dgacgan import (GanConfig, GanModel, RealBatch, discriminator_grads, generator_grads,
                           sample_features, train_gan)
from frida.evaluation import AccuracyMatrix, forgetting, report
from frida.numcore import RngStream
from frida.orchestrator import (DA_INIT, DA_TRAIN, GAN_INIT, GAN_TRAIN, ablate_pair, replay_sets,
                                resume, run, split_domains)
from frida.synthgen import BenchmarkSpec, make_benchmark

SEEDS = range(5)
DESK = preset("desk")


@pytest.fixture(scope="module")
def runs():
    """Full runs with and without replay for every seed, plus their splits."""
    out = {}
    for seed in SEEDS:
        cfg = replace(DESK, seed=seed)
        data = make_benchmark(BenchmarkSpec(seed=seed))
        out[seed] = dict(cfg=cfg, split=split_domains(data, cfg), frida=run(cfg, data),
                         plain=run(replace(cfg, replay=False), data))
    return out


# ------------------------------------------------------------- gradients

def _gan_instance(seed):
    rng = RngStream(seed)
    cfg = GanConfig(z_dim=4, gen_hidden=(6,), trunk_hidden=(5, 4))
    C, d = 3, 4
    model = GanModel.init(d, C, cfg, rng.spawn(0))
    n = 6
    real = RealBatch(rng.normal(n, d), np.arange(n) % C, (np.arange(n) // C) % 2)
    return model, real, rng


def _dann_instance(seed, mode):
    rng = RngStream(seed)
    cfg = DannConfig(latent_dim=2, hidden=(5,), mode=mode)
    model = DannIbModel.init(4, 3, cfg, rng.spawn(0))
    # random biases: zero biases under dead units give exactly tied class
    # scores, where the predicted-class target of the conditional form jumps
    for p in model.params()[1::2]:
        p += 0.3 * rng.normal(1, p.size)[0]
    return model, rng.normal(5, 4), np.arange(5) % 3, rng.normal(4, 4), rng


def test_criterion_1_gradients():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        # discriminator and generator objectives
        model, real, rng = _gan_instance(seed)
        fake, y_f, t_f = rng.normal(5, 4), np.array([0, 1, 2, 0, 1]), np.array([0, 1, 0, 1, 1])
        _, _, g = discriminator_grads(model, real, fake, y_f, t_f)
        num = central_diff(lambda: sum(discriminator_grads(model, real, fake, y_f, t_f)[:2]),
                           model.disc_params())
        worst = max(worst, rel_error(g, num))
        z, targets = rng.normal(5, 4), rng.normal(5, 4)
        ok = np.array([True, False, True, True, True])
        for literal in (False, True):
            _, _, g = generator_grads(model, z, y_f, t_f, targets, ok, 1.0, literal)
            num = central_diff(lambda: generator_grads(model, z, y_f, t_f, targets, ok, 1.0, literal)[0],
                               model.gen_params())
            worst = max(worst, rel_error(g, num))
        # bottleneck regulariser alone
        mu, lv = rng.normal(3, 2), rng.normal(3, 2)
        gm, gl = _kl_grads(mu, lv)
        worst = max(worst, rel_error([gm, gl], central_diff(lambda: kl_regularizer(mu, lv), [mu, lv])))
        # adaptation objective in every mode, through reversal and sampling
        for mode in MODES:
            for adversary in ADVERSARIES:
                m, xs, ys, xt, rng = _dann_instance(seed, mode)
                eps_s, eps_t = rng.normal(5, 2), rng.normal(4, 2)
                lam, beta = 0.1 + 0.8 * rng.uniform(1)[0], 0.5

                def rep():
                    return dannib_loss(m, xs, ys, xt, lam, beta, eps_s=eps_s, eps_t=eps_t,
                                       adversary=adversary)[0]

                def enc_obj():
                    r = rep()
                    return r.total if adversary == "reversal" else r.l_task + lam * r.l_align + beta * r.r_ib

                _, g = dannib_loss(m, xs, ys, xt, lam, beta, eps_s=eps_s, eps_t=eps_t, adversary=adversary)
                k = len(m.encoder.params())
                p = m.params()
                worst = max(worst, rel_error(g[:k], central_diff(enc_obj, p[:k])),
                            rel_error(g[k:k + 2], central_diff(lambda: rep().l_task, p[k:k + 2])),
                            rel_error(g[k + 2:], central_diff(lambda: rep().l_dom, p[k + 2:])))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    record_criterion(1, ok, f"max relative error {worst:.2e} over 20 instances, {elapsed:.1f}s")
    assert ok


def test_criterion_2_binary_objective():
    worst = 0.0
    for seed in range(20):
        m, xs, ys, xt, _ = _dann_instance(100 + seed, "dann_binary")
        lam = RngStream(seed).uniform(1)[0]
        rep, _ = dannib_loss(m, xs, ys, xt, lam, beta=0.0, adversary="reversal")

        def latent(x):
            h = np.maximum(x @ m.encoder.layers[0].weight + m.encoder.layers[0].bias, 0)
            return (h @ m.encoder.layers[1].weight + m.encoder.layers[1].bias)[:, :m.latent_dim]

        def nll(logits, target):
            z = logits - logits.max(axis=1, keepdims=True)
            return -(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))[np.arange(len(target)), target]

        zs, zt = latent(xs), latent(xt)
        l_c = nll(zs @ m.head_task.weight + m.head_task.bias, ys).mean()
        l_d = np.concatenate([nll(zs @ m.head_dom.weight + m.head_dom.bias, np.zeros(len(xs), int)),
                              nll(zt @ m.head_dom.weight + m.head_dom.bias, np.ones(len(xt), int))]).mean()
        expect = l_c - lam * l_d
        worst = max(worst, abs(rep.total - expect) / abs(expect))
    ok = worst < 1e-10
    record_criterion(2, ok, f"max relative error {worst:.2e} over 20 random models")
    assert ok


def test_criterion_3_kl_closed_form():
    a = kl_regularizer(np.zeros((1, 2)), np.zeros((1, 2)))
    b = kl_regularizer([[1.0, 0.0]], [[0.0, 0.0]])
    rng = np.random.default_rng(0)
    negatives = sum(kl_regularizer(rng.normal(size=(3, 4)) * 2, rng.normal(size=(3, 4)) * 2) < 0
                    for _ in range(1000))
    ok = abs(a) <= 1e-12 and abs(b - 0.5) <= 1e-12 and negatives == 0
    record_criterion(3, ok, f"KL(0,0)={a}, KL([1,0],0)={b}, negatives in 1000 draws: {negatives}")
    assert ok


# ------------------------------------------------------------- training

def test_criterion_4_replay_versus_no_replay(runs):
    f_fgt = [abs(forgetting(r["frida"].matrix, 0)) for r in runs.values()]
    p_fgt = [abs(forgetting(r["plain"].matrix, 0)) for r in runs.values()]
    f_acc = [r["frida"].matrix.get(2, 0) for r in runs.values()]
    p_acc = [r["plain"].matrix.get(2, 0) for r in runs.values()]
    mf, mp = np.median(f_fgt), np.median(p_fgt)
    af, ap = np.median(f_acc), np.median(p_acc)
    ok = mf < mp and af >= ap + 0.10
    record_criterion(4, ok, f"median |forgetting| {mf:.4f} (replay) vs {mp:.4f} (no replay); "
                            f"final source accuracy {af:.4f} vs {ap:.4f}")
    assert mf < mp, "replay must forget strictly less than the no-replay run"
    assert af >= ap + 0.10, "replay must end at least 10 points higher on the source"


def test_criterion_5_ablation_ordering():
    res = ablate_pair(DESK, seeds=list(SEEDS))
    b, mc, ib = (res.median(m) for m in MODES)
    ok = ib >= mc - 0.01 and mc >= b - 0.01
    record_criterion(5, ok, f"median target accuracy binary {b:.4f}, multiclass {mc:.4f}, ib {ib:.4f}")
    assert ok


def _probe_rate(gan, tau, class_means):
    synth = sample_features(gan, tau, 100, RngStream(12345))
    d2 = ((synth.features[:, None, :] - class_means[None]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d2, axis=1) == synth.labels))


def _toy_fidelity():
    """One domain, two classes in the plane, 200 samples, 200 epochs."""
    rng = RngStream(2024)
    y = np.arange(200) % 2
    x = np.where(y[:, None] == 1, 2.0, -2.0) * np.array([1.0, 0.5]) + 0.7 * rng.normal(200, 2)
    data = FeatureDataset(x, y, 0, 2)
    cfg = replace(DESK.gan, epochs=200)
    gan = GanModel.init(2, 2, cfg, rng.spawn(1))
    train_gan(gan, data, cfg, rng.spawn(2))
    means = np.stack([x[y == c].mean(axis=0) for c in range(2)])
    return _probe_rate(gan, 0, means)


def test_criterion_6_generative_fidelity(runs):
    toy = _toy_fidelity()
    fresh, replayed = [], []
    for r in runs.values():
        src = r["split"][0][0]
        means = np.stack([src.features[src.labels == c].mean(axis=0) for c in range(src.num_classes)])
        fresh.append(_probe_rate(r["frida"].states[0].gan, 0, means))
        replayed.append(_probe_rate(r["frida"].states[1].gan, 0, means))
    a, b = min(fresh), min(replayed)
    ok = toy >= 0.90 and a >= 0.90 and b >= 0.80
    record_criterion(6, ok, f"probe agreement on the 2-class toy set {toy:.3f}; benchmark source "
                            f"{a:.3f}, domain 0 after domain 1 {b:.3f} (worst seeds)")
    assert ok


def _precision(model, data_hidden, threshold, fallback):
    rep = pseudo_label(model, data_hidden.training_view(), threshold, fallback)
    return rep.selected.labels, data_hidden.labels[rep.indices]


def test_criterion_7_pseudo_label_precision(runs):
    p95, p50 = [], []
    for r in runs.values():
        train = r["split"][0]
        cfg = r["cfg"]
        for store, th in ((p95, 0.95), (p50, 0.5)):
            got, truth = [], []
            for tau in (1, 2):
                a, b = _precision(r["frida"].states[tau].da, train[tau], th, cfg.fallback)
                got.append(a)
                truth.append(b)
            store.append(float(np.mean(np.concatenate(got) == np.concatenate(truth))))
    m95, m50 = np.median(p95), np.median(p50)
    ok = m95 >= 0.95 and m95 >= m50
    record_criterion(7, ok, f"median precision {m95:.4f} at Th=0.95, {m50:.4f} at Th=0.5")
    assert ok


def _epochs_to_reach(warm_series, cold_series):
    target = cold_series[9]
    hit = np.flatnonzero(np.asarray(warm_series) <= target)
    return int(hit[0]) + 1 if hit.size else math.inf


def test_criterion_8_warm_start(runs):
    gan_epochs, da_epochs = [], {1: [], 2: []}
    for seed, r in runs.items():
        cfg, root = r["cfg"], RngStream(seed)
        train = r["split"][0]
        states, infos = r["frida"].states, r["frida"].infos
        # GAN_1 from scratch on the same real data, same training stream
        real = replay_sets(states[0], cfg) + [infos[1].pseudo.selected]
        cold = GanModel.init(train[0].d, train[0].num_classes, cfg.gan, root.spawn(GAN_INIT, 1), cfg.width)
        _, cold_hist = train_gan(cold, real, replace(cfg.gan, epochs=10), root.spawn(GAN_TRAIN, 1))
        gan_epochs.append(_epochs_to_reach(infos[1].gan_history.series("g_loss"),
                                           cold_hist.series("g_loss")))
        for tau in (1, 2):
            src = concat(replay_sets(states[tau - 1], cfg), domain=0)
            cold = DannIbModel.init(train[0].d, train[0].num_classes, cfg.da, root.spawn(DA_INIT, tau))
            _, cold_hist = train_dannib(cold, src, train[tau].training_view(), cfg.da,
                                        root.spawn(DA_TRAIN, tau))
            da_epochs[tau].append(_epochs_to_reach(infos[tau].da_history.series("l_task"),
                                                   cold_hist.series("l_task")))
    g = np.median(gan_epochs)
    d1, d2 = np.median(da_epochs[1]), np.median(da_epochs[2])
    ok = g <= 5 and d1 <= 5 and d2 <= 5
    record_criterion(8, ok, f"median epochs to cold epoch-10 loss: GAN_1 {g:g}, DA_1 {d1:g}, DA_2 {d2:g}")
    assert ok


def test_criterion_9_determinism(tmp_path):
    cfg = replace(DESK, seed=0)
    data = make_benchmark(BenchmarkSpec(seed=0))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    run(cfg, data, out_dir=a)
    run(cfg, data, out_dir=b)
    run(cfg, data, out_dir=c, stop_after=1)
    resume(c / "state_1.ckpt", c / "train" / "domain_2.txt")
    names = [f"state_{k}.ckpt" for k in range(3)] + ["metrics.csv", "report.json"]
    same_twice = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    same_resumed = all((a / n).read_bytes() == (c / n).read_bytes() for n in names)
    ok = same_twice and same_resumed
    record_criterion(9, ok, f"repeat run identical: {same_twice}; resumed run identical: {same_resumed}")
    assert ok


# ------------------------------------------------------------- metrics

def test_criterion_10_metric_identities():
    rng = np.random.default_rng(0)
    const = AccuracyMatrix()
    for k in range(4):
        for tau in range(k + 1):
            const.set(k, tau, 0.6)
    const_ok = all(forgetting(const, tau) == 0.0 for tau in range(4))
    tele_err = 0.0
    for _ in range(200):
        T = int(rng.integers(1, 6))
        m = AccuracyMatrix()
        for k in range(T + 1):
            for tau in range(k + 1):
                m.set(k, tau, float(rng.uniform()))
        for tau in range(T):
            closed = (m.get(T, tau) - m.get(tau, tau)) / (T - tau)
            tele_err = max(tele_err, abs(forgetting(m, tau) - closed))
    table = AccuracyMatrix()
    rows = {0: [0.9475, 0.9513, 0.9521], 1: [0.9842, 0.9823, 0.9636], 2: [1.0, 0.9813], 3: [0.8842]}
    for tau, accs in rows.items():
        for k, v in zip(range(max(tau, 1), 4), accs):
            table.set(k, tau, v)
    rep = report(table)
    sheet = {0: (0.95030, 0.0023), 1: (0.97670, -0.0103), 2: (0.99065, -0.0187), 3: (0.8842, 0.0)}
    sheet_err = max(max(abs(rep.average_accuracy[t] - a), abs(rep.forgetting[t] - f))
                    for t, (a, f) in sheet.items())
    ok = const_ok and tele_err < 1e-12 and sheet_err < 1e-12
    record_criterion(10, ok, f"constant rows zero: {const_ok}; telescoped error {tele_err:.1e}; "
                             f"table error {sheet_err:.1e}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
