"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. The trained smoke model is a session fixture shared by the training
and quantization criteria.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from tinyasc import audit, data, metrics, quantize, trainer, zoo
from tinyasc.frontend import FrontendConfig, Waveform, log_mel

from test_audit import _random_small_graph
from test_gradients import fd_grad


def _report(n, text):
    print(f"[PASS] criterion {n}: {text}")


# --- criterion 1: frontend shape ----------------------------------------


def test_criterion_01_frontend_shape():
    """1 s of 44100 Hz audio becomes exactly a 64x51 spectrogram."""
    t0 = time.time()
    rng = np.random.default_rng(0)
    wave = Waveform(rng.uniform(-1, 1, 44100), 44100)
    spec = log_mel(wave, FrontendConfig())
    elapsed = time.time() - t0
    assert spec.data.shape == (64, 51)
    assert (spec.n_mels, spec.n_frames) == (64, 51)
    assert elapsed < 1.0
    _report(1, f"64x51 spectrogram from 1 s of audio ({elapsed:.3f} s)")


# --- criterion 2: counter-oracle equivalence ------------------------------


def test_criterion_02_counter_oracle_equivalence():
    """Analytic counters equal the brute-force oracle exactly, everywhere."""
    t0 = time.time()
    checked = 0
    for arch, f1, f2 in audit.PUBLISHED_TOTALS:
        build = zoo.build_conv_sep if arch == "conv_sep" else zoo.build_conv_mixer
        model = build(f1, f2, 3)
        analytic = (audit.count_params(model)[1], audit.count_macs(model)[1])
        assert analytic == audit.brute_force_count(model), (arch, f1, f2)
        checked += 1
    rng = np.random.default_rng(2024)
    for _ in range(20):
        model = _random_small_graph(rng)
        analytic = (audit.count_params(model)[1], audit.count_macs(model)[1])
        assert analytic == audit.brute_force_count(model)
        checked += 1
    elapsed = time.time() - t0
    assert elapsed < 10.0
    _report(2, f"analytic == brute force on {checked} graphs, zero tolerance ({elapsed:.2f} s)")


# --- criterion 3: budget verdicts on published totals ---------------------


def test_criterion_03_budget_verdicts():
    """Published totals split exactly as required around the 128K/30M budgets."""
    t0 = time.time()
    ok_params, ok_macs = audit.check_budget(46_512, 29_234_920)
    assert ok_params and ok_macs
    bad_params, bad_macs = audit.check_budget(49_008, 49_300_096)
    assert bad_params and not bad_macs
    assert audit.check_budget(128_000, 30_000_000) == (True, True)
    assert audit.check_budget(128_001, 30_000_000)[0] is False
    assert audit.check_budget(128_000, 30_000_001)[1] is False
    elapsed = time.time() - t0
    assert elapsed < 1.0
    _report(3, "pass/fail verdicts threshold-exact on published totals")


# --- criterion 4: reconciliation sweep -------------------------------------


def test_criterion_04_reconciliation_within_15_percent(tmp_path):
    """Every published row reconciles within 15% parameter deviation."""
    t0 = time.time()
    records = audit.reconcile_all()
    assert len(records) == 8
    worst = max(records, key=lambda r: r.params_deviation_pct)
    for r in records:
        assert r.params_deviation_pct <= 15.0, (
            f"{r.arch_tag} {r.filters}: {r.params_deviation_pct:.2f}%"
        )
    record_path = tmp_path / "reconciliation.csv"
    record_path.write_text(audit.reconciliation_to_csv(records))
    assert record_path.stat().st_size > 0
    elapsed = time.time() - t0
    assert elapsed < 30.0
    _report(
        4,
        f"8 rows reconciled; worst params deviation {worst.params_deviation_pct:.2f}% "
        f"({worst.arch_tag} {worst.filters[0]}-{worst.filters[1]}) ({elapsed:.1f} s)",
    )


# --- criterion 5: gradient correctness --------------------------------------


def test_criterion_05_gradients_match_finite_differences():
    """Analytic gradients match central differences to 1e-6 relative, float64."""
    from tinyasc import kernels

    t0 = time.time()
    checks = 0

    def assert_close(analytic, numeric):
        nonlocal checks
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-9)
        checks += 1

    for seed in range(3):
        rng = np.random.default_rng(seed)

        x = rng.normal(size=(2, 5, 5, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        b = rng.normal(size=3)
        r = rng.normal(size=(2, 5, 5, 3))
        gx, gw, gb = kernels.conv2d_backward(x, w, r)
        loss = lambda: float((kernels.conv2d(x, w, b) * r).sum())
        assert_close(gx, fd_grad(loss, x))
        assert_close(gw, fd_grad(loss, w))
        assert_close(gb, fd_grad(loss, b))

        x = rng.normal(size=(2, 4, 4, 3))
        w = rng.normal(size=(3, 3, 3))
        b = rng.normal(size=3)
        r = rng.normal(size=(2, 4, 4, 3))
        gx, gw, gb = kernels.depthwise_conv2d_backward(x, w, r)
        loss = lambda: float((kernels.depthwise_conv2d(x, w, b) * r).sum())
        assert_close(gx, fd_grad(loss, x))
        assert_close(gw, fd_grad(loss, w))

        x = rng.normal(size=(2, 3, 4, 3))
        w = rng.normal(size=(1, 1, 3, 4))
        b = rng.normal(size=4)
        r = rng.normal(size=(2, 3, 4, 4))
        gx, gw, gb = kernels.pointwise_conv2d_backward(x, w, r)
        loss = lambda: float((kernels.pointwise_conv2d(x, w, b) * r).sum())
        assert_close(gx, fd_grad(loss, x))
        assert_close(gw, fd_grad(loss, w))

        x = rng.normal(size=(4, 6))
        w = rng.normal(size=(6, 3))
        b = rng.normal(size=3)
        r = rng.normal(size=(4, 3))
        gx, gw, gb = kernels.dense_backward(x, w, r)
        loss = lambda: float((kernels.dense(x, w, b) * r).sum())
        assert_close(gx, fd_grad(loss, x))
        assert_close(gw, fd_grad(loss, w))
        assert_close(gb, fd_grad(loss, b))

        x = rng.normal(size=(6, 3, 2, 2))
        gamma = rng.uniform(0.5, 1.5, size=2)
        beta = rng.normal(size=2)
        r = rng.normal(size=x.shape)
        _, cache, _ = kernels.batch_norm(
            x, gamma, beta, np.zeros(2), np.ones(2), eps=1e-3, train=True
        )
        gx, g_gamma, g_beta = kernels.batch_norm_backward(cache, r)

        def bn_loss():
            y, _, _ = kernels.batch_norm(
                x, gamma, beta, np.zeros(2), np.ones(2), eps=1e-3, train=True
            )
            return float((y * r).sum())

        assert_close(gx, fd_grad(bn_loss, x))
        assert_close(g_gamma, fd_grad(bn_loss, gamma))
        assert_close(g_beta, fd_grad(bn_loss, beta))

        x = rng.normal(size=(4, 5)) * 2
        r = rng.normal(size=(4, 5))
        assert_close(kernels.elu_backward(x, r), fd_grad(lambda: float((kernels.elu(x) * r).sum()), x))
        assert_close(
            kernels.gelu_backward(x, r), fd_grad(lambda: float((kernels.gelu(x) * r).sum()), x)
        )

        x = rng.normal(size=(2, 4, 8, 2))
        r = rng.normal(size=(2, 2, 2, 2))
        _, cache = kernels.max_pool(x, (2, 4))

        def pool_loss():
            y, _ = kernels.max_pool(x, (2, 4))
            return float((y * r).sum())

        assert_close(kernels.max_pool_backward(cache, r), fd_grad(pool_loss, x))

        x = rng.normal(size=(2, 3, 4, 2))
        r = rng.normal(size=(2, 2))
        assert_close(
            kernels.global_avg_pool_backward(x.shape, r),
            fd_grad(lambda: float((kernels.global_avg_pool(x) * r).sum()), x),
        )

        x = rng.normal(size=(5, 6))
        rate = 0.3
        _, mask = kernels.dropout(x, rate, train=True, rng=np.random.default_rng(seed))
        r = rng.normal(size=(5, 6))
        assert_close(
            kernels.dropout_backward(mask, rate, r),
            fd_grad(lambda: float((x * mask / (1 - rate) * r).sum()), x),
        )

        x = rng.normal(size=(3, 7))
        r = rng.normal(size=(3, 7))
        probs = kernels.softmax(x)
        assert_close(
            kernels.softmax_backward(probs, r),
            fd_grad(lambda: float((kernels.softmax(x) * r).sum()), x),
        )

    elapsed = time.time() - t0
    assert elapsed < 60.0
    _report(5, f"{checks} gradient checks across all layer kinds within 1e-6 ({elapsed:.1f} s)")


# --- criteria 6 and 8 share the trained smoke model -------------------------

SMOKE_SEED = 7


@pytest.fixture(scope="session")
def smoke_run():
    examples = data.synth_examples(64, seed=SMOKE_SEED)
    model = zoo.init_weights(zoo.build_conv_sep(16, 16, 3), seed=SMOKE_SEED)
    cfg = trainer.TrainingConfig(
        max_epochs=200,
        batch_size=8,
        seed=SMOKE_SEED,
        adam=trainer.AdamConfig(lr=1e-2),
    )
    t0 = time.time()
    model, run = trainer.train(model, examples, cfg)
    elapsed = time.time() - t0
    return model, run, cfg, examples, elapsed


def test_criterion_06_training_smoke(smoke_run):
    """The full protocol reaches 95% training accuracy on 64 synthetic clips."""
    model, run, cfg, examples, elapsed = smoke_run
    labels = np.bincount([l for _, l in examples], minlength=10)
    assert len(examples) == 64 and labels.max() - labels.min() <= 1
    best_train = max(r.train_acc for r in run.epochs)
    reached = next((r.epoch for r in run.epochs if r.train_acc >= 0.95), None)
    assert reached is not None and reached <= 200, f"best train accuracy {best_train:.3f}"
    trainer.validate_run_invariants(run, cfg)
    assert run.stop_reason in ("max_epochs", "early_stop")
    assert elapsed < 300.0
    _report(
        6,
        f"train accuracy {best_train:.3f} (>=0.95 at epoch {reached}), "
        f"{len(run.epochs)} epochs, schedule invariants hold ({elapsed:.0f} s)",
    )


def test_criterion_07_scheduler_semantics():
    """15 flat epochs halve the rate exactly once; 30 trigger the stop."""
    t0 = time.time()
    plateau15 = [0.5] + [0.5] * 15
    lr = 1e-3
    halvings = []
    for e in range(1, len(plateau15) + 1):
        new_lr = trainer.lr_schedule_update(plateau15[:e], lr)
        if new_lr != lr:
            halvings.append(e)
        lr = new_lr
    assert halvings == [16]  # the 15th plateau epoch, exactly once
    assert lr == 0.5e-3
    assert not trainer.early_stop_check(plateau15)

    plateau30 = [0.5] + [0.5] * 30
    lr = 1e-3
    halvings = []
    for e in range(1, len(plateau30) + 1):
        new_lr = trainer.lr_schedule_update(plateau30[:e], lr)
        if new_lr != lr:
            halvings.append(e)
        lr = new_lr
    assert halvings == [16, 31]
    assert trainer.early_stop_check(plateau30)
    assert not trainer.early_stop_check(plateau30[:-1])
    elapsed = time.time() - t0
    assert elapsed < 1.0
    _report(7, "plateau of 15 -> one halving; plateau of 30 -> early stop (exact)")


def test_criterion_08_quantization_fidelity(smoke_run):
    """INT8 inference agrees with float top-1 on >=95% of 200 fresh inputs."""
    model, _, _, examples, _ = smoke_run
    t0 = time.time()
    calibration = [spec for spec, _ in examples]
    qm = quantize.quantize_model(model, calibration)

    for key, payload in qm.weight_payloads.items():
        params = qm.weight_params[key]
        idx, name = key
        original = qm.graph.layers[idx].weights[name]
        back = quantize.dequantize(payload, params)
        assert np.max(np.abs(back - original)) <= params.scale / 2 + 1e-9, key

    probe = data.synth_examples(200, seed=SMOKE_SEED + 1)
    report = quantize.agreement_report(model, qm, [s for s, _ in probe])
    elapsed = time.time() - t0
    assert report["top1_agreement"] >= 0.95, report
    assert elapsed < 60.0
    _report(
        8,
        f"top-1 agreement {report['top1_agreement']:.3f} over 200 inputs, "
        f"roundtrip within scale/2, max logit diff {report['max_logit_diff']:.4f} "
        f"({elapsed:.0f} s)",
    )


def test_criterion_09_metric_closed_forms():
    """Uniform log loss equals ln 10; perfect predictions score 0 and 1."""
    t0 = time.time()
    uniform = np.full((25, 10), 0.1)
    labels = np.arange(25) % 10
    assert abs(metrics.log_loss(uniform, labels) - np.log(10)) < 1e-9
    perfect = np.eye(10)[labels]
    assert metrics.log_loss(perfect, labels) == 0.0
    assert metrics.accuracy(perfect, labels) == 1.0
    elapsed = time.time() - t0
    assert elapsed < 1.0
    _report(9, "log_loss(uniform) = ln 10 within 1e-9; perfect -> (0 loss, accuracy 1)")


def test_criterion_10_cli_determinism(tmp_path):
    """Repeated seeded CLI runs produce byte-identical primary outputs."""
    t0 = time.time()

    def run(args):
        proc = subprocess.run(
            [sys.executable, "-m", "tinyasc.cli", *args], capture_output=True, text=True
        )
        return proc

    train_outputs = []
    for tag in ("a", "b"):
        hist = tmp_path / f"history_{tag}.csv"
        ckpt = tmp_path / f"model_{tag}.tasc"
        proc = run([
            "train", "--synthetic", "30", "--seed", "11", "--epochs", "8",
            "--filters", "4,4", "--batch-size", "10",
            "--out", str(ckpt), "--history", str(hist),
        ])
        assert proc.returncode == 0, proc.stderr
        train_outputs.append((hist.read_bytes(), ckpt.read_bytes()))
    assert train_outputs[0] == train_outputs[1]

    audit_outputs = []
    for tag in ("a", "b"):
        csv = tmp_path / f"audit_{tag}.csv"
        proc = run(["audit", "--arch", "conv_mixer", "--filters", "40,40", "--csv", str(csv)])
        assert proc.returncode == 0, proc.stderr
        audit_outputs.append(csv.read_bytes() + proc.stdout.encode())
    assert audit_outputs[0] == audit_outputs[1]

    elapsed = time.time() - t0
    assert elapsed < 300.0
    _report(10, f"train and audit outputs byte-identical across reruns ({elapsed:.0f} s)")
