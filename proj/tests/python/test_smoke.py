import json
import math
import os
import subprocess

import pytest

import qfeel

TINY = {
    "seed": 3,
    "devices": 3,
    "dimension": 32,
    "train_samples": 3000,
    "validation_samples": 300,
    "batch_size": 16,
    "probe_rounds": 60,
    "train_repeats": 2,
    "sweep_repeats": 1,
    "sweep_q": [2, 4],
    "track_q": [4],
    "max_rounds": 400,
    "oracle_q_max": 16,
    "epsilon": 0.05,
}


def test_quantize_round_trip():
    qg = qfeel.quantize([5.0, 0.0], 2, seed=1)
    assert list(qg.levels) == [2, 0]
    assert qfeel.dequantize(qg) == pytest.approx([5.0, 0.0])
    assert len(qfeel.quantize([0.3, -0.4, 1.2], 8)) == 3
    assert qfeel.payload_bits(1024, 3) == pytest.approx(3072)


def test_channel_values():
    assert qfeel.exp_integral_ei(-1.0) == pytest.approx(-0.2193839344, abs=1e-10)
    assert qfeel.ergodic_rate(1.0, 1.0) == pytest.approx(0.8604, abs=1e-4)
    with pytest.raises(qfeel.QfeelError):
        qfeel.exp_integral_ei(1.0)


def test_allocation_and_optimizer():
    net = qfeel.NetworkConfig()
    profiles = [
        qfeel.DeviceProfile(f, 1e8, qfeel.dbm_to_watts(1.0), qfeel.large_scale_gain(300.0))
        for f in (2e8, 5e8, 9e8)
    ]
    alloc = qfeel.allocate_bandwidth(profiles, net, qfeel.payload_bits(1024, 8))
    assert sum(alloc.bandwidths_hz) == pytest.approx(net.total_bandwidth_hz, rel=1e-6)
    assert alloc.bandwidths_hz[0] > alloc.bandwidths_hz[2]

    h = qfeel.FitDerived(43.01, 48.79, 0.012)
    assert qfeel.rounds_needed(h, 4, 6, 1024) == 107
    res = qfeel.joint_optimize(profiles, net, 1024, h)
    best = min(row["T_total"] for row in qfeel.brute_force_sweep(profiles, net, 1024, h))
    assert res.plan.predicted_total_s <= 1.05 * best
    assert res.plan.q >= 2


def test_fit_recovers_model_traces():
    truth = qfeel.GapFit()
    truth.A, truth.B, truth.C, truth.D, truth.Z = 2.0, 5.0, 3.0, 0.4, 0.25
    traces = {
        q: [truth.Z + qfeel.predict_gap(truth, q, n, 6, 1024) for n in range(1, 101)] for q in (4, 6)
    }
    fit = qfeel.fit_gap_model(traces[4], 4, traces[6], 6, 1024, 6)
    assert fit.A == pytest.approx(2.0, rel=1e-2)
    assert fit.Z == pytest.approx(0.25, abs=1e-3)
    with pytest.raises(qfeel.InvalidInput):
        qfeel.fit_gap_model(traces[4], 4, traces[4], 4, 1024, 6)


def test_pipeline_from_python(tmp_path):
    defaults = qfeel.default_config()
    assert defaults["devices"] == 6 and defaults["q1"] == 4
    out = qfeel.run_pipeline(TINY, tmp_path)
    assert out["failure"] is None
    assert out["plan"]["q"] >= 2
    assert out["simulated"]
    assert (tmp_path / "summary.txt").exists()
    with pytest.raises(qfeel.ConfigError):
        qfeel.run_pipeline({"no_such_key": 1})


CLI = os.environ.get("QFEEL_CLI")
needs_cli = pytest.mark.skipif(not CLI, reason="QFEEL_CLI not set")


def run_cli(*args):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, timeout=300)


@needs_cli
def test_cli_exit_codes(tmp_path):
    assert run_cli("--help").returncode == 0
    assert run_cli("pipeline", "--bogus").returncode == 2
    assert run_cli().returncode == 2

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"q1": 4, "q2": 4}))
    assert run_cli("pipeline", "--config", bad, "--quiet").returncode == 2

    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "run"
    done = run_cli("pipeline", "--config", cfg, "--out", out, "--quiet")
    assert done.returncode == 0, done.stderr
    assert "q* =" in done.stdout or "q*" in done.stdout
    assert (out / "plan.json").exists()

    # Missing traces are an I/O failure.
    assert run_cli("fit", "--config", cfg, "--traces", tmp_path / "empty", "--out", tmp_path / "f").returncode == 1


@needs_cli
def test_cli_stagewise(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "stages"
    assert run_cli("sweep", "--config", cfg, "--out", out, "--quiet").returncode == 0
    fit = run_cli("fit", "--config", cfg, "--out", out)
    assert fit.returncode == 0, fit.stderr
    assert "H1" in fit.stdout
    assert run_cli("optimize", "--config", cfg, "--out", out).returncode == 0
    plan = json.loads((out / "plan.json").read_text())
    assert set(plan) == {"q", "b_hz", "T_d_s", "N_eps", "T_total_s"}
    oracle = run_cli("oracle", "--config", cfg, "--out", out, "--q-max", 8)
    assert oracle.returncode == 0
    assert (out / "oracle_sweep.csv").read_text().startswith("q,T_d,N_eps,T_total")
    assert math.isfinite(plan["T_total_s"])
