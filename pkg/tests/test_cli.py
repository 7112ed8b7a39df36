"""End-to-end command line tests through ``main(argv)``.

Exit codes under test: 0 ok, 2 usage, 3 no convergence, 4 degenerate
input, 5 bad file.
"""

import json

import numpy as np
import pytest

import tdoacalib as tc
import tdoacalib.io as tio
from tdoacalib.cli import main
from tdoacalib.signal import AudioClip, synthesize_chirp, write_wav


@pytest.fixture
def problem_path(tmp_path):
    path = tmp_path / "problem.json"
    rc = main([
        "simulate", "--trajectory", "1", "--mics", "4",
        "--sigma-tdoa", "1e-4", "--sigma-odo", "0.01",
        "--seed", "7", "--out", str(path),
    ])
    assert rc == 0
    return path


def strip_field(src, dst, *fields):
    data = json.loads(src.read_text())
    node = data
    for name in fields[:-1]:
        node = node[name]
    del node[fields[-1]]
    dst.write_text(json.dumps(data))
    return dst


def test_simulate_writes_problem(problem_path):
    problem = tio.read_problem(problem_path)
    assert problem.n_mics == 4
    assert problem.n_events == 8
    assert problem.truth is not None
    assert problem.tdoa_s is not None


def test_simulate_is_seed_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main([
            "simulate", "--trajectory", "2", "--mics", "5",
            "--seed", "11", "--out", str(path),
        ]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_rejects_single_mic(tmp_path, capsys):
    rc = main(["simulate", "--mics", "1", "--out", str(tmp_path / "x.json")])
    assert rc == 2
    assert "at least 2" in capsys.readouterr().err


def test_calibrate_exact_recovery_on_noiseless_file(tmp_path, capsys):
    problem = tmp_path / "clean.json"
    assert main([
        "simulate", "--trajectory", "1", "--mics", "4",
        "--sigma-tdoa", "0", "--sigma-odo", "0",
        "--seed", "3", "--out", str(problem),
    ]) == 0
    report_path = tmp_path / "report.json"
    rc = main([
        "calibrate", "--problem", str(problem), "--init", "perturbed",
        "--sigma-init", "0.1", "--seed", "1", "--out", str(report_path),
    ])
    assert rc == 0
    report = tio.read_report(report_path)
    assert report["converged"] is True
    assert report["errors"]["loc_err"] < 1e-6
    assert report["errors"]["off_err"] < 1e-9
    assert report["errors"]["dri_err"] < 1e-9
    out = capsys.readouterr().out
    assert "converged: yes" in out


def test_calibrate_noisy_baseline_mode(problem_path, tmp_path):
    report_path = tmp_path / "report.json"
    rc = main([
        "calibrate", "--problem", str(problem_path),
        "--mode", "tdoa_m_only", "--init", "perturbed", "--sigma-init", "0.3",
        "--seed", "4", "--out", str(report_path),
    ])
    assert rc == 0
    report = tio.read_report(report_path)
    assert report["mode"] == "tdoa_m_only"


def test_calibrate_hybrid_needs_inter_event_block(problem_path, tmp_path, capsys):
    bad = strip_field(problem_path, tmp_path / "no_ts.json", "measurements", "tdoa_s")
    rc = main(["calibrate", "--problem", str(bad), "--mode", "hybrid"])
    assert rc == 5
    assert "error:" in capsys.readouterr().err


def test_calibrate_iteration_ceiling_returns_no_convergence(problem_path):
    rc = main([
        "calibrate", "--problem", str(problem_path), "--init", "perturbed",
        "--sigma-init", "1.0", "--seed", "2", "--max-iter", "1",
    ])
    assert rc == 3


def test_calibrate_perturbed_init_needs_truth(problem_path, tmp_path):
    bad = strip_field(problem_path, tmp_path / "no_truth.json", "truth")
    rc = main([
        "calibrate", "--problem", str(bad), "--init", "perturbed",
        "--sigma-init", "0.1",
    ])
    assert rc == 5


def test_crlb_prints_and_writes(problem_path, tmp_path, capsys):
    out_path = tmp_path / "crlb.json"
    rc = main(["crlb", "--problem", str(problem_path), "--out", str(out_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "position bound" in out
    payload = json.loads(out_path.read_text())
    assert payload["d_crlb"]["loc"] > 0
    assert len(payload["crlb_mic"]) == 5 * 4 - 2


def test_crlb_needs_truth(problem_path, tmp_path):
    bad = strip_field(problem_path, tmp_path / "no_truth.json", "truth")
    assert main(["crlb", "--problem", str(bad)]) == 5


def test_estimate_noise(problem_path, capsys):
    rc = main(["estimate-noise", "--problem", str(problem_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "inter-event" in out and "cases" in out


def test_estimate_noise_needs_truth(problem_path, tmp_path):
    bad = strip_field(problem_path, tmp_path / "no_truth.json", "truth")
    assert main(["estimate-noise", "--problem", str(bad)]) == 5


def test_extract_pipeline(tmp_path):
    fs = 16000
    chirp = synthesize_chirp(0.05, 500.0, 3000.0, fs).channel(0) * 0.7
    onsets = np.array([4000, 12000, 20000])
    delays = [0, 23, -17]
    chans = []
    for delay in delays:
        x = np.zeros(26000)
        for onset in onsets:
            x[onset + delay : onset + delay + chirp.size] += chirp
        chans.append(x)
    wav = tmp_path / "scene.wav"
    write_wav(wav, AudioClip(np.vstack(chans), fs))

    out = tmp_path / "measurements.json"
    rc = main([
        "extract", "--audio", str(wav), "--events", "3", "--out", str(out),
    ])
    assert rc == 0
    payload = tio.read_measurements(out)
    assert payload["n_channels"] == 3
    assert payload["n_events"] == 3
    ts = np.asarray(payload["tdoa_s"][0])
    np.testing.assert_allclose(ts, np.diff(onsets) / fs, atol=0)
    tm = np.asarray(payload["tdoa_m"])
    np.testing.assert_allclose(tm[0], 23 / fs, atol=0)
    np.testing.assert_allclose(tm[1], -17 / fs, atol=0)


def test_extract_wrong_event_count(tmp_path):
    fs = 16000
    chirp = synthesize_chirp(0.05, 500.0, 3000.0, fs).channel(0) * 0.7
    x = np.zeros(16000)
    x[4000 : 4000 + chirp.size] = chirp
    wav = tmp_path / "one.wav"
    write_wav(wav, AudioClip(x, fs))
    rc = main(["extract", "--audio", str(wav), "--events", "2",
               "--out", str(tmp_path / "m.json")])
    assert rc == 4


def test_extract_missing_file(tmp_path):
    rc = main(["extract", "--audio", str(tmp_path / "absent.wav"),
               "--events", "2", "--out", str(tmp_path / "m.json")])
    assert rc == 5


def test_run_grid_bytes_identical(tmp_path):
    config = tmp_path / "grid.json"
    tio.write_grid_config(config, tc.ExperimentGrid(
        trajectories=(1,),
        mic_counts=(4,),
        init_mode="perturbed",
        init_noise_sds=(0.0,),
        trials_per_cell=2,
        seed=5,
    ))
    outputs = []
    for run in ("first", "second"):
        out_dir = tmp_path / run
        rc = main(["run-grid", "--config", str(config), "--out-dir", str(out_dir)])
        assert rc == 0
        assert (out_dir / "grid.json").exists()
        outputs.append((
            (out_dir / "trials.csv").read_bytes(),
            (out_dir / "aggregates.csv").read_bytes(),
        ))
    assert outputs[0] == outputs[1]
    header = outputs[0][0].split(b"\n", 1)[0].decode()
    assert header == ",".join(tio.TRIAL_COLUMNS)


def test_run_grid_part_and_config_are_exclusive(tmp_path):
    rc = main(["run-grid", "--part", "a", "--config", "x.json",
               "--out-dir", str(tmp_path)])
    assert rc == 2
    assert main(["run-grid", "--out-dir", str(tmp_path)]) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["unknown-command"]) == 2
    assert main(["calibrate"]) == 2  # --problem is required


def test_calibrate_missing_problem_file(tmp_path):
    rc = main(["calibrate", "--problem", str(tmp_path / "absent.json")])
    assert rc == 5
