import json
import os

import numpy as np
import pytest

from beamkit.cli import main
from beamkit.io import read_wav, write_wav
from beamkit.roomsim import sample_scene, save_scene

SIM_ARGS = [
    "simulate", "--num-examples", "2", "--task", "sep2", "--duration", "0.6",
    "--mics", "2", "--max-order", "0",
]


def _dir_bytes(root):
    out = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as fh:
            out[name] = fh.read()
    return out


def _simulate(tmp_path, label, extra):
    out = str(tmp_path / label)
    rc = main(SIM_ARGS + ["--out-dir", out] + extra)
    assert rc == 0
    return out


def test_simulate_is_deterministic(tmp_path):
    a = _simulate(tmp_path, "a", ["--seed", "7"])
    b = _simulate(tmp_path, "b", ["--seed", "7"])
    c = _simulate(tmp_path, "c", ["--seed", "8"])
    assert _dir_bytes(a) == _dir_bytes(b)
    assert _dir_bytes(a) != _dir_bytes(c)


def test_simulate_jobs_do_not_change_output(tmp_path):
    a = _simulate(tmp_path, "a", ["--seed", "3"])
    b = _simulate(tmp_path, "b", ["--seed", "3", "--jobs", "2"])
    assert _dir_bytes(a) == _dir_bytes(b)


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("BEAMKIT_SEED", "7")
    a = _simulate(tmp_path, "a", [])
    monkeypatch.delenv("BEAMKIT_SEED")
    b = _simulate(tmp_path, "b", ["--seed", "7"])
    assert _dir_bytes(a) == _dir_bytes(b)


def test_separate_then_evaluate(tmp_path, capsys):
    data = _simulate(tmp_path, "data", ["--seed", "11"])
    manifest = os.path.join(data, "manifest.json")
    before = _dir_bytes(data)

    est = str(tmp_path / "est")
    rc = main([
        "separate", "--manifest", manifest, "--out-dir", est,
        "--bf-stages", "1", "--window-ms", "32", "--context", "2",
    ])
    assert rc == 0
    index_path = os.path.join(est, "trace_index.json")
    with open(index_path) as fh:
        index = json.load(fh)
    assert [e["name"] for e in index["examples"]] == ["ex0000", "ex0001"]
    for ex in index["examples"]:
        assert sorted(ex["stages"]) == ["BF1", "MN1", "MN2"]
        for files in ex["stages"].values():
            assert len(files) == 2
            for f in files:
                assert os.path.exists(os.path.join(est, f))

    report = str(tmp_path / "report.tsv")
    rc = main([
        "evaluate", "--manifest", manifest, "--trace-index", index_path,
        "--report", report,
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mean SI-SNRi" in out

    lines = open(report).read().strip().split("\n")
    assert lines[0].startswith("example\tstage\tsource")
    assert len(lines) == 1 + 2 * 2  # two examples, two sources
    with open(str(tmp_path / "report.json")) as fh:
        summary = json.load(fh)
    assert summary["num_examples"] == 2
    # the default scored stage is the last one in the trace
    assert all(v["stage"] == "MN2" for v in summary["per_example"].values())
    assert summary["mean_si_snri_db"] > 0.0
    # inputs are left untouched
    assert _dir_bytes(data) == before


def test_evaluate_perfect_estimates_hits_clamp(tmp_path):
    data = _simulate(tmp_path, "data", ["--seed", "5", "--num-examples", "1"])
    manifest = os.path.join(data, "manifest.json")
    est = str(tmp_path / "est")
    os.mkdir(est)
    files = []
    for j in range(2):
        img = read_wav(os.path.join(data, f"ex0000_image{j}.wav"))
        fname = f"perfect_s{j}.wav"
        write_wav(os.path.join(est, fname), img.samples[:1], img.sample_rate)
        files.append(fname)
    index = {
        "schema_version": 1,
        "sample_rate": 16000,
        "manifest": manifest,
        "examples": [{"name": "ex0000", "task": "sep2",
                      "stages": {"MN1": files}, "timing": {}}],
    }
    index_path = os.path.join(est, "trace_index.json")
    with open(index_path, "w") as fh:
        json.dump(index, fh)
    report = str(tmp_path / "perfect.tsv")
    rc = main(["evaluate", "--manifest", manifest,
               "--trace-index", index_path, "--report", report])
    assert rc == 0
    with open(str(tmp_path / "perfect.json")) as fh:
        summary = json.load(fh)
    np.testing.assert_allclose(
        summary["per_example"]["ex0000"]["si_snr_db"], [60.0, 60.0]
    )


def test_sweep_single_cell_matches_separate_evaluate(tmp_path):
    data = _simulate(tmp_path, "data", ["--seed", "11"])
    manifest = os.path.join(data, "manifest.json")

    est = str(tmp_path / "est")
    rc = main([
        "separate", "--manifest", manifest, "--out-dir", est,
        "--bf-stages", "1", "--window-ms", "32", "--context", "2",
    ])
    assert rc == 0
    report = str(tmp_path / "bf1.tsv")
    rc = main([
        "evaluate", "--manifest", manifest,
        "--trace-index", os.path.join(est, "trace_index.json"),
        "--report", report, "--stage", "BF1",
    ])
    assert rc == 0
    with open(str(tmp_path / "bf1.json")) as fh:
        eval_summary = json.load(fh)

    sweep_report = str(tmp_path / "sweep.tsv")
    rc = main([
        "sweep", "--manifest", manifest, "--report", sweep_report,
        "--windows-ms", "32", "--contexts", "2", "--mics", "2",
    ])
    assert rc == 0
    with open(str(tmp_path / "sweep.json")) as fh:
        sweep_summary = json.load(fh)
    assert len(sweep_summary["cells"]) == 1
    cell = sweep_summary["cells"][0]
    assert cell["label"] == "TI 32ms x 2"
    assert sweep_summary["best"]["label"] == "TI 32ms x 2"
    # estimates round-trip through float32 WAVs in one path, so allow a hair
    np.testing.assert_allclose(
        cell["mean_si_snri_db"], eval_summary["mean_si_snri_db"], atol=1e-5
    )
    dat = open(str(tmp_path / "sweep.dat")).read().strip().split("\n")
    assert dat[0].startswith("#")
    assert len(dat) == 2


def test_sweep_jobs_do_not_change_report(tmp_path):
    data = _simulate(tmp_path, "data", ["--seed", "2", "--num-examples", "1"])
    manifest = os.path.join(data, "manifest.json")
    reports = []
    for label, jobs in (("r1", "1"), ("r2", "2")):
        path = str(tmp_path / f"{label}.tsv")
        rc = main(["sweep", "--manifest", manifest, "--report", path,
                   "--windows-ms", "16,32", "--contexts", "1", "--mics", "2",
                   "--jobs", jobs])
        assert rc == 0
        reports.append(open(path).read())
    assert reports[0] == reports[1]


def test_fixed_assignment_task_evaluates_in_order(tmp_path):
    out = str(tmp_path / "enh")
    rc = main(["simulate", "--num-examples", "1", "--task", "enh2noise3",
               "--duration", "0.5", "--mics", "2", "--max-order", "0",
               "--seed", "4", "--out-dir", out])
    assert rc == 0
    manifest = os.path.join(out, "manifest.json")
    est = str(tmp_path / "est")
    rc = main(["separate", "--manifest", manifest, "--out-dir", est,
               "--bf-mode", "none"])
    assert rc == 0
    report = str(tmp_path / "enh.tsv")
    rc = main(["evaluate", "--manifest", manifest,
               "--trace-index", os.path.join(est, "trace_index.json"),
               "--report", report])
    assert rc == 0
    with open(str(tmp_path / "enh.json")) as fh:
        summary = json.load(fh)
    assert summary["per_example"]["ex0000"]["permutation"] == [0, 1]


def test_rir_subcommand(tmp_path, capsys):
    scene = sample_scene(np.random.default_rng(0), 1, mic_subset=2)
    scene_path = str(tmp_path / "scene.json")
    save_scene(scene_path, scene)
    out = str(tmp_path / "rir.wav")
    rc = main(["rir", "--scene", scene_path, "--out", out, "--max-order", "1"])
    assert rc == 0
    assert "taps" in capsys.readouterr().out
    wav = read_wav(out)
    assert wav.samples.shape[0] == 1
    assert np.all(np.isfinite(wav.samples))
    assert np.abs(wav.samples).max() > 0.0


def test_errors_exit_nonzero_with_diagnostic(tmp_path, capsys):
    rc = main(["separate", "--manifest", str(tmp_path / "nope.json"),
               "--out-dir", str(tmp_path / "o")])
    assert rc == 2
    assert "beamkit: error:" in capsys.readouterr().err

    rc = main(["rir", "--scene", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "r.wav")])
    assert rc == 2
    assert "beamkit: error:" in capsys.readouterr().err


def test_evaluate_rejects_unknown_stage(tmp_path, capsys):
    data = _simulate(tmp_path, "data", ["--seed", "9", "--num-examples", "1"])
    manifest = os.path.join(data, "manifest.json")
    est = str(tmp_path / "est")
    rc = main(["separate", "--manifest", manifest, "--out-dir", est,
               "--bf-mode", "none"])
    assert rc == 0
    rc = main(["evaluate", "--manifest", manifest,
               "--trace-index", os.path.join(est, "trace_index.json"),
               "--report", str(tmp_path / "r.tsv"), "--stage", "BF9"])
    assert rc == 2
    assert "no stage BF9" in capsys.readouterr().err


def test_unknown_flag_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--frobnicate"])
    assert exc.value.code != 0
