import json

import pytest

from umot.cli import main
from umot.fileio import load_json, read_field_json, write_field_list_json

SCENARIO = {
    "grid": {"nx": 18, "ny": 18, "hx": 1 / 17, "hy": 1 / 17},
    "eta": 1.0,
    "background": {"type": "constant", "gamma0": 1.0, "sigma0": 0.5},
    "boundary_set": {
        "type": "constant_bg",
        "dirs": [[1, 0], [0, 1], [0.7071067811865476, 0.7071067811865476]],
    },
    "phantom": {
        "bumps": [
            {"center": [0.4, 0.45], "radius": 0.2, "amplitude": 0.02, "target": "gamma"},
            {"center": [0.6, 0.6], "radius": 0.18, "amplitude": 0.01, "target": "sigma"},
        ]
    },
    "noise": {"level": 0.0, "seed": 11},
    "inversion": {"path": "linearized"},
}


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SCENARIO))
    return path


def test_pipeline_golden_run(tmp_path, scenario_file):
    out = tmp_path / "run"
    rc = main(["pipeline", "--scenario", str(scenario_file), "--out", str(out)])
    assert rc == 0
    manifest = load_json(out / "manifest.json")
    names = {o["path"] for o in manifest["outputs"]}
    assert "certify.json" in names
    assert "reconstruction.json" in names
    assert "H_0.json" in names and "H_0.csv" in names
    report = load_json(out / "certify.json")
    assert report["elliptic"] is True
    rec = load_json(out / "reconstruction.json")
    assert rec["err_dgamma_rel"] < 0.05
    assert rec["normal_residual"] < 1e-9


def test_pipeline_determinism(tmp_path, scenario_file):
    rc1 = main(["pipeline", "--scenario", str(scenario_file), "--out", str(tmp_path / "a")])
    rc2 = main(["pipeline", "--scenario", str(scenario_file), "--out", str(tmp_path / "b")])
    assert rc1 == rc2 == 0
    ma = load_json(tmp_path / "a" / "manifest.json")
    mb = load_json(tmp_path / "b" / "manifest.json")
    assert ma["outputs"] == mb["outputs"]
    assert ma["config_digest"] == mb["config_digest"]


def test_pipeline_rejects_two_direction_set(tmp_path):
    bad = json.loads(json.dumps(SCENARIO))
    bad["boundary_set"]["dirs"] = [[1, 0], [0, 1]]
    spath = tmp_path / "bad.json"
    spath.write_text(json.dumps(bad))
    rc = main(["pipeline", "--scenario", str(spath), "--out", str(tmp_path / "run")])
    assert rc != 0
    # the failing stage kept its prior outputs
    assert (tmp_path / "run" / "scenario.json").exists()
    assert not (tmp_path / "run" / "manifest.json").exists()


def test_forward_and_certify_commands(tmp_path, scenario_file, monkeypatch):
    monkeypatch.setenv("UMOT_LOG", "info")
    out = tmp_path / "fwd"
    assert main(
        ["forward", "--scenario", str(scenario_file), "--out", str(out), "--threads", "1"]
    ) == 0
    u0 = read_field_json(out / "u_0.json")
    assert u0.grid.nx == 18
    assert (out / "H_2.csv").exists()

    report_path = tmp_path / "report.json"
    rc = main(
        ["certify", "--scenario", str(scenario_file), "--xi-samples", "64",
         "--report", str(report_path)]
    )
    assert rc == 0
    rep = load_json(report_path)
    assert rep["elliptic"] is True
    assert rep["xi_samples"] == 64


def test_linearize_command(tmp_path, scenario_file):
    # build dH with the pipeline, then invert through the standalone command
    out = tmp_path / "run"
    assert main(["pipeline", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    dH = [read_field_json(out / f"dH_{j}.json") for j in range(3)]
    dh_path = tmp_path / "dh.json"
    write_field_list_json(dH, dh_path)
    v_path = tmp_path / "v.json"
    rc = main(
        ["linearize", "--scenario", str(scenario_file), "--dh", str(dh_path),
         "--out", str(v_path)]
    )
    assert rc == 0
    v = load_json(v_path)
    assert v["normal_residual"] < 1e-9
    assert v["injectivity_probe_rel"] > 1e-6


def test_linearize_command_with_normal_data(tmp_path, scenario_file):
    # interior-supported truth has vanishing normal data, so supplying g = 0
    # through the lift route must reproduce the default solve
    out = tmp_path / "run"
    assert main(["pipeline", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    dH = [read_field_json(out / f"dH_{j}.json") for j in range(3)]
    dh_path = tmp_path / "dh.json"
    write_field_list_json(dH, dh_path)
    nb = 4 * 18 - 4
    g_path = tmp_path / "g.json"
    g_path.write_text(json.dumps({"components": [{"values": [0.0] * nb}] * 5}))
    va_path, vb_path = tmp_path / "va.json", tmp_path / "vb.json"
    assert main(
        ["linearize", "--scenario", str(scenario_file), "--dh", str(dh_path),
         "--out", str(va_path)]
    ) == 0
    assert main(
        ["linearize", "--scenario", str(scenario_file), "--dh", str(dh_path),
         "--out", str(vb_path), "--g", str(g_path)]
    ) == 0
    va, vb = load_json(va_path), load_json(vb_path)
    a = va["dgamma"]["values"]
    b = vb["dgamma"]["values"]
    assert max(abs(x - y) for x, y in zip(a, b)) < 1e-10


def test_constbg_command(tmp_path, scenario_file):
    out = tmp_path / "run"
    assert main(["pipeline", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    dH = [read_field_json(out / f"dH_{j}.json") for j in range(3)]
    dh_path = tmp_path / "dh.json"
    write_field_list_json(dH, dh_path)
    dirs_path = tmp_path / "dirs.json"
    dirs_path.write_text(json.dumps({"dim": 2, "vectors": SCENARIO["boundary_set"]["dirs"]}))
    rec_path = tmp_path / "rec.json"
    rc = main(
        ["constbg", "--gamma0", "1.0", "--sigma0", "0.5", "--eta", "1.0",
         "--dirs", str(dirs_path), "--dh", str(dh_path), "--out", str(rec_path)]
    )
    assert rc == 0
    assert "dgamma" in load_json(rec_path)


def test_reconstruct_command(tmp_path, scenario_file):
    out = tmp_path / "run"
    assert main(["pipeline", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    hmeas = [read_field_json(out / f"H_{j}.json") for j in range(3)]
    h_path = tmp_path / "hmeas.json"
    write_field_list_json(hmeas, h_path)
    from umot import ScalarField
    from umot.fileio import dump_json, field_to_dict

    g = hmeas[0].grid
    init = {
        "gamma": field_to_dict(ScalarField.constant(g, 1.0)),
        "sigma": field_to_dict(ScalarField.constant(g, 0.5)),
    }
    init_path = tmp_path / "init.json"
    dump_json(init, init_path)
    res_path = tmp_path / "result.json"
    trace_path = tmp_path / "trace.csv"
    rc = main(
        ["reconstruct", "--scenario", str(scenario_file), "--hmeas", str(h_path),
         "--init", str(init_path), "--mode", "frozen", "--out", str(res_path),
         "--log", str(trace_path)]
    )
    assert rc == 0
    res = load_json(res_path)
    assert res["converged"] is True
    assert trace_path.read_text().splitlines()[0] == "k,residual,step,damping"


def test_nonlinear_pipeline_path(tmp_path):
    scen = json.loads(json.dumps(SCENARIO))
    scen["inversion"] = {"path": "nonlinear", "kmax": 15}
    spath = tmp_path / "s.json"
    spath.write_text(json.dumps(scen))
    out = tmp_path / "run"
    rc = main(["pipeline", "--scenario", str(spath), "--out", str(out)])
    assert rc == 0
    rec = load_json(out / "reconstruction.json")
    assert rec["converged"] is True
    assert max(rec["error_vs_truth"]) < 1e-3
    assert (out / "trace.csv").exists()


def test_cgo_pipeline_path(tmp_path):
    scen = json.loads(json.dumps(SCENARIO))
    scen["grid"] = {"nx": 20, "ny": 20, "hx": 1 / 19, "hy": 1 / 19}
    scen["background"] = {"type": "constant", "gamma0": 1.0, "sigma0": 0.2}
    scen["boundary_set"] = {"type": "cgo", "M": 4.0, "k": 1.0}
    scen["phantom"] = {"bumps": [
        {"center": [0.4, 0.45], "radius": 0.2, "amplitude": 0.02, "target": "gamma"}
    ]}
    spath = tmp_path / "s.json"
    spath.write_text(json.dumps(scen))
    out = tmp_path / "run"
    assert main(["pipeline", "--scenario", str(spath), "--out", str(out)]) == 0
    rep = load_json(out / "certify.json")
    assert rep["elliptic"] is True
    rec = load_json(out / "reconstruction.json")
    assert len(rec["du"]) == 5
    assert rec["err_dgamma_rel"] < 0.05


def test_noisy_nonlinear_pipeline_keeps_best_iterate(tmp_path):
    # noise makes the target tolerance unreachable; the semi-convergent sweep
    # trips the divergence guard, the stage fails, and the best iterate is
    # still written as an artifact
    scen = json.loads(json.dumps(SCENARIO))
    scen["noise"] = {"level": 0.002, "seed": 31}
    scen["inversion"] = {"path": "nonlinear", "kmax": 20}
    spath = tmp_path / "s.json"
    spath.write_text(json.dumps(scen))
    out = tmp_path / "run"
    rc = main(["pipeline", "--scenario", str(spath), "--out", str(out)])
    assert rc != 0
    rec = load_json(out / "reconstruction.json")
    assert rec["diverged"] is True
    assert rec["converged"] is False
    assert max(rec["error_vs_truth"]) < 0.05  # noise-floor reconstruction
    assert not (out / "manifest.json").exists()


def test_noise_pipeline_deterministic(tmp_path):
    scen = json.loads(json.dumps(SCENARIO))
    scen["noise"] = {"level": 0.001, "seed": 99}
    spath = tmp_path / "s.json"
    spath.write_text(json.dumps(scen))
    rc1 = main(["pipeline", "--scenario", str(spath), "--out", str(tmp_path / "a")])
    rc2 = main(["pipeline", "--scenario", str(spath), "--out", str(tmp_path / "b")])
    assert rc1 == rc2 == 0
    ma = load_json(tmp_path / "a" / "manifest.json")
    mb = load_json(tmp_path / "b" / "manifest.json")
    assert ma["outputs"] == mb["outputs"]
