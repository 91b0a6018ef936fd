import json
import subprocess
import sys

import pytest

from otstereo.cli import main
from otstereo.imageio import read_pfm, write_pfm, write_pgm
from otstereo.mrt import load_weights
from otstereo.scenes import SceneSpec, generate_scene

SUITE = "scenes = 2\nwidth = 96\nheight = 64\nmax_disparity = 16\nseed = 4\n"


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    pair = generate_scene(SceneSpec(width=96, height=64, seed=2, noise=0.01, background=2,
                                    layers=[(30, 10, 70, 50, 10)]))
    write_pgm(pair.left, d / "l.pgm")
    write_pgm(pair.right, d / "r.pgm")
    write_pfm(pair.gt_disparity, d / "gt.pfm")
    write_pfm(pair.gt_occlusion, d / "occ.pfm")
    (d / "c.cfg").write_text("# test config\nrefine_iterations = 2\n")
    return d


def _match(scene, out, *extra):
    return main(["match", "--left", str(scene / "l.pgm"), "--right", str(scene / "r.pgm"),
                 "--config", str(scene / "c.cfg"), "--out", str(out), *extra])


def test_match_writes_contract_files(scene, tmp_path, capsys):
    out = tmp_path / "out"
    assert _match(scene, out, "--dump-row", "12") == 0
    for name in ("disp.pfm", "occ.pfm", "conf.pfm", "disp.png", "plan_row12.pfm", "config.cfg"):
        assert (out / name).exists()
    disp = read_pfm(out / "disp.pfm")
    assert disp.shape == (64, 96)
    plan = read_pfm(out / "plan_row12.pfm")
    assert plan.shape == (25, 25)
    assert "refine_iterations = 2" in (out / "config.cfg").read_text()
    printed = capsys.readouterr().out
    assert "matching" in printed and "residual" in printed


def test_match_is_reproducible_across_runs_and_threads(scene, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert _match(scene, a) == 0
    assert _match(scene, b) == 0
    assert _match(scene, c, "--threads", "4") == 0
    for name in ("disp.pfm", "occ.pfm", "conf.pfm"):
        ref = (a / name).read_bytes()
        assert (b / name).read_bytes() == ref and (c / name).read_bytes() == ref


def test_missing_right_image(scene, tmp_path):
    out = tmp_path / "out"
    code = main(["match", "--left", str(scene / "l.pgm"), "--right", str(tmp_path / "nope.pgm"),
                 "--out", str(out)])
    assert code == 2 and not out.exists()


def test_config_errors(scene, tmp_path):
    out = tmp_path / "out"
    assert _match(scene, out, "--set", "no_such_key=1") == 1
    assert _match(scene, out, "--set", "temperature=-1") == 1
    assert _match(scene, out, "--set", "oops") == 1
    assert _match(scene, out, "--dump-row", "999") == 1
    with pytest.raises(SystemExit) as exc:
        main(["match", "--left", "x"])
    assert exc.value.code == 1
    assert main(["match", "--left", str(scene / "l.pgm"), "--right", str(scene / "r.pgm"),
                 "--config", str(tmp_path / "missing.cfg"), "--out", str(out)]) == 1
    assert not out.exists()


def test_non_convergence_exit_code(scene, tmp_path):
    out = tmp_path / "out"
    code = _match(scene, out, "--set", "sinkhorn_iterations=1", "--set", "fail_residual=1e-6")
    assert code == 3 and not out.exists()


def test_eval_exact_prediction_gives_zero_row(scene, capsys):
    gt = str(scene / "gt.pfm")
    assert main(["eval", "--pred", gt, "--gt", gt, "--gt-occ", str(scene / "occ.pfm")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    recs = [json.loads(x) for x in lines if x.startswith("{")]
    assert {r["region"] for r in recs} == {"non_occluded", "all"}
    assert all(r["epe"] == 0 and r["rms"] == 0 for r in recs)
    row = lines[-1].split()
    assert row[0] == "pred" and all(float(v) == 0 for v in row[1:])


def test_eval_suite_iterations_and_loss(tmp_path, capsys):
    suite = tmp_path / "suite.cfg"
    suite.write_text(SUITE)
    assert main(["eval", "--generate", str(suite), "--iterations", "0,1,2,3", "--loss"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    recs = [json.loads(x) for x in out if x.startswith("{")]
    assert len(recs) == 2 * 4 * 2
    assert {r["iterations"] for r in recs} == {0, 1, 2, 3}
    for key in ("L_D", "L_O", "L_C", "L_PMC", "total", "conf_ap", "occ_ap"):
        assert key in recs[0]
    rows = [x for x in out if x.startswith("iter=")]
    assert [r.split()[0] for r in rows] == ["iter=0", "iter=1", "iter=2", "iter=3"]


def test_eval_argument_rules(scene, tmp_path):
    gt = str(scene / "gt.pfm")
    assert main(["eval", "--pred", gt, "--gt", gt, "--loss"]) == 1
    assert main(["eval", "--pred", gt, "--gt", gt, "--iterations", "0,1"]) == 1
    assert main(["eval", "--pred", gt]) == 1
    assert main(["eval", "--pred", str(tmp_path / "none.pfm"), "--gt", gt]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("scenes = many\n")
    assert main(["eval", "--generate", str(bad)]) == 1
    assert main(["eval", "--generate", str(tmp_path / "none.cfg")]) == 2


def test_gen_weights_then_match(scene, tmp_path):
    w = tmp_path / "w.bin"
    assert main(["gen-weights", "--out", str(w), "--seed", "7", "--blocks", "2"]) == 0
    weights = load_weights(w)
    assert weights.num_blocks == 2 and weights.dim == 80
    assert _match(scene, tmp_path / "o", "--set", f"weights={w}") == 0
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert _match(scene, tmp_path / "p", "--set", f"weights={tmp_path / 'junk.bin'}") == 2
    assert _match(scene, tmp_path / "q", "--set", f"weights={tmp_path / 'none.bin'}") == 2


def test_gen_scenes(tmp_path):
    suite = tmp_path / "suite.cfg"
    suite.write_text(SUITE)
    out = tmp_path / "scenes"
    assert main(["gen-scenes", "--suite", str(suite), "--out", str(out)]) == 0
    for k in range(2):
        d = out / f"scene{k:03d}"
        for name in ("left.pfm", "right.pfm", "gt_disp.pfm", "gt_occ.pfm", "scene.cfg"):
            assert (d / name).exists()
        spec = SceneSpec.from_text((d / "scene.cfg").read_text())
        pair = generate_scene(spec)
        assert read_pfm(d / "left.pfm").tobytes() == pair.left.tobytes()
    assert (out / "suite.cfg").exists()
    assert main(["gen-scenes", "--suite", str(tmp_path / "no.cfg"), "--out", str(out)]) == 2


def test_threads_from_environment(scene, tmp_path, monkeypatch):
    from otstereo.cli import load_config

    monkeypatch.setenv("OTSTEREO_THREADS", "3")
    assert load_config(None, [], None).threads == 3
    assert load_config(None, ["threads=2"], None).threads == 2
    assert load_config(None, ["threads=2"], 5).threads == 5
    monkeypatch.setenv("OTSTEREO_THREADS", "junk")
    assert load_config(None, [], None).threads == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "otstereo", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("match", "eval", "gen-weights", "gen-scenes"):
        assert cmd in res.stdout
