import io
import json
import time
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from facemap.cli import PipelineConfig, main
from facemap.geodesics import load_dmat
from facemap.mesh import load_mesh


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = main([str(a) for a in argv])
        except SystemExit as exc:
            code = exc.code
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    d = tmp_path_factory.mktemp("assets")
    code, out, err = run("make-synthetic", d)
    assert code == 0, err
    return d


def pipeline(assets, out: Path, threads: int):
    """Every subcommand once; returns stdout summaries (minus wall time) keyed by step."""
    out.mkdir()
    t = ("--threads", threads)
    steps = {
        "geodesic_all": ("geodesic", assets / "icosphere.obj", "--all-pairs", "-o", out / "ico.dmat"),
        "geodesic_src": ("geodesic", assets / "grid.obj", "--source", 0, "-o", out / "grid_src.txt"),
        "geodesic_tpl": ("geodesic", assets / "template.obj", "--all-pairs", "-o", out / "t.dmat"),
        "embed": ("embed", out / "t.dmat", "-o", out / "t.emb"),
        "atlas": ("atlas", assets / "template.obj", out / "t.emb", "-o", out / "t.atlas"),
        "encode": ("encode", assets / "template.obj", out / "t.atlas", "-o", out / "t.gmap", "--png", out / "t.png"),
        "decode": ("decode", out / "t.gmap", out / "t.atlas", "-o", out / "dec.obj"),
        "fit": ("fit", assets / "landmarks.jsonl", assets / "model.blm", out / "fit",
                "--template", assets / "model_template.obj"),
        "augment": ("augment", assets / "template.obj", "happy", assets / "bank" / "manifest.json",
                    assets / "weights", "-o", out / "aug.obj"),
        "metrics": ("metrics", assets / "pred", assets / "ref", assets / "mouth.idx"),
        "windows": ("windows", assets / "speech.feat", "-o", out / "speech.win"),
        "region_weights": ("region-weights", assets / "template.obj", assets / "upper.idx", assets / "lower.idx",
                           out / "rw"),
        "make_synthetic": ("make-synthetic", out / "syn"),
    }
    summaries = {}
    for name, argv in steps.items():
        code, stdout, err = run(*argv, *t)
        assert code == 0, f"{name}: {err}"
        doc = json.loads(stdout)
        assert doc.pop("wall_time_s") >= 0
        summaries[name] = json.dumps(doc, sort_keys=True).replace(str(out), "<OUT>")
    return summaries


@pytest.fixture(scope="module")
def runs(assets, tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    start = time.perf_counter()
    s1 = pipeline(assets, base / "t1", 1)
    s8 = pipeline(assets, base / "t8", 8)
    return base, s1, s8, time.perf_counter() - start


def tree(d: Path):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_outputs_byte_identical_across_threads(runs):
    base, s1, s8, _ = runs
    a, b = tree(base / "t1"), tree(base / "t8")
    assert sorted(a) == sorted(b)
    differ = [k for k in a if a[k] != b[k]]
    assert not differ


def test_stdout_identical_across_threads(runs):
    _, s1, s8, _ = runs
    assert s1 == s8


def test_rerun_is_byte_identical(assets, runs, tmp_path):
    base, *_ = runs
    code, _, err = run("encode", assets / "template.obj", base / "t1" / "t.atlas", "-o", tmp_path / "x.gmap",
                       "--png", tmp_path / "x.png")
    assert code == 0, err
    assert (tmp_path / "x.png").read_bytes() == (base / "t1" / "t.png").read_bytes()
    assert (tmp_path / "x.gmap").read_bytes() == (base / "t1" / "t.gmap").read_bytes()


def test_geodesic_all_pairs_output_valid(runs):
    base, *_ = runs
    D = load_dmat(base / "t1" / "ico.dmat").values
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0) and np.all(D >= 0)


def test_summaries_content(runs):
    _, s1, *_ = runs
    enc = json.loads(s1["encode"])
    assert enc["shape"] == [128, 128, 3]
    fit = json.loads(s1["fit"])
    assert fit["frames"] == 10
    met = json.loads(s1["metrics"])
    assert set(met) == {"RE", "VE", "CE"} and met["RE"] > 0
    assert json.loads(s1["windows"])["shape"] == [120, 16, 29]


def test_decoded_mesh_close_to_template(assets, runs):
    base, *_ = runs
    tpl = load_mesh(assets / "template.obj")
    dec = load_mesh(base / "t1" / "dec.obj")
    err = np.linalg.norm(dec.vertices - tpl.vertices, axis=1).max()
    assert err <= 2 * tpl.bbox_diagonal() / 128


def test_region_weights_match_synthetic_assets(assets, runs):
    base, *_ = runs
    for name in ("upper.wgt", "lower.wgt"):
        assert (base / "t1" / "rw" / name).read_bytes() == (assets / "weights" / name).read_bytes()


def test_suite_runtime_budget(runs):
    *_, elapsed = runs
    assert elapsed < 120


def test_bad_path_exit_2(tmp_path):
    code, out, err = run("geodesic", tmp_path / "missing.obj", "--all-pairs", "-o", tmp_path / "x.dmat")
    assert code == 2 and out == ""
    doc = json.loads(err.strip().splitlines()[-1])
    assert "missing.obj" in doc.get("path", "") + doc["message"]


def test_bad_source_exit_3(assets, tmp_path):
    code, _, err = run("geodesic", assets / "grid.obj", "--source", 10_000, "-o", tmp_path / "s.txt")
    assert code == 3
    assert json.loads(err.strip().splitlines()[-1])["error"] == "ValidationError"


def test_malformed_mesh_exit_2(tmp_path):
    (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 zz 0\n")
    code, _, err = run("geodesic", tmp_path / "bad.obj", "--source", 0, "-o", tmp_path / "s.txt")
    assert code == 2


def test_usage_error_exit_3(tmp_path):
    code, _, err = run("windows")
    assert code == 3
    code, _, _ = run("windows", tmp_path / "f.feat", "-o", tmp_path / "w.win", "--window", 7)
    assert code == 3


def test_numerical_error_exit_4(tmp_path):
    # collinear points: the MDS embedding is one-dimensional
    from facemap.geodesics import DistanceMatrix, save_dmat

    x = np.linspace(0, 1, 6)
    save_dmat(DistanceMatrix(np.abs(x[:, None] - x[None])), tmp_path / "line.dmat")
    code, _, err = run("embed", tmp_path / "line.dmat", "-o", tmp_path / "e.emb")
    assert code == 4


def test_neutral_augment_exit_3(assets, tmp_path):
    code, _, _ = run("augment", assets / "template.obj", "neutral", assets / "bank" / "manifest.json",
                     assets / "weights", "-o", tmp_path / "a.obj")
    assert code == 3


def test_config_round_trip(assets, tmp_path):
    cfg = tmp_path / "cfg.json"
    args = ("windows", assets / "speech.feat", "--window", 8)
    code, _, _ = run(*args, "-o", tmp_path / "a.win", "--dump-config", cfg)
    assert code == 0
    assert json.loads(cfg.read_text())["window"] == 8
    code, _, _ = run("windows", assets / "speech.feat", "-o", tmp_path / "b.win", "--config", cfg)
    assert code == 0
    assert (tmp_path / "a.win").read_bytes() == (tmp_path / "b.win").read_bytes()


def test_config_from_environment(assets, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"window": 4}))
    monkeypatch.setenv("FACEMAP_CONFIG", str(cfg))
    code, out, _ = run("windows", assets / "speech.feat", "-o", tmp_path / "w.win")
    assert code == 0 and json.loads(out)["shape"] == [120, 4, 29]


def test_config_validation(tmp_path):
    with pytest.raises(Exception):
        PipelineConfig.from_dict({"bogus": 1})
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"resolution": 1}))
    code, _, _ = run("windows", tmp_path / "x.feat", "-o", tmp_path / "w.win", "--config", cfg)
    assert code == 3
