import hashlib
import json

import numpy as np
import pytest

from support import gaussian_blur, make_sharp_image, run_cli
from vitpercep import weights_io as wio
from vitpercep.images import load_image, save_png
from vitpercep.losses import LossConfig, total_loss


def sha256_file(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("cliws")
    code, _ = run_cli(["gen-toy", "--out", str(d / "toy.vpw1")])
    assert code == 0
    sharp = make_sharp_image()
    save_png(d / "sharp.png", sharp, bitdepth=16)
    save_png(d / "blurred.png", gaussian_blur(sharp), bitdepth=16)
    return d


def loss_argv(ws, recon, ref, *extra):
    return ["loss", "--weights", str(ws / "toy.vpw1"), "--layer", "2",
            *extra, str(ws / recon), str(ws / ref)]


# ---------------------------------------------------------------------------
# gen-toy


def test_gen_toy_reports_hash(ws):
    out = json.loads(run_cli(["gen-toy", "--out", str(ws / "hash.vpw1")])[1])
    assert out["sha256"] == sha256_file(ws / "hash.vpw1")


def test_gen_toy_same_flags_byte_identical(tmp_path):
    a = tmp_path / "a.vpw1"
    b = tmp_path / "b.vpw1"
    assert run_cli(["gen-toy", "--seed", "5", "--out", str(a)])[0] == 0
    assert run_cli(["gen-toy", "--seed", "5", "--out", str(b)])[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_toy_rejects_indivisible_heads(tmp_path):
    code, _ = run_cli(["gen-toy", "--dim", "8", "--heads", "3",
                       "--out", str(tmp_path / "x.vpw1")])
    assert code == 3


def test_gen_toy_manifest_rerun_reproduces_file(tmp_path):
    out = tmp_path / "re.vpw1"
    assert run_cli(["gen-toy", "--seed", "2", "--out", str(out)])[0] == 0
    want = out.read_bytes()
    out.unlink()
    code, _ = run_cli(["rerun", "--manifest", str(out) + ".manifest.json"])
    assert code == 0
    assert out.read_bytes() == want


# ---------------------------------------------------------------------------
# loss


def test_loss_identity_pair_is_zero(ws):
    code, text = run_cli(loss_argv(ws, "sharp.png", "sharp.png"))
    assert code == 0
    out = json.loads(text)
    assert out["deblur_term"] == 0.0
    assert out["percep_term"] == 0.0
    assert out["total"] == 0.0


def test_loss_defaults_are_materialized(ws):
    out = json.loads(run_cli(loss_argv(ws, "blurred.png", "sharp.png"))[1])
    assert out["config"]["lam"] == 1.0
    assert out["config"]["mask_ratio"] == 0.5
    glob = json.loads(run_cli(loss_argv(ws, "blurred.png", "sharp.png",
                                        "--loss", "global"))[1])
    assert glob["config"]["lam"] == 1e-5
    assert glob["config"]["mask_ratio"] == 0.0


def test_loss_lambda_zero_total_is_pixel_term(ws):
    out = json.loads(run_cli(loss_argv(ws, "blurred.png", "sharp.png",
                                       "--lambda", "0"))[1])
    assert out["total"] == out["deblur_term"]
    assert out["percep_term"] > 0.0


def test_loss_matches_library_call(ws):
    out = json.loads(run_cli(loss_argv(ws, "blurred.png", "sharp.png"))[1])
    _, bundle = wio.load(ws / "toy.vpw1")
    report = total_loss(load_image(ws / "blurred.png"),
                        load_image(ws / "sharp.png"),
                        bundle, LossConfig(layer=2))
    assert out["deblur_term"] == report.deblur_term
    assert out["percep_term"] == report.percep_term
    assert out["total"] == report.total


def test_loss_manifest_hashes_inputs(ws):
    out = json.loads(run_cli(loss_argv(ws, "blurred.png", "sharp.png"))[1])
    inputs = out["manifest"]["inputs"]
    assert inputs[str(ws / "sharp.png")] == sha256_file(ws / "sharp.png")
    assert inputs[str(ws / "toy.vpw1")] == sha256_file(ws / "toy.vpw1")
    assert out["manifest"]["argv"][0] == "loss"


def test_loss_f32_fast_path(ws):
    code, text = run_cli(loss_argv(ws, "blurred.png", "sharp.png",
                                   "--precision", "f32"))
    assert code == 0
    f32 = json.loads(text)["total"]
    f64 = json.loads(run_cli(loss_argv(ws, "blurred.png", "sharp.png"))[1])["total"]
    assert f32 == pytest.approx(f64, rel=1e-3)


def test_loss_oversized_image_cropped_by_default(ws, tmp_path):
    big = np.pad(make_sharp_image(), ((2, 2), (2, 2), (0, 0)), mode="edge")
    save_png(tmp_path / "big.png", big, bitdepth=16)
    code, _ = run_cli(["loss", "--weights", str(ws / "toy.vpw1"), "--layer", "1",
                       str(tmp_path / "big.png"), str(ws / "sharp.png")])
    assert code == 0
    code, _ = run_cli(["loss", "--weights", str(ws / "toy.vpw1"), "--layer", "1",
                       "--refuse-crop",
                       str(tmp_path / "big.png"), str(ws / "sharp.png")])
    assert code == 3


def test_loss_layer_beyond_depth_exits_3(ws):
    code, _ = run_cli(["loss", "--weights", str(ws / "toy.vpw1"), "--layer", "9",
                       str(ws / "sharp.png"), str(ws / "sharp.png")])
    assert code == 3


@pytest.mark.parametrize("breakage", ["missing-weights", "text-weights",
                                      "corrupt-weights", "missing-image",
                                      "text-image"])
def test_loss_io_failures_exit_2(ws, tmp_path, breakage):
    weights = ws / "toy.vpw1"
    image = ws / "sharp.png"
    if breakage == "missing-weights":
        weights = tmp_path / "nope.vpw1"
    elif breakage == "text-weights":
        weights = tmp_path / "w.vpw1"
        weights.write_bytes(b"not a container")
    elif breakage == "corrupt-weights":
        weights = tmp_path / "c.vpw1"
        blob = bytearray((ws / "toy.vpw1").read_bytes())
        blob[-5] ^= 0xFF
        weights.write_bytes(bytes(blob))
    elif breakage == "missing-image":
        image = tmp_path / "nope.png"
    else:
        image = tmp_path / "i.png"
        image.write_bytes(b"plain text")
    code, _ = run_cli(["loss", "--weights", str(weights), "--layer", "1",
                       str(image), str(ws / "sharp.png")])
    assert code == 2


# ---------------------------------------------------------------------------
# heatmap


@pytest.fixture(scope="module")
def heatmap_run(ws):
    prefix = str(ws / "map")
    code, text = run_cli(["heatmap", "--weights", str(ws / "toy.vpw1"),
                          "--row", "1", "--col", "2", "--layer", "3",
                          "--out-prefix", prefix, str(ws / "sharp.png")])
    assert code == 0
    return prefix, json.loads(text)


def test_heatmap_query_cell_prints_exact_one(ws, heatmap_run):
    prefix, out = heatmap_run
    lines = (ws / "map.csv").read_text().splitlines()
    assert len(lines) == 4
    cells = lines[1].split(",")
    assert len(cells) == 4
    assert cells[2] == "1.000000000"
    assert out["query_value"] == pytest.approx(1.0, abs=1e-12)


def test_heatmap_pgm_matches_grid(ws, heatmap_run):
    img = load_image(ws / "map.pgm")
    assert img.shape == (4, 4, 1)
    assert img[1, 2, 0] == 1.0  # query cell maps to full white


def test_heatmap_pgm_is_linear_remap(ws, heatmap_run):
    img = load_image(ws / "map.pgm")
    values = np.array([[float(v) for v in line.split(",")]
                       for line in (ws / "map.csv").read_text().splitlines()])
    want = np.floor(np.clip((values + 1.0) * 0.5, 0.0, 1.0) * 255 + 0.5) / 255.0
    assert np.max(np.abs(img[:, :, 0] - want)) == 0.0


def test_heatmap_rerun_byte_identical(ws, heatmap_run):
    prefix, _ = heatmap_run
    paths = [ws / "map.pgm", ws / "map.csv", ws / "map.manifest.json"]
    want = [p.read_bytes() for p in paths]
    for p in paths[:2]:
        p.unlink()
    code, _ = run_cli(["rerun", "--manifest", prefix + ".manifest.json"])
    assert code == 0
    assert [p.read_bytes() for p in paths] == want


def test_heatmap_query_outside_grid_exits_3(ws):
    code, _ = run_cli(["heatmap", "--weights", str(ws / "toy.vpw1"),
                       "--row", "4", "--col", "0",
                       "--out-prefix", str(ws / "nope"), str(ws / "sharp.png")])
    assert code == 3


# ---------------------------------------------------------------------------
# optimize


def read_trace(path):
    lines = path.read_text().splitlines()
    assert lines[0] == "step,deblur,percep,total,psnr"
    return [line.split(",") for line in lines[1:]]


def test_optimize_fixed_point(ws, tmp_path):
    out = tmp_path / "fix.png"
    trace = tmp_path / "fix.csv"
    code, _ = run_cli(["optimize", "--weights", str(ws / "toy.vpw1"),
                       "--layer", "2", "--steps", "3", "--step-size", "0.1",
                       "--out", str(out), "--trace", str(trace),
                       str(ws / "sharp.png"), str(ws / "sharp.png")])
    assert code == 0
    rows = read_trace(trace)
    assert len(rows) == 4
    for row in rows:
        assert float(row[1]) == 0.0 and float(row[2]) == 0.0 and float(row[3]) == 0.0
    # the optimum is already reached, so the output equals the input
    assert np.array_equal(load_image(out), load_image(ws / "sharp.png"))


def test_optimize_quadratic_descent_is_monotone(ws, tmp_path):
    out = tmp_path / "quad.png"
    trace = tmp_path / "quad.csv"
    code, _ = run_cli(["optimize", "--weights", str(ws / "toy.vpw1"),
                       "--layer", "2", "--lambda", "0", "--metric", "l2",
                       "--steps", "5", "--step-size", "1.0",
                       "--out", str(out), "--trace", str(trace),
                       str(ws / "blurred.png"), str(ws / "sharp.png")])
    assert code == 0
    rows = read_trace(trace)
    totals = [float(r[3]) for r in rows]
    assert all(b < a for a, b in zip(totals, totals[1:]))
    # lam 0 collapses total onto the pixel term, bitwise
    assert all(r[3] == r[1] for r in rows)
    psnrs = [float(r[4]) for r in rows]
    assert psnrs[-1] > psnrs[0]


def test_optimize_divergence_exits_4(ws, tmp_path):
    out = tmp_path / "div.png"
    trace = tmp_path / "div.csv"
    code, _ = run_cli(["optimize", "--weights", str(ws / "toy.vpw1"),
                       "--layer", "2", "--lambda", "0", "--metric", "l2",
                       "--steps", "50", "--step-size", "1e12",
                       "--out", str(out), "--trace", str(trace),
                       str(ws / "blurred.png"), str(ws / "sharp.png")])
    assert code == 4
    rows = read_trace(trace)
    assert 0 < len(rows) < 51
    # the last finite state was still saved and decodes cleanly
    assert np.all(np.isfinite(load_image(out)))


def test_optimize_rerun_byte_identical(ws, tmp_path):
    out = tmp_path / "re.png"
    trace = tmp_path / "re.csv"
    argv = ["optimize", "--weights", str(ws / "toy.vpw1"),
            "--layer", "3", "--metric", "l2", "--local-norm", "l2",
            "--steps", "4", "--step-size", "0.04",
            "--out", str(out), "--trace", str(trace),
            str(ws / "blurred.png"), str(ws / "sharp.png")]
    assert run_cli(argv)[0] == 0
    want = [out.read_bytes(), trace.read_bytes()]
    out.unlink()
    trace.unlink()
    code, _ = run_cli(["rerun", "--manifest", str(out) + ".manifest.json"])
    assert code == 0
    assert [out.read_bytes(), trace.read_bytes()] == want


def test_optimize_validates_step_arguments(ws, tmp_path):
    base = ["optimize", "--weights", str(ws / "toy.vpw1"),
            "--out", str(tmp_path / "x.png"), "--trace", str(tmp_path / "x.csv"),
            str(ws / "sharp.png"), str(ws / "sharp.png")]
    assert run_cli(base + ["--steps", "0"])[0] == 3
    assert run_cli(base + ["--step-size", "-0.1"])[0] == 3


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_default_toy_passes():
    code, text = run_cli(["gradcheck", "--instances", "1"])
    assert code == 0
    results = json.loads(text)["results"]
    assert {r["loss_kind"] for r in results} == {"local", "global"}
    for r in results:
        assert r["passed"] and r["max_rel_err"] < 1e-4


def test_gradcheck_accepts_saved_bundle(ws):
    code, _ = run_cli(["gradcheck", "--weights", str(ws / "toy.vpw1"),
                       "--instances", "1"])
    assert code == 0


def test_gradcheck_corrupted_gradient_fails():
    code, text = run_cli(["gradcheck", "--instances", "1",
                          "--corrupt-gradient", "1e-3"])
    assert code == 1
    assert not all(r["passed"] for r in json.loads(text)["results"])


def test_gradcheck_tighter_threshold_with_smaller_step():
    code, text = run_cli(["gradcheck", "--instances", "1",
                          "--step", "3e-6", "--threshold", "1e-6"])
    assert code == 0
    for r in json.loads(text)["results"]:
        assert r["max_rel_err"] < 1e-6


def test_gradcheck_refuses_f32():
    code, _ = run_cli(["gradcheck", "--precision", "f32"])
    assert code == 3


# ---------------------------------------------------------------------------
# rerun and argparse edges


def test_rerun_missing_manifest(tmp_path):
    assert run_cli(["rerun", "--manifest", str(tmp_path / "no.json")])[0] == 2


def test_rerun_garbage_manifest(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{this is not json")
    assert run_cli(["rerun", "--manifest", str(p)])[0] == 2


def test_rerun_json_without_argv(tmp_path):
    p = tmp_path / "noargv.json"
    p.write_text(json.dumps({"tool": "other"}))
    assert run_cli(["rerun", "--manifest", str(p)])[0] == 2


def test_unknown_subcommand_exits_3():
    assert run_cli(["frobnicate"])[0] == 3


def test_missing_required_flag_exits_3(ws):
    assert run_cli(["heatmap", str(ws / "sharp.png")])[0] == 3


def test_bad_choice_exits_3(ws):
    assert run_cli(loss_argv(ws, "sharp.png", "sharp.png", "--loss", "warp"))[0] == 3


def test_help_exits_0():
    assert run_cli(["--help"])[0] == 0
    assert run_cli(["loss", "--help"])[0] == 0
