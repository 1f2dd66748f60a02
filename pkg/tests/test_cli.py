import json

import numpy as np
import pytest

import synthbrain as sb
from synthbrain.cli import main

from conftest import make_subject, smooth_volume


@pytest.fixture
def subject_files(tmp_path):
    subject = make_subject(n=24, seed=0)
    labels = tmp_path / "labels.nii"
    mprage = tmp_path / "anatomy.nii"
    sb.write_nifti_file(labels, subject.labels, "int16")
    sb.write_nifti_file(mprage, subject.mprage, "float32")
    return subject, labels, mprage


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- exit codes -----------------------------------------------------------------

def test_missing_input_exits_2(tmp_path, capsys):
    rc = main(["generate", str(tmp_path / "nope.nii"), str(tmp_path / "nope2.nii"),
               "--seed", "1", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "nope.nii" in capsys.readouterr().err


def test_geometry_mismatch_exits_3(tmp_path, capsys):
    subject = make_subject(n=16, seed=0)
    other = smooth_volume(12, 1)
    labels = tmp_path / "labels.nii"
    wrong = tmp_path / "anatomy.nii"
    sb.write_nifti_file(labels, subject.labels, "int16")
    sb.write_nifti_file(wrong, other, "float32")
    rc = main(["generate", str(labels), str(wrong), "--seed", "1",
               "--out", str(tmp_path / "o")])
    assert rc == 3


def test_channel_mismatch_exits_4(tmp_path):
    ref = sb.VolumeStack((smooth_volume(16, 0), smooth_volume(16, 1)))
    cand = sb.VolumeStack((smooth_volume(16, 2),))
    ident = sb.identity_field(ref.channels[0])
    ref_path = tmp_path / "ref.nii"
    cand_path = tmp_path / "cand.nii"
    fld_path = tmp_path / "fld.nii"
    sb.write_nifti_file(ref_path, ref, "float32")
    sb.write_nifti_file(cand_path, cand, "float32")
    sb.write_nifti_file(fld_path, ident.channels(), "float32")
    manifest = tmp_path / "cands.json"
    manifest.write_text(json.dumps(
        {"candidates": [{"features": "cand.nii", "deformation": "fld.nii"}]}
    ))
    rc = main(["evaluate", "--reference", str(ref_path), "--candidates", str(manifest),
               "--out", str(tmp_path / "r.json")])
    assert rc == 4


def test_singular_fit_exits_5(tmp_path):
    v = smooth_volume(12, 0)
    feats = sb.VolumeStack((v, v))
    f_path = tmp_path / "f.nii"
    t_path = tmp_path / "t.nii"
    sb.write_nifti_file(f_path, feats, "float32")
    sb.write_nifti_file(t_path, smooth_volume(12, 1), "float32")
    rc = main(["fit-adapter", "--features", str(f_path), "--target", str(t_path),
               "--ridge", "0", "--out", str(tmp_path / "a.json")])
    assert rc == 5


def test_bad_usage_exits_64(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    assert main(["generate", str(labels), str(mprage), "--out", str(tmp_path / "o")]) == 64  # no --seed
    assert main(["evaluate", "--mode", "inter", "--reference", str(labels),
                 "--candidates", str(tmp_path / "x.json")]) == 64  # no --atlas-map
    assert main(["metrics", "--pred", str(labels), "--ref", str(labels),
                 "--metric", "bogus"]) == 64
    assert main(["frobnicate"]) == 64
    capsys.readouterr()


# -- generate --------------------------------------------------------------------

def test_generate_writes_expected_tree(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    out = tmp_path / "batch"
    rc = main(["generate", str(labels), str(mprage), "--n", "3",
               "--seed", "11", "--out", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out.strip()
    assert printed.endswith("manifest.json")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["deformation.nii", "manifest.json", "sample_000.nii",
                     "sample_001.nii", "sample_002.nii", "target.nii"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subject"] == "labels"
    assert manifest["seed"] == 11
    assert manifest["schedule"] == ["mild", "medium", "severe"]


def test_generate_reruns_identical(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", str(labels), str(mprage), "--n", "2",
                     "--seed", "5", "--out", str(out)]) == 0
    capsys.readouterr()
    assert _tree_bytes(a) == _tree_bytes(b)


def test_generate_schedule_flag_recorded(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    out = tmp_path / "o"
    rc = main(["generate", str(labels), str(mprage), "--seed", "2",
               "--schedule", "mild,mild,severe", "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schedule"] == ["mild", "mild", "severe"]
    assert manifest["n"] == 3  # schedule length wins when --n is absent


def test_generate_config_file_fills_defaults(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run settings\nn = 2\nseed = 9\n")
    out = tmp_path / "o"
    rc = main(["generate", str(labels), str(mprage), "--config", str(cfg),
               "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["n"] == 2


def test_generate_flag_beats_config(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 9\nn = 4\n")
    out = tmp_path / "o"
    rc = main(["generate", str(labels), str(mprage), "--config", str(cfg),
               "--seed", "1", "--n", "1", "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1
    assert manifest["n"] == 1


def test_generate_severity_override_via_config(tmp_path, subject_files, capsys):
    _, labels, mprage = subject_files
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mild.noise_sigma_min = 0\nmild.noise_sigma_max = 0\n"
                   "mild.p_low_field = 0\n")
    out = tmp_path / "o"
    rc = main(["generate", str(labels), str(mprage), "--config", str(cfg),
               "--seed", "3", "--schedule", "mild", "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    manifest = json.loads((out / "manifest.json").read_text())
    record = manifest["samples"][0]["record"]
    assert record["noise"] is None
    assert record["resolution"] is None


# -- metrics ---------------------------------------------------------------------

def test_metrics_self_ssim_prints_one(tmp_path, capsys):
    v = smooth_volume(16, 3)
    p = tmp_path / "v.nii"
    sb.write_nifti_file(p, v, "float32")
    rc = main(["metrics", "--pred", str(p), "--ref", str(p), "--metric", "ssim"])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "1.000000"


def test_metrics_dice_output_format(tmp_path, capsys):
    subject = make_subject(n=16, seed=1)
    p = tmp_path / "l.nii"
    sb.write_nifti_file(p, subject.labels, "int16")
    rc = main(["metrics", "--pred", str(p), "--ref", str(p), "--metric", "dice"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "1.000000"
    assert lines[1].split() == ["label", "1", "1.000000"]


def test_metrics_norml2_scale_invariant(tmp_path, capsys):
    v = smooth_volume(12, 2)
    doubled = v.with_data(v.data * 2.0)
    a, b = tmp_path / "a.nii", tmp_path / "b.nii"
    sb.write_nifti_file(a, doubled, "float32")
    sb.write_nifti_file(b, v, "float32")
    rc = main(["metrics", "--pred", str(a), "--ref", str(b), "--metric", "norml2"])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "0.000000"


def test_metrics_l1_value(tmp_path, capsys):
    a = sb.Volume(np.zeros((8, 8, 8)))
    b = sb.Volume(np.full((8, 8, 8), 0.5))
    pa, pb = tmp_path / "a.nii", tmp_path / "b.nii"
    sb.write_nifti_file(pa, a, "float32")
    sb.write_nifti_file(pb, b, "float32")
    rc = main(["metrics", "--pred", str(pa), "--ref", str(pb), "--metric", "l1"])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "0.500000"


# -- evaluate ---------------------------------------------------------------------

def test_evaluate_consumes_generate_manifest(tmp_path, subject_files, capsys):
    subject, labels, mprage = subject_files
    out = tmp_path / "batch"
    assert main(["generate", str(labels), str(mprage), "--n", "2",
                 "--seed", "4", "--out", str(out)]) == 0
    capsys.readouterr()
    report_path = tmp_path / "report.json"
    rc = main(["evaluate", "--reference", str(out / "target.nii"),
               "--candidates", str(out / "manifest.json"),
               "--mask", str(labels), "--erosion", "2", "--scales", "2",
               "--out", str(report_path)])
    assert rc == 0
    captured = capsys.readouterr()
    report = json.loads(report_path.read_text())
    assert report["masked"] is True
    assert set(report["metrics"]) == {"l1", "ssim", "ms_ssim"}
    assert len(report["metrics"]["ssim"]["values"]) == 2
    # the printed table and the JSON agree
    mean = report["metrics"]["ssim"]["mean"]
    assert f"{mean:.4f}" in captured.out
    assert str(report_path) in captured.err


def test_evaluate_inter_mode_with_atlas_map(tmp_path, capsys):
    ref = sb.VolumeStack((smooth_volume(16, 0),))
    ident = sb.identity_field(ref.channels[0])
    ref_path, cand_path, fld_path = (tmp_path / n for n in ("r.nii", "c.nii", "f.nii"))
    sb.write_nifti_file(ref_path, ref, "float32")
    sb.write_nifti_file(cand_path, ref, "float32")
    sb.write_nifti_file(fld_path, ident.channels(), "float32")
    manifest = tmp_path / "cands.json"
    manifest.write_text(json.dumps({"candidates": [{"features": "c.nii"}]}))
    rc = main(["evaluate", "--mode", "inter", "--reference", str(ref_path),
               "--candidates", str(manifest), "--atlas-map", str(fld_path),
               "--scales", "1", "--out", str(tmp_path / "rep.json")])
    assert rc == 0
    report = json.loads((tmp_path / "rep.json").read_text())
    assert report["metrics"]["l1"]["mean"] == 0.0
    capsys.readouterr()


# -- fit-adapter --------------------------------------------------------------------

def test_fit_adapter_end_to_end(tmp_path, capsys):
    feats = sb.VolumeStack(tuple(smooth_volume(12, i) for i in range(3)))
    w = np.array([0.5, -1.0, 2.0])
    x = np.stack([c.data.ravel() for c in feats.channels], axis=1)
    target = sb.Volume((x @ w + 0.25).reshape(feats.dims))
    f_path, t_path = tmp_path / "f.nii", tmp_path / "t.nii"
    sb.write_nifti_file(f_path, feats, "float32")
    sb.write_nifti_file(t_path, target, "float32")
    out = tmp_path / "adapter.json"
    rc = main(["fit-adapter", "--features", str(f_path), "--target", str(t_path),
               "--ridge", "0", "--out", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "residual_l1" in printed
    adapter = sb.load_adapter(out)
    # float32 serialization of inputs costs ~1e-7 per voxel
    assert np.abs(adapter.weights[:, 0] - w).max() < 1e-4
    payload = json.loads(out.read_text())
    assert payload["residuals"]["residual_l1"] < 1e-5
