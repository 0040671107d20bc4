import json

import numpy as np
import pytest

from stereofuse.cli import PARAM_FLAGS, build_parser, main, resolve
from stereofuse.core import FusionParams, SeedSet, read_seeds, write_seeds
from stereofuse.datasets import read_pfm, write_gray, write_pfm
from stereofuse.synthetic import make_scene, shifted_pair

DOCUMENTED_FLAGS = ["--method", "--fraction", "--noise", "--rng", "--paths", "--p1", "--p2", "--dmax",
                    "--census-radius", "--tau-d", "--tau-n", "--tau-l", "--tau-u", "--sigma-r", "--sigma-d",
                    "--kw", "--kinterp", "--relative-tolerance", "--workers", "--out"]

SMALL = ["--dmax", "16"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(root), "--count", "2", "--rng", "5",
                 "--width", "96", "--height", "64", "--max-disparity", "10"]) == 0
    return root


@pytest.fixture(scope="module")
def single(tmp_path_factory):
    root = tmp_path_factory.mktemp("single")
    assert main(["synth", "--out", str(root), "--count", "1", "--width", "80", "--height", "48",
                 "--max-disparity", "8"]) == 0
    return root


@pytest.mark.parametrize("command", ["run", "bench", "sweep"])
def test_help_lists_every_flag(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in DOCUMENTED_FLAGS:
        assert flag in text, flag


def test_unknown_flag_is_an_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 2
    assert "--bogus" in capsys.readouterr().err


def test_missing_right_image_names_path(tmp_path, capsys):
    left, _ = shifted_pair(0, 32, 24, 2)
    write_gray(left, tmp_path / "l.png")
    missing = tmp_path / "nope.png"
    code = main(["run", "--method", "sgm", "--pair", str(tmp_path / "l.png"), str(missing),
                 "--out", str(tmp_path / "o")])
    assert code != 0
    assert str(missing) in capsys.readouterr().err


# flags win over the config file, which wins over defaults
@pytest.mark.parametrize("in_file", [False, True])
@pytest.mark.parametrize("on_cli", [False, True])
@pytest.mark.parametrize("key, flag, file_value, cli_value", [
    ("p1", "--p1", "3", "5"),
    ("sigma_r", "--sigma-r", "12.5", "20"),
    ("num_paths", "--paths", "4", "8"),
    ("tau_d", "--tau-d", "1.0", "3"),
])
def test_config_precedence(tmp_path, key, flag, file_value, cli_value, in_file, on_cli):
    argv = ["bench"]
    if in_file:
        (tmp_path / "c.cfg").write_text(f"{key} = {file_value}\n")
        argv += ["--config", str(tmp_path / "c.cfg")]
    if on_cli:
        argv += [flag, cli_value]
    _, params = resolve(build_parser().parse_args(argv))
    kind = type(getattr(FusionParams(), key))
    want = kind(cli_value) if on_cli else kind(file_value) if in_file else getattr(FusionParams(), key)
    assert getattr(params, key) == want


def test_run_keys_precedence(tmp_path):
    (tmp_path / "c.cfg").write_text("rng = 9\nnoise = 0.02\nmethod = naive\n")
    args = build_parser().parse_args(["bench", "--config", str(tmp_path / "c.cfg"), "--rng", "3"])
    settings, _ = resolve(args)
    assert (settings["rng"], settings["noise"], settings["method"]) == (3, 0.02, "naive")


def test_config_rejects_unknown_key(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("speed = 11\n")
    assert main(["bench", "--config", str(tmp_path / "c.cfg")]) == 1
    err = capsys.readouterr().err
    assert "speed" in err and "c.cfg" in err


def test_every_param_flag_maps_to_a_field():
    fields = set(FusionParams.__dataclass_fields__)
    assert set(PARAM_FLAGS.values()) <= fields


def test_bad_parameter_combination(capsys):
    assert main(["bench", "--p1", "50", "--p2", "10", "--dataset", "middlebury", "--data", "."]) == 1
    assert "p1 <= p2" in capsys.readouterr().err


def test_run_pair_without_seeds(tmp_path):
    left, right = shifted_pair(1, 48, 32, 3)
    write_gray(left, tmp_path / "l.png")
    write_gray(right, tmp_path / "r.png")
    out = tmp_path / "o"
    assert main(["run", "--method", "sgm", "--pair", str(tmp_path / "l.png"), str(tmp_path / "r.png"),
                 "--out", str(out), *SMALL]) == 0
    assert read_pfm(out / "disparity.pfm").shape == (32, 48)
    assert (out / "disparity.png").is_file()
    assert json.loads((out / "report.json").read_text())[0]["method"] == "sgm"
    assert "d_max = 16" in (out / "params.cfg").read_text()


def test_run_pair_with_seeds_and_gt(tmp_path):
    scene = make_scene(2, width=64, height=48, max_disparity=8.0)
    write_gray(scene.left, tmp_path / "l.png")
    write_gray(scene.right, tmp_path / "r.png")
    write_pfm(scene.ground_truth, tmp_path / "gt.pfm")
    ys, xs = np.nonzero(scene.ground_truth.valid)
    pick = slice(None, None, 40)
    write_seeds(SeedSet(xs[pick], ys[pick], scene.ground_truth.data[ys[pick], xs[pick]], 64, 48),
                tmp_path / "s.txt")
    out = tmp_path / "o"
    assert main(["run", "--method", "diffusion", "--pair", str(tmp_path / "l.png"), str(tmp_path / "r.png"),
                 "--seeds", str(tmp_path / "s.txt"), "--gt", str(tmp_path / "gt.pfm"), "--out", str(out),
                 *SMALL]) == 0
    entry = json.loads((out / "report.json").read_text())[0]
    assert set(entry["errors"]) == {"1px", "2px", "3px"}


def test_run_seeded_method_needs_seeds(tmp_path, capsys):
    left, right = shifted_pair(1, 32, 24, 3)
    write_gray(left, tmp_path / "l.png")
    write_gray(right, tmp_path / "r.png")
    assert main(["run", "--method", "naive", "--pair", str(tmp_path / "l.png"), str(tmp_path / "r.png"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "--seeds" in capsys.readouterr().err


def test_run_dataset_is_deterministic(dataset, tmp_path):
    argv = ["run", "--method", "diffusion", "--dataset", "middlebury", "--data", str(dataset),
            "--fraction", "0.025", "--noise", "0.05", "--rng", "42", "--no-timings", *SMALL]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "report.json" in names and len([n for n in names if n.startswith("synth")]) == 2
    for sub in (p for p in (tmp_path / "a").iterdir() if p.is_dir()):
        for f in ("disparity.pfm", "disparity.png"):
            assert (sub / f).read_bytes() == (tmp_path / "b" / sub.name / f).read_bytes()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def csv_rows(path):
    lines = path.read_text().splitlines()
    return [line.split(",") for line in lines[1:]]


def test_bench_single_sample_counts(single, tmp_path):
    assert main(["bench", "--dataset", "middlebury", "--data", str(single), "--method", "sgm",
                 "--fraction", "0.05", "--out", str(tmp_path), *SMALL]) == 0
    rows = csv_rows(tmp_path / "bench.csv")
    assert len(rows) == 2
    assert [r[1] == "mean" for r in rows].count(True) == 1


def test_bench_all_methods_five_means_per_fraction(single, tmp_path):
    assert main(["bench", "--dataset", "middlebury", "--data", str(single), "--method", "all",
                 "--fraction", "0.05,0.1", "--out", str(tmp_path), "--json", *SMALL]) == 0
    rows = csv_rows(tmp_path / "bench.csv")
    means = [r for r in rows if r[1] == "mean"]
    assert len(means) == 10
    for frac in ("0.05", "0.1"):
        assert sorted(r[2] for r in means if r[3] == frac) == sorted(
            ["sgm", "naive", "neighborhood", "diffusion", "aniso-baseline"])
    assert len(json.loads((tmp_path / "bench.json").read_text())) == 20


def test_bench_rerun_identical(dataset, tmp_path):
    argv = ["bench", "--dataset", "middlebury", "--data", str(dataset), "--method", "naive,diffusion",
            "--no-timings", "--rng", "3", *SMALL]
    assert main(argv + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "bench.csv").read_bytes() == (tmp_path / "b" / "bench.csv").read_bytes()


def test_sweep_default_fractions(single, tmp_path):
    assert main(["sweep", "--dataset", "middlebury", "--data", str(single), "--method", "sgm",
                 "--out", str(tmp_path), *SMALL]) == 0
    fracs = [r[3] for r in csv_rows(tmp_path / "sweep.csv") if r[1] == "mean"]
    assert fracs == ["0.05", "0.1", "0.15", "0.25"]


def test_bad_method_and_fraction(single, capsys):
    base = ["bench", "--dataset", "middlebury", "--data", str(single)]
    assert main(base + ["--method", "graphcut"]) == 1
    assert "graphcut" in capsys.readouterr().err
    assert main(base + ["--fraction", "1.5"]) == 1
    assert "(0, 1)" in capsys.readouterr().err


def test_convert_depth_to_seeds(tmp_path):
    import cv2

    cv2.imwrite(str(tmp_path / "d.png"), np.array([[0, 2000], [4000, 1000]], np.uint16))
    (tmp_path / "calib.txt").write_text("cam0=[500 0 1; 0 500 1; 0 0 1]\nbaseline=100\n")
    assert main(["convert", str(tmp_path / "d.png"), "--calib", str(tmp_path / "calib.txt"),
                 "--out", str(tmp_path / "s.txt")]) == 0
    assert list(read_seeds(tmp_path / "s.txt")) == [(1, 0, 25.0), (0, 1, 12.5), (1, 1, 50.0)]
    assert main(["convert", str(tmp_path / "d.png"), "--focal", "500", "--baseline", "0.1", "--dmax", "30",
                 "--out", str(tmp_path / "t.txt")]) == 0
    assert len(read_seeds(tmp_path / "t.txt")) == 2
    assert main(["convert", str(tmp_path / "d.png"), "--out", str(tmp_path / "u.txt")]) == 1


def test_inspect_headers(single, capsys):
    sample = next(single.iterdir())
    assert main(["inspect", str(sample / "disp0.pfm"), str(sample / "im0.png")]) == 0
    out = capsys.readouterr().out
    assert "magic=Pf" in out and "width=80" in out and "bit_depth=8" in out
    assert main(["inspect", str(sample / "calib.txt")]) == 1
