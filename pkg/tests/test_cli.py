"""CLI surface: exit codes, error lines, and the artifact round trip."""

import configparser
import csv
import os
import re
import subprocess
import sys

import numpy as np
import pytest

from cassikit import hsio
from cassikit.cassi import DispersionSpec, forward_measure
from cassikit.cli import main
from cassikit.synthetic import SyntheticSceneSpec, make_synthetic_dataset
from cassikit.training import TrainConfig

ERROR_LINE = re.compile(r'^error code=([a-z-]+) msg="(.+)"$')


def save_cube_for(tmp_path, name, shape, seed):
    cube = np.random.default_rng(seed).random(shape)
    path = str(tmp_path / name)
    hsio.save_cube(path, cube)
    return path, cube


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--cube", "x.hsic"])  # --out missing
    assert e.value.code == 2


def test_missing_file_exits_3(tmp_path, capsys):
    rc = main(["eval", "--rec", str(tmp_path / "a.hsic"),
               "--ref", str(tmp_path / "b.hsic")])
    assert rc == 3
    m = ERROR_LINE.match(capsys.readouterr().err.strip())
    assert m and m.group(1) == "missing-file"


def test_format_violation_exits_4(tmp_path, capsys):
    bad = tmp_path / "bad.hsic"
    bad.write_bytes(b"not a cube at all")
    ref, _ = save_cube_for(tmp_path, "ref.hsic", (2, 12, 12), 0)
    rc = main(["eval", "--rec", str(bad), "--ref", ref])
    assert rc == 4
    m = ERROR_LINE.match(capsys.readouterr().err.strip())
    assert m and m.group(1) == "format"


def test_dimension_mismatch_exits_5(tmp_path, capsys):
    a, _ = save_cube_for(tmp_path, "a.hsic", (2, 12, 12), 1)
    b, _ = save_cube_for(tmp_path, "b.hsic", (2, 12, 14), 2)
    rc = main(["eval", "--rec", a, "--ref", b])
    assert rc == 5
    m = ERROR_LINE.match(capsys.readouterr().err.strip())
    assert m and m.group(1) == "dimension"

    # simulate with a mask whose spatial size disagrees with the cube
    mask_path = str(tmp_path / "m.hsic")
    hsio.save_mask(mask_path, hsio.generate_mask(6, 6, 0.5, 0))
    rc = main(["simulate", "--cube", a, "--mask", mask_path,
               "--out", str(tmp_path / "y.hsic")])
    assert rc == 5


def test_simulate_deterministic_and_matches_library(tmp_path, capsys):
    cube_path, cube = save_cube_for(tmp_path, "s.hsic", (3, 10, 10), 3)
    mask = hsio.generate_mask(10, 10, 0.5, 42)
    mask_path = str(tmp_path / "m.hsic")
    hsio.save_mask(mask_path, mask)
    y1, y2 = str(tmp_path / "y1.hsic"), str(tmp_path / "y2.hsic")
    for out in (y1, y2):
        assert main(["simulate", "--cube", cube_path, "--mask", mask_path,
                     "--out", out, "--seed", "7"]) == 0
    assert open(y1, "rb").read() == open(y2, "rb").read()
    assert os.path.exists(y1 + ".config.ini")

    got = hsio.load_measurement(y1)
    want = forward_measure(cube, mask, DispersionSpec(step=1))
    np.testing.assert_array_equal(got, want)


def test_simulate_can_generate_mask(tmp_path, capsys):
    cube_path, _ = save_cube_for(tmp_path, "s.hsic", (2, 16, 16), 4)
    mask_out = str(tmp_path / "gen_mask.hsic")
    rc = main(["simulate", "--cube", cube_path, "--out", str(tmp_path / "y.hsic"),
               "--mask-out", mask_out, "--seed", "5"])
    assert rc == 0
    m = hsio.load_mask(mask_out)
    assert m.pattern.shape == (16, 16)
    assert set(np.unique(m.pattern)) <= {0.0, 1.0}


def tiny_config(tmp_path):
    cfg = TrainConfig(seed=0, bands=3, size=12, train_scenes=6, val_scenes=1,
                      stages=2, levels=2, base_channels=8, window=4,
                      epochs=2, batch=2, lr=1e-3)
    ini = str(tmp_path / "train.ini")
    hsio.save_config_snapshot(ini, {"train": vars(cfg)})
    return cfg, ini


def test_train_reconstruct_eval_round_trip(tmp_path, capsys):
    cfg, ini = tiny_config(tmp_path)
    run_dir = str(tmp_path / "run")
    assert main(["train", "--config", ini, "--out", run_dir]) == 0
    assert os.path.isdir(os.path.join(run_dir, "checkpoint"))

    with open(os.path.join(run_dir, "log.csv")) as f:
        log_rows = list(csv.DictReader(f))
    assert len(log_rows) == cfg.epochs
    logged = float(log_rows[-1]["val_psnr"])

    # rebuild the validation artifacts the trainer used
    mask = hsio.generate_mask(cfg.size, cfg.size, cfg.mask_density,
                              seed=cfg.seed + 101)
    scene_spec = SyntheticSceneSpec(size=cfg.size, bands=cfg.bands,
                                    n_endmembers=cfg.endmembers, seed=cfg.seed)
    val_cube = make_synthetic_dataset(scene_spec, 1, stream=1)[0]
    y = forward_measure(val_cube, mask, DispersionSpec(step=cfg.step))
    mask_path = str(tmp_path / "mask.hsic")
    meas_path = str(tmp_path / "y.hsic")
    ref_path = str(tmp_path / "ref.hsic")
    hsio.save_mask(mask_path, mask)
    hsio.save_measurement(meas_path, y)
    hsio.save_cube(ref_path, val_cube)

    rec_path = str(tmp_path / "rec.hsic")
    slices = str(tmp_path / "slices")
    rc = main(["reconstruct", "--meas", meas_path, "--mask", mask_path,
               "--run", run_dir, "--out", rec_path, "--slices", slices])
    assert rc == 0
    assert os.path.exists(rec_path + ".config.ini")
    with open(str(tmp_path / "rec.trajectory.csv")) as f:
        traj_rows = list(csv.DictReader(f))
    assert len(traj_rows) == cfg.stages + 1
    assert len(os.listdir(slices)) == cfg.bands

    metrics = str(tmp_path / "metrics.csv")
    capsys.readouterr()
    assert main(["eval", "--rec", rec_path, "--ref", ref_path,
                 "--out", metrics]) == 0
    out = capsys.readouterr().out
    cli_psnr = float(re.search(r"psnr=([\d.]+)", out).group(1))
    # same scene, same checkpoint: must agree with the training log
    assert abs(cli_psnr - logged) <= 0.01


def test_reconstruct_rejects_wrong_measurement(tmp_path, capsys):
    cfg, ini = tiny_config(tmp_path)
    run_dir = str(tmp_path / "run")
    assert main(["train", "--config", ini, "--out", run_dir]) == 0
    mask_path = str(tmp_path / "mask.hsic")
    hsio.save_mask(mask_path, hsio.generate_mask(cfg.size, cfg.size, 0.5, 9))
    bad_y = str(tmp_path / "bad_y.hsic")
    hsio.save_measurement(bad_y, np.zeros((cfg.size, cfg.size)))  # width too small
    rc = main(["reconstruct", "--meas", bad_y, "--mask", mask_path,
               "--run", run_dir, "--out", str(tmp_path / "r.hsic")])
    assert rc == 5


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--coords", "1"]) == 0
    out = capsys.readouterr().out
    assert "max_rel_err" in out
    assert "model" in out


def test_summary_counts_match_registry(tmp_path, capsys):
    from cassikit.autodiff import ParamStore
    from cassikit.summary import count_params, model_summary
    from cassikit.unfold import build_unfold_params

    cfg, ini = tiny_config(tmp_path)
    assert main(["summary", "--config", ini]) == 0
    out = capsys.readouterr().out
    printed = int(re.search(r"parameters \(total\)\s*:\s*([\d,]+)", out)
                  .group(1).replace(",", ""))

    store = ParamStore(rng=np.random.default_rng(0))
    build_unfold_params(store, cfg.unfold_config())
    brute = sum(t.size for _, t in store.items())
    assert printed == brute

    # doubling unshared stages doubles the denoiser registry
    u2 = cfg.unfold_config()
    u2.weight_sharing = False
    s2 = ParamStore(rng=np.random.default_rng(0))
    build_unfold_params(s2, u2)
    u4 = cfg.unfold_config()
    u4.weight_sharing = False
    u4.stages = 4
    s4 = ParamStore(rng=np.random.default_rng(0))
    build_unfold_params(s4, u4)
    assert count_params(s4, "prox") == 2 * count_params(s2, "prox")
    assert model_summary(u2, 12, 12, s2)["params_prox"] == count_params(s2, "prox")


def test_python_dash_m_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cassikit", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "simulate" in out.stdout and "reconstruct" in out.stdout
