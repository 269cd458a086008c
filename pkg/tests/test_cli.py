import json

import numpy as np
import pytest
import yaml

from conftest import write_shape_pool
from semisr import cli, imaging
from semisr.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def last_json(stdout: str) -> dict:
    return json.loads(stdout.strip().splitlines()[-1])


class TestSplitCommand:
    def test_split_counts_and_summary(self, shapes_root, capsys, tmp_path):
        out = tmp_path / "m.jsonl"
        code, stdout, _ = run_cli(
            capsys, "split", "--hr", str(shapes_root), "--paired", "10",
            "--test", "4", "--seed", "7", "--out", str(out),
        )
        assert code == 0
        rec = last_json(stdout)
        assert rec["paired"] == 10 and rec["unpaired"] == 10 and rec["test"] == 4
        assert out.exists()

    def test_same_seed_byte_identical(self, shapes_root, capsys, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run_cli(capsys, "split", "--hr", str(shapes_root), "--paired", "5", "--test", "0", "--seed", "3", "--out", str(a))
        run_cli(capsys, "split", "--hr", str(shapes_root), "--paired", "5", "--test", "0", "--seed", "3", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_paired_zero_fully_unsupervised(self, shapes_root, capsys, tmp_path):
        out = tmp_path / "u.jsonl"
        code, stdout, _ = run_cli(
            capsys, "split", "--hr", str(shapes_root), "--paired", "0", "--test", "0", "--out", str(out)
        )
        assert code == 0
        rec = last_json(stdout)
        assert rec["paired"] == 0 and rec["unpaired"] == 24

    def test_capacity_error_is_structured(self, shapes_root, capsys, tmp_path):
        code, _, stderr = run_cli(
            capsys, "split", "--hr", str(shapes_root), "--paired", "999", "--test", "0",
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code != 0
        err = json.loads(stderr.strip())
        assert err["error"] == "CapacityError"
        assert "24" in err["message"]


@pytest.fixture
def train_setup(shapes_root, tmp_path, capsys):
    manifest = tmp_path / "split.jsonl"
    run_cli(capsys, "split", "--hr", str(shapes_root), "--paired", "12", "--unpaired", "8",
            "--test", "4", "--seed", "1", "--out", str(manifest))
    cfg = {
        "data": {"manifest": str(manifest), "out_dir": str(tmp_path / "run")},
        "trainer": {
            "max_batches": 4, "warmup_batches": 2, "batch_spec": [2, 2],
            "hr_size": 32, "seed": 0, "checkpoint_every": 0,
        },
        "degradation": {"scale": 4},
        "model": {
            "generator": {"n_rrdb_blocks": 2, "base_channels": 12, "growth_channels": 6, "scale": 4},
            "discriminator": {"input_size": 32, "base_channels": 12, "n_downsample_stages": 3},
            "features": {"tap": [2, 2], "weights": "random:0"},
        },
    }
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    return cfg_path, tmp_path


class TestTrainInferPipeline:
    def test_train_then_infer_writes_4x_png(self, train_setup, capsys):
        cfg_path, tmp_path = train_setup
        code, stdout, stderr = run_cli(capsys, "train", "--config", str(cfg_path))
        assert code == 0, stderr
        rec = last_json(stdout)
        assert rec["batches"] == 4
        ckpt = rec["checkpoint"]
        assert (tmp_path / "run" / "config_echo.yaml").exists()
        assert (tmp_path / "run" / "loss_log.jsonl").exists()

        lr_png = tmp_path / "lr.png"
        imaging.save_image(
            imaging.ImageTensor(np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)), lr_png
        )
        sr_png = tmp_path / "sr.png"
        code, stdout, stderr = run_cli(capsys, "infer", "--ckpt", ckpt, "--in", str(lr_png), "--out", str(sr_png))
        assert code == 0, stderr
        rec = last_json(stdout)
        assert rec["output_size"] == [64, 64]
        sr = imaging.load_image(sr_png)
        assert sr.data.shape == (64, 64, 3)


class TestFidCommand:
    def test_identical_dirs_near_zero(self, shapes_root, capsys):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            code, stdout, _ = run_cli(
                capsys, "fid", "--real", str(shapes_root / "hr"), "--fake", str(shapes_root / "hr")
            )
        assert code == 0
        rec = last_json(stdout)
        assert rec["fid"] <= 1e-6


class TestMosCommand:
    def test_three_decimal_table(self, tmp_path, capsys):
        recs = [
            {"rater_id": f"r{i}", "image_id": "i0", "method_id": "m-a", "score": s}
            for i, s in enumerate([5, 5, 4])
        ] + [
            {"rater_id": f"r{i}", "image_id": "i0", "method_id": "m-b", "score": s}
            for i, s in enumerate([2, 3])
        ]
        path = tmp_path / "r.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
        code, stdout, _ = run_cli(capsys, "mos", "--ratings", str(path))
        assert code == 0
        rec = last_json(stdout)
        by_method = {m["method_id"]: m for m in rec["methods"]}
        assert by_method["m-a"]["mos"] == 4.667
        assert by_method["m-b"]["mos"] == 2.5
        assert " 4.667" in stdout
