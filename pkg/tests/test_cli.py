import numpy as np
import pytest

from saol.checkpoint import load_state
from saol.cli import ConfigError, main, parse_config

TINY_CONFIG = """\
# desk-sized run
data.source = synthetic
data.num_classes = 3
data.image_size = 16
data.train_size = 24
data.val_size = 12

model.channels = 4,6
model.strides = 1,2
model.layers_per_block = 1

train.epochs = 1
train.batch_size = 12
train.lr = 0.05
wsol.samples = 2
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One trained run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.cfg"
    config.write_text(TINY_CONFIG)
    out = root / "run"
    code = main(["train", "--config", str(config), "--out", str(out)])
    assert code == 0
    return {"config": str(config), "out": str(out), "ckpt": str(out / "model.ckpt")}


class TestConfigParsing:
    def test_defaults_without_file(self):
        cfg = parse_config(None)
        assert cfg["train.epochs"] == 30 and cfg["model.channels"] == (16, 32, 64)

    def test_overlay_comments_and_blanks(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\n\ntrain.lr = 0.25  # inline\nmodel.fused_blocks = 1,2\n")
        cfg = parse_config(str(path))
        assert cfg["train.lr"] == 0.25
        assert cfg["model.fused_blocks"] == (1, 2)
        assert cfg["train.epochs"] == 30

    def test_fused_all_keyword(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("model.fused_blocks = all\n")
        assert parse_config(str(path))["model.fused_blocks"] is None

    def test_loss_weight_keys(self, tmp_path):
        cfg = parse_config(None)
        assert all(cfg[f"train.w_{k}"] == 1.0 for k in ("sl", "ss1", "ss2", "sd"))
        path = tmp_path / "c.cfg"
        path.write_text("train.w_ss1 = 4\ntrain.w_sd = 0.5\n")
        cfg = parse_config(str(path))
        assert cfg["train.w_ss1"] == 4.0 and cfg["train.w_sd"] == 0.5

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("train.paitence = 3\n")
        with pytest.raises(ConfigError):
            parse_config(str(path))

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("train.epochs = soon\n")
        with pytest.raises(ConfigError):
            parse_config(str(path))

    def test_missing_equals_rejected(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("train.epochs 3\n")
        with pytest.raises(ConfigError):
            parse_config(str(path))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(str(tmp_path / "nope.cfg"))


class TestTrainCommand:
    def test_writes_reports_and_checkpoint(self, tiny_run, capsys):
        import os

        out = tiny_run["out"]
        for name in ("metrics.csv", "model.ckpt", "curves.png"):
            assert os.path.getsize(os.path.join(out, name)) > 0
        model, _, epoch, rng = load_state(tiny_run["ckpt"])
        assert epoch == 1 and rng is not None
        assert model.head_config.num_classes == 3

    def test_prints_delimited_metrics(self, tiny_run, capsys, tmp_path):
        code = main(
            ["eval", "--config", tiny_run["config"], "--checkpoint", tiny_run["ckpt"]]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "metric,value"
        keys = [line.split(",")[0] for line in lines[1:]]
        assert keys == ["acc_gapfc", "acc_saol"]
        for line in lines[1:]:
            assert 0.0 <= float(line.split(",")[1]) <= 1.0

    def test_resume_continues_from_checkpoint(self, tmp_path, capsys):
        config = tmp_path / "c.cfg"
        config.write_text(TINY_CONFIG + "train.epochs = 2\ntrain.stop_after = 1\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert load_state(str(out / "model.ckpt"))[2] == 1

        config2 = tmp_path / "c2.cfg"
        config2.write_text(TINY_CONFIG + "train.epochs = 2\n")
        out2 = tmp_path / "resumed"
        code = main(
            [
                "train",
                "--config",
                str(config2),
                "--out",
                str(out2),
                "--checkpoint",
                str(out / "model.ckpt"),
            ]
        )
        assert code == 0
        assert load_state(str(out2 / "model.ckpt"))[2] == 2
        metrics = (out2 / "metrics.csv").read_text().strip().split("\n")
        assert [line.split(",")[0] for line in metrics] == ["epoch", "1"]


class TestEvalCommand:
    def test_head_filter_and_report_file(self, tiny_run, capsys, tmp_path):
        out = tmp_path / "report"
        code = main(
            [
                "eval",
                "--config",
                tiny_run["config"],
                "--checkpoint",
                tiny_run["ckpt"],
                "--head",
                "saol",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert len(lines) == 2 and lines[1].startswith("acc_saol,")
        assert (out / "eval.csv").read_text().strip().split("\n") == lines


class TestWsolCommand:
    def test_scores_and_exports(self, tiny_run, capsys, tmp_path):
        import os

        out = tmp_path / "wsol"
        code = main(
            [
                "wsol",
                "--config",
                tiny_run["config"],
                "--checkpoint",
                tiny_run["ckpt"],
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().split("\n")
        keys = [line.split(",")[0] for line in lines]
        assert keys == ["metric,value".split(",")[0], "gt_known", "mean_iou", "top1"]
        boxes = (out / "boxes.csv").read_text().strip().split("\n")
        assert boxes[0] == "index,label,pred,r0,c0,r1,c1,iou"
        assert len(boxes) == 13  # 12 validation samples
        for i in range(2):
            assert os.path.getsize(out / "maps" / f"{i:03d}.pgm") > 0
            assert os.path.getsize(out / "maps" / f"{i:03d}.csv") > 0
            assert os.path.getsize(out / "panels" / f"{i:03d}.png") > 0
        assert not (out / "maps" / "002.pgm").exists()

    def test_gapfc_head_variant(self, tiny_run, capsys, tmp_path):
        code = main(
            [
                "wsol",
                "--config",
                tiny_run["config"],
                "--checkpoint",
                tiny_run["ckpt"],
                "--head",
                "gapfc",
            ]
        )
        assert code == 0
        assert "gt_known," in capsys.readouterr().out


class TestVisualizeCommand:
    def test_writes_panels(self, tiny_run, capsys, tmp_path):
        import os

        out = tmp_path / "viz"
        code = main(
            [
                "visualize",
                "--config",
                tiny_run["config"],
                "--checkpoint",
                tiny_run["ckpt"],
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert "samples_written,2" in capsys.readouterr().out
        for i in range(2):
            assert os.path.getsize(out / "panels" / f"{i:03d}.png") > 0

    def test_requires_out_dir(self, tiny_run, capsys):
        code = main(
            ["visualize", "--config", tiny_run["config"], "--checkpoint", tiny_run["ckpt"]]
        )
        assert code == 2


class TestExitCodes:
    def test_config_error_is_2(self, tiny_run, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense.key = 1\n")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_data_error_is_3(self, tiny_run, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"data.source = cifar10\ndata.dir = {tmp_path}/absent\n")
        code = main(
            ["eval", "--config", str(cfg), "--checkpoint", tiny_run["ckpt"]]
        )
        assert code == 3

    def test_checkpoint_error_is_4(self, tiny_run, tmp_path, capsys):
        missing = str(tmp_path / "none.ckpt")
        assert main(["eval", "--config", tiny_run["config"], "--checkpoint", missing]) == 4
        corrupt = tmp_path / "corrupt.ckpt"
        corrupt.write_bytes(b"not a checkpoint")
        code = main(
            ["eval", "--config", tiny_run["config"], "--checkpoint", str(corrupt)]
        )
        assert code == 4

    def test_wsol_without_boxes_is_2(self, tiny_run, tmp_path, capsys):
        data_dir = tmp_path / "cifar"
        data_dir.mkdir()
        record = bytes([1]) + bytes(3072)
        (data_dir / "test_batch.bin").write_bytes(record * 2)
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"data.source = cifar10\ndata.dir = {data_dir}\n")
        code = main(["wsol", "--config", str(cfg), "--checkpoint", tiny_run["ckpt"]])
        assert code == 2

    def test_usage_errors(self, capsys):
        assert main([]) == 2
        with pytest.raises(SystemExit) as e:
            main(["unknown-command"])
        assert e.value.code == 2
        with pytest.raises(SystemExit) as e:
            main(["eval"])  # --checkpoint is required
        assert e.value.code == 2
