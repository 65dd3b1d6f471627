import json
from pathlib import Path

import pytest
import yaml

from commands import ABLATION_VARIANTS, variant_config, variant_overrides
from dataset import read_manifest
from main import EXIT_CONFIG, EXIT_OK, build_parser, main
from meme.errors import ConfigurationError
from meme.trainer import BACKBONE_FILE, save_backbone
from tests.conftest import tiny_config


@pytest.mark.parametrize("command", ["eval", "route-report", "train"])
def test_no_command_accepts_a_modality(command):
    with pytest.raises(SystemExit):
        build_parser().parse_args([command, "--modality", "depth"])


def test_variant_overrides():
    assert variant_overrides("full") == {}
    assert variant_overrides("no_shared") == {"use_shared": False}
    assert variant_overrides("no_specific") == {"use_specific": False}
    assert variant_overrides("experts_per_modality=3") == {"experts_per_modality": 3, "top_k": 3}
    for bad in ("everything", "experts_per_modality=x", "experts_per_modality=0"):
        with pytest.raises(ConfigurationError):
            variant_overrides(bad)


@pytest.mark.parametrize("variant", ABLATION_VARIANTS)
def test_variant_configs_are_valid(cfg, variant):
    variant_cfg = variant_config(cfg, variant, seed=4)
    assert variant_cfg.seed == 4
    assert Path(variant_cfg.out_dir).parts[-3:] == ("ablation", variant.replace("=", "_"), "seed_4")


def test_unknown_config_key_exits_with_config_code(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({"modality": "thermal"}))
    assert main(["gradcheck", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_CONFIG


def test_missing_backbone_exits_with_config_code(cfg, tmp_path):
    path = cfg.write_resolved(tmp_path / "conf")
    assert main(["train", "--config", str(path)]) == EXIT_CONFIG


def test_gradcheck_command(cfg, tmp_path, capsys):
    path = cfg.write_resolved(tmp_path / "conf")
    assert main(["gradcheck", "--config", str(path)]) == EXIT_OK
    assert "config hash" in capsys.readouterr().out
    assert (Path(cfg.out_dir) / "gradcheck" / "report.md").exists()


def test_end_to_end_pipeline(tmp_path, backbone):
    cfg = tiny_config(tmp_path, epochs=1, lr_drop_epoch=0)
    config = str(cfg.write_resolved(tmp_path / "conf"))
    out_dir = Path(cfg.out_dir)

    assert main(["gen-data", "--config", config]) == EXIT_OK
    assert (Path(cfg.data_dir) / "manifest.csv").exists()

    save_backbone(out_dir / BACKBONE_FILE, backbone, cfg, mean_iou=0.5)
    assert main(["train", "--config", config]) == EXIT_OK
    assert (out_dir / "meme.pt").exists()
    assert (out_dir / "resolved_config.yaml").exists()

    assert main(["eval", "--config", config]) == EXIT_OK
    report_dir = out_dir / "eval_test"
    metrics = json.loads((report_dir / "metrics.json").read_text())
    assert set(metrics) == {"prompted", "rgb baseline"}
    assert metrics["prompted"]["sequences"] == 3
    assert (report_dir / "success_plot.png").exists()
    assert len(list((report_dir / "predictions").glob("*.conf.txt"))) == 3
    for entry in read_manifest(cfg.data_dir, "test"):
        gt_lines = (Path(cfg.data_dir) / entry.path / "groundtruth.txt").read_text().splitlines()
        for folder in ("predictions", "predictions_baseline"):
            lines = (report_dir / folder / f"{entry.sequence_id}.txt").read_text().splitlines()
            assert len(lines) == len(gt_lines)
    assert "config hash" in (report_dir / "report.md").read_text()

    assert main(["route-report", "--config", config, "--untrained"]) == EXIT_OK
    assert (out_dir / "route_report_untrained" / "routes_layer0.csv").exists()

    assert main(["ablate", "--config", config, "--variant", "no_shared"]) == EXIT_OK
    table = json.loads((out_dir / "ablation" / "ablation.json").read_text())
    assert set(table) == {"no_shared"}
