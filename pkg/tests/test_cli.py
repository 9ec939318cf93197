import json

import pytest

from harmony.cli import (
    EXIT_BAD_CONFIG,
    EXIT_NONFINITE,
    EXIT_OK,
    build_parser,
    main,
)


@pytest.fixture()
def cli_config(tmp_path):
    doc = {
        "epochs": 1, "batch_size": 8, "seed": 0,
        "model": {"image_size": 16, "patch_size": 4, "vision_layers": 1,
                  "vision_dim": 16, "vision_heads": 2, "text_layers": 1,
                  "text_dim": 16, "text_heads": 2, "context_length": 16,
                  "vocab_size": 64, "local_size": 8,
                  "vision_decoder_layers": 1, "vision_decoder_dim": 16,
                  "vision_decoder_heads": 2, "text_decoder_layers": 1,
                  "text_decoder_dim": 16, "text_decoder_heads": 2,
                  "head_output_dim": 16},
        "distill": {"local_crops": 2},
        "data": {"manifest": "data/manifest.jsonl", "n_samples": 16,
                 "noise_level": 0.02},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_parser_has_all_subcommands():
    parser = build_parser()
    for name in ("gen-data", "train", "eval", "gradcheck", "ablate"):
        args = parser.parse_args(
            [name, "--out", "o"] + ([] if name == "gradcheck" else ["--config", "c"]))
        assert callable(args.fn)


def test_missing_config_exits_2(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_BAD_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"


def test_invalid_config_value_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochs": 0}))
    code = main(["train", "--config", str(bad), "--out", str(tmp_path / "out")])
    assert code == EXIT_BAD_CONFIG


def test_gen_data_then_train_then_eval(cli_config, tmp_path, capsys):
    data_dir = tmp_path / "data"
    assert main(["gen-data", "--config", str(cli_config),
                 "--out", str(data_dir)]) == EXIT_OK
    assert (data_dir / "manifest.jsonl").exists()
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(cli_config),
                 "--out", str(run_dir)]) == EXIT_OK
    assert (run_dir / "final.ckpt").exists()
    assert (run_dir / "metrics.jsonl").exists()
    assert main(["eval", "--config", str(cli_config), "--out", str(run_dir),
                 "--resume", str(run_dir / "final.ckpt")]) == EXIT_OK
    summary = json.loads((run_dir / "eval.json").read_text())
    assert "zero_shot" in summary and "linear_probe" in summary
    assert (run_dir / "eval.csv").exists()


def test_train_missing_manifest_path_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1}))
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == EXIT_BAD_CONFIG


def test_nonfinite_exit_code_is_reserved():
    assert EXIT_NONFINITE == 3


def test_seed_override(cli_config, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["gen-data", "--config", str(cli_config), "--out", str(out_a),
                 "--seed", "5"]) == EXIT_OK
    assert main(["gen-data", "--config", str(cli_config), "--out", str(out_b),
                 "--seed", "5"]) == EXIT_OK
    a = (out_a / "manifest.jsonl").read_text().splitlines()[1:]
    b = (out_b / "manifest.jsonl").read_text().splitlines()[1:]
    assert a == b
