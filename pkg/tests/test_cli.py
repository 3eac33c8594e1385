"""Command-line front end, driven through main()."""

import csv
import json
import os

import pytest

from fbjscc.cli import main


def write_config(path, **overrides):
    doc = {
        "schema_version": 1,
        "seed": 3,
        "dataset": {"kind": "synthetic", "count": 16, "size": 8, "seed": 2},
        "model": {"width": 16, "layers": 1, "heads": 2},
        "session": {"height": 8, "width": 8, "patch": 4, "blocks": 2,
                    "block_symbols": 16, "feedback_mode": "lite",
                    "channel": {"forward": "awgn", "snr_db": 10.0,
                                "feedback": "perfect"}},
        "train": {"lr": 1e-3, "batch_size": 8, "epochs": 1, "patience": 5,
                  "val_fraction": 0.25},
        "loss": {"kind": "mse"},
    }
    doc.update(overrides)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny training run shared by the read-only commands."""
    root = tmp_path_factory.mktemp("cli_run")
    config = write_config(root / "run.json")
    out = str(root / "out")
    assert main(["train", "--config", config, "--out", out]) == 0
    return {"config": config, "out": out,
            "checkpoint": os.path.join(out, "checkpoint.fbz")}


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_train_outputs(trained):
    assert os.path.isfile(trained["checkpoint"])
    history = read_csv(os.path.join(trained["out"], "history.csv"))
    assert len(history) == 1
    assert set(history[0]) == {"epoch", "step", "train_loss", "val_psnr"}
    with open(os.path.join(trained["out"], "run.json")) as fh:
        run = json.load(fh)
    assert run["seed"] == 3
    assert len(run["config_hash"]) == 64
    assert len(run["code_version"]) == 64
    assert run["config"]["schema_version"] == 1


def test_train_seed_flag_overrides_config(tmp_path):
    config = write_config(tmp_path / "run.json")
    out = str(tmp_path / "out")
    assert main(["train", "--config", config, "--out", out, "--seed", "9"]) == 0
    with open(os.path.join(out, "run.json")) as fh:
        assert json.load(fh)["seed"] == 9


def test_eval_sweep(trained, tmp_path):
    out = str(tmp_path / "eval")
    code = main(["eval", "--checkpoint", trained["checkpoint"], "--out", out,
                 "--snr", "0,10", "--fb-snr", "perfect,10", "--limit", "4"])
    assert code == 0
    rows = read_csv(os.path.join(out, "results.csv"))
    assert len(rows) == 4  # 2 SNRs x 2 feedback levels
    assert {r["snr_db"] for r in rows} == {"0", "10"}
    assert {r["feedback_snr_db"] for r in rows} == {"", "10"}
    for row in rows:
        assert float(row["psnr_mean"]) > 0
        assert row["images"] == "4"


def test_eval_repeats_fill_std(trained, tmp_path):
    out = str(tmp_path / "eval")
    assert main(["eval", "--checkpoint", trained["checkpoint"], "--out", out,
                 "--repeats", "2", "--limit", "2"]) == 0
    rows = read_csv(os.path.join(out, "results.csv"))
    assert rows[0]["repeats"] == "2"
    assert float(rows[0]["psnr_std"]) >= 0.0


def test_varrate_sweep(trained, tmp_path):
    out = str(tmp_path / "vr")
    code = main(["varrate", "--checkpoint", trained["checkpoint"], "--out", out,
                 "--targets=-inf,5,inf", "--limit", "4"])
    assert code == 0
    rows = read_csv(os.path.join(out, "varrate.csv"))
    assert len(rows) == 3
    assert float(rows[0]["blocks_mean"]) == 1.0
    assert float(rows[-1]["blocks_mean"]) == 2.0
    means = [float(r["blocks_mean"]) for r in rows]
    assert means == sorted(means)


def test_stats_from_config(tmp_path, capsys):
    config = write_config(tmp_path / "run.json")
    assert main(["stats", "--config", config]) == 0
    text = capsys.readouterr().out
    assert "parameters" in text
    assert "m=2" in text


def test_stats_from_checkpoint_json(trained, capsys):
    assert main(["stats", "--checkpoint", trained["checkpoint"], "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["blocks"] == 2
    assert info["parameters"]["total"] > 0


def test_stats_requires_exactly_one_source(trained, capsys):
    assert main(["stats"]) == 2
    assert main(["stats", "--checkpoint", trained["checkpoint"],
                 "--config", trained["config"]]) == 2
    assert "config error" in capsys.readouterr().err


def test_region_command(tmp_path, capsys):
    out = str(tmp_path / "region")
    assert main(["region", "--snr1", "4", "--snr2", "10", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "region.csv"))
    assert len(rows) > 100
    assert "single-user corners" in capsys.readouterr().out


def test_plot_command(trained, tmp_path):
    eval_out = str(tmp_path / "eval")
    main(["eval", "--checkpoint", trained["checkpoint"], "--out", eval_out,
          "--snr", "0,5,10", "--limit", "2"])
    png = str(tmp_path / "psnr.png")
    code = main(["plot", "--kind", "psnr_vs_snr",
                 "--input", os.path.join(eval_out, "results.csv"),
                 "--out", png])
    assert code == 0
    assert os.path.getsize(png) > 0
    assert os.path.isfile(str(tmp_path / "psnr.csv"))


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    doc = {"schema_version": 1, "dataset": {"format": "cifar"}}
    with open(path, "w") as fh:
        json.dump(doc, fh)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err
    assert "dataset.format" in err


def test_missing_checkpoint_exits_1(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "none.fbz"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_lpips_fallback_warns(tmp_path, capsys):
    config = write_config(tmp_path / "run.json",
                          loss={"kind": "mse_plus_lpips", "lpips_weight": 0.1})
    out = str(tmp_path / "out")
    assert main(["train", "--config", config, "--out", out]) == 0
    assert "lpips" in capsys.readouterr().err.lower()
    with open(os.path.join(out, "run.json")) as fh:
        assert json.load(fh)["lpips_fallback"] is True


def test_broadcast_command(tmp_path):
    config = write_config(
        tmp_path / "bc.json",
        broadcast={"height": 8, "width": 8, "patch": 4, "blocks": 2,
                   "block_symbols": 16, "snr1_db": 4.0, "snr2_db": 10.0,
                   "mix": 0.5},
        loss={"kind": "broadcast", "mix": 0.5},
    )
    out = str(tmp_path / "out")
    assert main(["broadcast", "--config", config, "--out", out,
                 "--limit", "2"]) == 0
    with open(os.path.join(out, "broadcast.json")) as fh:
        summary = json.load(fh)
    assert summary["snr1_db"] == 4.0
    assert summary["receiver1_psnr_mean"] > 0
    assert os.path.isfile(os.path.join(out, "checkpoint.fbz"))


def test_varrate_rejects_noisy_feedback(tmp_path, capsys):
    config = write_config(
        tmp_path / "run.json",
        session={"height": 8, "width": 8, "patch": 4, "blocks": 2,
                 "block_symbols": 16, "feedback_mode": "lite",
                 "channel": {"forward": "awgn", "snr_db": 10.0,
                             "feedback": "awgn", "snr_fb_db": 15.0}},
    )
    out = str(tmp_path / "out")
    assert main(["train", "--config", config, "--out", out]) == 0
    code = main(["varrate", "--checkpoint", os.path.join(out, "checkpoint.fbz"),
                 "--out", str(tmp_path / "vr"), "--targets", "5"])
    assert code == 2
    assert "perfect feedback" in capsys.readouterr().err
