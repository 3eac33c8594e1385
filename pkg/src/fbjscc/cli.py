"""Command-line entry points.

    fbjscc train     --config run.json --out outdir
    fbjscc eval      --checkpoint ckpt --out outdir --snr 1,4,7 [--fb-snr perfect,20]
    fbjscc varrate   --checkpoint ckpt --out outdir --targets 28,30,32
    fbjscc broadcast --config run.json --out outdir
    fbjscc stats     --checkpoint ckpt | --config run.json [--json]
    fbjscc region    --snr1 4 --snr2 10 --out outdir
    fbjscc plot      --kind psnr_vs_snr --input results.csv --out fig.png

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from dataclasses import replace

from . import config as config_mod
from .baselines import broadcast_feedback_region
from .checkpoint import peek_manifest, restore_model, save_checkpoint
from .errors import ConfigError, DimensionError, FbjsccError, ModeError, PluginMissing
from .metrics import load_lpips_extractor
from .plots import plot_results, read_csv_rows, write_region_csv
from .protocol import (build_broadcast, build_point_to_point,
                       evaluate_point_to_point, run_broadcast_session,
                       run_variable_rate)
from .seeding import derive_seed
from .stats import broadcast_parameter_count, describe
from .training import train_loop

CHECKPOINT_NAME = "checkpoint.fbz"


def _write_text_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv_atomic(path: str, header: list, rows: list) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    _write_text_atomic(path, buf.getvalue())


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list {text!r}: {exc}") from exc


def _parse_feedback_levels(text: str) -> list:
    levels = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok == "perfect":
            levels.append(None)
        else:
            try:
                levels.append(float(tok))
            except ValueError as exc:
                raise ConfigError(
                    f"feedback SNR must be a number or 'perfect', got {tok!r}"
                ) from exc
    return levels or [None]


def _session_with_links(session, snr_db, fb_snr_db):
    channel = session.channel
    if fb_snr_db is None:
        channel = replace(channel, snr_db=snr_db, feedback="perfect", snr_fb_db=None)
    else:
        channel = replace(channel, snr_db=snr_db, feedback="awgn", snr_fb_db=fb_snr_db)
    return replace(session, channel=channel)


def _resolve_extractor(loss_spec, manifest_flags: dict):
    """LPIPS plugin lookup with the documented graceful fallback."""
    if loss_spec.kind != "mse_plus_lpips":
        return loss_spec, None
    try:
        return loss_spec, load_lpips_extractor()
    except PluginMissing as exc:
        print(f"warning: {exc}; falling back to plain MSE", file=sys.stderr)
        manifest_flags["lpips_fallback"] = True
        return replace(loss_spec, kind="mse"), None


def cmd_train(args) -> int:
    doc = config_mod.load_config(args.config)
    seed = doc.get("seed", 0) if args.seed is None else args.seed
    spec = config_mod.build_model_spec(doc)
    loss_spec = config_mod.build_loss_spec(doc)
    train_cfg = replace(config_mod.build_train_config(doc), seed=seed)
    dataset = config_mod.dataset_from_config(doc)
    flags = {}
    loss_spec, extractor = _resolve_extractor(loss_spec, flags)
    if loss_spec.kind == "broadcast":
        target = config_mod.build_broadcast_config(doc)
        model = build_broadcast(spec, target, seed=derive_seed(seed, "init"))
    else:
        target = config_mod.build_session(doc)
        model = build_point_to_point(spec, target, seed=derive_seed(seed, "init"))
    model, history = train_loop(
        dataset, model, target, train_cfg, loss_spec, extractor=extractor
    )
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    extra = {
        "config": doc,
        "config_hash": config_mod.config_hash(doc),
        "code_version": config_mod.code_version(),
        "seed": seed,
        **flags,
    }
    save_checkpoint(ckpt_path, model, history=history, extra=extra)
    _write_csv_atomic(
        os.path.join(args.out, "history.csv"),
        ["epoch", "step", "train_loss", "val_psnr"],
        [[h["epoch"], h["step"], f"{h['train_loss']:.8f}", f"{h['val_psnr']:.6f}"]
         for h in history],
    )
    _write_text_atomic(
        os.path.join(args.out, "run.json"), json.dumps(extra, indent=2, sort_keys=True)
    )
    best = max((h["val_psnr"] for h in history), default=math.nan)
    print(f"trained {len(history)} epochs; best val PSNR {best:.3f} dB")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _dataset_for_eval(args, ckpt):
    doc = ckpt.extra.get("config")
    if args.config is not None:
        doc = config_mod.load_config(args.config)
    if not doc:
        raise ConfigError(
            "checkpoint carries no dataset config; pass --config with a dataset section"
        )
    return config_mod.dataset_from_config(doc)


def cmd_eval(args) -> int:
    model, ckpt = restore_model(args.checkpoint)
    if ckpt.kind != "point_to_point":
        raise ConfigError("eval works on point-to-point checkpoints")
    images = _dataset_for_eval(args, ckpt)
    if args.limit:
        images = images[: args.limit]
    session = ckpt.session
    snrs = _parse_floats(args.snr) if args.snr else [session.channel.snr_db]
    fb_levels = _parse_feedback_levels(args.fb_snr) if args.fb_snr else [None]
    header = ["snr_db", "feedback_snr_db", "bandwidth_ratio", "blocks",
              "feedback_mode", "psnr_mean", "psnr_std", "images", "repeats"]
    rows = []
    for snr in snrs:
        for fb in fb_levels:
            sess = _session_with_links(session, snr, fb)
            means = []
            for rep in range(args.repeats):
                result = evaluate_point_to_point(
                    model, images, sess, seed=derive_seed(args.seed, "repeat", rep)
                )
                means.append(float(result["psnr"].mean()))
            mean = sum(means) / len(means)
            if len(means) > 1:
                var = sum((v - mean) ** 2 for v in means) / (len(means) - 1)
                std = math.sqrt(var)
            else:
                std = 0.0
            rows.append([
                f"{snr:g}", "" if fb is None else f"{fb:g}",
                f"{sess.bandwidth_ratio:.6f}", sess.blocks, sess.feedback.kind,
                f"{mean:.6f}", f"{std:.6f}", images.shape[0], args.repeats,
            ])
            fb_name = "perfect" if fb is None else f"{fb:g} dB"
            print(f"SNR {snr:g} dB, feedback {fb_name}: {mean:.3f} dB PSNR")
    os.makedirs(args.out, exist_ok=True)
    _write_csv_atomic(os.path.join(args.out, "results.csv"), header, rows)
    return 0


def cmd_varrate(args) -> int:
    model, ckpt = restore_model(args.checkpoint)
    if ckpt.kind != "point_to_point":
        raise ConfigError("varrate works on point-to-point checkpoints")
    session = ckpt.session
    if session.channel.feedback != "perfect":
        raise ConfigError("variable-rate transmission requires perfect feedback")
    images = _dataset_for_eval(args, ckpt)
    if args.limit:
        images = images[: args.limit]
    targets = _parse_floats(args.targets)
    header = ["target_psnr_db", "blocks_mean", "achieved_psnr_mean",
              "bandwidth_ratio_mean", "images"]
    rows = []
    for target in targets:
        used, achieved = [], []
        for index in range(images.shape[0]):
            trace = run_variable_rate(
                images[index], model, session, target,
                seed=args.seed, image_index=index,
            )
            used.append(trace.blocks_used)
            achieved.append(trace.psnr)
        blocks_mean = sum(used) / len(used)
        ratio_mean = blocks_mean * session.block_symbols / session.source_dim
        rows.append([
            f"{target:g}", f"{blocks_mean:.4f}",
            f"{sum(achieved) / len(achieved):.6f}", f"{ratio_mean:.6f}",
            images.shape[0],
        ])
        print(f"target {target:g} dB: {blocks_mean:.2f} blocks on average")
    os.makedirs(args.out, exist_ok=True)
    _write_csv_atomic(os.path.join(args.out, "varrate.csv"), header, rows)
    return 0


def cmd_broadcast(args) -> int:
    doc = config_mod.load_config(args.config)
    seed = doc.get("seed", 0) if args.seed is None else args.seed
    spec = config_mod.build_model_spec(doc)
    bcfg = config_mod.build_broadcast_config(doc)
    loss_spec = config_mod.build_loss_spec(doc)
    if loss_spec.kind != "broadcast":
        loss_spec = replace(loss_spec, kind="broadcast", mix=bcfg.mix)
    train_cfg = replace(config_mod.build_train_config(doc), seed=seed)
    dataset = config_mod.dataset_from_config(doc)
    model = build_broadcast(spec, bcfg, seed=derive_seed(seed, "init"))
    model, history = train_loop(dataset, model, bcfg, train_cfg, loss_spec)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, CHECKPOINT_NAME)
    extra = {
        "config": doc,
        "config_hash": config_mod.config_hash(doc),
        "code_version": config_mod.code_version(),
        "seed": seed,
    }
    save_checkpoint(ckpt_path, model, history=history, extra=extra)
    limit = min(args.limit or 8, dataset.shape[0])
    psnr1, psnr2 = [], []
    for index in range(limit):
        pair = dataset[dataset.shape[0] - 1 - index]
        t1, t2 = run_broadcast_session(
            dataset[index], pair, model, bcfg,
            seed=derive_seed(seed, "report"), image_index=index,
        )
        psnr1.append(t1.psnr)
        psnr2.append(t2.psnr)
    summary = {
        "receiver1_psnr_mean": sum(psnr1) / len(psnr1),
        "receiver2_psnr_mean": sum(psnr2) / len(psnr2),
        "snr1_db": bcfg.snr1_db,
        "snr2_db": bcfg.snr2_db,
        "epochs": len(history),
    }
    _write_text_atomic(
        os.path.join(args.out, "broadcast.json"),
        json.dumps(summary, indent=2, sort_keys=True),
    )
    print(
        f"receiver 1: {summary['receiver1_psnr_mean']:.3f} dB, "
        f"receiver 2: {summary['receiver2_psnr_mean']:.3f} dB"
    )
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_stats(args) -> int:
    if bool(args.checkpoint) == bool(args.config):
        raise ConfigError("stats needs exactly one of --checkpoint or --config")
    if args.checkpoint:
        doc = peek_manifest(args.checkpoint)
        from .nn_core import ModelSpec

        spec = ModelSpec(**doc["manifest"]["model_spec"])
        if doc["manifest"]["kind"] == "broadcast":
            bcfg = config_mod.build_broadcast_config(
                {"broadcast": doc["manifest"]["broadcast"]}
            )
            counts = broadcast_parameter_count(spec, bcfg)
            print(f"broadcast parameters: {counts['total']:,} "
                  f"({counts['total'] / 1e6:.2f}M)")
            if args.json:
                print(json.dumps(counts, indent=2))
            return 0
        from .checkpoint import _session_from_dict

        session = _session_from_dict(doc["manifest"]["session"])
    else:
        cfg_doc = config_mod.load_config(args.config)
        spec = config_mod.build_model_spec(cfg_doc)
        loss = config_mod.build_loss_spec(cfg_doc)
        if loss.kind == "broadcast" or (
            "broadcast" in cfg_doc and "session" not in cfg_doc
        ):
            bcfg = config_mod.build_broadcast_config(cfg_doc)
            counts = broadcast_parameter_count(spec, bcfg)
            print(f"broadcast parameters: {counts['total']:,} "
                  f"({counts['total'] / 1e6:.2f}M)")
            if args.json:
                print(json.dumps(counts, indent=2))
            return 0
        session = config_mod.build_session(cfg_doc)
    info = describe(spec, session)
    if args.json:
        print(json.dumps(info, indent=2))
        return 0
    params = info["parameters"]
    macs = info["macs"]
    print(f"blocks m={info['blocks']}, k={info['block_symbols']} symbols/block, "
          f"R={info['bandwidth_ratio']:.4f}, feedback={info['feedback']}")
    print(f"parameters: encoder {params['encoder']:,} + decoder {params['decoder']:,} "
          f"= {params['total']:,} ({info['parameters_millions']:.2f}M)")
    print(f"forward MACs per image: {macs['total']:,} ({info['macs_gig']:.2f}G, "
          f"{macs['belief_runs']} belief decode(s))")
    return 0


def cmd_region(args) -> int:
    region = broadcast_feedback_region(
        args.snr1, args.snr2, power=args.power, steps=args.steps
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "region.csv")
    write_region_csv(path, region)
    r1_max = max(p.r1 for p in region["boundary"])
    r2_max = max(p.r2 for p in region["boundary"])
    print(f"single-user corners: R1 <= {r1_max:.5f}, R2 <= {r2_max:.5f} bits/real use")
    print(f"region table: {path}")
    return 0


def cmd_plot(args) -> int:
    rows = read_csv_rows(args.input)
    plot_results(rows, args.kind, args.out)
    data_path = os.path.splitext(args.out)[0] + ".csv"
    if rows:
        _write_csv_atomic(data_path, list(rows[0].keys()),
                          [list(r.values()) for r in rows])
    print(f"wrote {args.out} and {data_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbjscc",
        description="Feedback-aided transformer source-channel coding of images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a JSON config")
    train.add_argument("--config", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--seed", type=int, default=None)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="PSNR sweep over channel conditions")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--snr", default=None, help="comma-separated dB list")
    ev.add_argument("--fb-snr", default=None,
                    help="comma-separated dB list, 'perfect' allowed")
    ev.add_argument("--repeats", type=int, default=1)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--config", default=None, help="override dataset config")
    ev.add_argument("--limit", type=int, default=0, help="cap evaluated images")
    ev.set_defaults(func=cmd_eval)

    vr = sub.add_parser("varrate", help="variable-length transmission sweep")
    vr.add_argument("--checkpoint", required=True)
    vr.add_argument("--out", required=True)
    vr.add_argument("--targets", required=True, help="comma-separated dB list")
    vr.add_argument("--seed", type=int, default=0)
    vr.add_argument("--config", default=None, help="override dataset config")
    vr.add_argument("--limit", type=int, default=0, help="cap evaluated images")
    vr.set_defaults(func=cmd_varrate)

    bc = sub.add_parser("broadcast", help="train and report a two-receiver model")
    bc.add_argument("--config", required=True)
    bc.add_argument("--out", required=True)
    bc.add_argument("--seed", type=int, default=None)
    bc.add_argument("--limit", type=int, default=0, help="pairs in the report")
    bc.set_defaults(func=cmd_broadcast)

    st = sub.add_parser("stats", help="parameter count and forward cost")
    st.add_argument("--checkpoint", default=None)
    st.add_argument("--config", default=None)
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=cmd_stats)

    rg = sub.add_parser("region", help="two-receiver feedback rate region")
    rg.add_argument("--snr1", type=float, required=True)
    rg.add_argument("--snr2", type=float, required=True)
    rg.add_argument("--power", type=float, default=1.0)
    rg.add_argument("--steps", type=int, default=201)
    rg.add_argument("--out", required=True)
    rg.set_defaults(func=cmd_region)

    pl = sub.add_parser("plot", help="draw a result table")
    pl.add_argument("--kind", required=True,
                    choices=("psnr_vs_snr", "psnr_vs_r", "psnr_vs_m", "region"))
    pl.add_argument("--input", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModeError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FbjsccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
