"""Command-line entry point: ``ongcmp <command> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 file-system error.
Every command writes a JSON run manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .config import apply_overrides, read_kv, snapshot
from .dataset import load_clip, load_manifest, save_clip, save_manifest
from .evaluation import (
    PhaseTimer,
    confusion_rows,
    confusion_table,
    format_table,
    intra_inter,
    timing_report,
    timing_table,
    write_confusion_pgm,
    write_csv,
)
from .flow import FlowConfig, colorize_sequence, flow_fields, write_flo
from .imageio import write_ppm
from .synthetic import SynthConfig, gen_synthetic
from .training import Hyper, write_curve
from . import workflow as wf

log = logging.getLogger("ongcmp")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


class RunManifest:
    """Records what a command read and wrote; saved as JSON."""

    def __init__(self, command, argv, seed=None):
        self.data = {
            "command": command,
            "argv": list(argv),
            "seed": seed,
            "version": __version__,
            "backend": kernels.BACKEND,
            "config": {},
            "inputs": {},
            "checkpoints": [],
            "outputs": {},
            "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }

    def config(self, values):
        self.data["config"].update({k: _jsonable(v) for k, v in values.items()})

    def input(self, path):
        if os.path.isfile(path):
            self.data["inputs"][path] = wf.file_digest(path)
        else:
            self.data["inputs"][path] = None

    def output(self, path):
        self.data["outputs"][path] = wf.file_digest(path)

    def checkpoint(self, path):
        self.data["checkpoints"].append(path)
        self.output(path)

    def save(self, path):
        self.data["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_settings(args):
    """Flow and training settings from ``--hyper`` plus ``--set`` and flag overrides."""
    values = {}
    if getattr(args, "hyper", None):
        values.update(read_kv(args.hyper))
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = val.strip()
    for flag, key in (("epochs", "train.epochs"), ("lr", "train.lr"), ("alpha", "flow.alpha")):
        if getattr(args, flag, None) is not None:
            values[key] = str(getattr(args, flag))
    known = set(snapshot(FlowConfig(), "flow.")) | set(snapshot(Hyper(), "train."))
    unknown = sorted(k for k in values if k not in known)
    if unknown:
        raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
    flow_cfg = apply_overrides(FlowConfig(), values, "flow.")
    hyper = apply_overrides(Hyper(), values, "train.")
    if flow_cfg.norm_mode not in ("clip", "frame", "global"):
        raise ValueError(f"flow.norm_mode must be clip, frame or global, not {flow_cfg.norm_mode!r}")
    if hyper.optimizer not in ("sgd", "adam"):
        raise ValueError(f"train.optimizer must be sgd or adam, not {hyper.optimizer!r}")
    return flow_cfg, hyper


def settings_snapshot(flow_cfg, hyper):
    out = snapshot(flow_cfg, "flow.")
    out.update(snapshot(hyper, "train."))
    return out


def _resolve(root, path):
    if path is None or root is None or os.path.isabs(path):
        return path
    return os.path.join(root, path)


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _parent(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args, run):
    cfg = SynthConfig(
        classes=args.classes,
        per_class=args.per_class,
        test_per_class=args.test_per_class,
        size=args.size,
        frames=args.frames,
        seed=args.seed,
    )
    cfg.validate()
    run.config(snapshot(cfg, "gen."))
    out = _ensure_dir(args.out)
    clips, manifest = gen_synthetic(cfg)
    for clip in clips:
        save_clip(os.path.join(out, "clips", clip.id), clip)
    mpath = os.path.join(out, "manifest.txt")
    save_manifest(mpath, manifest)
    run.output(mpath)
    log.info("wrote %d clips to %s", len(clips), out)
    return os.path.join(out, "run_manifest.json")


def cmd_flow(args, run):
    flow_cfg, _ = load_settings(args)
    run.config(snapshot(flow_cfg, "flow."))
    clip = load_clip(args.inp)
    run.input(os.path.join(args.inp, "clip.txt"))
    if len(clip) < 2:
        raise ValueError("a clip needs at least two frames for optical flow")
    out = _ensure_dir(args.out)
    fields = flow_fields(clip.frames, flow_cfg)
    for i, img in enumerate(colorize_sequence(fields, flow_cfg)):
        path = os.path.join(out, f"frame_{i:05d}.gcmp.ppm")
        write_ppm(path, img)
        run.output(path)
    if args.dump_flo:
        for i, f in enumerate(fields):
            path = os.path.join(out, f"frame_{i:05d}.flo")
            write_flo(path, f)
            run.output(path)
    log.info("%d frames -> %d GCMP images", len(clip), len(fields))
    return os.path.join(out, "run_manifest.json")


def _prepared(args, run, flow_cfg, hyper, splits=None):
    mpath = os.path.join(args.data, "manifest.txt")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"{mpath} not found")
    run.input(mpath)
    t0 = time.perf_counter()
    prepared = wf.prepare_dataset(args.data, flow_cfg, hyper.in_size, splits)
    log.info("prepared %d clips in %.1f s", len(prepared), time.perf_counter() - t0)
    return prepared


def cmd_train(args, run):
    flow_cfg, hyper = load_settings(args)
    run.config(settings_snapshot(flow_cfg, hyper))
    prepared = _prepared(args, run, flow_cfg, hyper, splits=("train",))
    kind = args.input or ("raw" if args.stage == "postsf" else "gcmp")
    t0 = time.perf_counter()
    sm, result = wf.train_stage(prepared, args.stage, hyper, args.seed, kind)
    log.info("trained %s (%s input) in %.1f s", args.stage, kind, time.perf_counter() - t0)
    _parent(args.out)
    wf.save_stage(args.out, sm, hyper, args.seed, wf.data_fingerprint(args.data, flow_cfg, hyper.in_size))
    run.checkpoint(args.out)
    run.output(args.out + ".txt")
    curve = args.out + ".curve.csv"
    write_curve(curve, result.curve)
    run.output(curve)
    return args.out + ".run.json"


def _load_models(args, run):
    models = {}
    for name, path in (("occ", args.ckpt_occ), ("pre", args.ckpt_pre), ("post", args.ckpt_post)):
        run.input(path)
        models[name], hyper = wf.load_stage(path)
    expect = {"occ": "occ5", "pre": "pre2", "post": "postsf"}
    for name, stage in expect.items():
        if models[name].stage != stage:
            raise ValueError(f"--ckpt-{name} holds a {models[name].stage} model, expected {stage}")
    return models, hyper


def cmd_predict(args, run):
    flow_cfg, _ = load_settings(args)
    models, hyper = _load_models(args, run)
    run.config(settings_snapshot(flow_cfg, hyper))
    splits = None if args.split == "all" else (args.split,)
    prepared = _prepared(args, run, flow_cfg, hyper, splits)
    timer = PhaseTimer()
    preds = wf.predict_all(prepared, models["occ"], models["pre"], models["post"], None, hyper.window, timer)
    _parent(args.out)
    wf.write_predictions(args.out, preds)
    run.output(args.out)
    log.info("%d predictions written", len(preds))
    if args.timing:
        _write_timing(args.timing, timer, run)
    return args.out + ".run.json"


def _write_timing(path, timer, run):
    report = timing_report(timer)
    _parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# time cost per phase, optical flow excluded\n")
        fh.write(timing_table(report))
        fh.write(f"clips {report['clips']}; phase runs {report['runs']}\n")
    # timing values are not reproducible, so they are listed without a digest
    run.data["outputs"][path] = None
    return report


def cmd_eval(args, run):
    run.input(args.pred)
    run.input(args.truth)
    records = wf.read_predictions(args.pred)
    truth = {r.id: r.label for r in load_manifest(args.truth)}
    summary = wf.evaluate_records(records, truth)
    out = _ensure_dir(args.out)
    cm, ap = summary.confusion, summary.ap
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("# 11-class evaluation; AP ranks all evaluated clips per class, ties by clip id\n")
        fh.write(confusion_table(cm))
        fh.write("\n")
        rows = [[name, float(100 * v) if not np.isnan(v) else "excluded"] for name, v in zip(cm.labels, ap.per_class)]
        fh.write(format_table(["class", "AP%"], rows))
        fh.write(f"mAP {100 * ap.mean:.2f}%")
        if ap.excluded:
            fh.write(f" (no positives, excluded: {', '.join(cm.labels[i] for i in ap.excluded)})")
        fh.write("\n")
    write_csv(os.path.join(out, "confusion.csv"), ["truth", *cm.labels, "accuracy"], confusion_rows(cm))
    write_csv(
        os.path.join(out, "ap.csv"),
        ["class", "ap"],
        [[n, float(v) if not np.isnan(v) else "nan"] for n, v in zip(cm.labels, ap.per_class)]
        + [["mean", ap.mean]],
    )
    write_confusion_pgm(os.path.join(out, "confusion.pgm"), cm)
    for name in ("report.txt", "confusion.csv", "ap.csv", "confusion.pgm"):
        run.output(os.path.join(out, name))
    print(f"accuracy {100 * cm.overall():.2f}%  average {100 * cm.average():.2f}%  mAP {100 * ap.mean:.2f}%")
    return os.path.join(out, "run_manifest.json")


def _seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ValueError(f"--seeds expects comma-separated integers, got {text!r}") from exc


def cmd_ablate(args, run):
    flow_cfg, hyper = load_settings(args)
    run.config(settings_snapshot(flow_cfg, hyper))
    prepared = _prepared(args, run, flow_cfg, hyper)
    out = _ensure_dir(args.out)
    if args.mode == "gcmp":
        seeds = _seeds(args.seeds)
        res = wf.ablate_gcmp(prepared, hyper, seeds)
        rows = [[f"seed {s}", 100 * float(g), 100 * float(r)] for s, g, r in zip(seeds, res["gcmp"], res["raw"])]
        rows.append(["mean", 100 * res["mean"]["gcmp"], 100 * res["mean"]["raw"]])
        table = format_table(["occ5 accuracy %", "GCMP input", "raw-frame input"], rows)
        path = os.path.join(out, "ablate_gcmp.txt")
    else:
        sms = {}
        for stage in ("occ5", "pre2", "postsf", "occ6"):
            kind = "raw" if stage == "postsf" else "gcmp"
            sms[stage], _ = wf.train_stage(prepared, stage, hyper, args.seed, kind)
        rep = wf.ablate_ontology(prepared, sms["occ5"], sms["pre2"], sms["postsf"], sms["occ6"], hyper.window)
        rows = []
        for name in ("flat", "cascade"):
            r = rep[name]
            six = r["six"].per_class()
            rows.append([name, *[float(100 * v) for v in six], 100 * r["layup_other2"], 100 * r["eleven"].overall()])
        table = format_table(["variant", *wf.V6_ORDER, "Layup+Other2", "11-class"], rows)
        path = os.path.join(out, "ablate_ontology.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table)
    run.output(path)
    print(table, end="")
    return os.path.join(out, "run_manifest.json")


def cmd_correlate(args, run):
    flow_cfg, _ = load_settings(args)
    occ, hyper = wf.load_stage(args.ckpt_occ)
    post, _ = wf.load_stage(args.ckpt_post)
    run.input(args.ckpt_occ)
    run.input(args.ckpt_post)
    prepared = _prepared(args, run, flow_cfg, hyper, (args.split,))
    out = _ensure_dir(args.out)
    study = wf.correlation_study(prepared, occ, post, args.split)
    path = os.path.join(out, "correlation.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# mean pairwise cosine similarity x100 (self-pairs excluded on the diagonal)\n")
        for name, (classes, m) in study.items():
            intra, inter_mean, inter_max = intra_inter(m)
            fh.write(f"\n[{name}]\n")
            fh.write(format_table(["", *classes], [[c, *map(float, m[i])] for i, c in enumerate(classes)]))
            fh.write(format_table(["class", "intra", "inter mean", "inter max"],
                                  [[c, float(a), float(b), float(x)] for c, a, b, x in zip(classes, intra, inter_mean, inter_max)]))
    run.output(path)
    return os.path.join(out, "run_manifest.json")


def cmd_bench(args, run):
    flow_cfg, _ = load_settings(args)
    models, hyper = _load_models(args, run)
    run.config(settings_snapshot(flow_cfg, hyper))
    splits = None if args.split == "all" else (args.split,)
    manifest = load_manifest(os.path.join(args.data, "manifest.txt"))
    run.input(os.path.join(args.data, "manifest.txt"))
    records = [r for r in manifest if splits is None or r.split in splits][: args.limit or None]
    prepared = wf.prepare_dataset(args.data, flow_cfg, hyper.in_size, splits)
    by_id = {p.id: p for p in prepared}
    timer = PhaseTimer()
    for rec in records:
        wf.predict_clip(by_id[rec.id], models["occ"], models["pre"], models["post"], hyper.window, timer)
    out = _ensure_dir(args.out)
    report = _write_timing(os.path.join(out, "timing.txt"), timer, run)
    print(timing_table(report), end="")
    return os.path.join(out, "run_manifest.json")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_settings(p):
    p.add_argument("--hyper", "--config", dest="hyper", help="key = value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")


def _add_ckpts(p):
    p.add_argument("--ckpt-occ", required=True)
    p.add_argument("--ckpt-pre", required=True)
    p.add_argument("--ckpt-post", required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="ongcmp", description="GCMP basketball event pipeline")
    parser.add_argument("--root", default=os.environ.get("ONGCMP_ROOT"), help="workspace root for relative paths")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic event set")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--test-per-class", type=int, default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("flow", help="GCMP images for one clip directory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-flo", action="store_true")
    p.add_argument("--alpha", type=float)
    _add_settings(p)

    p = sub.add_parser("train", help="train one stage classifier")
    p.add_argument("--stage", choices=("occ5", "pre2", "postsf", "occ6"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--input", choices=("gcmp", "raw"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    _add_settings(p)

    p = sub.add_parser("predict", help="run the cascade on a data set")
    p.add_argument("--data", required=True)
    _add_ckpts(p)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--timing", help="also write the per-phase time report here")
    _add_settings(p)

    p = sub.add_parser("eval", help="score a prediction file against a manifest")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="GCMP-input or ontology ablation")
    p.add_argument("--mode", choices=("gcmp", "ontology"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", default="0,1,2", help="training seeds for --mode gcmp")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    _add_settings(p)

    p = sub.add_parser("correlate", help="class similarity of deep features")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-occ", required=True)
    p.add_argument("--ckpt-post", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True)
    _add_settings(p)

    p = sub.add_parser("bench", help="per-phase inference time report")
    p.add_argument("--data", required=True)
    _add_ckpts(p)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--limit", type=int, default=0, help="time only the first N clips")
    p.add_argument("--out", required=True)
    _add_settings(p)
    return parser


COMMANDS = {
    "gen": cmd_gen,
    "flow": cmd_flow,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "correlate": cmd_correlate,
    "bench": cmd_bench,
}

PATH_ARGS = ("out", "inp", "data", "hyper", "pred", "truth", "timing", "ckpt_occ", "ckpt_pre", "ckpt_post")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    for name in PATH_ARGS:
        if getattr(args, name, None) is not None:
            setattr(args, name, _resolve(args.root, getattr(args, name)))
    run = RunManifest(args.command, argv, getattr(args, "seed", None))
    try:
        manifest_path = COMMANDS[args.command](args, run)
        run.save(manifest_path)
    except (OSError, EOFError) as exc:
        print(f"ongcmp {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"ongcmp {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
