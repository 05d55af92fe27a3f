"""Command-line entry point: data generation, training, inference, evaluation, gradient checks.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.
Every flag may also be given in a flat ``key=value`` file passed with
``--config``; flags on the command line win over the file, which wins over
the built-in (full-scale) defaults.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import cv2
import numpy as np

from .core import CameraRig, MonoStereoError
from .data import (DESK_SCENE, TEXTURES, InfeasibleSceneError, SceneSpec, load_dataset,
                   make_synthetic_dataset, save_dataset, synthetic_rig)
from .evaluate import (CAPS, aggregate, compute_metrics, format_table, infer_disparity,
                       write_metrics_csv)
from .gradcheck import LOSS_TOL, run_gradcheck
from .imageio import ImageIOError, load_image, load_map, save_image, write_pfm
from .losses import LossWeights
from .net import CheckpointError, load_checkpoint, save_checkpoint
from .sampler import disparity_to_depth
from .train import (NonFiniteGradientError, NonFiniteLossError, StereoInputMode, TrainConfig,
                    train_stereo_matching, train_view_synthesis)

log = logging.getLogger("monostereo")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _csv_list(text):
    return tuple(t for t in str(text).split(",") if t)


# -- parser ----------------------------------------------------------------

SYN_DEFAULTS = dict(batch_size=10, epochs=60, lr0=1e-4)
STEREO_DEFAULTS = dict(batch_size=10, epochs=80, lr0=1e-5)


def _training_flags(p):
    w = LossWeights()
    c = TrainConfig()
    p.add_argument("--data", help="dataset directory with manifest.txt")
    p.add_argument("--out", help="output checkpoint path")
    p.add_argument("--loss-csv", help="per-iteration loss CSV path (default: <out>.loss.csv)")
    p.add_argument("--init", help="checkpoint to continue training from")
    p.add_argument("--batch-size", type=int, help="pairs per iteration (count, default 10)")
    p.add_argument("--epochs", type=int, help="passes over the dataset (count, default 60 view synthesis / 80 stereo)")
    p.add_argument("--lr0", type=float, help="initial learning rate (per step, default 1e-4 view synthesis / 1e-5 stereo)")
    p.add_argument("--lr-hold-epochs", type=int, help=f"epochs at lr0 before halving (count, default {c.lr_hold_epochs})")
    p.add_argument("--lr-halve-every", type=int, help=f"epochs between halvings (count, default {c.lr_halve_every})")
    p.add_argument("--max-iters", type=int, help="stop after this many iterations (count, default 0 = all epochs)")
    p.add_argument("--alpha", type=float, help=f"image alignment weight (unitless, default {w.alpha:g})")
    p.add_argument("--beta", type=float, help=f"smoothness weight (unitless, default {w.beta:g})")
    p.add_argument("--gamma-w", type=float, help=f"left-right consistency weight (unitless, default {w.gamma_w:g})")
    p.add_argument("--gamma-mix", type=float, help=f"SSIM share of the photometric term (fraction, default {w.gamma_mix:g})")
    p.add_argument("--sigma-g", type=float, help=f"Gaussian blur of the L1 residual (pixels, default {w.sigma_g:g})")
    p.add_argument("--regularizer-units", choices=("width", "pixel"),
                   help="disparity units inside smoothness and consistency (default width fraction)")
    p.add_argument("--preset", choices=("micro", "resnet", "vgg"),
                   help=f"network size preset (default {c.preset})")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   help="flip/swap and photometric augmentation (default on)")
    p.add_argument("--shared-warp-sign", action=argparse.BooleanOptionalAction,
                   help="sample at j - d for both reconstructions (default off)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monostereo", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     argument_default=argparse.SUPPRESS)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key=value file; keys are flag names with '_' for '-'")
        p.add_argument("--seed", type=int, help="seed for every random draw (integer, default 0)")
        return p

    p = command("synth-data", "generate a synthetic stereo dataset (PNG pairs, PFM disparity, manifest)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--count", type=int, help="number of scenes (count, default 200)")
    p.add_argument("--width", type=int, help=f"image width (pixels, default {DESK_SCENE.width})")
    p.add_argument("--height", type=int, help=f"image height (pixels, default {DESK_SCENE.height})")
    p.add_argument("--objects", type=int, help=f"foreground rectangles (count, default {DESK_SCENE.object_count})")
    p.add_argument("--ground-bands", type=int, help=f"ground strips (count, default {DESK_SCENE.ground_bands})")
    p.add_argument("--disp-min", type=float, help=f"background disparity (pixels, default {DESK_SCENE.disparity_range[0]:g})")
    p.add_argument("--disp-max", type=float, help=f"largest disparity (pixels, default {DESK_SCENE.disparity_range[1]:g})")
    p.add_argument("--textures", type=_csv_list, help=f"comma-separated cycle of {', '.join(TEXTURES)}")

    p = command("train-syn", "train the single-view (view-synthesis) network")
    _training_flags(p)

    p = command("train-stereo", "train the stereo-matching network")
    _training_flags(p)
    p.add_argument("--mode", choices=[m.value for m in StereoInputMode],
                   help="input/target views: ssd, ood or sod (default sod)")
    p.add_argument("--syn-ckpt", help="view-synthesis checkpoint (needed by ssd and sod)")

    p = command("infer", "predict depth from single left views")
    p.add_argument("--syn-ckpt", help="view-synthesis checkpoint")
    p.add_argument("--stereo-ckpt", help="stereo checkpoint")
    p.add_argument("--left", help="a single left image (PNG or PFM)")
    p.add_argument("--data", help="dataset directory; every left view is processed")
    p.add_argument("--out-dir", help="where depth/disparity PFMs and PNG previews go")
    p.add_argument("--baseline", type=float, help="camera baseline for --left (meters, default scaled KITTI rig)")
    p.add_argument("--focal", type=float, help="focal length for --left (pixels, default scaled KITTI rig)")

    p = command("eval", "score predicted depth maps against ground truth")
    p.add_argument("--pred", help="predicted depth: a PFM/PNG map, or a directory of <name>_depth.pfm files")
    p.add_argument("--gt", help="ground-truth depth map (PFM or depth PNG), when --pred is a file")
    p.add_argument("--data", help="dataset directory supplying ground truth, when --pred is a directory")
    p.add_argument("--cap", choices=sorted(CAPS), action="append",
                   help="depth cap: 80 (0-80 m) or 50garg (1-50 m); repeat for both (default both)")
    p.add_argument("--log-base", choices=("e", "10", "2"), help="logarithm in RMSE(log) (default e)")
    p.add_argument("--crop", help="evaluate only top,left,height,width (pixels)")
    p.add_argument("--csv", help="metrics CSV path; with two caps the cap name is appended")

    p = command("gradcheck", "finite-difference checks of every analytic gradient")
    p.add_argument("--instances", type=int, help="random 5x7 problems per operation (count, default 20)")
    return parser


COMMAND_DEFAULTS = {
    "synth-data": dict(count=200, width=DESK_SCENE.width, height=DESK_SCENE.height,
                       objects=DESK_SCENE.object_count, ground_bands=DESK_SCENE.ground_bands,
                       disp_min=DESK_SCENE.disparity_range[0], disp_max=DESK_SCENE.disparity_range[1],
                       textures=TEXTURES),
    "train-syn": SYN_DEFAULTS,
    "train-stereo": dict(STEREO_DEFAULTS, mode="sod"),
    "infer": {},
    "eval": dict(log_base="e"),
    "gradcheck": dict(instances=20),
}


def _actions(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a for a in sub.choices[command]._actions if a.dest not in ("help", "config")}


def read_config(path) -> dict:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _convert(action, raw, where):
    try:
        if isinstance(action, (argparse.BooleanOptionalAction, argparse._StoreTrueAction)):
            return _bool(raw)
        value = action.type(raw) if action.type else raw
    except (TypeError, ValueError) as e:
        raise UsageError(f"{where}: bad value {raw!r} for {action.dest}: {e}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"{where}: {action.dest} must be one of {sorted(action.choices)}")
    if isinstance(action, argparse._AppendAction):
        return [value]
    return value


def resolve(parser, argv) -> dict:
    """Parsed options with precedence command line > config file > defaults."""
    ns = vars(parser.parse_args(argv))
    command = ns["command"]
    opts = dict(seed=0, **COMMAND_DEFAULTS[command])
    if "config" in ns:
        actions = _actions(parser, command)
        if not os.path.isfile(ns["config"]):
            raise UsageError(f"config file not found: {ns['config']}")
        for key, raw in read_config(ns["config"]).items():
            if key not in actions:
                raise UsageError(f"{ns['config']}: unknown key {key!r} for {command}")
            opts[key] = _convert(actions[key], raw, ns["config"])
    opts.update(ns)
    return opts


# -- commands -----------------------------------------------------------------

def _require(opts, *names):
    for n in names:
        if opts.get(n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _existing(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def cmd_synth_data(o):
    _require(o, "out")
    if o["count"] < 1:
        raise UsageError("--count must be >= 1")
    bad = [t for t in o["textures"] if t not in TEXTURES]
    if bad:
        raise UsageError(f"unknown textures {bad}")
    spec = SceneSpec(width=o["width"], height=o["height"], object_count=o["objects"],
                     disparity_range=(o["disp_min"], o["disp_max"]), ground_bands=o["ground_bands"])
    try:
        spec.validate()
    except InfeasibleSceneError as e:
        raise UsageError(str(e)) from None
    samples = make_synthetic_dataset(o["count"], spec, o["seed"], tuple(o["textures"]))
    save_dataset(samples, o["out"])
    print(f"wrote {len(samples)} scenes to {o['out']}")


def _train_config(o) -> TrainConfig:
    w = LossWeights()
    keys = ("alpha", "beta", "gamma_w", "gamma_mix", "sigma_g", "regularizer_units")
    try:
        weights = LossWeights(**{k: o.get(k, getattr(w, k)) for k in keys})
        fields = ("batch_size", "epochs", "lr0", "lr_hold_epochs", "lr_halve_every", "seed",
                  "preset", "max_iters", "augment", "shared_warp_sign")
        return TrainConfig(weights=weights, **{k: o[k] for k in fields if k in o})
    except ValueError as e:
        raise UsageError(str(e)) from None


def _train(o, run):
    config = _train_config(o)
    _require(o, "data", "out")
    dataset = load_dataset(_existing(o["data"], "dataset"))
    init = load_checkpoint(_existing(o["init"], "checkpoint")) if o.get("init") else None
    loss_csv = o.get("loss_csv") or o["out"] + ".loss.csv"
    try:
        result = run(config, dataset, init)
    except NonFiniteLossError as e:
        if e.last_good is not None:
            save_checkpoint(e.last_good, o["out"])
        raise
    save_checkpoint(result.checkpoint, o["out"])
    result.write_csv(loss_csv)
    first, last = result.reports[0].total, result.reports[-1].total
    print(f"{len(result.rows)} iterations, loss {first:.5f} -> {last:.5f}; "
          f"checkpoint {o['out']}, losses {loss_csv}")


def cmd_train_syn(o):
    _train(o, lambda c, d, init: train_view_synthesis(c, d, ckpt=init))


def cmd_train_stereo(o):
    mode = StereoInputMode(o["mode"])
    syn = None
    if mode is not StereoInputMode.OOD:
        _require(o, "syn_ckpt")
    if o.get("syn_ckpt"):
        syn = load_checkpoint(_existing(o["syn_ckpt"], "checkpoint"))
    _train(o, lambda c, d, init: train_stereo_matching(c, d, mode, syn_ckpt=syn, ckpt=init))


def inverse_depth_preview(depth) -> np.ndarray:
    """RGB colour rendering of 1/depth, normalized over valid pixels."""
    inv = np.where(depth > 0, 1.0 / np.where(depth > 0, depth, 1.0), 0.0)
    valid = depth > 0
    lo, hi = (inv[valid].min(), inv[valid].max()) if valid.any() else (0.0, 1.0)
    norm = (inv - lo) / (hi - lo) if hi > lo else np.zeros_like(inv)
    gray = np.round(np.clip(norm, 0, 1) * 255).astype(np.uint8)
    bgr = cv2.applyColorMap(gray, cv2.COLORMAP_MAGMA)
    rgb = bgr[:, :, ::-1].astype(np.float64) / 255.0
    rgb[~valid] = 0.0
    return rgb


def _write_prediction(out_dir, name, disp, depth):
    write_pfm(os.path.join(out_dir, f"{name}_disp.pfm"), disp)
    write_pfm(os.path.join(out_dir, f"{name}_depth.pfm"), depth)
    save_image(inverse_depth_preview(depth), os.path.join(out_dir, f"{name}_depth.png"))


def cmd_infer(o):
    _require(o, "syn_ckpt", "stereo_ckpt", "out_dir")
    if ("left" in o) == ("data" in o):
        raise UsageError("give exactly one of --left or --data")
    syn = load_checkpoint(_existing(o["syn_ckpt"], "checkpoint"))
    stereo = load_checkpoint(_existing(o["stereo_ckpt"], "checkpoint"))
    os.makedirs(o["out_dir"], exist_ok=True)
    if "left" in o:
        left = load_image(_existing(o["left"], "image"))
        default = synthetic_rig(left.shape[1])
        rig = CameraRig(o.get("baseline", default.baseline_b), o.get("focal", default.focal_f))
        jobs = [(os.path.splitext(os.path.basename(o["left"]))[0], left, rig)]
    else:
        jobs = [(f"{i:06d}", s.pair.left, s.pair.rig)
                for i, s in enumerate(load_dataset(_existing(o["data"], "dataset")))]
    for name, left, rig in jobs:
        disp = infer_disparity(left, syn, stereo)
        _write_prediction(o["out_dir"], name, disp, disparity_to_depth(disp, rig))
    print(f"wrote {len(jobs)} predictions to {o['out_dir']}")


LOG_BASES = {"e": np.log, "10": np.log10, "2": np.log2}


def _parse_crop(text):
    try:
        rect = tuple(int(v) for v in text.split(","))
    except ValueError:
        rect = ()
    if len(rect) != 4 or min(rect) < 0 or rect[2] < 1 or rect[3] < 1:
        raise UsageError(f"--crop needs top,left,height,width; got {text!r}")
    return rect


def cmd_eval(o):
    _require(o, "pred")
    caps = list(dict.fromkeys(o.get("cap") or ["80", "50garg"]))
    crop_rect = _parse_crop(o["crop"]) if o.get("crop") else None
    log_fn = LOG_BASES[o["log_base"]]
    pred_path = _existing(o["pred"], "prediction")
    if os.path.isdir(pred_path):
        _require(o, "data")
        samples = load_dataset(_existing(o["data"], "dataset"))
        names = [f"{i:06d}" for i in range(len(samples))]
        preds = [load_map(_existing(os.path.join(pred_path, f"{n}_depth.pfm"), "prediction")) for n in names]
        gts = [s.gt_depth for s in samples]
    else:
        _require(o, "gt")
        names = [os.path.splitext(os.path.basename(pred_path))[0]]
        preds = [load_map(pred_path)]
        gts = [load_map(_existing(o["gt"], "ground truth"))]
    for cap in caps:
        reports = [compute_metrics(p, g, cap, log=log_fn, crop_rect=crop_rect) for p, g in zip(preds, gts)]
        if o.get("csv"):
            path = o["csv"]
            if len(caps) > 1:
                root, ext = os.path.splitext(path)
                path = f"{root}_{cap}{ext or '.csv'}"
            write_metrics_csv(path, names, reports)
        print(format_table(aggregate(reports), label=f"cap {cap}"))


def cmd_gradcheck(o):
    if o["instances"] < 1:
        raise UsageError("--instances must be >= 1")
    results = run_gradcheck(o["seed"], o["instances"])
    width = max(len(r.op) for r in results)
    for r in results:
        print(f"{r.op:<{width}}  max rel error {r.max_rel_error:.3e}")
    ok = all(r.max_rel_error < LOSS_TOL for r in results)
    print("all below %.0e" % LOSS_TOL if ok else "FAILED: some errors reach %.0e" % LOSS_TOL)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train-syn": cmd_train_syn,
    "train-stereo": cmd_train_stereo,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        opts = resolve(parser, sys.argv[1:] if argv is None else list(argv))
        if opts.get("verbose"):
            logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
        code = COMMANDS[opts["command"]](opts)
        return EXIT_OK if code is None else code
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteLossError, NonFiniteGradientError, CheckpointError, ImageIOError,
            MonoStereoError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
