"""Optimization loop, learning-rate schedule, augmentation and the two training drivers."""
from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import MonoStereoError, StereoPair, pyramid
from .losses import LossReport, LossWeights, total_loss
from .net import (KIND_STEREO, KIND_SYNTHESIS, Checkpoint, backward, forward, init_network,
                  preset_spec)
from .sampler import WarpDirection, warp

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(MonoStereoError, RuntimeError):
    pass


class NonFiniteGradientError(TrainingError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, message, last_good=None, rows=None):
        super().__init__(message)
        self.last_good = last_good
        self.rows = rows or []


class CheckpointKindError(MonoStereoError, ValueError):
    pass


class StereoInputMode(enum.Enum):
    SSD = "ssd"  # synthesized right as input and as loss target
    OOD = "ood"  # original right for both
    SOD = "sod"  # synthesized right as input, original right as loss target


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 60
    lr0: float = 1e-4
    lr_hold_epochs: int = 40
    lr_halve_every: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    preset: str = "micro"
    # stop after this many iterations (0 = run all epochs)
    max_iters: int = 0
    augment: bool = True
    shared_warp_sign: bool = False

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr_hold_epochs", "lr_halve_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    @classmethod
    def full_scale_view_synthesis(cls, **kw):
        return cls(batch_size=10, epochs=60, lr0=1e-4, **kw)

    @classmethod
    def full_scale_stereo(cls, **kw):
        return cls(batch_size=10, epochs=80, lr0=1e-5, **kw)

    @classmethod
    def desk(cls, **kw):
        """Few-hundred-iteration runs on 64x128 scenes need a larger step than the full-scale schedule."""
        kw.setdefault("lr0", 1e-3)
        kw.setdefault("batch_size", 4)
        return cls(**kw)


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Constant for ``lr_hold_epochs`` epochs, then halved every ``lr_halve_every`` epochs."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.lr_hold_epochs:
        return config.lr0
    halvings = (epoch - config.lr_hold_epochs) // config.lr_halve_every + 1
    return config.lr0 / 2 ** halvings


# -- augmentation -----------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    flip_swap: bool = False
    color: tuple = (1.0, 1.0, 1.0)
    gamma: float = 1.0
    brightness: float = 1.0


def draw_augment(rng, flip: bool = True) -> AugmentParams:
    flip_swap = bool(rng.random() < 0.5)
    color = tuple(float(c) for c in rng.uniform(0.8, 1.2, 3))
    gamma = float(rng.uniform(0.8, 1.2))
    brightness = float(rng.uniform(0.5, 2.0))
    return AugmentParams(flip_swap and flip, color, gamma, brightness)


def photometric(img, p: AugmentParams):
    out = img ** p.gamma if p.gamma != 1.0 else img
    out = out * p.brightness
    if img.shape[2] == 3:
        out = out * np.asarray(p.color)
    return np.clip(out, 0.0, 1.0)


def flip_swap(pair: StereoPair) -> StereoPair:
    """Mirror both views and exchange them; the result is again a valid rectified pair."""
    return StereoPair(pair.right[:, ::-1], pair.left[:, ::-1], pair.rig)


def apply_augment(pair: StereoPair, p: AugmentParams) -> StereoPair:
    if p.flip_swap:
        pair = flip_swap(pair)
    return StereoPair(photometric(pair.left, p), photometric(pair.right, p), pair.rig)


def augment(pair: StereoPair, rng) -> StereoPair:
    return apply_augment(pair, draw_augment(rng))


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new parameter arrays and the updated state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"gradient of {name!r} has {bad} non-finite entries")
    t = state.t + 1
    new_m, new_v, new_params = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name!r} {p.shape}")
        m = ADAM_BETA1 * state.m.get(name, 0.0) + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v.get(name, 0.0) + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        new_m[name], new_v[name] = m, v
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, AdamState(new_m, new_v, t)


# -- training loop ----------------------------------------------------------

def _mean_report(reports):
    n = len(reports)
    per_scale = [tuple(sum(r.per_scale[s][k] for r in reports) / n for k in range(3))
                 for s in range(len(reports[0].per_scale))]
    return LossReport(sum(r.total for r in reports) / n, sum(r.ia for r in reports) / n,
                      sum(r.ss for r in reports) / n, sum(r.dc for r in reports) / n, per_scale)


def batch_loss(ckpt: Checkpoint, inputs, targets, weights: LossWeights, shared_warp_sign=False):
    """Forward a batch and score it; returns (mean report, tape, per-scale output gradients)."""
    out, tape = forward(ckpt, inputs)
    if not all(np.all(np.isfinite(d)) for d in out.disp):
        raise NonFiniteLossError("non-finite network output")
    n = len(targets)
    reports, out_grads = [], [np.zeros_like(d) for d in out.disp]
    for i, pair in enumerate(targets):
        levels = list(zip(pyramid(pair.left, len(out)), pyramid(pair.right, len(out))))
        rep, grads = total_loss(out.sample(i), pair, weights, shared_warp_sign, target_pyramid=levels)
        reports.append(rep)
        for s, (g_l, g_r) in enumerate(grads):
            out_grads[s][i, 0] = g_l / n
            out_grads[s][i, 1] = g_r / n
    return _mean_report(reports), tape, out_grads


def to_batch(images):
    return np.stack([np.asarray(im).transpose(2, 0, 1) for im in images])


def iteration_plan(config: TrainConfig, n_samples: int):
    """Yield (iteration, epoch, sample indices) in the seeded order."""
    rng = np.random.default_rng([config.seed, 1])
    per_epoch = -(-n_samples // config.batch_size)
    it = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_samples)
        for b in range(per_epoch):
            if config.max_iters and it >= config.max_iters:
                return
            yield it, epoch, order[b * config.batch_size:(b + 1) * config.batch_size]
            it += 1


def train_step(ckpt: Checkpoint, state: AdamState, inputs, targets, weights: LossWeights, lr: float,
               shared_warp_sign: bool = False):
    """One forward/backward/Adam update; returns (new checkpoint, new state, report)."""
    try:
        report, tape, out_grads = batch_loss(ckpt, inputs, targets, weights, shared_warp_sign)
    except NonFiniteLossError as e:
        raise NonFiniteLossError(str(e), last_good=ckpt.copy()) from None
    if not np.isfinite(report.total):
        raise NonFiniteLossError("non-finite loss", last_good=ckpt.copy())
    grads = backward(ckpt, tape, out_grads)
    params, state = adam_step(ckpt.params, grads, state, lr)
    # parameters live at storage (float32) precision so checkpoints round-trip exactly
    params = {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
    return Checkpoint(ckpt.spec, params, ckpt.step + 1, ckpt.kind), state, report


def _run(ckpt, config, n_samples, make_batch, hook=None):
    state = AdamState()
    rows, reports = [], []
    aug_rng = np.random.default_rng([config.seed, 2])
    for it, epoch, idx in iteration_plan(config, n_samples):
        inputs, targets = make_batch(idx, aug_rng)
        if hook is not None:
            hook(it, inputs, targets)
        lr = lr_at(config, epoch)
        try:
            ckpt, state, report = train_step(ckpt, state, inputs, targets, config.weights, lr, config.shared_warp_sign)
        except NonFiniteLossError as e:
            raise NonFiniteLossError(f"{e} at iteration {it}", last_good=e.last_good, rows=rows) from None
        rows.append(report.csv_row(it))
        reports.append(report)
        if it % 50 == 0:
            log.info("iter %d epoch %d lr %.3g loss %.5f", it, epoch, lr, report.total)
    return ckpt, rows, reports


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    rows: list
    reports: list

    @property
    def header(self):
        return self.reports[0].csv_header() if self.reports else []

    def write_csv(self, path):
        write_loss_csv(path, self.header, self.rows)


def write_loss_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def train_view_synthesis(config: TrainConfig, dataset, ckpt: Checkpoint | None = None, hook=None) -> TrainResult:
    """Train the single-view network: left view in, both disparities out, photometric supervision."""
    pairs = [getattr(s, "pair", s) for s in dataset]
    if not pairs:
        raise ValueError("empty dataset")
    if ckpt is None:
        ckpt = init_network(preset_spec(config.preset, 3), config.seed, KIND_SYNTHESIS)
    elif ckpt.kind != KIND_SYNTHESIS:
        raise CheckpointKindError(f"expected a {KIND_SYNTHESIS} checkpoint, got {ckpt.kind}")

    def make_batch(idx, rng):
        targets = [augment(pairs[i], rng) if config.augment else pairs[i] for i in idx]
        return to_batch([t.left for t in targets]), targets

    return TrainResult(*_run(ckpt, config, len(pairs), make_batch, hook))


def _require_kind(ckpt, kind):
    if ckpt is None or ckpt.kind != kind:
        got = None if ckpt is None else ckpt.kind
        raise CheckpointKindError(f"expected a {kind} checkpoint, got {got}")


def synthesize_right(ckpt: Checkpoint, left) -> np.ndarray:
    """Predict the right view from the left view alone."""
    _require_kind(ckpt, KIND_SYNTHESIS)
    out, _ = forward(ckpt, left)
    _, d_r = out.pair(0)
    return warp(left, d_r, WarpDirection.RECONSTRUCT_RIGHT)


def stereo_views(mode: StereoInputMode, left, right, synth_right):
    """(network input right view, loss target right view) for a stereo training mode."""
    if mode is StereoInputMode.OOD:
        return right, right
    if mode is StereoInputMode.SSD:
        return synth_right, synth_right
    return synth_right, right


def train_stereo_matching(config: TrainConfig, dataset, mode: StereoInputMode,
                          syn_ckpt: Checkpoint | None = None, ckpt: Checkpoint | None = None,
                          hook=None) -> TrainResult:
    """Train the stereo network on (left, right-variant) inputs chosen by ``mode``."""
    mode = StereoInputMode(mode)
    pairs = [getattr(s, "pair", s) for s in dataset]
    if not pairs:
        raise ValueError("empty dataset")
    if mode is not StereoInputMode.OOD:
        if syn_ckpt is None:
            raise CheckpointKindError(f"{mode.name} mode needs a view-synthesis checkpoint")
        _require_kind(syn_ckpt, KIND_SYNTHESIS)
        synth = [synthesize_right(syn_ckpt, p.left) for p in pairs]
    else:
        synth = [None] * len(pairs)
    if ckpt is None:
        ckpt = init_network(preset_spec(config.preset, 6), config.seed, KIND_STEREO)
    else:
        _require_kind(ckpt, KIND_STEREO)

    def make_batch(idx, rng):
        inputs, targets = [], []
        for i in idx:
            p = pairs[i]
            right_in, right_tgt = stereo_views(mode, p.left, p.right, synth[i])
            left = p.left
            if config.augment:
                # flip-and-swap would put a synthesized view on the left, so only OOD flips
                a = draw_augment(rng, flip=mode is StereoInputMode.OOD)
                if a.flip_swap:
                    left, right_in = right_in[:, ::-1], left[:, ::-1]
                    right_tgt = right_in
                left, right_in, right_tgt = (photometric(v, a) for v in (left, right_in, right_tgt))
            inputs.append(np.concatenate([left, right_in], axis=2))
            targets.append(StereoPair(left, right_tgt, p.rig))
        return to_batch(inputs), targets

    return TrainResult(*_run(ckpt, config, len(pairs), make_batch, hook))


def stereo_input(left, right) -> np.ndarray:
    return np.concatenate([np.asarray(left), np.asarray(right)], axis=2)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
