"""Encoder-decoder disparity network with skip connections and 4 disparity heads.

The same skeleton serves both stages: the view-synthesis network takes the
left view (3 channels), the stereo network takes left and right views
concatenated along channels (6 channels). Forward records a tape that
``backward`` replays in reverse to produce exact parameter gradients.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import layers
from .core import MonoStereoError, pyramid_shapes

DMAX_FRACTION = 0.3
INIT_STD = 0.01

KIND_SYNTHESIS = "view-synthesis"
KIND_STEREO = "stereo"


class NetworkSpecError(MonoStereoError, ValueError):
    pass


class InputMismatchError(MonoStereoError, ValueError):
    pass


class StaleTapeError(MonoStereoError, RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int = 3
    # (block count, channels, stride) per encoder stage
    encoder_stages: tuple = ((1, 8, 2), (1, 16, 2), (1, 32, 2), (1, 64, 2))
    disparity_scales: int = 4
    preset: str = "micro"
    residual: bool = False
    # per decoder scale, coarse to fine; empty derives them from the encoder
    decoder_channels: tuple = ()
    kernel: int = 3
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, "encoder_stages", tuple(tuple(int(v) for v in s) for s in self.encoder_stages))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        if self.input_channels < 1:
            raise NetworkSpecError("input_channels must be >= 1")
        if not self.encoder_stages:
            raise NetworkSpecError("need at least one encoder stage")
        for blocks, ch, stride in self.encoder_stages:
            if blocks < 1 or ch < 1 or stride not in (1, 2):
                raise NetworkSpecError(f"bad encoder stage {(blocks, ch, stride)}")
        if self.kernel % 2 != 1:
            raise NetworkSpecError("kernel size must be odd")
        if self.disparity_scales < 1 or self.depth < self.disparity_scales:
            raise NetworkSpecError(
                f"{self.depth} downsampling stages cannot feed {self.disparity_scales} disparity scales")
        if self.decoder_channels and len(self.decoder_channels) != self.depth:
            raise NetworkSpecError(f"need {self.depth} decoder channel counts, got {len(self.decoder_channels)}")

    @property
    def depth(self) -> int:
        """Coarsest encoder scale (number of stride-2 stages)."""
        return sum(1 for _, _, s in self.encoder_stages if s == 2)

    @property
    def decoder_stages(self) -> int:
        return self.depth

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def preset_spec(name: str, input_channels: int = 3) -> NetworkSpec:
    """Named architectures. Only ``micro`` is meant to be trained on a CPU."""
    if name == "micro":
        return NetworkSpec(input_channels=input_channels)
    if name == "resnet":
        # standard bottleneck widths at 1/4 to 1/32 resolution with dyadic strides
        return NetworkSpec(
            input_channels=input_channels,
            encoder_stages=((1, 64, 2), (3, 256, 2), (4, 512, 2), (6, 1024, 2), (3, 2048, 2)),
            preset=name, residual=True,
            decoder_channels=(512, 256, 128, 64, 16),
            notes="res stages at 1/4..1/32 with 256/512/1024/2048 channels (standard ResNet50 layout)",
        )
    if name == "vgg":
        return NetworkSpec(
            input_channels=input_channels,
            encoder_stages=((2, 64, 2), (2, 128, 2), (3, 256, 2), (3, 512, 2), (3, 512, 2), (1, 512, 2), (1, 512, 2)),
            preset=name,
            decoder_channels=(512, 512, 512, 256, 128, 64, 16),
            notes="seven dyadic scales ending at 2x4 for a 256x512 input",
        )
    raise NetworkSpecError(f"unknown preset {name!r}")


def encoder_layout(spec: NetworkSpec):
    """Per encoder stage: (scale, in_channels, out_channels)."""
    out, scale, cin = [], 0, spec.input_channels
    for blocks, ch, stride in spec.encoder_stages:
        scale += stride == 2
        out.append((scale, cin, ch))
        cin = ch
    return out


def decoder_topology(spec: NetworkSpec):
    """Per decoder stage, coarse to fine: channel bookkeeping of the skip concatenation."""
    enc = encoder_layout(spec)
    skip_ch = {0: spec.input_channels}
    for scale, _, ch in enc:
        skip_ch[scale] = ch  # last stage at a scale wins
    stages = []
    cin = enc[-1][2]
    for i, scale in enumerate(range(spec.depth - 1, -1, -1)):
        if spec.decoder_channels:
            cout = spec.decoder_channels[i]
        elif scale > 0:
            cout = skip_ch[scale]
        else:
            cout = max(skip_ch[1] // 2, 2)
        skip = skip_ch[scale] if scale < spec.depth else 0
        stages.append(dict(scale=scale, up_in=cin, up_out=cout, skip=skip,
                           iconv_in=cout + skip, head=scale < spec.disparity_scales))
        cin = cout
    return stages


def parameter_shapes(spec: NetworkSpec):
    k = spec.kernel
    shapes = {}
    for si, ((blocks, ch, stride), (_, cin, _)) in enumerate(zip(spec.encoder_stages, encoder_layout(spec))):
        for bi in range(blocks):
            c_in = cin if bi == 0 else ch
            shapes[f"enc{si}.{bi}.w"] = (ch, c_in, k, k)
            shapes[f"enc{si}.{bi}.b"] = (ch,)
    for st in decoder_topology(spec):
        s = st["scale"]
        shapes[f"up{s}.w"] = (st["up_out"], st["up_in"], k, k)
        shapes[f"up{s}.b"] = (st["up_out"],)
        shapes[f"iconv{s}.w"] = (st["up_out"], st["iconv_in"], k, k)
        shapes[f"iconv{s}.b"] = (st["up_out"],)
        if st["head"]:
            shapes[f"head{s}.w"] = (2, st["up_out"], k, k)
            shapes[f"head{s}.b"] = (2,)
    return shapes


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict
    step: int = 0
    kind: str = KIND_SYNTHESIS

    def copy(self):
        return Checkpoint(self.spec, {k: v.copy() for k, v in self.params.items()}, self.step, self.kind)

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_network(spec: NetworkSpec, seed: int, kind: str | None = None) -> Checkpoint:
    """Gaussian init (std 0.01) for weights, zeros for biases.

    Values are rounded to float32 so checkpoints store them exactly.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        if name.endswith(".w"):
            params[name] = rng.normal(0.0, INIT_STD, size=shape).astype(np.float32).astype(np.float64)
        else:
            params[name] = np.zeros(shape)
    if kind is None:
        kind = KIND_STEREO if spec.input_channels == 6 else KIND_SYNTHESIS
    return Checkpoint(spec, params, 0, kind)


@dataclass
class MultiScaleOutput:
    """Per scale (finest first) an array (N, 2, H_s, W_s): channel 0 is d_l, channel 1 is d_r."""

    disp: list

    def __len__(self):
        return len(self.disp)

    def pair(self, scale: int, index: int = 0):
        d = self.disp[scale][index]
        return d[0], d[1]

    def sample(self, index: int = 0):
        return [self.pair(s, index) for s in range(len(self.disp))]


@dataclass
class Tape:
    """Ops in execution order: (kind, out_node, in_nodes, cache, param_prefix)."""

    ops: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    version: tuple = ()


def _to_nchw(x, channels):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x.transpose(2, 0, 1)[None]
    if x.ndim != 4:
        raise InputMismatchError(f"expected (H, W, C) or (N, C, H, W), got {x.shape}")
    if x.shape[1] != channels:
        raise InputMismatchError(f"network expects {channels} input channels, got {x.shape[1]}")
    return x


def _fingerprint(ckpt: Checkpoint):
    return (ckpt.step,) + tuple(id(v) for v in ckpt.params.values())


class _Recorder:
    def __init__(self, params, tape):
        self.p = params
        self.tape = tape
        self.count = 0

    def _emit(self, kind, inputs, cache, prefix=None):
        node = self.count
        self.count += 1
        self.tape.ops.append((kind, node, inputs, cache, prefix))
        return node

    def conv(self, name, x, stride=1):
        val, xn = x
        z, cache = layers.conv2d(val, self.p[name + ".w"], self.p[name + ".b"], stride)
        return z, self._emit("conv", (xn,), cache, name)

    def elu(self, x):
        val, xn = x
        a, cache = layers.elu(val)
        return a, self._emit("elu", (xn,), cache)

    def conv_elu(self, name, x, stride=1):
        return self.elu(self.conv(name, x, stride))

    def add(self, a, b):
        return a[0] + b[0], self._emit("add", (a[1], b[1]), None)

    def concat(self, a, b):
        return np.concatenate([a[0], b[0]], axis=1), self._emit("concat", (a[1], b[1]), a[0].shape[1])

    def upsample(self, x, shape):
        up, cache = layers.upsample2(x[0], shape)
        return up, self._emit("upsample", (x[1],), cache)

    def scaled_sigmoid(self, x, scale):
        sig = layers.sigmoid(x[0])
        return scale * sig, self._emit("sigmoid", (x[1],), (sig, scale))


def forward(ckpt: Checkpoint, x):
    """Run the network on ``x`` (an (H, W, C) image or an (N, C, H, W) batch).

    Returns ``(MultiScaleOutput, Tape)``. Disparities pass through a sigmoid
    scaled by 0.3 times the width of their scale. Each head's logits are added
    to the upsampled logits of the next coarser head.
    """
    spec = ckpt.spec
    x = _to_nchw(x, spec.input_channels)
    h, w = x.shape[2:]
    if min(h, w) < 2 ** spec.depth:
        raise InputMismatchError(f"input {h}x{w} too small for {spec.depth} downsampling stages")
    shapes = pyramid_shapes(h, w, spec.depth + 1)
    tape = Tape(version=_fingerprint(ckpt))
    rec = _Recorder(ckpt.params, tape)

    feat = (x, rec._emit("input", (), None))
    skips = {0: feat}
    for si, ((blocks, ch, stride), (scale, _, _)) in enumerate(zip(spec.encoder_stages, encoder_layout(spec))):
        for bi in range(blocks):
            name = f"enc{si}.{bi}"
            if bi > 0 and spec.residual:
                feat = rec.add(feat, rec.conv_elu(name, feat))
            else:
                feat = rec.conv_elu(name, feat, stride if bi == 0 else 1)
        skips[scale] = feat

    outputs = {}
    logits = None
    for st in decoder_topology(spec):
        s = st["scale"]
        feat = rec.conv_elu(f"up{s}", rec.upsample(feat, shapes[s]))
        if st["skip"]:
            feat = rec.concat(feat, skips[s])
        feat = rec.conv_elu(f"iconv{s}", feat)
        if st["head"]:
            z = rec.conv(f"head{s}", feat)
            if logits is not None:
                # refine the coarser scale's logits rather than start over
                z = rec.add(z, rec.upsample(logits, shapes[s]))
            logits = z
            outputs[s] = rec.scaled_sigmoid(z, DMAX_FRACTION * shapes[s][1])
    disp = [outputs[s][0] for s in range(spec.disparity_scales)]
    tape.outputs = [outputs[s][1] for s in range(spec.disparity_scales)]
    return MultiScaleOutput(disp), tape


def backward(ckpt: Checkpoint, tape: Tape, output_grads):
    """Parameter gradients of ``sum_s <output_grads[s], disp[s]>``.

    ``output_grads`` is a list (finest first) of arrays shaped like the
    corresponding ``MultiScaleOutput.disp`` entries.
    """
    if tape.version != _fingerprint(ckpt):
        raise StaleTapeError("tape was recorded with a different parameter state")
    if len(output_grads) != len(tape.outputs):
        raise ValueError(f"expected {len(tape.outputs)} output gradients, got {len(output_grads)}")
    grads = {k: np.zeros_like(v) for k, v in ckpt.params.items()}
    node_grad = {}
    for node, g in zip(tape.outputs, output_grads):
        node_grad[node] = np.asarray(g, dtype=np.float64)

    def accumulate(node, g):
        if node in node_grad:
            node_grad[node] = node_grad[node] + g
        else:
            node_grad[node] = g

    for kind, node, inputs, cache, prefix in reversed(tape.ops):
        g = node_grad.pop(node, None)
        if g is None or kind == "input":
            continue
        if kind == "conv":
            dx, dw, db = layers.conv2d_backward(g, cache)
            grads[prefix + ".w"] += dw
            grads[prefix + ".b"] += db
            accumulate(inputs[0], dx)
        elif kind == "elu":
            accumulate(inputs[0], layers.elu_backward(g, cache))
        elif kind == "sigmoid":
            sig, scale = cache
            accumulate(inputs[0], g * scale * sig * (1.0 - sig))
        elif kind == "upsample":
            accumulate(inputs[0], layers.upsample2_backward(g, cache))
        elif kind == "concat":
            accumulate(inputs[0], g[:, :cache])
            accumulate(inputs[1], g[:, cache:])
        elif kind == "add":
            accumulate(inputs[0], g)
            accumulate(inputs[1], g)
        else:
            raise RuntimeError(f"unknown tape op {kind!r}")
    return grads


CKPT_MAGIC = b"MONOSTEREO-CKPT\n"
CKPT_VERSION = 1


class CheckpointError(MonoStereoError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, ValueError):
    pass


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write magic, version, a JSON manifest of (name, shape, offset), then little-endian float32 data."""
    tensors, offset, blobs = [], 0, []
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    payload = b"".join(blobs)
    manifest = {
        "kind": ckpt.kind,
        "step": ckpt.step,
        "spec": ckpt.spec.to_dict(),
        "tensors": tensors,
        "data_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    text = json.dumps(manifest, indent=1).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(f"version {CKPT_VERSION}\n".encode())
        f.write(f"manifest {len(text)}\n".encode())
        f.write(text)
        f.write(b"\n")
        f.write(payload)


def _spec_from_manifest(d):
    d = dict(d)
    d["encoder_stages"] = tuple(tuple(s) for s in d["encoder_stages"])
    d["decoder_channels"] = tuple(d.get("decoder_channels", ()))
    return NetworkSpec.from_dict(d)


def load_checkpoint(path, expected_spec: NetworkSpec | None = None) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    With ``expected_spec`` every tensor is checked against the shapes that
    spec requires, and the first offending tensor is named in the error.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(CKPT_MAGIC):
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    pos = len(CKPT_MAGIC)
    try:
        line_end = raw.index(b"\n", pos)
        version = int(raw[pos:line_end].split()[1])
        pos = line_end + 1
        line_end = raw.index(b"\n", pos)
        mlen = int(raw[pos:line_end].split()[1])
        pos = line_end + 1
    except (ValueError, IndexError):
        raise CorruptCheckpointError(f"{path}: malformed header") from None
    if version != CKPT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, this build reads {CKPT_VERSION}")
    try:
        manifest = json.loads(raw[pos:pos + mlen])
        spec = _spec_from_manifest(manifest["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable manifest ({exc})") from None
    payload = raw[pos + mlen + 1:]
    if len(payload) != manifest["data_bytes"] or zlib.crc32(payload) != manifest["crc32"]:
        raise CorruptCheckpointError(f"{path}: tensor data truncated or damaged")

    want = parameter_shapes(expected_spec or spec)
    params = {}
    for t in manifest["tensors"]:
        name, shape = t["name"], tuple(t["shape"])
        if name not in want:
            raise CheckpointShapeError(f"{path}: unexpected tensor {name!r}")
        if shape != tuple(want[name]):
            raise CheckpointShapeError(f"{path}: tensor {name!r} has shape {shape}, expected {tuple(want[name])}")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=t["offset"])
        params[name] = arr.astype(np.float64).reshape(shape)
    missing = [n for n in want if n not in params]
    if missing:
        raise CheckpointShapeError(f"{path}: missing tensor {missing[0]!r}")
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise CorruptCheckpointError(f"{path}: non-finite parameter values")
    return Checkpoint(spec, params, int(manifest["step"]), manifest["kind"])
