"""UNET and Stacked-UNET classifier graphs.

A graph is a fixed topology over the ops module: three encoder blocks
(two 3x3 convs + 2x2 max pool each, channel schedule f/2f/4f), a two-conv
bottleneck at 8f, three decoder blocks (2x2 stride-2 transposed conv,
channel concat with the matching pre-pool encoder output, one 3x3 conv;
schedule 4f/2f/f), then flatten and a dense head (256 -> 128 -> classes
at defaults). The stacked variant runs two full bodies in series; the
first body's full-resolution feature map feeds the second body's encoder,
and only the second body carries the head.

Parameters are held in a flat name -> array registry (e.g.
"enc1.conv1.kernel", "u2.dec3.conv.bias", "head.dense3.weight"). Graphs
can be built without allocating parameters, which keeps shape/parameter
summaries of the full-size model instant.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import ops, tensor
from .errors import CheckpointError, ConfigError, ShapeError
from .fileio import atomic_write_bytes

DEPTH = 3  # encoder blocks per body; the spatial chain halves three times

CHECKPOINT_MAGIC = b"UNETCKP1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    input_hw: tuple[int, int] = (256, 256)
    input_channels: int = 1
    base_filters: int = 64
    num_classes: int = 5
    head_widths: tuple[int, ...] = (256, 128)

    def validate(self) -> None:
        h, w = self.input_hw
        div = 2 ** DEPTH
        if h < div or w < div or h % div or w % div:
            raise ConfigError(f"input extents {h}x{w} must be divisible by {div}")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        if self.base_filters < 1:
            raise ConfigError("base_filters must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if any(wd < 1 for wd in self.head_widths):
            raise ConfigError("head widths must be >= 1")


@dataclass(frozen=True)
class ParamSpec:
    shape: tuple[int, ...]
    fan_in: int | None  # None for zero-initialized biases

    @property
    def size(self) -> int:
        return math.prod(self.shape)


def _body_specs(cfg: UNetConfig, prefix: str, in_channels: int) -> dict[str, ParamSpec]:
    f = cfg.base_filters
    enc_widths = [f, 2 * f, 4 * f]
    specs: dict[str, ParamSpec] = {}

    def conv(name, c_in, c_out, k=3):
        specs[f"{name}.kernel"] = ParamSpec((k, k, c_in, c_out), k * k * c_in)
        specs[f"{name}.bias"] = ParamSpec((c_out,), None)

    c = in_channels
    for i, width in enumerate(enc_widths, start=1):
        conv(f"{prefix}enc{i}.conv1", c, width)
        conv(f"{prefix}enc{i}.conv2", width, width)
        c = width
    conv(f"{prefix}bottleneck.conv1", 4 * f, 8 * f)
    conv(f"{prefix}bottleneck.conv2", 8 * f, 8 * f)
    c = 8 * f
    for i, width in enumerate([4 * f, 2 * f, f], start=1):
        specs[f"{prefix}dec{i}.tconv.kernel"] = ParamSpec((2, 2, width, c), 2 * 2 * c)
        specs[f"{prefix}dec{i}.tconv.bias"] = ParamSpec((width,), None)
        conv(f"{prefix}dec{i}.conv", 2 * width, width)  # concat doubles channels
        c = width
    return specs


def _head_specs(cfg: UNetConfig) -> dict[str, ParamSpec]:
    h, w = cfg.input_hw
    widths = [h * w * cfg.base_filters, *cfg.head_widths, cfg.num_classes]
    specs: dict[str, ParamSpec] = {}
    for i, (n_in, n_out) in enumerate(zip(widths, widths[1:]), start=1):
        specs[f"head.dense{i}.weight"] = ParamSpec((n_in, n_out), n_in)
        specs[f"head.dense{i}.bias"] = ParamSpec((n_out,), None)
    return specs


class ModelGraph:
    """Built network: parameter registry plus forward/backward execution.

    Immutable after construction except through apply_updates (the single
    parameter-update entry point used by optimizers). Forward and backward
    are pure functions of (parameters, input) and may run concurrently on
    distinct inputs against frozen parameters.
    """

    def __init__(self, cfg: UNetConfig, stack_count: int):
        cfg.validate()
        if stack_count not in (1, 2):
            raise ConfigError(f"stack_count must be 1 or 2, got {stack_count}")
        self.cfg = cfg
        self.stack_count = stack_count
        self.param_specs: dict[str, ParamSpec] = {}
        for body in range(stack_count):
            prefix = f"u{body + 1}." if stack_count > 1 else ""
            c_in = cfg.input_channels if body == 0 else cfg.base_filters
            self.param_specs.update(_body_specs(cfg, prefix, c_in))
        self.param_specs.update(_head_specs(cfg))
        self.params: dict[str, np.ndarray] | None = None

    # -- parameters ----------------------------------------------------

    def initialize(self, seed: int = 0) -> "ModelGraph":
        """Allocate every parameter: He-normal weights, zero biases."""
        rng = tensor.make_rng(seed)
        params = {}
        for name in sorted(self.param_specs):
            spec = self.param_specs[name]
            if spec.fan_in is None:
                params[name] = tensor.tensor_new(spec.shape, 0.0)
            else:
                params[name] = tensor.he_init(spec.shape, spec.fan_in, rng)
        self.params = params
        return self

    def _require_params(self) -> dict[str, np.ndarray]:
        if self.params is None:
            raise ConfigError("graph built without parameters; call initialize()")
        return self.params

    def parameter_count(self) -> int:
        return sum(spec.size for spec in self.param_specs.values())

    def apply_updates(self, new_params: dict[str, np.ndarray]) -> None:
        """Replace parameter values; names and shapes must match exactly."""
        current = self._require_params()
        if set(new_params) != set(current):
            raise ShapeError("parameter name registry mismatch")
        for name, arr in new_params.items():
            if arr.shape != self.param_specs[name].shape:
                raise ShapeError(f"shape mismatch for {name}: {arr.shape}")
        self.params = {k: np.asarray(v) for k, v in new_params.items()}

    # -- execution -----------------------------------------------------

    def _conv(self, name: str) -> ops.ConvParams:
        p = self._require_params()
        return ops.ConvParams(p[f"{name}.kernel"], p[f"{name}.bias"])

    def _tconv(self, name: str) -> ops.TransposeConvParams:
        p = self._require_params()
        return ops.TransposeConvParams(p[f"{name}.kernel"], p[f"{name}.bias"])

    def _dense(self, name: str) -> ops.DenseParams:
        p = self._require_params()
        return ops.DenseParams(p[f"{name}.weight"], p[f"{name}.bias"])

    def _body_prefixes(self):
        if self.stack_count == 1:
            return [""]
        return [f"u{i + 1}." for i in range(self.stack_count)]

    def forward(self, x: np.ndarray):
        """Full pass to logits. Returns (logits [b, classes], tapes)."""
        self._require_params()
        h, w = self.cfg.input_hw
        if x.ndim != 4 or x.shape[1:] != (h, w, self.cfg.input_channels):
            raise ShapeError(
                f"input shape {x.shape} != (b, {h}, {w}, {self.cfg.input_channels})")
        tapes: dict[str, object] = {}
        out = x
        for prefix in self._body_prefixes():
            out = self._body_forward(prefix, out, tapes)
        tapes["flatten.shape"] = out.shape
        out = tensor.reshape(out, (out.shape[0], out.size // out.shape[0]))
        n_dense = len(self.cfg.head_widths) + 1
        for i in range(1, n_dense + 1):
            name = f"head.dense{i}"
            out, tapes[name] = ops.dense_forward(out, self._dense(name))
            if i < n_dense:
                out, tapes[f"{name}.relu"] = ops.relu(out)
        return out, tapes

    def _body_forward(self, prefix, x, tapes):
        out = x
        skips = []
        for i in range(1, DEPTH + 1):
            for j in (1, 2):
                name = f"{prefix}enc{i}.conv{j}"
                out, tapes[name] = ops.conv2d_forward(out, self._conv(name))
                out, tapes[f"{name}.relu"] = ops.relu(out)
            skips.append(out)
            out, tapes[f"{prefix}enc{i}.pool"] = ops.maxpool2d_forward(out)
        for j in (1, 2):
            name = f"{prefix}bottleneck.conv{j}"
            out, tapes[name] = ops.conv2d_forward(out, self._conv(name))
            out, tapes[f"{name}.relu"] = ops.relu(out)
        for i, skip in zip(range(1, DEPTH + 1), reversed(skips)):
            name = f"{prefix}dec{i}"
            out, tapes[f"{name}.tconv"] = ops.conv2d_transpose_forward(
                out, self._tconv(f"{name}.tconv"))
            tapes[f"{name}.concat"] = out.shape[3]  # split point for backward
            out = tensor.concat_channels(out, skip)
            out, tapes[f"{name}.conv"] = ops.conv2d_forward(out, self._conv(f"{name}.conv"))
            out, tapes[f"{name}.conv.relu"] = ops.relu(out)
        return out

    def backward(self, tapes, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of the loss wrt every parameter, keyed like params."""
        grads: dict[str, np.ndarray] = {}
        n_dense = len(self.cfg.head_widths) + 1
        g = grad_logits
        for i in range(n_dense, 0, -1):
            name = f"head.dense{i}"
            if i < n_dense:
                g = ops.relu_backward(g, tapes[f"{name}.relu"])
            g, grads[f"{name}.weight"], grads[f"{name}.bias"] = ops.dense_backward(
                g, tapes[name])
        g = g.reshape(tapes["flatten.shape"])
        for prefix in reversed(self._body_prefixes()):
            g = self._body_backward(prefix, g, tapes, grads)
        return grads

    def _body_backward(self, prefix, g, tapes, grads):
        skip_grads = {}
        for i in range(DEPTH, 0, -1):
            name = f"{prefix}dec{i}"
            g = ops.relu_backward(g, tapes[f"{name}.conv.relu"])
            g, grads[f"{name}.conv.kernel"], grads[f"{name}.conv.bias"] = \
                ops.conv2d_backward(g, tapes[f"{name}.conv"])
            c1 = tapes[f"{name}.concat"]
            g, g_skip = g[..., :c1], g[..., c1:]
            skip_grads[DEPTH + 1 - i] = g_skip  # dec i pairs with enc DEPTH+1-i
            g, grads[f"{name}.tconv.kernel"], grads[f"{name}.tconv.bias"] = \
                ops.conv2d_transpose_backward(np.ascontiguousarray(g),
                                              tapes[f"{name}.tconv"])
        for j in (2, 1):
            name = f"{prefix}bottleneck.conv{j}"
            g = ops.relu_backward(g, tapes[f"{name}.relu"])
            g, grads[f"{name}.kernel"], grads[f"{name}.bias"] = \
                ops.conv2d_backward(g, tapes[name])
        for i in range(DEPTH, 0, -1):
            g = ops.maxpool2d_backward(g, tapes[f"{prefix}enc{i}.pool"])
            g = g + skip_grads[i]  # skip taps the pre-pool activation
            for j in (2, 1):
                name = f"{prefix}enc{i}.conv{j}"
                g = ops.relu_backward(g, tapes[f"{name}.relu"])
                g, grads[f"{name}.kernel"], grads[f"{name}.bias"] = \
                    ops.conv2d_backward(g, tapes[name])
        return g

    # -- introspection -------------------------------------------------

    def shape_ledger(self) -> list[tuple[str, tuple[int, ...]]]:
        """Analytic per-node output shapes (no parameters needed)."""
        cfg = self.cfg
        f = cfg.base_filters
        h, w = cfg.input_hw
        ledger = [("input", (h, w, cfg.input_channels))]
        for prefix in self._body_prefixes():
            bh, bw = cfg.input_hw
            widths = [f, 2 * f, 4 * f]
            for i, width in enumerate(widths, start=1):
                ledger.append((f"{prefix}enc{i}.conv1", (bh, bw, width)))
                ledger.append((f"{prefix}enc{i}.conv2", (bh, bw, width)))
                bh, bw = bh // 2, bw // 2
                ledger.append((f"{prefix}enc{i}.pool", (bh, bw, width)))
            ledger.append((f"{prefix}bottleneck.conv1", (bh, bw, 8 * f)))
            ledger.append((f"{prefix}bottleneck.conv2", (bh, bw, 8 * f)))
            for i, width in enumerate([4 * f, 2 * f, f], start=1):
                bh, bw = bh * 2, bw * 2
                ledger.append((f"{prefix}dec{i}.tconv", (bh, bw, width)))
                ledger.append((f"{prefix}dec{i}.concat", (bh, bw, 2 * width)))
                ledger.append((f"{prefix}dec{i}.conv", (bh, bw, width)))
        ledger.append(("flatten", (h * w * f,)))
        for i, width in enumerate([*cfg.head_widths, cfg.num_classes], start=1):
            ledger.append((f"head.dense{i}", (width,)))
        return ledger


def build_unet(cfg: UNetConfig = UNetConfig(), seed: int = 0, init: bool = True) -> ModelGraph:
    """Single-body UNET classifier; init=False skips parameter allocation."""
    g = ModelGraph(cfg, stack_count=1)
    return g.initialize(seed) if init else g


def build_stacked_unet(cfg: UNetConfig = UNetConfig(), seed: int = 0,
                       init: bool = True) -> ModelGraph:
    """Two UNET bodies in series with a single classification head."""
    g = ModelGraph(cfg, stack_count=2)
    return g.initialize(seed) if init else g


# -- checkpoints -------------------------------------------------------
#
# Binary layout (little-endian): magic "UNETCKP1", u32 format version,
# u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 rank,
# u32 extent per dimension, raw float32 data. Trailing CRC32 of all
# preceding bytes.


def save_checkpoint(graph: ModelGraph, path) -> None:
    params = graph._require_params()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", CHECKPOINT_VERSION, len(params))
    for name in sorted(params):
        arr = params[name]
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    atomic_write_bytes(path, bytes(out))


def load_checkpoint(path, graph: ModelGraph) -> ModelGraph:
    """Load parameters into a built graph; any mismatch rejects the file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError("checkpoint truncated")
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a drgrade checkpoint")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError("CRC mismatch; checkpoint corrupted")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = math.prod(shape)
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            params[name] = arr.reshape(shape).astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"checkpoint truncated or malformed: {exc}") from None
    if pos != len(blob) - 4:
        raise CheckpointError("trailing bytes in checkpoint")
    if set(params) != set(graph.param_specs):
        raise CheckpointError("parameter names do not match the model config")
    for name, arr in params.items():
        if arr.shape != graph.param_specs[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {arr.shape}, "
                f"model {graph.param_specs[name].shape}")
    graph.params = params
    return graph
