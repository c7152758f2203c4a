"""The 1-D double hierarchical residual network and its checkpoint format.

A block computes ``relu(main(x) + proj(x) + x)`` where ``main`` is
conv(k=32, stride s) -> BN -> ReLU -> conv(k=16) -> BN and ``proj`` is a
kernel-1 conv + BN with the same stride. The bare identity is only added
when the block keeps shape (or zero-padded when ``identity="pad"``).
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import CorruptCheckpoint, InvalidConfig, ShapeMismatch, StaleCache, VersionMismatch
from .nn import BatchNormParams, Conv1dParams, LinearParams


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class DhrbConfig:
    in_channels: int
    out_channels: int
    stride: int = 1
    k1: int = 32
    k2: int = 16
    shortcut_kernel: int = 1
    identity: str = "drop"  # what to do with the bare identity when shapes change: "drop" | "pad"

    def __post_init__(self):
        if self.k1 != 2 * self.k2:
            raise InvalidConfig("first kernel must be twice the second")
        if self.stride not in (1, 2):
            raise InvalidConfig("block stride must be 1 or 2")
        if self.identity not in ("drop", "pad"):
            raise InvalidConfig("identity must be 'drop' or 'pad'")
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidConfig("channel counts must be positive")

    @property
    def keeps_shape(self) -> bool:
        return self.in_channels == self.out_channels and self.stride == 1


@dataclass(frozen=True)
class DhrnConfig:
    input_len: int
    stem_kernel: int = 32
    stem_stride: int = 1
    stem_channels: int = 64
    pool_kernel: int = 3
    pool_stride: int = 2
    group_channels: tuple = (64, 128, 256, 512)
    group_strides: tuple = (1, 2, 2, 2)
    blocks_per_group: int = 2
    k1: int = 32
    k2: int = 16
    classes_intensity: int = 4
    classes_detection: int = 2
    width_multiplier: float = 1.0
    identity: str = "drop"

    def __post_init__(self):
        object.__setattr__(self, "group_channels", tuple(int(c) for c in self.group_channels))
        object.__setattr__(self, "group_strides", tuple(int(s) for s in self.group_strides))
        if self.input_len < 1:
            raise InvalidConfig("input_len must be positive")
        if self.width_multiplier <= 0:
            raise InvalidConfig("width_multiplier must be positive")
        if len(self.group_channels) != len(self.group_strides) or not self.group_channels:
            raise InvalidConfig("group_channels and group_strides must be non-empty and equal length")
        if any(b != 2 * a for a, b in zip(self.group_channels, self.group_channels[1:])):
            raise InvalidConfig("channels must double from group to group")
        if self.blocks_per_group < 1:
            raise InvalidConfig("blocks_per_group must be >= 1")
        if self.k1 != 2 * self.k2:
            raise InvalidConfig("k1 must equal 2 * k2")
        if min(self.scaled(c) for c in (self.stem_channels,) + self.group_channels) < 1:
            raise InvalidConfig("width_multiplier leaves a layer with no channels")
        if self.trunk_length() < 1:
            raise InvalidConfig(f"input_len {self.input_len} too short for this network")

    def scaled(self, channels: int) -> int:
        return int(round(channels * self.width_multiplier))

    @property
    def pooled_dim(self) -> int:
        return self.scaled(self.group_channels[-1])

    def block_configs(self) -> list[list[DhrbConfig]]:
        groups = []
        c_in = self.scaled(self.stem_channels)
        for ch, s in zip(self.group_channels, self.group_strides):
            c_out = self.scaled(ch)
            blocks = []
            for b in range(self.blocks_per_group):
                blocks.append(DhrbConfig(c_in, c_out, s if b == 0 else 1, self.k1, self.k2, 1, self.identity))
                c_in = c_out
            groups.append(blocks)
        return groups

    def trunk_length(self) -> int:
        """Feature length entering the global pool (0 if the input is too short)."""
        L = self.input_len
        L = (L - 1) // self.stem_stride + 1  # 'same'-padded stem
        if L < self.pool_kernel:
            return 0
        L = (L - self.pool_kernel) // self.pool_stride + 1
        for s in self.group_strides:
            L = (L - 1) // s + 1
        return L

    def to_json(self) -> dict:
        d = asdict(self)
        d["group_channels"] = list(self.group_channels)
        d["group_strides"] = list(self.group_strides)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DhrnConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


@dataclass
class DhrbParams:
    cfg: DhrbConfig
    conv1: Conv1dParams
    bn1: BatchNormParams
    conv2: Conv1dParams
    bn2: BatchNormParams
    proj: Conv1dParams
    proj_bn: BatchNormParams


@dataclass
class DhrnModel:
    config: DhrnConfig
    stem: Conv1dParams
    stem_bn: BatchNormParams
    groups: list  # list[list[DhrbParams]]
    head_intensity: LinearParams
    head_detection: LinearParams
    version: int = field(default=0, compare=False)

    @property
    def dtype(self):
        return self.stem.weight.dtype

    def _modules(self):
        yield "stem.conv", self.stem
        yield "stem.bn", self.stem_bn
        for g, blocks in enumerate(self.groups):
            for b, blk in enumerate(blocks):
                pre = f"layer{g + 1}.{b}"
                yield f"{pre}.conv1", blk.conv1
                yield f"{pre}.bn1", blk.bn1
                yield f"{pre}.conv2", blk.conv2
                yield f"{pre}.bn2", blk.bn2
                yield f"{pre}.proj", blk.proj
                yield f"{pre}.proj_bn", blk.proj_bn
        yield "head_intensity", self.head_intensity
        yield "head_detection", self.head_detection

    def parameters(self) -> dict:
        """Trainable arrays by name (the live arrays, not copies)."""
        out = {}
        for name, m in self._modules():
            if isinstance(m, BatchNormParams):
                out[f"{name}.gamma"] = m.gamma
                out[f"{name}.beta"] = m.beta
            else:
                out[f"{name}.weight"] = m.weight
                if m.bias is not None:
                    out[f"{name}.bias"] = m.bias
        return out

    def buffers(self) -> dict:
        out = {}
        for name, m in self._modules():
            if isinstance(m, BatchNormParams):
                out[f"{name}.running_mean"] = m.running_mean
                out[f"{name}.running_var"] = m.running_var
        return out

    def state(self) -> dict:
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state: dict) -> None:
        """Copy arrays into this model; names and shapes must match exactly."""
        own = self.state()
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise VersionMismatch(f"tensor names differ from model layout: {missing[:5]}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise VersionMismatch(f"{name}: shape {src.shape} != expected {arr.shape}")
            np.copyto(arr, src)
        self.version += 1

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.state().items()}

    def astype(self, dtype) -> "DhrnModel":
        clone = build_dhrn(self.config, seed=0, dtype=dtype)
        clone.load_state({k: v.astype(dtype) for k, v in self.state().items()})
        return clone

    def main_path_layers(self) -> list[str]:
        """Weighted layers along the deepest path: stem, two convs per block, head."""
        names = ["stem.conv"]
        for g, blocks in enumerate(self.groups):
            for b in range(len(blocks)):
                names += [f"layer{g + 1}.{b}.conv1", f"layer{g + 1}.{b}.conv2"]
        names.append("head")
        return names

    def num_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())


def _he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _conv(rng, c_out, c_in, k, stride, pad, dtype):
    w = _he_uniform(rng, (c_out, c_in, k), c_in * k, dtype)
    return Conv1dParams(w, None, stride, pad[0], pad[1])


def build_dhrn(cfg: DhrnConfig, seed: int = 0, dtype=np.float32) -> DhrnModel:
    """Fresh network with He-uniform (fan-in) weights and identity BN."""
    rng = np.random.default_rng(seed)

    def bn(c):
        return BatchNormParams.identity(c, dtype)

    c_stem = cfg.scaled(cfg.stem_channels)
    stem = _conv(rng, c_stem, 1, cfg.stem_kernel, cfg.stem_stride, nn.same_padding(cfg.stem_kernel), dtype)
    groups = []
    for gcfgs in cfg.block_configs():
        blocks = []
        for bc in gcfgs:
            blocks.append(DhrbParams(
                cfg=bc,
                conv1=_conv(rng, bc.out_channels, bc.in_channels, bc.k1, bc.stride, nn.same_padding(bc.k1), dtype),
                bn1=bn(bc.out_channels),
                conv2=_conv(rng, bc.out_channels, bc.out_channels, bc.k2, 1, nn.same_padding(bc.k2), dtype),
                bn2=bn(bc.out_channels),
                proj=_conv(rng, bc.out_channels, bc.in_channels, bc.shortcut_kernel, bc.stride, (0, 0), dtype),
                proj_bn=bn(bc.out_channels),
            ))
        groups.append(blocks)

    def head(n_out):
        d = cfg.pooled_dim
        return LinearParams(_he_uniform(rng, (n_out, d), d, dtype), np.zeros(n_out, dtype))

    return DhrnModel(
        config=cfg,
        stem=stem,
        stem_bn=bn(c_stem),
        groups=groups,
        head_intensity=head(cfg.classes_intensity),
        head_detection=head(cfg.classes_detection),
    )


# ------------------------------------------------------------------- forward

def _bn(x, p: BatchNormParams, train: bool):
    y, cache = nn.batchnorm_forward(x, p, train)
    if train:
        p.running_mean[...] = cache.running_mean
        p.running_var[...] = cache.running_var
    return y, cache


def _identity(x, cfg: DhrbConfig):
    if cfg.keeps_shape:
        return x
    if cfg.identity == "drop":
        return None
    xs = x[:, :, :: cfg.stride]
    pad = cfg.out_channels - cfg.in_channels
    if pad < 0:
        return None
    return np.pad(xs, ((0, 0), (0, pad), (0, 0)))


def dhrb_forward(x, block: DhrbParams, mode=Mode.EVAL):
    """Forward one block; returns (output, cache)."""
    train = Mode(mode) is Mode.TRAIN
    if x.shape[1] != block.cfg.in_channels:
        raise ShapeMismatch(f"block expects {block.cfg.in_channels} channels, got {x.shape[1]}")
    h1, c_conv1 = nn.conv1d_forward(x, block.conv1)
    h2, c_bn1 = _bn(h1, block.bn1, train)
    h3 = nn.relu_forward(h2)
    h4, c_conv2 = nn.conv1d_forward(h3, block.conv2)
    main, c_bn2 = _bn(h4, block.bn2, train)
    p1, c_proj = nn.conv1d_forward(x, block.proj)
    short, c_proj_bn = _bn(p1, block.proj_bn, train)
    s = main + short
    ident = _identity(x, block.cfg)
    if ident is not None:
        s = s + ident
    out = nn.relu_forward(s)
    cache = (x.shape, c_conv1, c_bn1, h2, c_conv2, c_bn2, c_proj, c_proj_bn, s, ident is not None)
    return out, cache


def dhrb_backward(block: DhrbParams, cache, grad_out):
    """Returns (grad_x, {param_suffix: grad})."""
    x_shape, c_conv1, c_bn1, h2, c_conv2, c_bn2, c_proj, c_proj_bn, s, has_ident = cache
    gs = nn.relu_backward(s, grad_out)
    g4, g_bn2_gamma, g_bn2_beta = nn.batchnorm_backward(c_bn2, gs)
    g3, g_conv2_w, _ = nn.conv1d_backward(c_conv2, block.conv2, g4)
    g2 = nn.relu_backward(h2, g3)
    g1, g_bn1_gamma, g_bn1_beta = nn.batchnorm_backward(c_bn1, g2)
    gx, g_conv1_w, _ = nn.conv1d_backward(c_conv1, block.conv1, g1)
    gp, g_pbn_gamma, g_pbn_beta = nn.batchnorm_backward(c_proj_bn, gs)
    gx_proj, g_proj_w, _ = nn.conv1d_backward(c_proj, block.proj, gp)
    gx = gx + gx_proj
    if has_ident:
        cfg = block.cfg
        if cfg.keeps_shape:
            gx += gs
        else:
            gx[:, :, :: cfg.stride] += gs[:, : cfg.in_channels, :]
    grads = {
        "conv1.weight": g_conv1_w,
        "bn1.gamma": g_bn1_gamma,
        "bn1.beta": g_bn1_beta,
        "conv2.weight": g_conv2_w,
        "bn2.gamma": g_bn2_gamma,
        "bn2.beta": g_bn2_beta,
        "proj.weight": g_proj_w,
        "proj_bn.gamma": g_pbn_gamma,
        "proj_bn.beta": g_pbn_beta,
    }
    return gx, grads


@dataclass
class ForwardCache:
    model_id: int
    version: int
    stem: tuple
    stem_bn: object
    stem_pre_relu: np.ndarray
    pool: tuple
    blocks: list
    avg: tuple
    pooled: np.ndarray


def model_forward(model: DhrnModel, x, mode=Mode.EVAL):
    """Returns (logits_intensity (N, 4), logits_detection (N, 2), cache).

    The cache is ``None`` in eval mode.
    """
    mode = Mode(mode)
    train = mode is Mode.TRAIN
    cfg = model.config
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.input_len:
        raise ShapeMismatch(f"expected input (N, 1, {cfg.input_len}), got {x.shape}")
    x = x.astype(model.dtype, copy=False)
    h, c_stem = nn.conv1d_forward(x, model.stem)
    h, c_stem_bn = _bn(h, model.stem_bn, train)
    pre_relu = h
    h = nn.relu_forward(h)
    h, c_pool = nn.maxpool1d_forward(h, cfg.pool_kernel, cfg.pool_stride)
    block_caches = []
    for blocks in model.groups:
        for blk in blocks:
            h, c = dhrb_forward(h, blk, mode)
            block_caches.append(c)
    pooled, c_avg = nn.adaptive_avgpool_forward(h, 1)
    pooled = pooled[:, :, 0]
    logits_b = nn.linear_forward(pooled, model.head_intensity)
    logits_a = nn.linear_forward(pooled, model.head_detection)
    if not train:
        return logits_b, logits_a, None
    cache = ForwardCache(id(model), model.version, c_stem, c_stem_bn, pre_relu, c_pool, block_caches, c_avg, pooled)
    return logits_b, logits_a, cache


def model_backward(model: DhrnModel, cache: ForwardCache, grad_logits_b, grad_logits_a) -> dict:
    """Gradients for every entry of ``model.parameters()``.

    The shared trunk receives the sum of both heads' contributions.
    """
    if cache is None or cache.model_id != id(model) or cache.version != model.version:
        raise StaleCache("cache does not belong to the current model parameters")
    grads = {}
    pooled = cache.pooled
    g_pooled_b, grads["head_intensity.weight"], grads["head_intensity.bias"] = nn.linear_backward(
        pooled, model.head_intensity, grad_logits_b)
    g_pooled_a, grads["head_detection.weight"], grads["head_detection.bias"] = nn.linear_backward(
        pooled, model.head_detection, grad_logits_a)
    g = (g_pooled_b + g_pooled_a)[:, :, None]
    g = nn.adaptive_avgpool_backward(cache.avg, g)
    flat = [(gi, bi, blk) for gi, blocks in enumerate(model.groups) for bi, blk in enumerate(blocks)]
    for (gi, bi, blk), c in zip(reversed(flat), reversed(cache.blocks)):
        g, bgrads = dhrb_backward(blk, c, g)
        for k, v in bgrads.items():
            grads[f"layer{gi + 1}.{bi}.{k}"] = v
    g = nn.maxpool1d_backward(cache.pool, g)
    g = nn.relu_backward(cache.stem_pre_relu, g)
    g, grads["stem.bn.gamma"], grads["stem.bn.beta"] = nn.batchnorm_backward(cache.stem_bn, g)
    _, grads["stem.conv.weight"], _ = nn.conv1d_backward(cache.stem, model.stem, g)
    return grads


# ---------------------------------------------------------------- checkpoints

MAGIC = b"DHRN"
FORMAT_VERSION = 1


def save_checkpoint(model: DhrnModel, path) -> None:
    """Layout: magic, u32 version, u32 len + config JSON, u32 tensor count,
    then per tensor u32 name len, name, u32 ndim, u32 dims, float32 LE data."""
    cfg_bytes = json.dumps(model.config.to_json(), sort_keys=True).encode()
    state = model.state()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg_bytes)), cfg_bytes, struct.pack("<I", len(state))]
    for name, arr in state.items():
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expected: DhrnConfig | None = None) -> DhrnModel:
    """Read a checkpoint; ``expected`` (if given) must equal the stored config."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("not a DHRN checkpoint (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    try:
        cfg_json = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"bad config block: {exc}") from exc
    cfg = DhrnConfig.from_json(cfg_json)
    if expected is not None and expected != cfg:
        raise VersionMismatch(f"checkpoint config {cfg} does not match expected {expected}")
    state = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
    if r.pos != len(r.buf):
        raise CorruptCheckpoint("trailing bytes after last tensor")
    model = build_dhrn(cfg, seed=0, dtype=np.float32)
    model.load_state(state)
    model.version = 0
    return model
