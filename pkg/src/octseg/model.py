"""The dilated-residual U-Net.

Two towers of three blocks each around a dilation-8 bridge.  Every block
stacks two 3x3 dilated convolutions (16 filters, batch norm + ELU after
each); residual blocks add a 1x1 projection of the block input, itself
batch normalized and ELU-activated before the addition.  Downsampling is
2x2 max pooling after each down block; each up block is preceded by 2x2
nearest-neighbor upsampling and concatenation with the matching skip
feature (the down-block output taken before its pool).  A 1x1 convolution
plus channelwise softmax maps the final 16 features to per-pixel class
probabilities.

Default configuration: 1 input channel, 16 filters, 8 classes, dilations
1/2/4 down, 8 at the bridge, 4/2/1 up; 39,848 trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Variable, as_variable
from .nn import BatchNorm2d, Conv2d

MODES = ("train", "infer")


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 8
    base_filters: int = 16
    input_ch: int = 1
    block_dilations_down: tuple[int, int, int] = (1, 2, 4)
    bridge_dilation: int = 8
    block_dilations_up: tuple[int, int, int] = (4, 2, 1)

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.base_filters < 1 or self.input_ch < 1:
            raise ValueError("base_filters and input_ch must be positive")
        if len(self.block_dilations_down) != 3 or len(self.block_dilations_up) != 3:
            raise ValueError("each tower must have exactly 3 blocks")
        dil = (*self.block_dilations_down, self.bridge_dilation,
               *self.block_dilations_up)
        if any(int(d) < 1 for d in dil):
            raise ValueError("dilations must be positive integers")


class _Block:
    """One tower block: two dilated conv+BN+ELU stages, optionally with a
    1x1 residual projection (BN+ELU before the addition)."""

    def __init__(self, kind: str, in_ch: int, out_ch: int, dilation: int,
                 rng: np.random.Generator, dtype):
        assert kind in ("standard", "residual")
        self.kind = kind
        self.dilation = dilation
        self.conv1 = Conv2d(in_ch, out_ch, 3, dilation, rng, dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, dilation, rng, dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        if kind == "residual":
            self.proj = Conv2d(in_ch, out_ch, 1, 1, rng, dtype)
            self.bnp = BatchNorm2d(out_ch, dtype=dtype)

    def __call__(self, x, training: bool) -> Variable:
        h = nn.elu(self.bn1(self.conv1(x), training))
        h = nn.elu(self.bn2(self.conv2(h), training))
        if self.kind == "residual":
            r = nn.elu(self.bnp(self.proj(x), training))
            h = h + r
        return h

    def stages(self):
        yield "conv1", self.conv1
        yield "bn1", self.bn1
        yield "conv2", self.conv2
        yield "bn2", self.bn2
        if self.kind == "residual":
            yield "proj", self.proj
            yield "bnp", self.bnp


class DilatedResidualUNet:
    """Segmentation network mapping N,1,H,W images (H, W divisible by 8)
    to N,n_classes,H,W per-pixel probabilities."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(seed)
        f = config.base_filters
        d_down = config.block_dilations_down
        d_up = config.block_dilations_up

        self.down1 = _Block("standard", config.input_ch, f, d_down[0], rng, dtype)
        self.down2 = _Block("residual", f, f, d_down[1], rng, dtype)
        self.down3 = _Block("residual", f, f, d_down[2], rng, dtype)
        self.bridge = _Block("residual", f, f, config.bridge_dilation, rng, dtype)
        self.up1 = _Block("residual", 2 * f, f, d_up[0], rng, dtype)
        self.up2 = _Block("residual", 2 * f, f, d_up[1], rng, dtype)
        self.up3 = _Block("standard", 2 * f, f, d_up[2], rng, dtype)
        self.head = Conv2d(f, config.n_classes, 1, 1, rng, dtype)

    def _blocks(self):
        yield "down1", self.down1
        yield "down2", self.down2
        yield "down3", self.down3
        yield "bridge", self.bridge
        yield "up1", self.up1
        yield "up2", self.up2
        yield "up3", self.up3

    def parameters(self) -> dict[str, Variable]:
        """Trainable parameters in stable construction order."""
        params: dict[str, Variable] = {}
        for bname, block in self._blocks():
            for sname, stage in block.stages():
                for pname, p in stage.parameters().items():
                    params[f"{bname}.{sname}.{pname}"] = p
        for pname, p in self.head.parameters().items():
            params[f"head.{pname}"] = p
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable running statistics, in the same stable order."""
        bufs: dict[str, np.ndarray] = {}
        for bname, block in self._blocks():
            for sname, stage in block.stages():
                if isinstance(stage, BatchNorm2d):
                    for name, buf in stage.buffers().items():
                        bufs[f"{bname}.{sname}.{name}"] = buf
        return bufs

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def forward(self, image, mode: str = "infer") -> Variable:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        training = mode == "train"
        x = as_variable(image)
        if x.value.ndim != 4 or x.value.shape[1] != self.config.input_ch:
            raise ValueError(
                f"expected input of shape (N, {self.config.input_ch}, H, W), "
                f"got {x.value.shape}")
        h, w = x.value.shape[2:]
        if h % 8 or w % 8:
            raise ValueError(
                f"spatial dims must be divisible by 8 (three 2x2 pools), "
                f"got {h}x{w}; resize or crop the input explicitly")

        s1 = self.down1(x, training)
        p1, _ = nn.maxpool2x2(s1)
        s2 = self.down2(p1, training)
        p2, _ = nn.maxpool2x2(s2)
        s3 = self.down3(p2, training)
        p3, _ = nn.maxpool2x2(s3)
        b = self.bridge(p3, training)
        u1 = self.up1(nn.concat_channels(nn.upsample2x2(b), s3), training)
        u2 = self.up2(nn.concat_channels(nn.upsample2x2(u1), s2), training)
        u3 = self.up3(nn.concat_channels(nn.upsample2x2(u2), s1), training)
        return nn.softmax_channels(self.head(u3))

    def layer_table(self) -> list[tuple[str, str, int, int]]:
        """Rows of (layer path, shape spec, dilation, trainable params)."""
        rows = []
        for bname, block in self._blocks():
            for sname, stage in block.stages():
                if isinstance(stage, Conv2d):
                    shape = "x".join(map(str, stage.w.value.shape))
                    count = stage.w.value.size + stage.b.value.size
                    rows.append((f"{bname}.{sname}", f"conv {shape}",
                                 stage.dilation, count))
                else:
                    rows.append((f"{bname}.{sname}", f"batchnorm {stage.ch}",
                                 0, 2 * stage.ch))
        shape = "x".join(map(str, self.head.w.value.shape))
        rows.append(("head", f"conv {shape}", 1,
                     self.head.w.value.size + self.head.b.value.size))
        return rows


def predict_classes(probs) -> np.ndarray:
    """Per-pixel argmax over the channel axis; ties go to the lowest class."""
    arr = probs.value if isinstance(probs, Variable) else np.asarray(probs)
    if arr.ndim != 4:
        raise ValueError(f"expected N,C,H,W probabilities, got shape {arr.shape}")
    return arr.argmax(axis=1).astype(np.uint8)


def bridge_receptive_radius(config: ModelConfig = ModelConfig()) -> float:
    """Receptive-field radius of one bridge feature, in input pixels.

    Accumulates (k-1)*dilation*jump per convolution and (k-1)*jump per pool,
    doubling the jump after each 2x2 pool.
    """
    rf, jump = 1, 1
    for dil in config.block_dilations_down:
        rf += 2 * 2 * dil * jump  # two 3x3 convs
        rf += 1 * jump            # 2x2 pool
        jump *= 2
    rf += 2 * 2 * config.bridge_dilation * jump
    return (rf - 1) / 2
