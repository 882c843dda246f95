"""Translation generator, patch discriminator, and attention blocks.

The generator maps a 4-band image to a same-size 4-band image in [-1, 1]:
a 7x7 stem, two stride-2 downsampling convolutions, four residual blocks,
one residual self-attention block, and a nearest-upsampling decoder.  The
discriminator is the usual 70x70 patch critic emitting a logit grid.
Encoder taps feed the contrastive losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import (
    Tensor,
    conv2d,
    instance_norm,
    leaky_relu,
    matmul,
    mul,
    pad_reflect,
    relu,
    reshape,
    softmax,
    tanh,
    transpose,
    upsample_nearest,
)

WEIGHT_STD = 0.02

# tappable stages of the generator, in forward order
TAP_STAGES = ("input", "stem", "down1", "down2", "res1", "res2", "res3", "res4")


@dataclass
class GeneratorConfig:
    in_channels: int = 4
    base_channels: int = 64
    n_downsample: int = 2
    n_resblocks: int = 4
    attention_after_resblocks: bool = True
    decoder_attention: bool = False
    # input, stem, the two downsampling convs, and the second residual block
    feature_tap_indices: tuple = (0, 1, 2, 3, 5)

    def __post_init__(self):
        if self.n_resblocks != 4:
            raise DimensionError("generator uses exactly four residual blocks")
        if self.n_downsample != 2:
            raise DimensionError("generator uses exactly two downsampling stages")
        if len(self.feature_tap_indices) != 5:
            raise DimensionError("exactly five feature taps are required")
        if max(self.feature_tap_indices) >= len(TAP_STAGES):
            raise DimensionError(f"tap indices must address {TAP_STAGES}")

    @property
    def inner_channels(self) -> int:
        return self.base_channels * 4

    @property
    def attention_channels(self) -> int:
        return max(1, self.inner_channels // 8)

    def tap_channel_widths(self) -> list[int]:
        widths = {
            "input": self.in_channels,
            "stem": self.base_channels,
            "down1": self.base_channels * 2,
            "down2": self.inner_channels,
        }
        for i in range(1, 5):
            widths[f"res{i}"] = self.inner_channels
        return [widths[TAP_STAGES[i]] for i in self.feature_tap_indices]


def _conv_params(rng: np.random.Generator, name: str, c_in: int, c_out: int, k: int,
                 params: dict, norm: bool = True):
    params[f"{name}.w"] = Tensor(
        rng.normal(0.0, WEIGHT_STD, size=(c_out, c_in, k, k)), requires_grad=True
    )
    params[f"{name}.b"] = Tensor(np.zeros(c_out), requires_grad=True)
    if norm:
        params[f"{name}.gamma"] = Tensor(np.ones(c_out), requires_grad=True)
        params[f"{name}.beta"] = Tensor(np.zeros(c_out), requires_grad=True)


def _attention_params(rng: np.random.Generator, name: str, d_model: int, d_proj: int,
                      params: dict):
    for part, width in (("q", d_proj), ("k", d_proj), ("v", d_proj)):
        params[f"{name}.w{part}"] = Tensor(
            rng.normal(0.0, WEIGHT_STD, size=(width, d_model, 1, 1)), requires_grad=True
        )
        params[f"{name}.b{part}"] = Tensor(np.zeros(width), requires_grad=True)
    params[f"{name}.wo"] = Tensor(
        rng.normal(0.0, WEIGHT_STD, size=(d_model, d_proj, 1, 1)), requires_grad=True
    )
    params[f"{name}.bo"] = Tensor(np.zeros(d_model), requires_grad=True)
    # zero residual scale: the block starts as identity
    params[f"{name}.alpha"] = Tensor(np.zeros(()), requires_grad=True)


def conv_projection(s: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                    wv: Tensor, bv: Tensor):
    """Channel-summed convolutional projections producing query/key/value maps."""
    if s.ndim != 3:
        raise DimensionError(f"conv_projection expects C,H,W features, got {s.shape}")
    pad = (wq.shape[-1] - 1) // 2
    q = conv2d(s, wq, bq, stride=1, padding=pad)
    k = conv2d(s, wk, bk, stride=1, padding=pad)
    v = conv2d(s, wv, bv, stride=1, padding=pad)
    return q, k, v


def residual_self_attention(s: Tensor, wq, bq, wk, bk, wv, bv, wo, bo, alpha: Tensor) -> Tensor:
    """Dot-product attention over flattened positions, scaled and added back.

    softmax(Q K^T / sqrt(d_q)) V, projected to the input width, times the
    learned scalar, plus the input.
    """
    d_model, h, w = s.shape
    q, k, v = conv_projection(s, wq, bq, wk, bk, wv, bv)
    d_q = q.shape[0]
    qf = transpose(reshape(q, (d_q, h * w)))
    kf = transpose(reshape(k, (d_q, h * w)))
    vf = transpose(reshape(v, (v.shape[0], h * w)))
    weights = softmax(mul(matmul(qf, transpose(kf)), 1.0 / math.sqrt(d_q)), axis=1)
    ctx = reshape(transpose(matmul(weights, vf)), (v.shape[0], h, w))
    projected = conv2d(ctx, wo, bo, stride=1, padding=0)
    return mul(projected, alpha) + s


class Generator:
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        b = config.base_channels
        inner = config.inner_channels
        _conv_params(rng, "stem", config.in_channels, b, 7, self.params)
        _conv_params(rng, "down1", b, 2 * b, 3, self.params)
        _conv_params(rng, "down2", 2 * b, inner, 3, self.params)
        for i in range(1, config.n_resblocks + 1):
            _conv_params(rng, f"res{i}.c1", inner, inner, 3, self.params)
            _conv_params(rng, f"res{i}.c2", inner, inner, 3, self.params)
        if config.attention_after_resblocks:
            _attention_params(rng, "attn", inner, config.attention_channels, self.params)
        _conv_params(rng, "up1", inner, 2 * b, 3, self.params)
        if config.decoder_attention:
            _attention_params(rng, "dec_attn", 2 * b, max(1, 2 * b // 8), self.params)
        _conv_params(rng, "up2", 2 * b, b, 3, self.params)
        _conv_params(rng, "head", b, config.in_channels, 7, self.params, norm=False)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    # -- stages ---------------------------------------------------------------

    def _norm_act(self, name: str, x: Tensor) -> Tensor:
        return relu(instance_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"]))

    def _resblock(self, i: int, x: Tensor) -> Tensor:
        p = self.params
        h = pad_reflect(x, 1)
        h = conv2d(h, p[f"res{i}.c1.w"], p[f"res{i}.c1.b"])
        h = self._norm_act(f"res{i}.c1", h)
        h = pad_reflect(h, 1)
        h = conv2d(h, p[f"res{i}.c2.w"], p[f"res{i}.c2.b"])
        h = instance_norm(h, p[f"res{i}.c2.gamma"], p[f"res{i}.c2.beta"])
        return x + h

    def _attention(self, name: str, x: Tensor) -> Tensor:
        p = self.params
        return residual_self_attention(
            x, p[f"{name}.wq"], p[f"{name}.bq"], p[f"{name}.wk"], p[f"{name}.bk"],
            p[f"{name}.wv"], p[f"{name}.bv"], p[f"{name}.wo"], p[f"{name}.bo"],
            p[f"{name}.alpha"],
        )

    def _check_input(self, x: Tensor):
        if x.ndim != 3 or x.shape[0] != self.config.in_channels:
            raise DimensionError(
                f"generator expects {self.config.in_channels},H,W input, got {x.shape}"
            )
        if x.shape[1] % 4 or x.shape[2] % 4:
            raise DimensionError(
                f"spatial extents must be divisible by 4, got {x.shape[1]}x{x.shape[2]}"
            )

    def _encoder_stages(self, x: Tensor, upto: int) -> list[Tensor]:
        """Run the tappable chain up to stage index `upto`, inclusive."""
        p = self.params
        stages = [x]
        if upto >= 1:
            h = conv2d(pad_reflect(x, 3), p["stem.w"], p["stem.b"])
            stages.append(self._norm_act("stem", h))
        if upto >= 2:
            h = conv2d(stages[-1], p["down1.w"], p["down1.b"], stride=2, padding=1)
            stages.append(self._norm_act("down1", h))
        if upto >= 3:
            h = conv2d(stages[-1], p["down2.w"], p["down2.b"], stride=2, padding=1)
            stages.append(self._norm_act("down2", h))
        for i in range(1, self.config.n_resblocks + 1):
            if upto >= 3 + i:
                stages.append(self._resblock(i, stages[-1]))
        return stages

    def forward(self, x: Tensor, record_taps: bool = False):
        """Translate one image; optionally capture the encoder feature taps."""
        self._check_input(x)
        p = self.params
        stages = self._encoder_stages(x, len(TAP_STAGES) - 1)
        taps = [stages[i] for i in self.config.feature_tap_indices] if record_taps else None
        h = stages[-1]
        if self.config.attention_after_resblocks:
            h = self._attention("attn", h)
        h = upsample_nearest(h, 2)
        h = conv2d(pad_reflect(h, 1), p["up1.w"], p["up1.b"])
        h = self._norm_act("up1", h)
        if self.config.decoder_attention:
            h = self._attention("dec_attn", h)
        h = upsample_nearest(h, 2)
        h = conv2d(pad_reflect(h, 1), p["up2.w"], p["up2.b"])
        h = self._norm_act("up2", h)
        h = conv2d(pad_reflect(h, 3), p["head.w"], p["head.b"])
        y = tanh(h)
        return y, taps

    def __call__(self, x: Tensor):
        return self.forward(x)[0]


def encoder_features(generator: Generator, x: Tensor) -> list[Tensor]:
    """The feature taps of the generator encoder for one input image."""
    generator._check_input(x)
    upto = max(generator.config.feature_tap_indices)
    stages = generator._encoder_stages(x, upto)
    return [stages[i] for i in generator.config.feature_tap_indices]


def generator_parameter_count(config: GeneratorConfig) -> int:
    """Closed-form parameter count for a generator built from `config`."""

    def conv(c_in, c_out, k, norm=True):
        return k * k * c_in * c_out + c_out + (2 * c_out if norm else 0)

    def attention(d_model, d_proj):
        qkv = 3 * (d_model * d_proj + d_proj)
        out = d_proj * d_model + d_model
        return qkv + out + 1

    b = config.base_channels
    inner = config.inner_channels
    total = conv(config.in_channels, b, 7)
    total += conv(b, 2 * b, 3) + conv(2 * b, inner, 3)
    total += config.n_resblocks * 2 * conv(inner, inner, 3)
    if config.attention_after_resblocks:
        total += attention(inner, config.attention_channels)
    total += conv(inner, 2 * b, 3)
    if config.decoder_attention:
        total += attention(2 * b, max(1, 2 * b // 8))
    total += conv(2 * b, b, 3)
    total += conv(b, config.in_channels, 7, norm=False)
    return total


@dataclass
class DiscriminatorConfig:
    in_channels: int = 4
    base_channels: int = 64
    # (kernel, stride, normalize) for the four stages before the logit map
    stages: tuple = field(default=((4, 2, False), (4, 2, True), (4, 2, True), (4, 1, True)))


class Discriminator:
    """70x70 patch critic: stride-2/stride-1 4x4 stages, leaky relu 0.2, logit map."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Tensor] = {}
        c_in = config.in_channels
        c_out = config.base_channels
        for i, (k, _stride, norm) in enumerate(config.stages):
            _conv_params(rng, f"d{i}", c_in, c_out, k, self.params, norm=norm)
            c_in = c_out
            c_out = min(c_out * 2, config.base_channels * 8)
        _conv_params(rng, "logit", c_in, 1, 4, self.params, norm=False)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.config.in_channels:
            raise DimensionError(
                f"discriminator expects {self.config.in_channels},H,W input, got {x.shape}"
            )
        p = self.params
        h = x
        for i, (k, stride, norm) in enumerate(self.config.stages):
            h = conv2d(h, p[f"d{i}.w"], p[f"d{i}.b"], stride=stride, padding=1)
            if norm:
                h = instance_norm(h, p[f"d{i}.gamma"], p[f"d{i}.beta"])
            h = leaky_relu(h, 0.2)
        return conv2d(h, p["logit.w"], p["logit.b"], stride=1, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def discriminator_grid_size(input_size: int, config: DiscriminatorConfig | None = None) -> int:
    """Logit-grid extent produced for a square input (stride arithmetic)."""
    config = config or DiscriminatorConfig()
    n = input_size
    for k, stride, _norm in config.stages:
        n = (n + 2 - k) // stride + 1
    return (n + 2 - 4) // 1 + 1
