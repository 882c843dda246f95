"""Objective terms: adversarial, contrastive (pixel and frequency), cycle.

The contrastive core pulls a query embedding toward one positive and away
from K negatives under a temperature.  The pixel-level loss compares
encoder features of the translated image against features of its source at
the same sampled locations (negatives are the other locations); the
frequency-level loss does the same for embeddings of 2-D FFT coefficients
of co-located patches.  Identity variants feed a target-domain image
through the generator so that already-good images stay nearly unchanged.

Embeddings are L2-normalized before the dot products: a temperature around
0.07 is only numerically reasonable on the unit sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParameterError, SamplingError
from .fft import fft2d
from .networks import TAP_STAGES, Generator, encoder_features
from .tensor import (
    Tensor,
    abs_,
    concat,
    crop,
    dense,
    diagonal,
    gather_pixels,
    l2_normalize,
    logsumexp,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softplus,
    sum_,
    transpose,
)

GAN_FLAVORS = ("least_squares", "nonsaturating_bce")
PRESETS = ("adanet", "cut", "fastcut", "cyclegan")


@dataclass
class LossWeights:
    spatial: float = 0.5
    identity_spatial: float = 0.5
    frequency: float = 0.5
    identity_frequency: float = 0.5
    temperature: float = 0.07
    gan_flavor: str = "least_squares"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        for name in ("spatial", "identity_spatial", "frequency", "identity_frequency"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} weight must be non-negative")
        if self.gan_flavor not in GAN_FLAVORS:
            raise ParameterError(f"gan_flavor must be one of {GAN_FLAVORS}")

    @classmethod
    def preset(cls, name: str) -> "LossWeights":
        if name == "adanet":
            return cls()
        if name == "cut":
            return cls(spatial=1.0, identity_spatial=1.0, frequency=0.0, identity_frequency=0.0)
        if name == "fastcut":
            return cls(spatial=1.0, identity_spatial=0.0, frequency=0.0, identity_frequency=0.0)
        if name == "cyclegan":
            return cls(spatial=0.0, identity_spatial=0.0, frequency=0.0, identity_frequency=0.0)
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESETS}")


# -- embedding heads -----------------------------------------------------------------


def _mlp_params(rng: np.random.Generator, prefix: str, widths: list[int], params: dict):
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}.fc{i}.w"] = Tensor(
            rng.normal(0.0, math.sqrt(1.0 / n_in), size=(n_out, n_in)), requires_grad=True
        )
        params[f"{prefix}.fc{i}.b"] = Tensor(np.zeros(n_out), requires_grad=True)


def _mlp_apply(params: dict, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    h = x
    for i in range(n_layers):
        h = dense(h, params[f"{prefix}.fc{i}.w"], params[f"{prefix}.fc{i}.b"])
        if i < n_layers - 1:
            h = relu(h)
    return h


class ProjectionHeads:
    """One three-layer MLP per encoder tap, embedding pixel features."""

    def __init__(self, tap_channels: list[int], rng: np.random.Generator,
                 width: int = 256, out_dim: int = 256):
        self.tap_channels = list(tap_channels)
        self.width = width
        self.out_dim = out_dim
        self.params: dict[str, Tensor] = {}
        for m, c in enumerate(self.tap_channels):
            _mlp_params(rng, f"head{m}", [c, width, width, out_dim], self.params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def embed(self, m: int, features: Tensor) -> Tensor:
        """Embed an (N, C_m) feature batch onto the unit sphere in R^out_dim."""
        out = _mlp_apply(self.params, f"head{m}", features, 3)
        return l2_normalize(out, axis=-1)


class FreqHead:
    """Shared three-layer MLP over flattened [Re; Im] FFT coefficients."""

    def __init__(self, channels: int, patch_size: int, rng: np.random.Generator,
                 hidden: int = 1024, out_dim: int = 256):
        self.channels = channels
        self.patch_size = patch_size
        self.input_dim = 2 * patch_size * patch_size * channels
        self.params: dict[str, Tensor] = {}
        _mlp_params(rng, "freq", [self.input_dim, hidden, hidden, out_dim], self.params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def embed(self, coefficients: Tensor) -> Tensor:
        """Embed an (N, input_dim) coefficient batch onto the unit sphere."""
        out = _mlp_apply(self.params, "freq", coefficients, 3)
        return l2_normalize(out, axis=-1)


# -- sampling plans -------------------------------------------------------------------


@dataclass
class SpatialSampleSet:
    """Per-tap pixel locations, shared by the query and source passes."""

    locations: list[tuple[np.ndarray, np.ndarray]]
    n_samples: int

    @classmethod
    def draw(cls, tap_shapes: list[tuple], n_samples: int, rng: np.random.Generator):
        locations = []
        for shape in tap_shapes:
            _, h, w = shape
            if n_samples > h * w:
                raise SamplingError(
                    f"cannot draw {n_samples} unique locations from a {h}x{w} tap"
                )
            flat = rng.choice(h * w, size=n_samples, replace=False)
            locations.append((flat // w, flat % w))
        return cls(locations=locations, n_samples=n_samples)


@dataclass
class FreqPatchSet:
    """Patch origins on the image grid, shared by the query and source passes."""

    origins: np.ndarray  # (N, 2) top-left corners
    patch_size: int

    @classmethod
    def draw(cls, image_shape: tuple, n_patches: int, patch_size: int,
             rng: np.random.Generator):
        _, h, w = image_shape
        rows = h - patch_size + 1
        cols = w - patch_size + 1
        if rows < 1 or cols < 1:
            raise SamplingError(f"patch {patch_size} does not fit a {h}x{w} image")
        if n_patches > rows * cols:
            raise SamplingError(
                f"cannot draw {n_patches} unique origins from a {rows}x{cols} grid"
            )
        flat = rng.choice(rows * cols, size=n_patches, replace=False)
        origins = np.stack([flat // cols, flat % cols], axis=1)
        return cls(origins=origins, patch_size=patch_size)


def draw_sample_plan(generator: Generator, image_shape: tuple, n_spatial: int,
                     n_freq: int, freq_patch: int, rng: np.random.Generator):
    """Draw the per-step spatial and frequency sampling plans."""
    c, h, w = image_shape
    cfg = generator.config
    widths = cfg.tap_channel_widths()
    sizes = {
        "input": (h, w), "stem": (h, w),
        "down1": (h // 2, w // 2), "down2": (h // 4, w // 4),
    }
    for i in range(1, 5):
        sizes[f"res{i}"] = (h // 4, w // 4)
    from .networks import TAP_STAGES

    tap_shapes = [
        (widths[j],) + sizes[TAP_STAGES[i]]
        for j, i in enumerate(cfg.feature_tap_indices)
    ]
    samples = SpatialSampleSet.draw(tap_shapes, n_spatial, rng)
    patches = FreqPatchSet.draw(image_shape, n_freq, freq_patch, rng)
    return samples, patches


# -- contrastive losses ---------------------------------------------------------------


def info_nce(f_q: Tensor, f_p: Tensor, f_n: Tensor, temperature: float) -> Tensor:
    """Contrastive loss for one query against one positive and K negatives.

    f_q, f_p: (d,) unit vectors; f_n: (d, K) unit columns.  Computed as
    logsumexp over the K+1 similarities minus the positive similarity.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    pos = sum_(mul(f_q, f_p))
    negs = reshape(matmul(transpose(f_n), reshape(f_q, (f_q.shape[0], 1))), (f_n.shape[1],))
    logits = mul(concat([reshape(pos, (1,)), negs], axis=0), 1.0 / temperature)
    return logsumexp(logits, axis=0) - mul(pos, 1.0 / temperature)


def _nce_grid(queries: Tensor, references: Tensor, temperature: float) -> Tensor:
    """Mean contrastive loss over N aligned query/reference rows.

    Row i of the similarity grid scores query i against every reference;
    the diagonal entry is the positive, the off-diagonal ones the K = N-1
    negatives.
    """
    sims = mul(matmul(queries, transpose(references)), 1.0 / temperature)
    lse = logsumexp(sims, axis=1)
    return mean(lse - diagonal(sims))


def spatial_contrastive(generator: Generator, heads: ProjectionHeads,
                        source_img: Tensor, generated_img: Tensor,
                        samples: SpatialSampleSet, temperature: float) -> Tensor:
    """Pixel-level contrastive loss across the encoder taps.

    Queries come from re-encoding the generated image; positives and
    negatives from encoding the source, at the same sampled locations.
    """
    taps_q = encoder_features(generator, generated_img)
    taps_p = encoder_features(generator, source_img)
    total = None
    for m, (tq, tp) in enumerate(zip(taps_q, taps_p)):
        rows, cols = samples.locations[m]
        if rows.max() >= tq.shape[1] or cols.max() >= tq.shape[2]:
            raise SamplingError(
                f"sample locations exceed tap {m} extent {tq.shape[1:]}"
            )
        e_q = heads.embed(m, gather_pixels(tq, rows, cols))
        e_p = heads.embed(m, gather_pixels(tp, rows, cols))
        term = _nce_grid(e_q, e_p, temperature)
        total = term if total is None else total + term
    return mul(total, 1.0 / len(taps_q))


def _patch_spectra(image: Tensor, patches: FreqPatchSet) -> Tensor:
    """FFT every sampled patch and flatten to rows of [Re; Im] coefficients."""
    c = image.shape[0]
    p = patches.patch_size
    crops = [crop(image, int(r), int(co), p, p) for r, co in patches.origins]
    stacked = concat([reshape(cr, (1, c, p, p)) for cr in crops], axis=0)
    spectrum = fft2d(reshape(stacked, (len(crops) * c, p, p)))
    re = reshape(spectrum.re, (len(crops), c * p * p))
    im = reshape(spectrum.im, (len(crops), c * p * p))
    return concat([re, im], axis=1)


def freq_contrastive(freq_head: FreqHead, source_img: Tensor, generated_img: Tensor,
                     patches: FreqPatchSet, temperature: float) -> Tensor:
    """Patch-level contrastive loss on FFT coefficients of co-located patches."""
    e_q = freq_head.embed(_patch_spectra(generated_img, patches))
    e_p = freq_head.embed(_patch_spectra(source_img, patches))
    return _nce_grid(e_q, e_p, temperature)


def identity_losses(generator: Generator, heads: ProjectionHeads, freq_head: FreqHead | None,
                    target_img: Tensor, samples: SpatialSampleSet,
                    patches: FreqPatchSet | None, temperature: float):
    """Contrastive terms evaluated with a target-domain image as the source.

    Feeds the target image through the generator and asks the result to
    stay feature-aligned with its input, so already-high-quality images
    undergo limited alteration.
    """
    regenerated, _ = generator.forward(target_img)
    id_spatial = spatial_contrastive(
        generator, heads, target_img, regenerated, samples, temperature
    )
    id_freq = None
    if freq_head is not None:
        if patches is None:
            raise ConfigurationError("identity frequency loss needs a patch plan")
        id_freq = freq_contrastive(freq_head, target_img, regenerated, patches, temperature)
    return id_spatial, id_freq


# -- adversarial / cycle ----------------------------------------------------------------


def adversarial_loss(real_logits: Tensor | None, fake_logits: Tensor, role: str,
                     flavor: str = "least_squares") -> Tensor:
    """GAN objective over patch-logit grids, averaged over all logits."""
    if flavor not in GAN_FLAVORS:
        raise ParameterError(f"unknown gan flavor {flavor!r}")
    if role not in ("generator", "discriminator"):
        raise ParameterError(f"role must be generator or discriminator, got {role!r}")
    if role == "discriminator" and real_logits is None:
        raise ParameterError("discriminator loss needs real logits")
    if flavor == "least_squares":
        if role == "discriminator":
            return mean((real_logits - 1.0) ** 2) + mean(fake_logits**2)
        return mean((fake_logits - 1.0) ** 2)
    if role == "discriminator":
        return mean(softplus(-real_logits)) + mean(softplus(fake_logits))
    return mean(softplus(-fake_logits))


def cycle_consistency_loss(real_low: Tensor, real_high: Tensor,
                           forward_gen, inverse_gen) -> Tensor:
    """Mean-per-element L1 of both reconstruction cycles.

    forward_gen maps low->high, inverse_gen maps high->low; each cycle
    pushes an image through both and compares with the original.
    """
    rec_low = inverse_gen(forward_gen(real_low))
    rec_high = forward_gen(inverse_gen(real_high))
    return mean(abs_(real_low - rec_low)) + mean(abs_(real_high - rec_high))


# -- composition --------------------------------------------------------------------------


@dataclass
class LossReport:
    """Raw per-term values for one step; None marks an inactive term."""

    step: int = 0
    adversarial_g: float | None = None
    adversarial_d: float | None = None
    spatial: float | None = None
    identity_spatial: float | None = None
    frequency: float | None = None
    identity_frequency: float | None = None
    total: float | None = None

    CSV_HEADER = "step,L_A_G,L_A_D,L_Spatial,L_IDSpatial,L_Freq,L_IDFreq,total"
    INACTIVE = "-"

    def csv_row(self) -> str:
        def fmt(v):
            return self.INACTIVE if v is None else f"{v:.8g}"

        return ",".join([
            str(self.step), fmt(self.adversarial_g), fmt(self.adversarial_d),
            fmt(self.spatial), fmt(self.identity_spatial), fmt(self.frequency),
            fmt(self.identity_frequency), fmt(self.total),
        ])


def total_objective(adversarial_g: Tensor, weights: LossWeights,
                    spatial: Tensor | None = None, identity_spatial: Tensor | None = None,
                    frequency: Tensor | None = None, identity_frequency: Tensor | None = None):
    """Weighted generator objective plus a per-term report skeleton.

    Terms with zero weight may be omitted; a missing term with a nonzero
    weight is a configuration error.
    """
    total = adversarial_g
    report = LossReport(adversarial_g=float(adversarial_g.data))
    for name, term, weight in (
        ("spatial", spatial, weights.spatial),
        ("identity_spatial", identity_spatial, weights.identity_spatial),
        ("frequency", frequency, weights.frequency),
        ("identity_frequency", identity_frequency, weights.identity_frequency),
    ):
        if weight > 0 and term is None:
            raise ConfigurationError(f"loss term {name} required (weight {weight}) but missing")
        if term is not None:
            total = total + mul(term, weight)
            setattr(report, name, float(term.data))
    report.total = float(total.data)
    return total, report
