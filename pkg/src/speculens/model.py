"""Spatial-temporal transformer generator, discriminator, and losses.

The generator fills masked regions of a frame window by attending over
patches drawn from every frame in the window at once: an encoder shrinks
frames 4x, a stack of transformer layers lets each feature patch copy
appearance from any valid patch in any frame, and a decoder upsamples back
to pixels.  Masked softmax keeps fully-missing patches out of the key set.
Losses are the usual pair of normalized L1 terms over hole and valid
pixels plus a hinge adversarial term from a small 3-d conv discriminator.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, ParameterError
from .tensor import Tensor


@dataclass(frozen=True)
class SamplingConfig:
    """Temporal window shape: t±n neighbors plus every s-th frame."""

    neighbor_radius: int = 2
    distant_stride: int = 4

    def __post_init__(self):
        if self.neighbor_radius < 0:
            raise ParameterError(
                f"neighbor_radius must be >= 0, got {self.neighbor_radius}"
            )
        if self.distant_stride < 1:
            raise ParameterError(
                f"distant_stride must be >= 1, got {self.distant_stride}"
            )


@dataclass(frozen=True)
class LossWeights:
    lambda_hole: float = 1.0
    lambda_valid: float = 1.0
    lambda_adv: float = 0.01

    def __post_init__(self):
        if min(self.lambda_hole, self.lambda_valid, self.lambda_adv) < 0:
            raise ParameterError("loss weights must be nonnegative")


@dataclass(frozen=True)
class ModelConfig:
    """Generator geometry.  Defaults are the full-size network; tests and
    the overfit/gradcheck paths shrink everything through this one knob."""

    frame_size: int = 288
    enc_widths: tuple = (64, 128)
    channels: int = 128
    layers: int = 8
    heads: tuple = ((36, 36), (18, 18), (9, 9), (6, 6))
    disc_widths: tuple = (32, 64, 128)

    def __post_init__(self):
        if self.frame_size < 4 or self.frame_size % 4 != 0:
            raise ConfigError(
                f"frame_size must be a positive multiple of 4, got {self.frame_size}"
            )
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if len(self.enc_widths) != 2 or min(self.enc_widths) < 1:
            raise ConfigError(f"enc_widths must be two positive ints, got {self.enc_widths}")
        if not self.heads:
            raise ConfigError("at least one attention head is required")
        if self.channels % len(self.heads) != 0:
            raise ConfigError(
                f"channels ({self.channels}) not divisible by head count "
                f"({len(self.heads)})"
            )
        fs = self.feature_size
        for r1, r2 in self.heads:
            if r1 < 1 or r2 < 1 or fs % r1 != 0 or fs % r2 != 0:
                raise ConfigError(
                    f"head patch ({r1}, {r2}) must divide the {fs}x{fs} feature map"
                )

    @property
    def feature_size(self):
        return self.frame_size // 4

    def to_dict(self):
        return {
            "frame_size": self.frame_size,
            "enc_widths": list(self.enc_widths),
            "channels": self.channels,
            "layers": self.layers,
            "heads": [list(h) for h in self.heads],
            "disc_widths": list(self.disc_widths),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            frame_size=int(d["frame_size"]),
            enc_widths=tuple(d["enc_widths"]),
            channels=int(d["channels"]),
            layers=int(d["layers"]),
            heads=tuple(tuple(h) for h in d["heads"]),
            disc_widths=tuple(d["disc_widths"]),
        )


def window_indices(n_frames, t_center, sampling, single_frame_mode=False):
    """Frame indices a generator pass looks at, 0-based and sorted.

    Neighbors t±n are clamped into range (running off an end duplicates the
    boundary frame, then deduplication collapses it); distant frames are
    every s-th frame from the start.  Single-frame mode is just {t_center}.
    """
    if n_frames < 1:
        raise ParameterError(f"need at least one frame, got {n_frames}")
    if not 0 <= t_center < n_frames:
        raise ParameterError(
            f"t_center {t_center} outside sequence of {n_frames} frames"
        )
    if single_frame_mode:
        return [t_center]
    n = sampling.neighbor_radius
    near = {min(max(t_center + k, 0), n_frames - 1) for k in range(-n, n + 1)}
    far = set(range(0, n_frames, sampling.distant_stride))
    return sorted(near | far)


def patch_validity(valid_px, r1, r2):
    """Collapse a per-feature-pixel validity map (K, hf, wf) to per-patch:
    a patch is valid when any of its pixels is."""
    k, hf, wf = valid_px.shape
    if hf % r1 != 0 or wf % r2 != 0:
        raise DimensionError(
            f"patch ({r1}, {r2}) does not divide feature map ({hf}, {wf})"
        )
    blocks = valid_px.reshape(k, hf // r1, r1, wf // r2, r2)
    return blocks.max(axis=(2, 4)).reshape(-1) > 0.5


def head_attention(
    feats, valid_px, patch_r1, patch_r2, wq, bq, wk, bk, wv, bv, return_weights=False
):
    """One attention head over the joint patch set of all frames.

    feats: (K, c, hf, wf) feature slice for this head; valid_px: numpy
    (K, hf, wf) with 1 where at least one covered input pixel was valid.
    q/k/v come from 1x1 convs; similarity is scaled by sqrt(r1*r2*c);
    invalid patches are removed from the key set by -inf masking, so a
    query facing zero valid keys yields an exact zero output.
    """
    k_frames, c, hf, wf = feats.shape
    q = T.conv2d(feats, wq, bq)
    k = T.conv2d(feats, wk, bk)
    v = T.conv2d(feats, wv, bv)
    d = patch_r1 * patch_r2 * c
    n_patches = (hf // patch_r1) * (wf // patch_r2)
    total = k_frames * n_patches

    def flat_patches(x):
        return T.patch_extract(x, patch_r1, patch_r2).reshape(total, d)

    pq, pk, pv = flat_patches(q), flat_patches(k), flat_patches(v)
    scores = (pq @ T.transpose(pk, (1, 0))) * (1.0 / math.sqrt(d))
    key_ok = patch_validity(valid_px, patch_r1, patch_r2)
    bias = np.where(key_ok, 0.0, -np.inf)[None, :].astype(scores.dtype)
    alpha = T.softmax(scores + Tensor(bias), axis=1)
    out = (alpha @ pv).reshape(k_frames, n_patches, d)
    folded = T.patch_fold(out, patch_r1, patch_r2, hf, wf)
    if return_weights:
        return folded, alpha
    return folded


def composite(frames, masks, predicted):
    """Valid pixels from the input, holes from the prediction."""
    frames = np.asarray(frames)
    masks = np.asarray(masks)
    predicted = np.asarray(predicted)
    if frames.shape != predicted.shape:
        raise DimensionError(
            f"frames {frames.shape} vs prediction {predicted.shape}"
        )
    return masks * predicted + (1.0 - masks) * frames


# -- losses ---------------------------------------------------------------


def loss_hole(target, predicted, mask):
    """Mean absolute error over hole pixels: |M(Y-Yhat)| / ||M||.

    The mask broadcasts over channels and the denominator counts it once
    per channel, so a constant error of 0.2 scores exactly 0.2.  An empty
    mask is defined as loss 0.
    """
    m = np.asarray(mask)
    denom = float(m.sum()) * target.shape[-3]
    if denom == 0.0:
        return T.as_tensor(0.0)
    diff = T.tabs(predicted - T.as_tensor(target))
    return (T.as_tensor(m) * diff).sum() * (1.0 / denom)


def loss_valid(target, predicted, mask):
    """Same as loss_hole on the complement of the mask."""
    return loss_hole(target, predicted, 1.0 - np.asarray(mask))


def loss_adv_generator(d_fake):
    """Generator wants the discriminator score up: -mean D(fake)."""
    return -d_fake.mean()


def loss_discriminator(d_real, d_fake):
    """Hinge: mean relu(1 - D(real)) + mean relu(1 + D(fake))."""
    return T.relu(1.0 - d_real).mean() + T.relu(1.0 + d_fake).mean()


def total_loss(parts, weights=LossWeights()):
    """parts = (hole, valid, adversarial), combined with the lambdas."""
    h, v, a = parts
    return weights.lambda_hole * h + weights.lambda_valid * v + weights.lambda_adv * a


# -- parameter containers -------------------------------------------------


def _conv_init(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:]))
    std = math.sqrt(2.0 / fan_in)
    return Tensor(
        (rng.standard_normal(shape) * std).astype(dtype), requires_grad=True
    )


def _zeros_init(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Generator:
    """Holds the generator parameters and runs the forward pass."""

    def __init__(self, config=ModelConfig(), rng=None, dtype=None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = dtype or T.get_default_dtype()
        w1, w2 = config.enc_widths
        c = config.channels
        ch = c // len(config.heads)
        p = {}
        p["enc.c1.w"] = _conv_init(rng, (w1, 4, 3, 3), dt)
        p["enc.c1.b"] = _zeros_init((w1,), dt)
        p["enc.c2.w"] = _conv_init(rng, (w2, w1, 3, 3), dt)
        p["enc.c2.b"] = _zeros_init((w2,), dt)
        p["enc.c3.w"] = _conv_init(rng, (c, w2, 3, 3), dt)
        p["enc.c3.b"] = _zeros_init((c,), dt)
        for li in range(config.layers):
            for hi in range(len(config.heads)):
                for name in ("q", "k", "v"):
                    p[f"l{li}.h{hi}.{name}.w"] = _conv_init(rng, (ch, ch, 1, 1), dt)
                    p[f"l{li}.h{hi}.{name}.b"] = _zeros_init((ch,), dt)
            p[f"l{li}.mix.w"] = _conv_init(rng, (c, c, 1, 1), dt)
            p[f"l{li}.mix.b"] = _zeros_init((c,), dt)
            p[f"l{li}.res1.w"] = _conv_init(rng, (c, c, 3, 3), dt)
            p[f"l{li}.res1.b"] = _zeros_init((c,), dt)
            p[f"l{li}.res2.w"] = _conv_init(rng, (c, c, 3, 3), dt)
            p[f"l{li}.res2.b"] = _zeros_init((c,), dt)
        p["dec.c1.w"] = _conv_init(rng, (w1, c, 3, 3), dt)
        p["dec.c1.b"] = _zeros_init((w1,), dt)
        p["dec.c2.w"] = _conv_init(rng, (3, w1, 3, 3), dt)
        p["dec.c2.b"] = _zeros_init((3,), dt)
        self.params = p

    # -- weight I/O --

    def state(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state):
        for name, t in self.params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing generator tensor '{name}'")
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"tensor '{name}' has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)

    # -- forward pieces --

    def encode(self, x):
        """(K, 4, H, W) masked frames + mask channel -> (K, c, H/4, W/4)."""
        if x.ndim != 4 or x.shape[1] != 4:
            raise DimensionError(
                f"encoder input must be (K, 4, H, W), got {x.shape}"
            )
        if x.shape[2] != self.config.frame_size or x.shape[3] != self.config.frame_size:
            raise DimensionError(
                f"encoder expects {self.config.frame_size}px frames, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )
        p = self.params
        h = T.leaky_relu(T.conv2d(x, p["enc.c1.w"], p["enc.c1.b"], stride=2, padding=1), 0.2)
        h = T.leaky_relu(T.conv2d(h, p["enc.c2.w"], p["enc.c2.b"], stride=2, padding=1), 0.2)
        h = T.leaky_relu(T.conv2d(h, p["enc.c3.w"], p["enc.c3.b"], stride=1, padding=1), 0.2)
        return h

    def transformer_layer(self, feats, valid_px, layer_index):
        """Per-head attention on channel slices, concat, 1x1 mix, then a
        skip-connected conv pair."""
        cfg = self.config
        p = self.params
        ch = cfg.channels // len(cfg.heads)
        attended = []
        for hi, (r1, r2) in enumerate(cfg.heads):
            pre = f"l{layer_index}.h{hi}"
            feat_slice = T.narrow(feats, 1, hi * ch, ch)
            attended.append(
                head_attention(
                    feat_slice, valid_px, r1, r2,
                    p[f"{pre}.q.w"], p[f"{pre}.q.b"],
                    p[f"{pre}.k.w"], p[f"{pre}.k.b"],
                    p[f"{pre}.v.w"], p[f"{pre}.v.b"],
                )
            )
        mixed = T.conv2d(
            T.concat(attended, axis=1),
            p[f"l{layer_index}.mix.w"], p[f"l{layer_index}.mix.b"],
        )
        h = feats + mixed
        r = T.leaky_relu(
            T.conv2d(h, p[f"l{layer_index}.res1.w"], p[f"l{layer_index}.res1.b"], padding=1),
            0.2,
        )
        r = T.conv2d(r, p[f"l{layer_index}.res2.w"], p[f"l{layer_index}.res2.b"], padding=1)
        return h + r

    def decode(self, feats):
        p = self.params
        h = T.upsample_nearest(feats, 2)
        h = T.leaky_relu(T.conv2d(h, p["dec.c1.w"], p["dec.c1.b"], padding=1), 0.2)
        h = T.upsample_nearest(h, 2)
        h = T.conv2d(h, p["dec.c2.w"], p["dec.c2.b"], padding=1)
        return (T.tanh(h) + 1.0) * 0.5

    def forward(self, frames, masks):
        """Inpaint one frame window.

        frames: (K, 3, H, W) in [0,1]; masks: (K, 1, H, W) in {0,1} with 1
        marking holes.  Returns a (K, 3, H, W) tensor in [0,1].  Validity
        is re-derived at feature scale: a feature pixel counts as valid if
        any input pixel under it is valid.
        """
        frames = np.asarray(frames)
        masks = np.asarray(masks)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise DimensionError(f"frames must be (K, 3, H, W), got {frames.shape}")
        if masks.shape != (frames.shape[0], 1) + frames.shape[2:]:
            raise DimensionError(
                f"masks must be (K, 1, H, W) matching frames, got {masks.shape}"
            )
        dt = self.params["enc.c1.w"].dtype
        frames = frames.astype(dt, copy=False)
        masks = masks.astype(dt, copy=False)
        x = Tensor(np.concatenate([frames * (1.0 - masks), masks], axis=1))
        feats = self.encode(x)
        k, _, hf, wf = feats.shape
        factor = frames.shape[2] // hf
        valid = 1.0 - masks[:, 0]
        valid_px = valid.reshape(k, hf, factor, wf, factor).max(axis=(2, 4))
        for li in range(self.config.layers):
            feats = self.transformer_layer(feats, valid_px, li)
        return self.decode(feats)

    def generator_forward(
        self, frames, masks, sampling, t_center, single_frame_mode=False
    ):
        """Pick the frame window for t_center, inpaint it.

        Returns (indices, predicted) where predicted covers exactly the
        windowed frames in index order.
        """
        idx = window_indices(
            len(frames), t_center, sampling, single_frame_mode=single_frame_mode
        )
        frames = np.asarray(frames)
        masks = np.asarray(masks)
        return idx, self.forward(frames[idx], masks[idx])


class Discriminator:
    """3-d conv stack scoring a frame sequence; outputs a raw score map."""

    def __init__(self, config=ModelConfig(), rng=None, dtype=None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(1)
        dt = dtype or T.get_default_dtype()
        p = {}
        prev = 3
        for i, width in enumerate(config.disc_widths):
            p[f"d{i}.w"] = _conv_init(rng, (width, prev, 3, 3, 3), dt)
            p[f"d{i}.b"] = _zeros_init((width,), dt)
            prev = width
        p["out.w"] = _conv_init(rng, (1, prev, 3, 3, 3), dt)
        p["out.b"] = _zeros_init((1,), dt)
        self.params = p

    def state(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state):
        for name, t in self.params.items():
            if name not in state:
                raise ConfigError(f"checkpoint is missing discriminator tensor '{name}'")
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"tensor '{name}' has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype, copy=True)

    def forward(self, frames):
        """frames: (K, 3, H, W) or Tensor -> score map over the sequence."""
        if isinstance(frames, Tensor):
            x = frames
        else:
            x = Tensor(np.asarray(frames, dtype=self.params["d0.w"].dtype))
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(
                f"discriminator input must be (K, 3, H, W), got {x.shape}"
            )
        # (K, 3, H, W) -> (1, 3, K, H, W): frames become the depth axis.
        h = T.transpose(x, (1, 0, 2, 3)).reshape(
            (1, 3, x.shape[0], x.shape[2], x.shape[3])
        )
        p = self.params
        for i in range(len(self.config.disc_widths)):
            h = T.conv3d(
                h, p[f"d{i}.w"], p[f"d{i}.b"], stride=(1, 2, 2), padding=(1, 1, 1)
            )
            h = T.leaky_relu(h, 0.2)
        return T.conv3d(h, p["out.w"], p["out.b"], stride=1, padding=(1, 1, 1))
