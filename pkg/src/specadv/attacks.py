"""Iterative gradient-sign attacks and their augmentations.

The core loop is shared: per iteration an input pipeline produces one or
more variants of the current adversarial image, gradients are averaged
over the variants, optionally smoothed and accumulated with momentum,
and the signed step is clipped to the epsilon ball and valid range.

Augmentations compose as: input diversity first, then frequency-domain
transform draws, then scale copies; translation smoothing applies to the
averaged gradient; momentum runs last, just before sign().
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import models
from .models import Model
from .spectral import (
    SpectrumTransformParams,
    apply_spectrum_mask,
    spectrum_transform_with_mask,
)

AUGMENTATIONS = ("mi", "di", "ti", "si", "s2i")

# purpose tags for derived random streams
_STREAM_SPECTRUM = 0
_STREAM_DI = 1


def sub_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (purpose, image, iteration, draw) slot."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass(frozen=True)
class AttackConfig:
    """Knobs of the FGSM family; epsilon/alpha in normalized [0, 1] units."""

    epsilon: float
    iterations: int
    alpha: float | None = None  # defaults to epsilon / iterations
    momentum: float = 1.0
    di_probability: float = 0.5
    ti_kernel_length: int = 7
    si_copies: int = 5
    spectrum: SpectrumTransformParams | None = None
    augmentations: frozenset = field(default_factory=frozenset)
    # False: use the gradient evaluated at the transformed point as-is.
    # True: additionally push it back through the frozen linear transform.
    grad_through_transform: bool = False

    def __post_init__(self):
        # epsilon == 0 is allowed: a null budget must yield a null attack
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.alpha is not None:
            if self.alpha < 0:
                raise ValueError(f"alpha must be >= 0, got {self.alpha}")
            if self.alpha > self.epsilon:
                raise ValueError(
                    f"alpha {self.alpha} exceeds the budget epsilon {self.epsilon}"
                )
        if self.momentum < 0:
            raise ValueError(f"momentum decay must be >= 0, got {self.momentum}")
        if not 0.0 <= self.di_probability <= 1.0:
            raise ValueError(f"di_probability must lie in [0, 1], got {self.di_probability}")
        if self.ti_kernel_length < 1 or self.ti_kernel_length % 2 == 0:
            raise ValueError(f"ti_kernel_length must be odd, got {self.ti_kernel_length}")
        if self.si_copies < 1:
            raise ValueError(f"si_copies must be >= 1, got {self.si_copies}")
        object.__setattr__(self, "augmentations", frozenset(self.augmentations))
        unknown = set(self.augmentations) - set(AUGMENTATIONS)
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}")
        if "s2i" in self.augmentations and self.spectrum is None:
            raise ValueError("the frequency augmentation needs spectrum params")

    @property
    def step(self) -> float:
        return self.epsilon / self.iterations if self.alpha is None else self.alpha


@dataclass
class AdversarialResult:
    """One crafted example: the image, its perturbation, and diagnostics."""

    x_adv: np.ndarray
    delta: np.ndarray
    loss_trace: np.ndarray  # mean loss over the iteration's variants
    success: bool  # substitute model fooled


class Ensemble:
    """Weighted collection of models attacked through a joint loss."""

    def __init__(self, members: list[Model], weights):
        weights = np.asarray(weights, dtype=np.float64)
        if len(members) != weights.size or len(members) == 0:
            raise ValueError("need one weight per model")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"ensemble weights must sum to 1, got {weights.sum()!r}")
        shapes = {m.input_shape for m in members}
        classes = {m.n_classes for m in members}
        if len(shapes) != 1 or len(classes) != 1:
            raise ValueError("ensemble members must share input shape and class count")
        self.members = list(members)
        self.weights = weights
        self.input_shape = members[0].input_shape
        self.n_classes = members[0].n_classes

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Weighted average of member softmax outputs."""
        single = np.asarray(x).shape == self.input_shape
        batch = x[None] if single else np.asarray(x, dtype=np.float64)
        probs = 0.0
        for m, w in zip(self.members, self.weights):
            probs = probs + w * _softmax(models.predict(m, batch))
        return probs[0] if single else probs


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ensemble_loss(ensemble: Ensemble, x: np.ndarray, y: int) -> float:
    """Weighted sum of per-model cross-entropy losses for one image."""
    loss, _ = ensemble_loss_and_grad(ensemble, x, y)
    return loss


def ensemble_loss_and_grad(
    ensemble: Ensemble, x: np.ndarray, y: int
) -> tuple[float, np.ndarray]:
    """Joint loss and its input gradient, summed over all members."""
    losses, grads = _batch_loss_and_grads(ensemble, x[None], np.array([y]))
    return float(losses[0]), grads[0]


def _batch_loss_and_grads(substitute, images, labels):
    """Per-example losses and input grads for a Model or an Ensemble."""
    if isinstance(substitute, Ensemble):
        losses, grads = 0.0, 0.0
        for m, w in zip(substitute.members, substitute.weights):
            l_m, g_m = models.batch_loss_and_input_grads(m, images, labels)
            losses = losses + w * l_m
            grads = grads + w * g_m
        return losses, grads
    return models.batch_loss_and_input_grads(substitute, images, labels)


def _predict_batch(substitute, images):
    if isinstance(substitute, Ensemble):
        return substitute.predict(images)
    return models.predict(substitute, images)


# ---- single-op building blocks ---------------------------------------------


def clip_to_ball(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Project onto the epsilon-ball around x, then onto the [0, 1] range."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_adv.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_adv.shape} vs {x.shape}")
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def momentum_update(g_accum: np.ndarray, g: np.ndarray, mu: float) -> np.ndarray:
    """Accumulate an L1-normalized gradient; the zero gradient contributes 0."""
    norm = np.abs(g).sum()
    term = g / norm if norm > 0 else np.zeros_like(g)
    return mu * g_accum + term


def _resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w, _ = img.shape
    rows = (np.arange(out_h) * h // out_h).astype(int)
    cols = (np.arange(out_w) * w // out_w).astype(int)
    return img[rows][:, cols]


def di_transform(x: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Random resize-and-pad applied with probability p; identity otherwise.

    Draw order is fixed: apply?, new height, new width, pad top, pad left.
    """
    x = np.asarray(x, dtype=np.float64)
    if p <= 0 or rng.uniform() >= p:
        return x
    h, w, _ = x.shape
    pad_h, pad_w = max(round(1.1 * h), h + 1), max(round(1.1 * w), w + 1)
    new_h = int(rng.integers(h, pad_h))
    new_w = int(rng.integers(w, pad_w))
    top = int(rng.integers(0, pad_h - new_h + 1))
    left = int(rng.integers(0, pad_w - new_w + 1))
    resized = _resize_nearest(x, new_h, new_w)
    canvas = np.zeros((pad_h, pad_w, x.shape[2]))
    canvas[top : top + new_h, left : left + new_w] = resized
    return _resize_nearest(canvas, h, w)


def pyramid_kernel(k: int) -> np.ndarray:
    """Normalized k x k linear (triangle) kernel; entries sum to 1."""
    w = (k + 1) / 2 - np.abs(np.arange(k) - (k - 1) / 2)
    kern = np.outer(w, w)
    return kern / kern.sum()


def ti_smooth(grad: np.ndarray, k: int) -> np.ndarray:
    """Smooth a gradient with `pyramid_kernel(k)`, same zero padding."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel length must be odd and positive, got {k}")
    grad = np.asarray(grad, dtype=np.float64)
    if k == 1:
        return grad.copy()
    single = grad.ndim == 3
    g = grad[None] if single else grad
    w1 = (k + 1) / 2 - np.abs(np.arange(k) - (k - 1) / 2)
    w1 = w1 / w1.sum()
    # the pyramid kernel is separable: filter rows then columns
    out = _correlate_axis(g, w1, axis=1)
    out = _correlate_axis(out, w1, axis=2)
    return out[0] if single else out


def _correlate_axis(arr: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    k = weights.size
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (k // 2, k // 2)
    padded = np.pad(arr, pad)
    win = np.lib.stride_tricks.sliding_window_view(padded, k, axis=axis)
    return np.einsum("...k,k->...", win, weights)


def si_average_grad(substitute, x: np.ndarray, y: int, m1: int) -> np.ndarray:
    """Mean input gradient over m1 halvings of the image intensity."""
    if m1 < 1:
        raise ValueError(f"si copies must be >= 1, got {m1}")
    x = np.asarray(x, dtype=np.float64)
    scales = np.stack([x / 2.0**i for i in range(m1)])
    _, grads = _batch_loss_and_grads(substitute, scales, np.full(m1, y))
    return grads.mean(axis=0)


# ---- the shared attack engine ----------------------------------------------


def _iteration_variants(x_img, config, master_seed, image_key, t):
    """Transformed copies of one image for one iteration, plus their masks."""
    x_in = x_img
    if "di" in config.augmentations:
        rng = sub_rng(master_seed, _STREAM_DI, image_key, t)
        x_in = di_transform(x_in, config.di_probability, rng)
    variants, masks = [], []
    if "s2i" in config.augmentations:
        for j in range(config.spectrum.n_transforms):
            rng = sub_rng(master_seed, _STREAM_SPECTRUM, image_key, t, j)
            tx, mask = spectrum_transform_with_mask(x_in, config.spectrum, rng)
            variants.append(tx)
            masks.append(mask)
    else:
        variants, masks = [x_in], [None]
    if "si" in config.augmentations:
        variants = [v / 2.0**i for v in variants for i in range(config.si_copies)]
        masks = [m for m in masks for _ in range(config.si_copies)]
    return variants, masks


def craft_batch(
    substitute,
    images: np.ndarray,
    labels: np.ndarray,
    config: AttackConfig,
    master_seed: int,
    image_keys=None,
) -> list[AdversarialResult]:
    """Craft adversarial examples for a batch of images.

    `image_keys` ties each image to a fixed random-stream key (defaults
    to its position) so results do not depend on how a dataset is split
    into batches.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    b = images.shape[0]
    if image_keys is None:
        image_keys = list(range(b))
    x0 = images.copy()
    x = images.copy()
    g_accum = np.zeros_like(x)
    traces = np.zeros((b, config.iterations))
    alpha = config.step
    for t in range(config.iterations):
        all_variants, all_masks, counts = [], [], []
        for i in range(b):
            variants, masks = _iteration_variants(
                x[i], config, master_seed, image_keys[i], t
            )
            all_variants.extend(variants)
            all_masks.extend(masks)
            counts.append(len(variants))
        stacked = np.stack(all_variants)
        rep_labels = np.repeat(labels, counts)
        losses, grads = _batch_loss_and_grads(substitute, stacked, rep_labels)
        if config.grad_through_transform and "s2i" in config.augmentations:
            block = config.spectrum.block_size
            for j, mask in enumerate(all_masks):
                if mask is not None:
                    grads[j] = apply_spectrum_mask(grads[j], mask, block)
        # per-image mean over that image's variants
        offsets = np.concatenate([[0], np.cumsum(counts)])
        g = np.stack(
            [grads[offsets[i] : offsets[i + 1]].mean(axis=0) for i in range(b)]
        )
        for i in range(b):
            traces[i, t] = losses[offsets[i] : offsets[i + 1]].mean()
        if "ti" in config.augmentations:
            g = ti_smooth(g, config.ti_kernel_length)
        if "mi" in config.augmentations:
            for i in range(b):
                g_accum[i] = momentum_update(g_accum[i], g[i], config.momentum)
            direction = g_accum
        else:
            direction = g
        x = clip_to_ball(x + alpha * np.sign(direction), x0, config.epsilon)
    preds = _predict_batch(substitute, x).argmax(axis=1)
    return [
        AdversarialResult(
            x_adv=x[i],
            delta=x[i] - x0[i],
            loss_trace=traces[i],
            success=bool(preds[i] != labels[i]),
        )
        for i in range(b)
    ]


def _craft_single(substitute, x, y, config, seed) -> AdversarialResult:
    return craft_batch(substitute, np.asarray(x)[None], np.array([y]), config, seed)[0]


def attack_ifgsm(substitute, x, y, config: AttackConfig, seed: int) -> AdversarialResult:
    """Plain iterative FGSM: all augmentations stripped from the config."""
    return _craft_single(substitute, x, y, replace(config, augmentations=frozenset()), seed)


def attack_s2i(substitute, x, y, config: AttackConfig, seed: int) -> AdversarialResult:
    """Frequency-augmented FGSM: gradients averaged over spectrum draws."""
    if config.spectrum is None:
        raise ValueError("the frequency augmentation needs spectrum params")
    return _craft_single(
        substitute, x, y, replace(config, augmentations=frozenset({"s2i"})), seed
    )


def compose(config: AttackConfig):
    """Attack procedure honoring exactly the augmentations in the config."""

    def attack(substitute, x, y, seed: int) -> AdversarialResult:
        return _craft_single(substitute, x, y, config, seed)

    return attack
