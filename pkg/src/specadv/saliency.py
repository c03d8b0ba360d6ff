"""Frequency-domain saliency maps and model-diversity diagnostics.

A spectrum saliency map is the gradient of the classification loss with
respect to the DCT coefficients of the input.  Because the image is a
linear function of its coefficients, the map equals the DCT of the plain
input-space gradient; both computation paths are provided and must
agree, which makes them each other's oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models, spectral
from .attacks import sub_rng, _STREAM_SPECTRUM
from .autodiff import Tape
from .spectral import SpectrumTransformParams


@dataclass
class SaliencyMap:
    """Per-channel gradient field with shape equal to the source image."""

    values: np.ndarray
    model_tag: str = ""
    reduction: str = "single"  # "single" | "averaged"


def spectrum_saliency(
    model, x: np.ndarray, y: int, method: str = "gradient-dct"
) -> SaliencyMap:
    """Gradient of the loss w.r.t. the full-image DCT coefficients of x.

    method "gradient-dct" transforms the input-space gradient;
    method "chain-rule" differentiates through an explicit inverse-DCT
    node on the tape.  The two must agree to round-off.
    """
    x = np.asarray(x, dtype=np.float64)
    if method == "gradient-dct":
        _, grad = models.loss_and_input_grad(model, x, y)
        values = spectral.dct2_channels(grad)
    elif method == "chain-rule":
        if not 0 <= y < model.n_classes:
            raise ValueError(f"label {y} outside [0, {model.n_classes})")
        tape = Tape()
        z = tape.leaf(spectral.dct2_channels(x))
        x_node = tape.linear(
            z, spectral.idct2_channels, spectral.dct2_channels, op="idct2"
        )
        batch = tape.reshape(x_node, (1, *x.shape))
        param_vars = [tape.leaf(p) for p in model.params]
        logits = models._forward(tape, model, batch, param_vars)
        loss = tape.softmax_cross_entropy(logits, np.array([y]), reduction="sum")
        tape.backward(loss)
        values = tape.grad(z)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SaliencyMap(values=values, model_tag=model.arch_id)


def spatial_saliency(model, x: np.ndarray, y: int) -> SaliencyMap:
    """Plain input-space gradient of the loss, no transform."""
    _, grad = models.loss_and_input_grad(model, np.asarray(x, dtype=np.float64), y)
    return SaliencyMap(values=grad, model_tag=model.arch_id)


def average_saliency(
    model,
    images: np.ndarray,
    labels,
    spectrum_params: SpectrumTransformParams | None = None,
    n_draws: int = 1,
    seed: int = 0,
) -> SaliencyMap:
    """Mean absolute spectrum saliency over images (and transform draws).

    When `spectrum_params` is given, each image contributes `n_draws`
    maps, each computed at an independently transformed input; draws are
    keyed by (image index, draw index) so the result is deterministic.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    labels = np.asarray(labels).reshape(-1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("need one label per image")
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    total = np.zeros(images.shape[1:])
    count = 0
    for i in range(images.shape[0]):
        if spectrum_params is None:
            total += np.abs(spectrum_saliency(model, images[i], int(labels[i])).values)
            count += 1
            continue
        for j in range(n_draws):
            rng = sub_rng(seed, _STREAM_SPECTRUM, i, 0, j)
            tx = spectral.spectrum_transform(images[i], spectrum_params, rng)
            total += np.abs(spectrum_saliency(model, tx, int(labels[i])).values)
            count += 1
    return SaliencyMap(values=total / count, model_tag=model.arch_id, reduction="averaged")


def saliency_cosine(map_a, map_b) -> float:
    """Cosine similarity of two flattened maps; zero maps are an error."""
    a = np.asarray(map_a.values if isinstance(map_a, SaliencyMap) else map_a).ravel()
    b = np.asarray(map_b.values if isinstance(map_b, SaliencyMap) else map_b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero-norm saliency map is undefined")
    return float(a @ b / (na * nb))


@dataclass
class DiversityReport:
    """How far transformed saliency maps drift from the base map."""

    base_map: SaliencyMap
    distances_from_base: np.ndarray  # one per draw
    pairwise_distances: np.ndarray  # empty when fewer than two draws

    @property
    def mean_distance_from_base(self) -> float:
        return float(self.distances_from_base.mean())

    @property
    def mean_pairwise_distance(self) -> float | None:
        if self.pairwise_distances.size == 0:
            return None
        return float(self.pairwise_distances.mean())


def proposition1_check(
    model,
    x: np.ndarray,
    y: int,
    spectrum_params: SpectrumTransformParams,
    n_draws: int,
    seed: int = 0,
) -> DiversityReport:
    """Measure the diversity of saliency maps under the random transform.

    Each draw's map is the exact derivative of the transformed-input loss
    w.r.t. the coefficients of x: the coefficient mask times the (block)
    DCT of the input gradient at the transformed point.  Distances are
    cosine distances (1 - cosine similarity).
    """
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    x = np.asarray(x, dtype=np.float64)
    block = spectrum_params.block_size

    def coefficient_grad(point):
        _, grad = models.loss_and_input_grad(model, point, y)
        return spectral.image_spectrum(grad, block).coefficients

    base = coefficient_grad(x)
    draws = []
    for j in range(n_draws):
        rng = sub_rng(seed, _STREAM_SPECTRUM, 0, 0, j)
        tx, mask = spectral.spectrum_transform_with_mask(x, spectrum_params, rng)
        draws.append(mask * coefficient_grad(tx))
    from_base = np.array([1.0 - saliency_cosine(base, d) for d in draws])
    pairwise = np.array(
        [
            1.0 - saliency_cosine(draws[i], draws[j])
            for i in range(n_draws)
            for j in range(i + 1, n_draws)
        ]
    )
    return DiversityReport(
        base_map=SaliencyMap(values=base, model_tag=model.arch_id),
        distances_from_base=from_base,
        pairwise_distances=pairwise,
    )


def export_pgm(saliency_map, path) -> None:
    """Write a map as a binary 8-bit PGM (P5), averaged over channels.

    Values are min-max normalized to 0..255; a constant map degenerates
    to mid-gray 128 by convention.
    """
    values = np.asarray(
        saliency_map.values if isinstance(saliency_map, SaliencyMap) else saliency_map,
        dtype=np.float64,
    )
    if values.ndim != 3:
        raise ValueError(f"expected an (H, W, C) map, got shape {values.shape}")
    plane = values.mean(axis=2)
    lo, hi = plane.min(), plane.max()
    if hi - lo < 1e-12:
        pixels = np.full(plane.shape, 128, dtype=np.uint8)
    else:
        pixels = np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
    h, w = plane.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Parse a binary P5 PGM written by `export_pgm`."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5\n"):
        raise ValueError(f"{path}: not a binary PGM")
    header, _, rest = raw.partition(b"255\n")
    dims = header[3:].split()
    w, h = int(dims[0]), int(dims[1])
    if len(rest) < w * h:
        raise ValueError(f"{path}: pixel payload cut short")
    return np.frombuffer(rest, dtype=np.uint8, count=w * h).reshape(h, w)
