"""Small classifier zoo, SGD trainer, and bit-exact weight persistence.

Three architectures stand in for a family of substitute/victim models:
a two-layer MLP and two convolutional nets of different depth/width.
All parameters are float64; training is plain mini-batch SGD so a fixed
seed reproduces the whole run.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Var

WEIGHT_MAGIC = b"SAKW0001"

ARCHITECTURES = ("mlp-2", "cnn-a", "cnn-b")

_MLP_HIDDEN = 128
_CNN_B_HIDDEN = 64


class WeightFormatError(Exception):
    """Base class for weight-file load failures."""


class WeightMagicError(WeightFormatError):
    """File does not start with the expected magic/version bytes."""


class WeightShapeError(WeightFormatError):
    """Header shapes disagree with the declared architecture."""


class WeightTruncatedError(WeightFormatError):
    """File ends before header or payload is complete."""


@dataclass
class Model:
    arch_id: str
    input_shape: tuple[int, int, int]
    n_classes: int
    params: list[np.ndarray] = field(repr=False)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int

    def __post_init__(self):
        # lr == 0 is allowed as an explicit null update
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def param_specs(
    arch_id: str, input_shape: tuple[int, int, int], n_classes: int
) -> list[tuple[str, tuple[int, ...], int | None]]:
    """Ordered (name, shape, fan_in) triples; fan_in None marks a bias."""
    h, w, c = input_shape
    k = n_classes
    if arch_id == "mlp-2":
        n_in = h * w * c
        return [
            ("w1", (n_in, _MLP_HIDDEN), n_in),
            ("b1", (_MLP_HIDDEN,), None),
            ("w2", (_MLP_HIDDEN, k), _MLP_HIDDEN),
            ("b2", (k,), None),
        ]
    if arch_id in ("cnn-a", "cnn-b"):
        if h % 4 or w % 4:
            raise ValueError(
                f"{arch_id} pools twice; input dims must be multiples of 4, got {(h, w)}"
            )
    if arch_id == "cnn-a":
        n_flat = (h // 4) * (w // 4) * 32
        return [
            ("conv1", (3, 3, c, 16), 9 * c),
            ("cb1", (16,), None),
            ("conv2", (3, 3, 16, 32), 9 * 16),
            ("cb2", (32,), None),
            ("w", (n_flat, k), n_flat),
            ("b", (k,), None),
        ]
    if arch_id == "cnn-b":
        n_flat = (h // 4) * (w // 4) * 48
        return [
            ("conv1", (3, 3, c, 24), 9 * c),
            ("cb1", (24,), None),
            ("conv2", (3, 3, 24, 24), 9 * 24),
            ("cb2", (24,), None),
            ("conv3", (3, 3, 24, 48), 9 * 24),
            ("cb3", (48,), None),
            ("w1", (n_flat, _CNN_B_HIDDEN), n_flat),
            ("b1", (_CNN_B_HIDDEN,), None),
            ("w2", (_CNN_B_HIDDEN, k), _CNN_B_HIDDEN),
            ("b2", (k,), None),
        ]
    raise ValueError(f"unknown architecture {arch_id!r}")


def build(
    arch_id: str, input_shape: tuple[int, int, int], n_classes: int, seed: int
) -> Model:
    """Build a model with fan-in-scaled uniform weights and zero biases."""
    specs = param_specs(arch_id, tuple(input_shape), n_classes)
    rng = np.random.default_rng(seed)
    params = []
    for _, shape, fan_in in specs:
        if fan_in is None:
            params.append(np.zeros(shape))
        else:
            limit = 1.0 / np.sqrt(fan_in)
            params.append(rng.uniform(-limit, limit, size=shape))
    return Model(arch_id, tuple(input_shape), n_classes, params)


def _forward(tape: Tape, model: Model, x: Var, param_vars: list[Var]) -> Var:
    """Logits of a batch (B, H, W, C) already on the tape."""
    p = param_vars
    if model.arch_id == "mlp-2":
        h = tape.relu(tape.affine(tape.flatten(x), p[0], p[1]))
        return tape.affine(h, p[2], p[3])
    if model.arch_id == "cnn-a":
        h = tape.relu(tape.add(tape.conv2d(x, p[0]), p[1]))
        h = tape.max_pool2d(h)
        h = tape.relu(tape.add(tape.conv2d(h, p[2]), p[3]))
        h = tape.max_pool2d(h)
        return tape.affine(tape.flatten(h), p[4], p[5])
    if model.arch_id == "cnn-b":
        h = tape.relu(tape.add(tape.conv2d(x, p[0]), p[1]))
        h = tape.relu(tape.add(tape.conv2d(h, p[2]), p[3]))
        h = tape.max_pool2d(h)
        h = tape.relu(tape.add(tape.conv2d(h, p[4]), p[5]))
        h = tape.max_pool2d(h)
        h = tape.relu(tape.affine(tape.flatten(h), p[6], p[7]))
        return tape.affine(h, p[8], p[9])
    raise ValueError(f"unknown architecture {model.arch_id!r}")


def _tape_forward(model: Model, images: np.ndarray):
    tape = Tape()
    x = tape.leaf(images)
    param_vars = [tape.leaf(p) for p in model.params]
    logits = _forward(tape, model, x, param_vars)
    return tape, x, param_vars, logits


def _as_batch(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None]
    if x.ndim == 4 and x.shape[1:] == model.input_shape:
        return x
    raise ValueError(f"input shape {x.shape} does not match model {model.input_shape}")


def predict(model: Model, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Logits for a single (H, W, C) image or an (B, H, W, C) batch."""
    single = np.asarray(x).shape == model.input_shape
    batch = _as_batch(model, x)
    outs = []
    for i in range(0, batch.shape[0], chunk):
        _, _, _, logits = _tape_forward(model, batch[i : i + chunk])
        outs.append(logits.value)
    logits = np.concatenate(outs, axis=0)
    return logits[0] if single else logits


def per_example_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example softmax cross-entropy computed from raw logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    return log_z - logits[np.arange(logits.shape[0]), labels]


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def batch_loss_and_input_grads(
    model: Model, images: np.ndarray, labels: np.ndarray, chunk: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Per-example losses and per-example input gradients for a batch.

    Uses a sum-reduced loss so each row of the gradient is exactly the
    gradient of that example's own loss.
    """
    images = _as_batch(model, images)
    labels = _check_labels(labels, model.n_classes)
    losses, grads = [], []
    for i in range(0, images.shape[0], chunk):
        tape, x, _, logits = _tape_forward(model, images[i : i + chunk])
        loss = tape.softmax_cross_entropy(logits, labels[i : i + chunk], reduction="sum")
        tape.backward(loss)
        losses.append(per_example_cross_entropy(logits.value, labels[i : i + chunk]))
        grads.append(tape.grad(x))
    return np.concatenate(losses), np.concatenate(grads, axis=0)


def loss_and_input_grad(
    model: Model, x: np.ndarray, y: int
) -> tuple[float, np.ndarray]:
    """Cross-entropy loss and its gradient w.r.t. a single input image."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model {model.input_shape}")
    losses, grads = batch_loss_and_input_grads(model, x[None], np.array([y]))
    return float(losses[0]), grads[0]


def param_grads(
    model: Model, images: np.ndarray, labels: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean batch loss and its gradient for every parameter tensor."""
    images = _as_batch(model, images)
    labels = _check_labels(labels, model.n_classes)
    tape, _, param_vars, logits = _tape_forward(model, images)
    loss = tape.softmax_cross_entropy(logits, labels, reduction="mean")
    tape.backward(loss)
    return float(loss.value), [tape.grad(p) for p in param_vars]


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of correct argmax predictions; empty input is an error."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] == 0:
        raise ValueError("accuracy over an empty evaluation set is undefined")
    labels = _check_labels(labels, model.n_classes)
    preds = predict(model, images).argmax(axis=1)
    return float((preds == labels).mean())


def train(model: Model, dataset, config: TrainConfig) -> tuple[Model, list[dict]]:
    """Mini-batch SGD in place; returns the model and a per-epoch log.

    The log holds one dict per epoch with the running mean training loss
    and the training accuracy accumulated over that epoch's batches.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    n = images.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        hit = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = images[idx], labels[idx]
            tape, _, param_vars, logits = _tape_forward(model, xb)
            loss = tape.softmax_cross_entropy(logits, yb, reduction="mean")
            tape.backward(loss)
            for p, pv in zip(model.params, param_vars):
                p -= config.learning_rate * tape.grad(pv)
            loss_sum += float(loss.value) * len(idx)
            hit += int((logits.value.argmax(axis=1) == yb).sum())
        log.append(
            {"epoch": epoch, "loss": loss_sum / n, "accuracy": hit / n}
        )
    return model, log


# ---- persistence ----------------------------------------------------------


def save_weights(model: Model, path) -> None:
    """Write magic, length-prefixed JSON header, then little-endian f64 data."""
    header = {
        "arch": model.arch_id,
        "input_shape": list(model.input_shape),
        "classes": model.n_classes,
        "tensor_shapes": [list(p.shape) for p in model.params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in model.params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_weights(path) -> Model:
    """Load a weight file, validating magic, header shapes, and payload size."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(WEIGHT_MAGIC):
        raise WeightTruncatedError(f"{path}: file shorter than the magic")
    if raw[: len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise WeightMagicError(
            f"{path}: bad magic {raw[:len(WEIGHT_MAGIC)]!r}, expected {WEIGHT_MAGIC!r}"
        )
    off = len(WEIGHT_MAGIC)
    if len(raw) < off + 4:
        raise WeightTruncatedError(f"{path}: missing header length")
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + hlen:
        raise WeightTruncatedError(f"{path}: header cut short")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: unreadable header: {exc}") from exc
    off += hlen
    arch = header.get("arch")
    input_shape = tuple(header.get("input_shape", ()))
    n_classes = header.get("classes")
    shapes = [tuple(s) for s in header.get("tensor_shapes", [])]
    try:
        expected = [shape for _, shape, _ in param_specs(arch, input_shape, n_classes)]
    except (ValueError, TypeError) as exc:
        raise WeightFormatError(f"{path}: bad header fields: {exc}") from exc
    if shapes != expected:
        raise WeightShapeError(
            f"{path}: header shapes {shapes} do not match {arch} with "
            f"input {input_shape} and {n_classes} classes"
        )
    params = []
    for shape in shapes:
        nbytes = int(np.prod(shape)) * 8
        if len(raw) < off + nbytes:
            raise WeightTruncatedError(f"{path}: payload cut short at {off}")
        params.append(
            np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=off)
            .reshape(shape)
            .astype(np.float64)
        )
        off += nbytes
    if off != len(raw):
        raise WeightFormatError(f"{path}: {len(raw) - off} trailing bytes")
    return Model(arch, input_shape, n_classes, params)
