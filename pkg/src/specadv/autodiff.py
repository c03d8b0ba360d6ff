"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A `Tape` records primitive ops in execution order; since every node's
inputs are created before the node itself, walking the node list in
reverse is a reverse-topological sweep.  The tape is rebuilt for every
forward pass, which is cheap at the array sizes this package works with.

Primitives: add, multiply, matmul, conv2d (stride 1, same zero padding,
odd kernels), relu, max_pool2d (2x2, stride 2), flatten, reshape,
affine, linear (caller-supplied forward/adjoint pair), and
softmax_cross_entropy.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.index]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad(self)


class Tape:
    """Ordered record of primitive ops with their adjoint rules."""

    def __init__(self):
        self._ops: list[str] = []
        self._parents: list[tuple[int, ...]] = []
        self._values: list[np.ndarray] = []
        # each backward takes the node's output gradient and returns one
        # gradient array per parent
        self._backwards: list[Callable | None] = []
        self._grads: list[np.ndarray | None] | None = None

    def _push(self, op, parents, value, backward) -> Var:
        self._ops.append(op)
        self._parents.append(tuple(p.index for p in parents))
        self._values.append(value)
        self._backwards.append(backward)
        return Var(self, len(self._values) - 1)

    def leaf(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        return self._push("leaf", (), value, None)

    # ---- elementwise and dense ops -------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        return self._push(
            "add",
            (a, b),
            av + bv,
            lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)),
        )

    def multiply(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        return self._push(
            "multiply",
            (a, b),
            av * bv,
            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        )

    def matmul(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
        return self._push(
            "matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g)
        )

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        """x @ w + b for x (B, n), w (n, m), b (m,)."""
        xv, wv, bv = x.value, w.value, b.value
        if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
            raise ValueError(f"affine shape mismatch: {xv.shape} @ {wv.shape}")
        if bv.shape != (wv.shape[1],):
            raise ValueError(f"affine bias shape {bv.shape} != ({wv.shape[1]},)")
        return self._push(
            "affine",
            (x, w, b),
            xv @ wv + bv,
            lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)),
        )

    def relu(self, a: Var) -> Var:
        av = a.value
        keep = av > 0
        return self._push("relu", (a,), np.where(keep, av, 0.0), lambda g: (g * keep,))

    def reshape(self, a: Var, shape: tuple[int, ...]) -> Var:
        av = a.value
        return self._push(
            "reshape", (a,), av.reshape(shape), lambda g: (g.reshape(av.shape),)
        )

    def flatten(self, a: Var) -> Var:
        """Collapse all but the leading (batch) axis."""
        av = a.value
        return self.reshape(a, (av.shape[0], int(np.prod(av.shape[1:]))))

    # ---- spatial ops ----------------------------------------------------

    def conv2d(self, x: Var, w: Var) -> Var:
        """Stride-1 same-padding correlation of x (B,H,W,Ci) with w (kh,kw,Ci,Co)."""
        xv, wv = x.value, w.value
        if xv.ndim != 4 or wv.ndim != 4:
            raise ValueError(f"conv2d expects 4D arrays, got {xv.shape} and {wv.shape}")
        kh, kw, ci, co = wv.shape
        if xv.shape[3] != ci:
            raise ValueError(f"conv2d channel mismatch: input {xv.shape}, kernel {wv.shape}")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"conv2d requires odd kernel sizes, got {(kh, kw)}")
        value, cols = _conv2d_forward(xv, wv)

        def backward(g):
            dw = (cols.T @ g.reshape(-1, co)).reshape(kh, kw, ci, co)
            # input grad = same-padding correlation with the spatially
            # flipped, channel-transposed kernel
            w_rot = wv[::-1, ::-1].transpose(0, 1, 3, 2)
            dx, _ = _conv2d_forward(g, w_rot)
            return dx, dw

        return self._push("conv2d", (x, w), value, backward)

    def max_pool2d(self, x: Var) -> Var:
        """2x2 max pooling with stride 2; needs even spatial dims."""
        xv = x.value
        if xv.ndim != 4:
            raise ValueError(f"max_pool2d expects a 4D array, got {xv.shape}")
        b, h, w, c = xv.shape
        if h % 2 or w % 2:
            raise ValueError(f"max_pool2d needs even spatial dims, got {(h, w)}")
        windows = xv.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        flat = windows.reshape(b, h // 2, w // 2, c, 4)
        arg = flat.argmax(axis=-1)
        value = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            dflat = np.zeros_like(flat)
            np.put_along_axis(dflat, arg[..., None], g[..., None], axis=-1)
            dx = (
                dflat.reshape(b, h // 2, w // 2, c, 2, 2)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(b, h, w, c)
            )
            return (dx,)

        return self._push("max_pool2d", (x,), value, backward)

    # ---- generic linear op ----------------------------------------------

    def linear(self, a: Var, forward: Callable, adjoint: Callable, op: str = "linear") -> Var:
        """Record a caller-supplied linear map with its exact adjoint."""
        return self._push(op, (a,), forward(a.value), lambda g: (adjoint(g),))

    # ---- loss -------------------------------------------------------------

    def softmax_cross_entropy(self, logits: Var, labels, reduction: str = "mean") -> Var:
        """Cross-entropy of softmax(logits) against integer labels.

        logits: (B, K); labels: (B,) ints in [0, K).  Returns a scalar:
        the mean (default) or sum of the per-example losses.
        """
        lv = logits.value
        if lv.ndim != 2:
            raise ValueError(f"expected (B, K) logits, got shape {lv.shape}")
        labels = np.asarray(labels)
        if labels.shape != (lv.shape[0],):
            raise ValueError(f"labels shape {labels.shape} != ({lv.shape[0]},)")
        k = lv.shape[1]
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"labels must lie in [0, {k}), got {labels.min()}..{labels.max()}")
        if reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {reduction!r}")
        shifted = lv - lv.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + lv.max(
            axis=1, keepdims=True
        )
        per_example = log_z[:, 0] - lv[np.arange(lv.shape[0]), labels]
        total = per_example.mean() if reduction == "mean" else per_example.sum()
        probs = np.exp(lv - log_z)
        onehot = np.zeros_like(lv)
        onehot[np.arange(lv.shape[0]), labels] = 1.0
        scale = 1.0 / lv.shape[0] if reduction == "mean" else 1.0

        def backward(g):
            return (float(g) * scale * (probs - onehot),)

        return self._push("softmax_cross_entropy", (logits,), np.float64(total), backward)

    # ---- reverse sweep ----------------------------------------------------

    def backward(self, out: Var) -> None:
        """Reverse sweep from a scalar output; fills gradients for all nodes."""
        if out.tape is not self:
            raise ValueError("output lives on a different tape")
        if np.size(out.value) != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[out.index] = np.ones_like(self._values[out.index])
        for i in range(out.index, -1, -1):
            g = grads[i]
            if g is None or self._backwards[i] is None:
                continue
            parent_grads = self._backwards[i](g)
            for p, pg in zip(self._parents[i], parent_grads):
                if grads[p] is None:
                    grads[p] = np.zeros_like(self._values[p])
                grads[p] += pg
        self._grads = grads

    def grad(self, v: Var) -> np.ndarray:
        """Gradient of the last backward() output w.r.t. node v."""
        if self._grads is None:
            raise RuntimeError("backward() has not been called on this tape")
        g = self._grads[v.index]
        return np.zeros_like(v.value) if g is None else g


def _conv2d_forward(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """im2col same-padding correlation; returns (output, patch matrix)."""
    b, h, ww, ci = x.shape
    kh, kw, _, co = w.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # (B, H, W, Ci, kh, kw) -> (B*H*W, kh*kw*Ci), matching w.reshape(-1, Co)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * ww, kh * kw * ci)
    out = (cols @ w.reshape(kh * kw * ci, co)).reshape(b, h, ww, co)
    return out, cols
