"""Minimal reverse-mode autodiff over float64 numpy arrays.

Closed-world engine: it provides exactly the differentiable operations the
codec network needs (1-d convolution, pointwise nonlinearities, pooling,
losses, gather/scatter helpers) and nothing else.  A Tape records operations
in execution order; backward replays them strictly in reverse.  All math is
double precision and reductions use a fixed summation order, so repeated runs
with identical inputs are bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class Tensor:
    """A float64 array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named trainable Tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


class Tape:
    """Ordered record of executed ops; single-threaded unit of work."""

    def __init__(self):
        self._backward_fns = []

    def record(self, fn) -> None:
        self._backward_fns.append(fn)

    def backward(self, loss: Tensor) -> None:
        """Backpropagate from a scalar loss through every recorded op."""
        if loss.data.shape != ():
            raise ValueError("backward requires a scalar loss")
        loss.accumulate(np.array(1.0))
        for fn in reversed(self._backward_fns):
            fn()


def _conv_out_len(t: int, k: int, stride: int, dilation: int, causal: bool) -> int:
    span = (k - 1) * dilation
    if causal:
        if t % stride != 0:
            raise ValueError(f"causal conv needs T divisible by stride ({t} % {stride})")
        return t // stride
    if t < span + 1:
        raise ValueError(f"input too short for kernel: T={t}, span={span + 1}")
    return (t - span - 1) // stride + 1


def conv1d(tape: Tape, x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           dilation: int = 1, causal: bool = False) -> Tensor:
    """1-d convolution of [C_in, T] with weights [C_out, C_in, k].

    Causal mode left-pads with (k-1)*dilation zeros, so output frame t sees
    input frames <= t*stride only.  Valid mode takes no padding.
    """
    c_in, t = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise ValueError(f"channel mismatch: input {c_in}, weights expect {c_in_w}")
    t_out = _conv_out_len(t, k, stride, dilation, causal)
    pad = (k - 1) * dilation if causal else 0
    xp = np.concatenate([np.zeros((c_in, pad)), x.data], axis=1) if pad else x.data

    # Tap j reads the arithmetic progression j*dilation + stride*[0..t_out),
    # which is a basic strided slice.  Contiguous copies of the per-tap
    # operands keep every product on the fast BLAS path.
    taps = [slice(j * dilation, j * dilation + stride * (t_out - 1) + 1, stride)
            for j in range(k)]
    w_taps = [np.ascontiguousarray(w.data[:, :, j]) for j in range(k)]
    x_taps = [xp[:, s] if stride == 1 else np.ascontiguousarray(xp[:, s])
              for s in taps]
    out = np.zeros((c_out, t_out))
    for j in range(k):
        out += w_taps[j] @ x_taps[j]
    if b is not None:
        out += b.data[:, None]
    result = Tensor(out)

    def backward():
        if result.grad is None:
            return
        dy = result.grad
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for j in range(k):
            dw[:, :, j] = dy @ x_taps[j].T
            dxp[:, taps[j]] += w_taps[j].T @ dy
        w.accumulate(dw)
        x.accumulate(dxp[:, pad:] if pad else dxp)
        if b is not None:
            b.accumulate(dy.sum(axis=1))

    tape.record(backward)
    return result


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward():
        if out.grad is None:
            return
        # Subgradient at 0 is 0.
        x.accumulate(np.where(x.data > 0.0, out.grad, 0.0))

    tape.record(backward)
    return out


def tanh(tape: Tape, x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def backward():
        if out.grad is None:
            return
        x.accumulate((1.0 - y * y) * out.grad)

    tape.record(backward)
    return out


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function on a raw array."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    out = Tensor(s)

    def backward():
        if out.grad is None:
            return
        x.accumulate(s * (1.0 - s) * out.grad)

    tape.record(backward)
    return out


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a per-channel [C] bias against [C, T]."""
    channel_bias = (b.data.ndim == 1 and a.data.ndim == 2
                    and b.data.shape[0] == a.data.shape[0])
    if not channel_bias and a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch in add: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + (b.data[:, None] if channel_bias else b.data))

    def backward():
        if out.grad is None:
            return
        a.accumulate(out.grad)
        b.accumulate(out.grad.sum(axis=1) if channel_bias else out.grad)

    tape.record(backward)
    return out


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch in mul: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def backward():
        if out.grad is None:
            return
        a.accumulate(b.data * out.grad)
        b.accumulate(a.data * out.grad)

    tape.record(backward)
    return out


def scale(tape: Tape, x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)

    def backward():
        if out.grad is None:
            return
        x.accumulate(c * out.grad)

    tape.record(backward)
    return out


def exact_time_mean(data: np.ndarray) -> np.ndarray:
    """Per-channel mean of [C, T] with exactly rounded (fsum) accumulation."""
    c, t = data.shape
    return np.array([math.fsum(data[i]) for i in range(c)]) / t


def mean_over_time(tape: Tape, x: Tensor) -> Tensor:
    """Mean over the trailing time axis of [C, T], exactly rounded.

    Each channel is pooled with math.fsum, so the result is invariant under
    any permutation of the time frames, bit for bit.
    """
    c, t = x.data.shape
    if t == 0:
        raise ValueError("mean_over_time requires T >= 1")
    out = Tensor(exact_time_mean(x.data))

    def backward():
        if out.grad is None:
            return
        x.accumulate(np.repeat(out.grad[:, None] / t, t, axis=1))

    tape.record(backward)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Column-wise stabilized softmax of a [K, T] array."""
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_cross_entropy(tape: Tape, logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under [K, T] logits."""
    k, t = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (t,):
        raise ValueError(f"targets must have length {t}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"target out of range [0, {k})")
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    out = Tensor(-log_probs[targets, np.arange(t)].mean())
    probs = np.exp(log_probs)

    def backward():
        if out.grad is None:
            return
        g = probs.copy()
        g[targets, np.arange(t)] -= 1.0
        logits.accumulate(g * (float(out.grad) / t))

    tape.record(backward)
    return out


def mse(tape: Tape, prediction: Tensor, target: Tensor,
        mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error, optionally masked along the trailing time axis.

    Returns exactly 0 with zero gradient when the mask excludes everything.
    """
    if prediction.data.shape != target.data.shape:
        raise ValueError(
            f"shape mismatch in mse: {prediction.data.shape} vs {target.data.shape}")
    diff = prediction.data - target.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (prediction.data.shape[-1],):
            raise ValueError("mask length must equal the time dimension")
        diff = diff * mask
        leading = int(np.prod(prediction.data.shape[:-1])) if prediction.data.ndim > 1 else 1
        n = int(mask.sum()) * leading
    else:
        n = diff.size
    if n == 0:
        return Tensor(np.array(0.0))
    out = Tensor(np.array((diff * diff).sum() / n))

    def backward():
        if out.grad is None:
            return
        g = 2.0 * diff * (float(out.grad) / n)
        prediction.accumulate(g)
        target.accumulate(-g)

    tape.record(backward)
    return out


def embedding(tape: Tape, table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [K, C] table by integer ids, returned as [C, T]."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids].T.copy())

    def backward():
        if out.grad is None:
            return
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, out.grad.T)
        table.accumulate(dt)

    tape.record(backward)
    return out


def take_row(tape: Tape, table: Tensor, idx: int) -> Tensor:
    """Gather a single row of a [K, C] table as a [C] vector."""
    out = Tensor(table.data[idx].copy())

    def backward():
        if out.grad is None:
            return
        dt = np.zeros_like(table.data)
        dt[idx] = out.grad
        table.accumulate(dt)

    tape.record(backward)
    return out


def repeat_time(tape: Tape, x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor upsample [C, T] -> [C, T*factor] along time."""
    c, t = x.data.shape
    out = Tensor(np.repeat(x.data, factor, axis=1))

    def backward():
        if out.grad is None:
            return
        x.accumulate(out.grad.reshape(c, t, factor).sum(axis=2))

    tape.record(backward)
    return out


def broadcast_over_time(tape: Tape, v: Tensor, t: int) -> Tensor:
    """Broadcast a [C] vector to every frame of a [C, T] tensor."""
    out = Tensor(np.repeat(v.data[:, None], t, axis=1))

    def backward():
        if out.grad is None:
            return
        v.accumulate(out.grad.sum(axis=1))

    tape.record(backward)
    return out


def concat_channels(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Stack [Ca, T] and [Cb, T] into [Ca+Cb, T]."""
    if a.data.shape[1] != b.data.shape[1]:
        raise ValueError("time dimensions must match for channel concat")
    ca = a.data.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0))

    def backward():
        if out.grad is None:
            return
        a.accumulate(out.grad[:ca])
        b.accumulate(out.grad[ca:])

    tape.record(backward)
    return out


def stop_gradient(x: Tensor) -> Tensor:
    """Detach: same values, no backward connection."""
    return Tensor(x.data.copy())


def straight_through(tape: Tape, x: Tensor, values: np.ndarray) -> Tensor:
    """Forward the given values; backward copies the gradient to x unchanged."""
    if values.shape != x.data.shape:
        raise ValueError("straight_through values must match the input shape")
    out = Tensor(values.copy())

    def backward():
        if out.grad is None:
            return
        x.accumulate(out.grad)

    tape.record(backward)
    return out


@dataclass
class GradCheckEntry:
    input_index: int
    max_relative_error: float
    worst_element: int


@dataclass
class GradCheckReport:
    """Result of comparing reverse-mode gradients to central differences."""

    step: float
    tolerance: float
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.max_relative_error <= self.tolerance for e in self.entries)

    @property
    def max_relative_error(self) -> float:
        return max((e.max_relative_error for e in self.entries), default=0.0)

    def to_json(self) -> str:
        return json.dumps({
            "step": self.step,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "inputs": [
                {"input": e.input_index,
                 "max_relative_error": e.max_relative_error,
                 "worst_element": e.worst_element}
                for e in self.entries
            ],
        })


def grad_check(op_closure, inputs, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar closure to central differences.

    ``op_closure(tape, *inputs)`` must return a scalar Tensor and must not
    mutate the inputs; it is re-evaluated 2N times for N total input elements.
    """
    tape = Tape()
    loss = op_closure(tape, *inputs)
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    report = GradCheckReport(step=step, tolerance=tolerance)
    for i, tensor in enumerate(inputs):
        flat = tensor.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = op_closure(Tape(), *inputs).item()
            flat[j] = orig - step
            f_minus = op_closure(Tape(), *inputs).item()
            flat[j] = orig
            numeric[j] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[i].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
        rel = np.abs(a - numeric) / denom
        worst = int(np.argmax(rel)) if rel.size else 0
        report.entries.append(GradCheckEntry(
            input_index=i,
            max_relative_error=float(rel.max()) if rel.size else 0.0,
            worst_element=worst,
        ))
    return report
