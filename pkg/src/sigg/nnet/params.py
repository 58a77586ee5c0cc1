"""Named parameter storage, initialization, and the Adam update."""

from __future__ import annotations

import ctypes
import ctypes.util

import numpy as np

from ..errors import GradError, ShapeError
from .autodiff import Variable


def tune_allocator() -> bool:
    """Raise glibc's mmap threshold so large temporaries are recycled.

    Training allocates many multi-megabyte arrays per step; with the
    default threshold each one is a fresh mmap plus page faults. Safe to
    call multiple times; returns False when the platform lacks mallopt.
    """
    try:
        name = ctypes.util.find_library("c")
        libc = ctypes.CDLL(name or "libc.so.6")
        m_mmap_threshold, m_trim_threshold = -3, -1
        ok = libc.mallopt(m_mmap_threshold, 1 << 29)
        ok &= libc.mallopt(m_trim_threshold, 1 << 29)
        return bool(ok)
    except (OSError, AttributeError):
        return False


def uniform_init(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    """Dense-layer init: uniform on +-1/sqrt(d_in)."""
    limit = 1.0 / np.sqrt(d_in)
    return rng.uniform(-limit, limit, size=(d_out, d_in))


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Orthogonal init for recurrent kernels (rows x cols, rows <= cols ok)."""
    n = max(rows, cols)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # make the factorization unique
    return q[:rows, :cols].copy()


class ParamStore:
    """Owns every trainable tensor of a model plus optimizer state.

    Parameters are ``Variable`` leaves; buffers are plain arrays that are
    persisted but never differentiated (running stats, power-iteration
    vectors). Iteration order is always sorted by name so updates and
    serialization are deterministic.
    """

    def __init__(self):
        self.params: dict[str, Variable] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add_param(self, name: str, data: np.ndarray) -> Variable:
        if name in self.params or name in self.buffers:
            raise ShapeError(f"duplicate parameter name {name!r}")
        var = Variable(np.array(data, dtype=np.float64), requires_grad=True)
        self.params[name] = var
        self._m[name] = np.zeros_like(var.data)
        self._v[name] = np.zeros_like(var.data)
        return var

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ShapeError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(data, dtype=np.float64)
        return self.buffers[name]

    def names(self) -> list[str]:
        return sorted(self.params)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        """Toggle gradient tracking for every parameter (freeze/unfreeze)."""
        for p in self.params.values():
            p.requires_grad = flag

    def param_norm(self) -> float:
        return float(np.sqrt(sum((p.data**2).sum() for p in self.params.values())))

    def grad_norm(self) -> float:
        tot = 0.0
        for p in self.params.values():
            if p.grad is not None:
                tot += float((p.grad**2).sum())
        return float(np.sqrt(tot))

    # -- serialization ------------------------------------------------------

    def state_tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in sorted(self.params):
            out[f"{prefix}p.{name}"] = self.params[name].data
            out[f"{prefix}m.{name}"] = self._m[name]
            out[f"{prefix}v.{name}"] = self._v[name]
        for name in sorted(self.buffers):
            out[f"{prefix}b.{name}"] = self.buffers[name]
        out[f"{prefix}step_count"] = np.array(float(self.step_count))
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
        from ..errors import CheckpointError

        expected = set(self.state_tensors(prefix))
        provided = {k for k in tensors if k.startswith(prefix)}
        if expected != provided:
            missing = sorted(expected - provided)[:5]
            extra = sorted(provided - expected)[:5]
            raise CheckpointError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, var in self.params.items():
            for target, key in ((var.data, f"{prefix}p.{name}"),
                                (self._m[name], f"{prefix}m.{name}"),
                                (self._v[name], f"{prefix}v.{name}")):
                src = tensors[key]
                if src.shape != target.shape:
                    raise CheckpointError(f"shape mismatch for {key}: {src.shape} vs {target.shape}")
                target[...] = src
        for name, buf in self.buffers.items():
            src = tensors[f"{prefix}b.{name}"]
            if src.shape != buf.shape:
                raise CheckpointError(f"shape mismatch for buffer {name}")
            buf[...] = src
        self.step_count = int(tensors[f"{prefix}step_count"])


def adam_step(store: ParamStore, lr: float, beta1: float = 0.5,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One adaptive-moment update over all parameters, in sorted-name order.

    Missing gradients count as zero. Gradients are zeroed afterwards and
    ``step_count`` is incremented. Non-finite gradients raise before any
    parameter is touched.
    """
    names = store.names()
    for name in names:
        g = store.params[name].grad
        if g is not None and not np.isfinite(g).all():
            raise GradError(f"non-finite gradient for parameter {name!r}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in names:
        p = store.params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = None
