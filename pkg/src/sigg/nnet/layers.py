"""Differentiable layers: dense (optionally spectrally normalized),
LSTM cell with optional per-gate layer normalization, batch
normalization, and token embedding.

Every layer registers its tensors in a :class:`ParamStore` under a
dotted name prefix, so optimizer updates and checkpoints see one flat
namespace.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import autodiff as ad
from .autodiff import Variable, constant
from .params import ParamStore, orthogonal_init, uniform_init

_LN_EPS = 1e-12
_BN_EPS = 1e-5


def linear_forward(x: Variable, weight: Variable, bias: Variable | None = None) -> Variable:
    """Fused affine map ``y = x @ W.T + b`` with W of shape (d_out, d_in)."""
    x = ad.as_variable(x)
    weight = ad.as_variable(weight)
    if x.data.ndim != 2:
        raise ShapeError(f"linear expects 2-D input, got {x.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(f"linear mismatch: input {x.data.shape} vs weight {weight.data.shape}")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)
    track_x, track_w = x.requires_grad, weight.requires_grad
    track_b = bias is not None and bias.requires_grad

    def back(g):
        if track_x:
            x.accumulate(g @ weight.data)
        if track_w:
            weight.accumulate(g.T @ x.data)
        if track_b:
            bias.accumulate(g.sum(axis=0))

    return ad._make(out_data, parents, back)


def layer_norm(x: Variable) -> Variable:
    """Normalize the last axis to mean 0, variance 1 (no scale/shift)."""
    x = ad.as_variable(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    dev = x.data - mu
    var = (dev * dev).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = dev * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        x.accumulate(inv * (g - gm - xhat * gx))

    return ad._make(xhat, (x,), back)


def embedding_forward(table: Variable, tokens: np.ndarray) -> Variable:
    """Hard lookup of integer tokens; backward scatter-adds rows."""
    return ad.gather_rows(table, tokens)


class Linear:
    """Dense layer with spec init (uniform +-1/sqrt(d_in), zero bias)."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.weight = store.add_param(f"{name}.W", uniform_init(rng, d_out, d_in))
        self.bias = store.add_param(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Variable) -> Variable:
        return linear_forward(x, self.weight, self.bias)


class SpectralLinear:
    """Dense layer whose applied weight is divided by a power-iteration
    estimate of its largest singular value.

    ``power_iterate`` advances the persistent (u, v) pair once; the
    applied weight treats them as constants, so the forward map is a
    clean differentiable function of W between iterations.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True, enabled: bool = True):
        self.weight = store.add_param(f"{name}.W", uniform_init(rng, d_out, d_in))
        self.bias = store.add_param(f"{name}.b", np.zeros(d_out)) if bias else None
        u = rng.standard_normal(d_out)
        u /= np.linalg.norm(u)
        self.u = store.add_buffer(f"{name}.sn_u", u)
        v = self.weight.data.T @ u
        nv = np.linalg.norm(v)
        self.v = store.add_buffer(f"{name}.sn_v", v / nv if nv > 0 else v)
        self.enabled = enabled

    def power_iterate(self) -> None:
        if not self.enabled:
            return
        w = self.weight.data
        v = w.T @ self.u
        n = np.linalg.norm(v)
        if n < 1e-12:
            return
        v /= n
        u = w @ v
        n = np.linalg.norm(u)
        if n < 1e-12:
            return
        u /= n
        self.u[...] = u
        self.v[...] = v

    def warmup(self, n: int) -> None:
        for _ in range(n):
            self.power_iterate()

    def sigma(self) -> float:
        return float(self.u @ self.weight.data @ self.v)

    def applied_weight(self) -> Variable:
        if not self.enabled:
            return self.weight
        sig = self.sigma()
        if abs(sig) < 1e-12:  # degenerate zero matrix: apply unnormalized
            return self.weight
        u = constant(self.u.reshape(1, -1))
        v = constant(self.v.reshape(-1, 1))
        sig_var = ad.matmul(ad.matmul(u, self.weight), v)
        return ad.div(self.weight, ad.reshape(sig_var, ()))

    def __call__(self, x: Variable) -> Variable:
        return linear_forward(x, self.applied_weight(), self.bias)


class LSTMCell:
    """Single-step LSTM with gate order (input, forget, output, candidate).

    Recurrent kernel blocks are orthogonal, input blocks uniform, and the
    forget gate opens at init (bias 1, or shift 1 under layer norm).
    With ``layer_norm=True`` each gate preactivation is normalized to
    mean 0 / variance 1 before its scale and shift.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_h: int,
                 rng: np.random.Generator, layer_norm: bool = False,
                 forget_bias: float = 1.0):
        self.d_in = d_in
        self.d_h = d_h
        self.layer_norm = layer_norm
        kernel = np.empty((d_in + d_h, 4 * d_h))
        kernel[:d_in] = uniform_init(rng, 4 * d_h, d_in).T
        for k in range(4):
            kernel[d_in:, k * d_h:(k + 1) * d_h] = orthogonal_init(rng, d_h, d_h)
        self.kernel = store.add_param(f"{name}.W", kernel)
        if layer_norm:
            gamma = np.ones(4 * d_h)
            beta = np.zeros(4 * d_h)
            beta[d_h:2 * d_h] = forget_bias
            self.gamma = store.add_param(f"{name}.ln_g", gamma)
            self.beta = store.add_param(f"{name}.ln_b", beta)
            self.bias = None
        else:
            b = np.zeros(4 * d_h)
            b[d_h:2 * d_h] = forget_bias
            self.bias = store.add_param(f"{name}.b", b)

    def init_state(self, rows: int) -> tuple[Variable, Variable]:
        z = np.zeros((rows, self.d_h))
        return constant(z), constant(z.copy())

    def step(self, x: Variable, h: Variable, c: Variable) -> tuple[Variable, Variable]:
        """One recurrent step, fused into a single graph node.

        The packed output [h', c'] keeps the unrolled graph shallow; the
        hand-written backward covers the gate math and the optional
        per-gate normalization in one pass.
        """
        x, h, c = ad.as_variable(x), ad.as_variable(h), ad.as_variable(c)
        d_h = self.d_h
        rows = x.data.shape[0]
        xh = np.concatenate([x.data, h.data], axis=1)
        pre = xh @ self.kernel.data
        if self.bias is not None:
            pre += self.bias.data
        if self.layer_norm:
            gates4 = pre.reshape(rows, 4, d_h)
            mu = gates4.mean(axis=-1, keepdims=True)
            dev = gates4 - mu
            var = (dev * dev).mean(axis=-1, keepdims=True)
            inv = 1.0 / np.sqrt(var + _LN_EPS)
            xhat = dev * inv
            pre = (self.gamma.data.reshape(4, d_h) * xhat
                   + self.beta.data.reshape(4, d_h)).reshape(rows, 4 * d_h)
        else:
            xhat = inv = None
        i = 1.0 / (1.0 + np.exp(-pre[:, :d_h]))
        f = 1.0 / (1.0 + np.exp(-pre[:, d_h:2 * d_h]))
        o = 1.0 / (1.0 + np.exp(-pre[:, 2 * d_h:3 * d_h]))
        g = np.tanh(pre[:, 3 * d_h:])
        c_new = f * c.data + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        out_data = np.concatenate([h_new, c_new], axis=1)

        kernel, bias, gamma, beta = self.kernel, self.bias, self.gamma if \
            self.layer_norm else None, self.beta if self.layer_norm else None
        c_prev = c.data
        tracked = (x.requires_grad, h.requires_grad, c.requires_grad,
                   kernel.requires_grad,
                   bias is not None and bias.requires_grad,
                   gamma is not None and gamma.requires_grad)

        def back(gpack):
            dh = gpack[:, :d_h]
            dc = gpack[:, d_h:] + dh * o * (1.0 - tanh_c * tanh_c)
            do = dh * tanh_c
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dpre = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                                   do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1)
            if self.layer_norm:
                dgate = dpre.reshape(rows, 4, d_h)
                if tracked[5]:
                    gamma.accumulate((dgate * xhat).sum(axis=0).reshape(-1))
                    beta.accumulate(dgate.sum(axis=0).reshape(-1))
                dxhat = dgate * gamma.data.reshape(4, d_h)
                gm = dxhat.mean(axis=-1, keepdims=True)
                gx = (dxhat * xhat).mean(axis=-1, keepdims=True)
                dpre = (inv * (dxhat - gm - xhat * gx)).reshape(rows, 4 * d_h)
            if tracked[4]:
                bias.accumulate(dpre.sum(axis=0))
            if tracked[3]:
                kernel.accumulate(xh.T @ dpre)
            if tracked[0] or tracked[1]:
                dxh = dpre @ kernel.data.T
                if tracked[0]:
                    x.accumulate(dxh[:, :x.data.shape[1]])
                if tracked[1]:
                    h.accumulate(dxh[:, x.data.shape[1]:])
            if tracked[2]:
                c.accumulate(dc * f)

        parents = [x, h, c, kernel]
        if bias is not None:
            parents.append(bias)
        if gamma is not None:
            parents.extend((gamma, beta))
        packed = ad._make(out_data, tuple(parents), back)
        h_var = ad.narrow(packed, 1, 0, d_h)
        c_var = ad.narrow(packed, 1, d_h, d_h)
        return h_var, c_var

    def run(self, inputs: list[Variable], rows: int,
            collect: bool = False) -> Variable | list[Variable]:
        """Run over a list of per-step inputs; return final hidden state,
        or all hidden states when ``collect`` is set."""
        h, c = self.init_state(rows)
        hs = []
        for x in inputs:
            h, c = self.step(x, h, c)
            if collect:
                hs.append(h)
        return hs if collect else h


class BatchNorm:
    """Batch normalization over (batch, person, feature) activations.

    Train mode uses batch statistics and updates running averages with
    momentum 0.9; eval mode is the affine map given by the running
    statistics. Sums over the person axis are taken in sorted-value
    order, which makes train-mode outputs exactly invariant to person
    permutations (needed for the generator's equivariance contract).
    """

    def __init__(self, store: ParamStore, name: str, d: int, momentum: float = 0.9):
        self.d = d
        self.momentum = momentum
        self.gamma = store.add_param(f"{name}.g", np.ones(d))
        self.beta = store.add_param(f"{name}.b", np.zeros(d))
        self.running_mean = store.add_buffer(f"{name}.rm", np.zeros(d))
        self.running_var = store.add_buffer(f"{name}.rv", np.ones(d))

    def __call__(self, x: Variable, training: bool, update_stats: bool = True) -> Variable:
        x = ad.as_variable(x)
        if x.data.ndim != 3 or x.data.shape[-1] != self.d:
            raise ShapeError(f"batchnorm expects (B, N, {self.d}), got {x.data.shape}")
        if not training:
            inv = 1.0 / np.sqrt(self.running_var + _BN_EPS)
            scale = self.gamma.data * inv
            out_data = (x.data - self.running_mean) * scale + self.beta.data

            track = (x.requires_grad, self.gamma.requires_grad,
                     self.beta.requires_grad)

            def back_eval(g):
                if track[0]:
                    x.accumulate(g * scale)
                if track[1]:
                    self.gamma.accumulate((g * (x.data - self.running_mean) * inv).sum(axis=(0, 1)))
                if track[2]:
                    self.beta.accumulate(g.sum(axis=(0, 1)))

            return ad._make(out_data, (x, self.gamma, self.beta), back_eval)

        m = x.data.shape[0] * x.data.shape[1]
        mu = np.sort(x.data, axis=1).sum(axis=1).sum(axis=0) / m
        dev = x.data - mu
        var = np.sort(dev * dev, axis=1).sum(axis=1).sum(axis=0) / m
        inv = 1.0 / np.sqrt(var + _BN_EPS)
        xhat = dev * inv
        out_data = self.gamma.data * xhat + self.beta.data
        if update_stats:
            unbiased = var * (m / (m - 1)) if m > 1 else var
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mu
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * unbiased

        gamma_data = self.gamma.data
        track = (x.requires_grad, self.gamma.requires_grad, self.beta.requires_grad)

        def back_train(g):
            if track[1]:
                self.gamma.accumulate((g * xhat).sum(axis=(0, 1)))
            if track[2]:
                self.beta.accumulate(g.sum(axis=(0, 1)))
            if track[0]:
                dxhat = g * gamma_data
                dvar = (dxhat * dev).sum(axis=(0, 1)) * -0.5 * inv**3
                dmu = -(dxhat.sum(axis=(0, 1))) * inv + dvar * -2.0 * dev.sum(axis=(0, 1)) / m
                x.accumulate(dxhat * inv + dvar * 2.0 * dev / m + dmu / m)

        return ad._make(out_data, (x, self.gamma, self.beta), back_train)


class Embedding:
    """Token embedding table, usable with hard ids or soft distributions."""

    def __init__(self, store: ParamStore, name: str, n_tokens: int, d: int,
                 rng: np.random.Generator):
        self.table = store.add_param(f"{name}.E", uniform_init(rng, n_tokens, d))

    def lookup(self, tokens: np.ndarray) -> Variable:
        return embedding_forward(self.table, tokens)

    def soft(self, probs: Variable) -> Variable:
        """Expected embedding under a distribution over tokens."""
        return ad.matmul(probs, self.table)
