"""Reverse-mode differentiation over a closed set of array operations.

Operations are recorded on a :class:`Tape` in execution order and their
adjoints are replayed in exact reverse order by :meth:`Tape.backward`.
Gradients accumulate (``+=``) into :class:`Parameter` objects until
:func:`zero_grad` is called.

The operator set is deliberately small: batched causal convolution over a
bank of independent detectors, a dense map, ReLU, elementwise arithmetic
with broadcasting, squares, absolute values and reductions. Every network
in :mod:`datom.models` is composed from these.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signal import ConfigurationError

# Kernels at least this long are convolved through the FFT.
FFT_MIN_KERNEL = 24


class Var:
    """A node in the computation: a value and, during backward, its adjoint."""

    __slots__ = ("value", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


class Parameter(Var):
    """A trainable array with a persistent, same-shape gradient buffer."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _fft_size(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Single-owner recorder for one forward/backward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self):
        return len(self.records)

    @staticmethod
    def const(value) -> Var:
        return value if isinstance(value, Var) else Var(value)

    def _emit(self, value, inputs: Sequence[Var], backward) -> Var:
        out = Var(value, requires_grad=any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self.records.append(_Record(out, tuple(inputs), backward))
        return out

    # -- elementwise ---------------------------------------------------

    def add(self, a, b) -> Var:
        a, b = self.const(a), self.const(b)
        sa, sb = a.shape, b.shape
        return self._emit(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> Var:
        a, b = self.const(a), self.const(b)
        sa, sb = a.shape, b.shape
        return self._emit(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a, b) -> Var:
        a, b = self.const(a), self.const(b)
        av, bv = a.value, b.value

        def back(g):
            return (
                _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
            )

        return self._emit(av * bv, (a, b), back)

    def scale(self, a, c: float) -> Var:
        a = self.const(a)
        return self._emit(a.value * c, (a,), lambda g: (g * c,))

    def relu(self, a) -> Var:
        a = self.const(a)
        # Subgradient at exactly zero is 0.
        on = a.value > 0
        return self._emit(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))

    def square(self, a) -> Var:
        a = self.const(a)
        v = a.value
        return self._emit(v * v, (a,), lambda g: (2.0 * g * v,))

    def abs(self, a) -> Var:
        a = self.const(a)
        v = a.value
        return self._emit(np.abs(v), (a,), lambda g: (g * np.sign(v),))

    # -- shape ---------------------------------------------------------

    def sum(self, a, axis=None, keepdims: bool = False) -> Var:
        a = self.const(a)
        shape = a.shape
        out = a.value.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._emit(out, (a,), back)

    def mean(self, a, axis=None) -> Var:
        a = self.const(a)
        n = a.value.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
        return self.scale(self.sum(a, axis=axis), 1.0 / n)

    def reshape(self, a, shape) -> Var:
        a = self.const(a)
        old = a.shape
        return self._emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def broadcast_to(self, a, shape) -> Var:
        a = self.const(a)
        old = a.shape
        return self._emit(np.broadcast_to(a.value, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))

    # -- linear maps ---------------------------------------------------

    def conv(self, x, kernel, bias=None) -> Var:
        """Causal convolution over a bank of ``G`` independent filters.

        ``x``: ``(B, G, C_in, T)``; ``kernel``: ``(G, C_out, C_in, P)``;
        ``bias``: ``(G, C_out)`` or None. Returns ``(B, G, C_out, T)``.
        """
        x, kernel = self.const(x), self.const(kernel)
        xv, kv = x.value, kernel.value
        if xv.ndim != 4 or kv.ndim != 4:
            raise ConfigurationError(f"conv expects 4-d input and kernel, got {xv.shape} and {kv.shape}")
        B, G, C, T = xv.shape
        Gk, O, Ck, P = kv.shape
        if Gk != G or Ck != C:
            raise ConfigurationError(f"kernel {kv.shape} does not fit input {xv.shape}")
        inputs = [x, kernel]
        if bias is not None:
            bias = self.const(bias)
            if bias.shape != (G, O):
                raise ConfigurationError(f"bias must be {(G, O)}, got {bias.shape}")
            inputs.append(bias)

        if P >= FFT_MIN_KERNEL:
            n = _fft_size(T + P - 1)
            X = np.fft.rfft(xv, n)
            K = np.fft.rfft(kv, n)
            out = np.fft.irfft(np.einsum("bgcf,gocf->bgof", X, K), n)[..., :T]

            def back(g):
                Gf = np.fft.rfft(g, n)
                dx = dk = None
                if x.requires_grad:
                    dx = np.fft.irfft(np.einsum("bgof,gocf->bgcf", Gf, K.conj()), n)[..., :T]
                if kernel.requires_grad:
                    dk = np.fft.irfft(np.einsum("bgof,bgcf->gocf", Gf, X.conj()), n)[..., :P]
                return dx, dk, *((g.sum(axis=(0, 3)),) if bias is not None else ())

        else:
            w = sliding_window_view(np.pad(xv, [(0, 0)] * 3 + [(P - 1, 0)]), P, axis=-1)
            kf = kv[..., ::-1]
            out = np.einsum("bgctq,gocq->bgot", w, kf)

            def back(g):
                dx = dk = None
                if x.requires_grad:
                    gw = sliding_window_view(np.pad(g, [(0, 0)] * 3 + [(0, P - 1)]), P, axis=-1)
                    dx = np.einsum("bgotq,gocq->bgct", gw, kv)
                if kernel.requires_grad:
                    dk = np.einsum("bgot,bgctq->gocq", g, w)[..., ::-1]
                return dx, dk, *((g.sum(axis=(0, 3)),) if bias is not None else ())

        if bias is not None:
            out = out + bias.value[None, :, :, None]
        return self._emit(out, inputs, back)

    def dense(self, x, weight, bias=None) -> Var:
        """Per-bank linear map: ``(B, G, C) x (G, O, C) -> (B, G, O)``."""
        x, weight = self.const(x), self.const(weight)
        xv, wv = x.value, weight.value
        if xv.ndim != 3 or wv.ndim != 3 or wv.shape[0] != xv.shape[1] or wv.shape[2] != xv.shape[2]:
            raise ConfigurationError(f"dense weight {wv.shape} does not fit input {xv.shape}")
        out = np.einsum("bgc,goc->bgo", xv, wv)
        inputs = [x, weight]
        if bias is not None:
            bias = self.const(bias)
            out = out + bias.value[None]
            inputs.append(bias)

        def back(g):
            dx = np.einsum("bgo,goc->bgc", g, wv) if x.requires_grad else None
            dw = np.einsum("bgo,bgc->goc", g, xv) if weight.requires_grad else None
            return dx, dw, *((g.sum(axis=0),) if bias is not None else ())

        return self._emit(out, inputs, back)

    # -- reverse pass --------------------------------------------------

    def backward(self, loss: Var):
        """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        adj = {id(loss): np.ones_like(loss.value)}
        for rec in reversed(self.records):
            g = adj.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, d in zip(rec.inputs, rec.backward(g)):
                if d is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += d
                else:
                    k = id(inp)
                    adj[k] = adj[k] + d if k in adj else d
        if isinstance(loss, Parameter):
            loss.grad += 1.0


def finite_diff_check(
    f: Callable[[Tape], Var],
    params: Sequence[Parameter],
    h: float = 1e-6,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare tape gradients against central differences.

    ``f`` builds the scalar loss on the tape it is given. Returns the maximum
    over checked coordinates of ``|analytic - numeric| / max(1, |analytic|)``.
    With ``max_coords`` set, that many coordinates per parameter are sampled.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    saved = [p.grad.copy() for p in params]
    zero_grad(params)
    tape = Tape()
    tape.backward(f(tape))
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad[...] = g

    worst = 0.0
    for p, ga in zip(params, analytic):
        size = p.value.size
        coords = np.arange(size)
        if max_coords is not None and size > max_coords:
            coords = rng.choice(size, size=max_coords, replace=False)
        for k in coords:
            idx = np.unravel_index(k, p.value.shape)
            orig = p.value[idx]
            p.value[idx] = orig + h
            up = f(Tape()).item()
            p.value[idx] = orig - h
            down = f(Tape()).item()
            p.value[idx] = orig
            num = (up - down) / (2 * h)
            a = ga[idx]
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst
