"""Time-series containers and causal convolution.

Every layer in the decomposer keeps the input length ``T``: convolutions are
causal (output index ``i`` only sees ``x[i - j]`` for ``j >= 0``) and the
input is zero-padded on the left by ``P - 1`` samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ConfigurationError(ValueError):
    """Shapes or sizes that cannot be combined."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Signal:
    """A finite single-channel series of length ``T >= 1``."""

    samples: np.ndarray

    def __post_init__(self):
        a = np.array(self.samples, dtype=np.float64).reshape(-1)
        if a.size < 1:
            raise ValueError("signal must contain at least one sample")
        if not np.all(np.isfinite(a)):
            raise ValueError("signal samples must be finite")
        object.__setattr__(self, "samples", _frozen(a))

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.length

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)


@dataclass(frozen=True)
class MultiSignal:
    """``C`` channels sharing one length ``T``; stored as a ``(C, T)`` array."""

    samples: np.ndarray

    def __post_init__(self):
        a = np.array(self.samples, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"expected a (C, T) array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("signal samples must be finite")
        object.__setattr__(self, "samples", _frozen(a))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_signal(cls, x: Signal) -> "MultiSignal":
        return cls(np.asarray(x)[None, :])

    def channel(self, c: int) -> Signal:
        return Signal(self.samples[c])


@dataclass(frozen=True)
class NoiseMask:
    """Boolean flags, true where a noise event is active."""

    flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "flags", _frozen(np.array(self.flags, dtype=bool).reshape(-1)))

    def __len__(self) -> int:
        return self.flags.shape[0]


@dataclass(frozen=True)
class LabeledSample:
    signal: Signal
    label: Optional[int] = None
    mask: Optional[NoiseMask] = None


@dataclass
class Dataset:
    """A stack of equal-length signals with optional labels and noise masks.

    Signals are held as one ``(n, T)`` float64 array so that batches can be
    sliced without copying sample by sample. Labels are zero-based class
    indices.
    """

    signals: np.ndarray
    labels: Optional[np.ndarray] = None
    masks: Optional[np.ndarray] = None
    n_classes: Optional[int] = field(default=None)

    def __post_init__(self):
        x = np.array(self.signals, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"signals must be a non-empty (n, T) array, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal samples must be finite")
        self.signals = x
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise ValueError("need exactly one label per signal")
            if not np.issubdtype(y.dtype, np.integer):
                if not np.all(y == np.round(y)):
                    raise ValueError("labels must be integers")
            y = y.astype(np.int64)
            if y.min() < 0:
                raise ValueError("labels are zero-based class indices")
            if self.n_classes is None:
                self.n_classes = int(y.max()) + 1
            elif y.max() >= self.n_classes:
                raise ValueError(f"label {int(y.max())} outside {self.n_classes} classes")
            self.labels = y
        if self.masks is not None:
            m = np.asarray(self.masks).astype(bool)
            if m.shape != x.shape:
                raise ValueError(f"masks shape {m.shape} does not match signals {x.shape}")
            self.masks = m

    @property
    def length(self) -> int:
        return self.signals.shape[1]

    def __len__(self) -> int:
        return self.signals.shape[0]

    def __getitem__(self, k: int) -> LabeledSample:
        return LabeledSample(
            Signal(self.signals[k]),
            None if self.labels is None else int(self.labels[k]),
            None if self.masks is None else NoiseMask(self.masks[k]),
        )

    def __iter__(self) -> Iterator[LabeledSample]:
        for k in range(len(self)):
            yield self[k]

    @property
    def samples(self) -> list[LabeledSample]:
        return list(self)

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], n_classes: Optional[int] = None) -> "Dataset":
        if not samples:
            raise ValueError("dataset needs at least one sample")
        x = np.stack([np.asarray(s.signal) for s in samples])
        has_y = [s.label is not None for s in samples]
        has_m = [s.mask is not None for s in samples]
        if any(has_y) and not all(has_y):
            raise ValueError("either every sample is labeled or none is")
        if any(has_m) and not all(has_m):
            raise ValueError("either every sample has a mask or none has")
        y = np.array([s.label for s in samples]) if all(has_y) else None
        m = np.stack([s.mask.flags for s in samples]) if all(has_m) else None
        return cls(x, y, m, n_classes)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.signals[index],
            None if self.labels is None else self.labels[index],
            None if self.masks is None else self.masks[index],
            self.n_classes,
        )


def _windows(x: np.ndarray, p: int) -> np.ndarray:
    """Left-pad the last axis by ``p - 1`` and return length-``p`` windows.

    ``w[..., i, q] == x[..., i + q - (p - 1)]`` (zero when the index is negative).
    """
    pad = [(0, 0)] * (x.ndim - 1) + [(p - 1, 0)]
    return sliding_window_view(np.pad(x, pad), p, axis=-1)


def causal_conv_array(x: np.ndarray, kernel: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Causal convolution on raw arrays.

    ``x`` is ``(..., C_in, T)``, ``kernel`` is ``(C_out, C_in, P)``; returns
    ``(..., C_out, T)`` with ``out[c, i] = sum_{c', j} kernel[c, c', j] x[c', i - j] + bias[c]``.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 3 or kernel.shape[2] < 1:
        raise ConfigurationError(f"kernel must be (C_out, C_in, P) with P >= 1, got {kernel.shape}")
    if x.shape[-2] != kernel.shape[1]:
        raise ConfigurationError(
            f"kernel expects {kernel.shape[1]} input channels, signal has {x.shape[-2]}"
        )
    w = _windows(x, kernel.shape[2])
    out = np.einsum("...ctq,ocq->...ot", w, kernel[:, :, ::-1])
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (kernel.shape[0],):
            raise ConfigurationError(f"bias must have shape ({kernel.shape[0]},), got {bias.shape}")
        out = out + bias[:, None]
    return out


def causal_conv(x: MultiSignal, kernel, bias=None) -> MultiSignal:
    return MultiSignal(causal_conv_array(x.samples, kernel, bias))


def relu(x: MultiSignal) -> MultiSignal:
    return MultiSignal(np.maximum(x.samples, 0.0))


def atom_conv(z: Signal, atom) -> Signal:
    """Place ``atom`` at every time step, scaled by ``z``; output keeps length ``T``."""
    atom = np.asarray(atom, dtype=np.float64).reshape(-1)
    if atom.size < 1:
        raise ConfigurationError("atom must have at least one sample")
    out = causal_conv_array(np.asarray(z)[None, :], atom[None, None, :])
    return Signal(out[0])
