"""Synthetic ground-truth datasets.

Every generator returns the :class:`~datom.signal.Dataset` together with the
hidden quantities it was built from, so recovery can be scored exactly.
With zero noise each emitted signal equals its defining superposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .signal import Dataset, causal_conv_array


@dataclass
class SynthSpec:
    """Sparse shift-invariant superposition of known atoms plus white noise.

    Activations are Bernoulli(``activation_density``) per time index with
    amplitudes uniform in ``amplitude_range``. With ``relative_noise`` the
    noise standard deviation is ``noise_sigma`` times the RMS of the clean
    signals of the generated set.
    """

    T: int
    true_atoms: list
    activation_density: float = 0.02
    amplitude_range: tuple = (0.5, 1.5)
    noise_sigma: float = 0.0
    relative_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        self.true_atoms = [np.asarray(a, dtype=np.float64).reshape(-1) for a in self.true_atoms]
        self.amplitude_range = tuple(float(v) for v in self.amplitude_range)
        self.validate()

    def validate(self):
        if self.T < 1:
            raise ValueError("T must be positive")
        if not self.true_atoms:
            raise ValueError("need at least one atom")
        if any(a.size < 1 or a.size > self.T for a in self.true_atoms):
            raise ValueError("every atom must fit within T")
        if not 0.0 < self.activation_density <= 1.0:
            raise ValueError("activation_density must lie in (0, 1]")
        lo, hi = self.amplitude_range
        if lo > hi:
            raise ValueError("amplitude_range must satisfy lo <= hi")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass
class BasicTruth:
    activations: np.ndarray  # (n, N, T)
    components: np.ndarray  # (n, N, T)
    noise: np.ndarray  # (n, T)

    @property
    def clean(self) -> np.ndarray:
        return self.components.sum(axis=1)


def superpose(atoms: Sequence[np.ndarray], activations: np.ndarray) -> np.ndarray:
    """Per-atom components ``conv(atom_k, activation_k)``; activations ``(..., N, T)``."""
    act = np.asarray(activations, dtype=np.float64)
    comps = np.empty_like(act)
    for k, a in enumerate(atoms):
        comps[..., k, :] = causal_conv_array(act[..., k : k + 1, :], np.asarray(a)[None, None, :])[..., 0, :]
    return comps


def gen_basic(spec: SynthSpec, n: int) -> tuple[Dataset, BasicTruth]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    N, T = len(spec.true_atoms), spec.T
    on = rng.random((n, N, T)) < spec.activation_density
    amp = rng.uniform(*spec.amplitude_range, size=(n, N, T))
    act = np.where(on, amp, 0.0)
    comps = superpose(spec.true_atoms, act)
    clean = comps.sum(axis=1)
    sigma = spec.noise_sigma
    if spec.relative_noise:
        sigma *= float(np.sqrt(np.mean(clean**2)))
    noise = sigma * rng.standard_normal((n, T)) if sigma > 0 else np.zeros((n, T))
    return Dataset(clean + noise), BasicTruth(act, comps, noise)


def default_flash_response(fs: float, duration: float = 0.1) -> np.ndarray:
    """Hann-windowed single-cycle response lasting ``duration`` seconds."""
    m = max(2, int(round(fs * duration)))
    t = np.arange(m) / m
    return np.sin(2 * np.pi * t) * np.hanning(m)


@dataclass
class SSVEPSynthSpec:
    """Periodic flash responses: ``x[i] = sum_l g_l v[i - onset_l] + noise``.

    Flash ``l`` of a class with frequency ``f`` and phase ``phi`` starts at
    sample ``l * round(fs / f) - round(fs * phi)``; flashes are placed for
    every integer ``l`` whose response overlaps the window.
    """

    T: int
    sampling_rate: float
    flash_response: np.ndarray
    gain_range: tuple = (1.0, 1.0)
    noise_sigma: float = 0.0
    phases: Optional[list] = None
    seed: int = 0

    def __post_init__(self):
        self.flash_response = np.asarray(self.flash_response, dtype=np.float64).reshape(-1)
        self.gain_range = tuple(float(v) for v in self.gain_range)

    def period(self, f: float) -> int:
        if f <= 0:
            raise ValueError("flicker frequency must be positive")
        p = int(round(self.sampling_rate / f))
        if p < 2:
            raise ValueError(f"{f} Hz is not representable with 2 samples per period at {self.sampling_rate} Hz")
        return p


def flash_onsets(T: int, period: int, shift: int, width: int) -> np.ndarray:
    """Onsets ``l * period - shift`` overlapping ``[0, T)`` for a response of ``width`` samples."""
    lo = int(np.ceil((-(width - 1) + shift) / period))
    hi = int(np.floor((T - 1 + shift) / period))
    return np.arange(lo, hi + 1) * period - shift


def place(T: int, waveform: np.ndarray, onsets, gains) -> np.ndarray:
    """Sum of ``gains[k] * waveform`` starting at ``onsets[k]`` (clipped to ``[0, T)``)."""
    out = np.zeros(T)
    m = waveform.size
    for t0, g in zip(onsets, gains):
        a, b = max(t0, 0), min(t0 + m, T)
        if a < b:
            out[a:b] += g * waveform[a - t0 : b - t0]
    return out


@dataclass
class SSVEPTruth:
    clean: np.ndarray
    noise: np.ndarray


def gen_ssvep(spec: SSVEPSynthSpec, class_frequencies: Sequence[float], n_per_class: int) -> tuple[Dataset, SSVEPTruth]:
    rng = np.random.default_rng(spec.seed)
    periods = [spec.period(f) for f in class_frequencies]
    phases = spec.phases if spec.phases is not None else [0.0] * len(periods)
    if len(phases) != len(periods):
        raise ValueError("need one phase per class")
    v = spec.flash_response
    clean, labels = [], []
    for c, (p, phi) in enumerate(zip(periods, phases)):
        onsets = flash_onsets(spec.T, p, int(round(spec.sampling_rate * phi)), v.size)
        for _ in range(n_per_class):
            g = rng.uniform(*spec.gain_range, size=onsets.size)
            clean.append(place(spec.T, v, onsets, g))
            labels.append(c)
    clean = np.array(clean)
    noise = spec.noise_sigma * rng.standard_normal(clean.shape) if spec.noise_sigma > 0 else np.zeros_like(clean)
    return Dataset(clean + noise, np.array(labels), n_classes=len(periods)), SSVEPTruth(clean, noise)


@dataclass
class NoiseTruth:
    s: np.ndarray
    n: np.ndarray
    onsets: list


def gen_noise_mixture(
    signal_spec: SynthSpec,
    artifact_waveform,
    event_rate: float,
    n: int,
    artifact_gain_range: tuple = (1.0, 1.0),
    seed: Optional[int] = None,
) -> tuple[Dataset, NoiseTruth]:
    """Brain-like signals plus artifacts at random events, with event masks.

    The number of artifacts per signal is Poisson(``event_rate``), onsets
    uniform over positions where the whole artifact fits. The mask is true
    exactly on the support of each placed artifact.
    """
    art = np.asarray(artifact_waveform, dtype=np.float64).reshape(-1)
    T = signal_spec.T
    if art.size < 1 or art.size > T:
        raise ValueError("artifact must fit within T")
    if event_rate < 0:
        raise ValueError("event_rate must be non-negative")
    data, truth = gen_basic(signal_spec, n)
    rng = np.random.default_rng(signal_spec.seed + 1 if seed is None else seed)
    s = data.signals
    noise = np.zeros_like(s)
    masks = np.zeros(s.shape, dtype=bool)
    onsets = []
    for k in range(n):
        count = rng.poisson(event_rate) if event_rate > 0 else 0
        t0 = rng.integers(0, T - art.size + 1, size=count)
        g = rng.uniform(*artifact_gain_range, size=count)
        noise[k] = place(T, art, t0, g)
        for t in t0:
            masks[k, t : t + art.size] = True
        onsets.append(t0.tolist())
    return Dataset(s + noise, masks=masks), NoiseTruth(s, noise, onsets)


@dataclass
class ERPSynthSpec:
    """``x = sum_p g_p v_p + noise`` with class-dependent Gaussian gains.

    ``gain_means[c][p]`` is the mean gain of component ``p`` in class ``c``;
    ``gain_std[p]`` its spread.
    """

    component_waveforms: np.ndarray
    gain_means: np.ndarray
    gain_std: np.ndarray = None
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.component_waveforms = np.atleast_2d(np.asarray(self.component_waveforms, dtype=np.float64))
        self.gain_means = np.atleast_2d(np.asarray(self.gain_means, dtype=np.float64))
        P = self.component_waveforms.shape[0]
        if self.gain_means.shape[1] != P:
            raise ValueError("gain_means needs one column per component")
        self.gain_std = np.zeros(P) if self.gain_std is None else np.broadcast_to(
            np.asarray(self.gain_std, dtype=np.float64), (P,)).copy()

    @property
    def T(self) -> int:
        return self.component_waveforms.shape[1]


@dataclass
class ERPTruth:
    gains: np.ndarray  # (n, P)
    noise: np.ndarray  # (n, T)


def gen_erp(spec: ERPSynthSpec, classes: Sequence[int], n_per_class: int) -> tuple[Dataset, ERPTruth]:
    rng = np.random.default_rng(spec.seed)
    V = spec.component_waveforms
    gains, labels = [], []
    for c in classes:
        g = spec.gain_means[c] + spec.gain_std * rng.standard_normal((n_per_class, V.shape[0]))
        gains.append(g)
        labels += [c] * n_per_class
    gains = np.concatenate(gains)
    noise = spec.noise_sigma * rng.standard_normal((gains.shape[0], spec.T)) if spec.noise_sigma > 0 \
        else np.zeros((gains.shape[0], spec.T))
    x = gains @ V + noise
    return Dataset(x, np.array(labels), n_classes=spec.gain_means.shape[0]), ERPTruth(gains, noise)
