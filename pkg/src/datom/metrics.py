"""Reconstruction errors and periodogram spectra."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _pair(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    return x, x_hat


def rmse(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat)
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


def mae(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat)
    return float(np.mean(np.abs(x - x_hat)))


def nmae(x, x_hat) -> float:
    """MAE divided by the mean absolute amplitude of ``x``."""
    x, x_hat = _pair(x, x_hat)
    ma = np.mean(np.abs(x))
    if ma == 0:
        raise ZeroDivisionError("nmae is undefined for an all-zero reference signal")
    return float(np.mean(np.abs(x - x_hat)) / ma)


def periodogram(x, sampling_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram ``|DFT|^2 / (fs T)`` with non-DC/Nyquist bins doubled.

    ``sum(power) * fs / T`` equals ``mean(x**2)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    T = x.size
    if T < 2:
        raise ValueError("periodogram needs at least 2 samples")
    power = np.abs(np.fft.rfft(x)) ** 2 / (sampling_rate * T)
    if T % 2 == 0:
        power[1:-1] *= 2
    else:
        power[1:] *= 2
    return np.fft.rfftfreq(T, d=1.0 / sampling_rate), power


@dataclass
class EvalReport:
    rmse: float
    mae: float
    nmae: float
    component_rmse: list = field(default_factory=list)
    psd: Optional[tuple] = None


def evaluate(x, x_hat, components=None, true_components=None, sampling_rate: Optional[float] = None) -> EvalReport:
    """Errors of one reconstruction; per-component RMSE when ground truth is given."""
    x, x_hat = _pair(x, x_hat)
    ma = np.mean(np.abs(x))
    rep = EvalReport(rmse(x, x_hat), mae(x, x_hat), float(mae(x, x_hat) / ma) if ma > 0 else float("nan"))
    if components is not None and true_components is not None:
        rep.component_rmse = [rmse(c, t) for c, t in zip(components, true_components)]
    if sampling_rate is not None:
        rep.psd = periodogram(x_hat, sampling_rate)
    return rep


def write_reports(path, reports: list[EvalReport]):
    width = max((len(r.component_rmse) for r in reports), default=0)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "rmse", "mae", "nmae"] + [f"rmse_component_{k}" for k in range(width)])
        for k, r in enumerate(reports):
            w.writerow([k, repr(r.rmse), repr(r.mae), repr(r.nmae)] + [repr(v) for v in r.component_rmse])


def write_psd(path, freqs, power):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frequency", "power"])
        for fr, p in zip(freqs, power):
            w.writerow([repr(float(fr)), repr(float(p))])
