"""Training losses.

Each loss exists twice: a graph builder taking a :class:`~datom.autodiff.Tape`
and batched ``(B, T)`` inputs, used by the trainer, and a plain function on
single signals that returns a float. The plain functions run the graph
builders on constants, so both always agree.

Reconstruction terms are mean squared errors over time; batches average
over samples. The sparsity term is a plain L1 sum per sample.
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import numpy as np

from .autodiff import Tape, Var


class NoisePhase(str, Enum):
    INITIAL = "initial"
    REFINED = "refined"


class LossWeights(NamedTuple):
    alpha_sparsity: float = 0.0
    phase: NoisePhase = NoisePhase.INITIAL


def _check_same(a: Var, b: Var):
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")


# -- graph builders (batched) -------------------------------------------


def fidelity(tape: Tape, x, x_hat) -> Var:
    x, x_hat = tape.const(x), tape.const(x_hat)
    _check_same(x, x_hat)
    return tape.mean(tape.square(tape.sub(x, x_hat)))


def supervised(tape: Tape, x, x_tilde, match) -> Var:
    """Per sample: MSE to ``x`` where ``match``, energy of ``x_tilde`` elsewhere."""
    x, x_tilde = tape.const(x), tape.const(x_tilde)
    _check_same(x, x_tilde)
    m = np.asarray(match, dtype=np.float64).reshape(-1, 1)
    err = tape.mul(tape.square(tape.sub(x, x_tilde)), m)
    energy = tape.mul(tape.square(x_tilde), 1.0 - m)
    return tape.scale(tape.sum(tape.add(err, energy)), 1.0 / x.value.size)


def class_supervised(tape: Tape, x, components: Var, pair_classes, labels, n_classes: int) -> Var:
    """Sum over classes of :func:`supervised`, with class ``c`` reconstructed by its pairs."""
    total = None
    B, n, T = components.shape
    labels = np.asarray(labels)
    for c in range(n_classes):
        sel = (np.asarray(pair_classes) == c).astype(np.float64)[None, :, None]
        x_c = tape.sum(tape.mul(components, sel), axis=1)
        term = supervised(tape, x, x_c, labels == c)
        total = term if total is None else tape.add(total, term)
    return total


def sparsity(tape: Tape, z, normalize: bool = False) -> Var:
    """Batch mean of ``sum |z|`` over pairs and time; ``z`` is ``(B, ...)``.

    With ``normalize`` the per-sample sum is divided by the number of
    activation entries per sample.
    """
    z = tape.const(z)
    per_sample = z.value[0].size if normalize else 1
    return tape.scale(tape.sum(tape.abs(z)), 1.0 / (z.shape[0] * per_sample))


def noise_signal(tape: Tape, x, s_hat, n_hat) -> Var:
    x, s_hat, n_hat = tape.const(x), tape.const(s_hat), tape.const(n_hat)
    return fidelity(tape, x, tape.add(s_hat, n_hat))


def _partition_weights(mask: np.ndarray):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    inside = mask.sum(axis=1, keepdims=True)
    outside = mask.shape[1] - inside
    w_in = np.where(mask, 1.0 / np.maximum(inside, 1), 0.0)
    w_out = np.where(~mask, 1.0 / np.maximum(outside, 1), 0.0)
    return w_in, w_out


def noise_estimator(tape: Tape, x, n_hat, mask, s_hat=None, phase: NoisePhase = NoisePhase.INITIAL) -> Var:
    """Masked-partition loss for the noise bank.

    Inside the mask ``n_hat`` (plus ``s_hat`` in the refined phase) should
    match ``x``; outside it ``n_hat`` should vanish. Each partition is
    averaged on its own, an empty partition contributes 0.
    """
    x, n_hat = tape.const(x), tape.const(n_hat)
    _check_same(x, n_hat)
    phase = NoisePhase(phase)
    if phase is NoisePhase.REFINED:
        if s_hat is None:
            raise ValueError("refined phase needs the signal estimate")
        target = tape.add(n_hat, tape.const(s_hat))
    else:
        target = n_hat
    w_in, w_out = _partition_weights(mask)
    if w_in.shape[1] != x.shape[-1]:
        raise ValueError("mask length does not match signal")
    inside = tape.mul(tape.square(tape.sub(x, target)), w_in)
    outside = tape.mul(tape.square(n_hat), w_out)
    B = 1 if x.value.ndim == 1 else x.shape[0]
    return tape.scale(tape.sum(tape.add(inside, outside)), 1.0 / B)


def ssvep(tape: Tape, x, components: Var, labels) -> tuple[Var, Var]:
    """Reconstruction term and non-target energy term for ``(B, N, T)`` components."""
    x = tape.const(x)
    components = tape.const(components)
    B, N, T = components.shape
    labels = np.asarray(labels).reshape(-1)
    if labels.shape != (B,):
        raise ValueError("need one label per sample")
    if labels.min() < 0 or labels.max() >= N:
        raise ValueError(f"label outside 0..{N - 1}")
    recon = fidelity(tape, x, tape.sum(components, axis=1))
    off_target = 1.0 - np.eye(N)[labels][:, :, None]
    leak = tape.scale(tape.sum(tape.mul(tape.square(components), off_target)), 1.0 / (B * T))
    return recon, leak


# -- single-signal conveniences ------------------------------------------


def _row(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(1, -1)


def fidelity_loss(x, x_hat) -> float:
    x, x_hat = np.asarray(x, dtype=float), np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    return fidelity(Tape(), _row(x), _row(x_hat)).item()


def supervised_loss(x, y: int, c: int, reconstruction_c) -> float:
    x, r = np.asarray(x, dtype=float), np.asarray(reconstruction_c, dtype=float)
    if x.shape != r.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {r.shape}")
    return supervised(Tape(), _row(x), _row(r), [y == c]).item()


def sparsity_loss(z_all, normalize: bool = False) -> float:
    z = np.asarray(z_all, dtype=np.float64)
    return sparsity(Tape(), z[None], normalize).item()


def noise_loss_S(x, s_hat, n_hat) -> float:
    x, s, n = (np.asarray(a, dtype=float) for a in (x, s_hat, n_hat))
    if not (x.shape == s.shape == n.shape):
        raise ValueError("length mismatch")
    return noise_signal(Tape(), _row(x), _row(s), _row(n)).item()


def noise_loss_N(x, n_hat, mask, s_hat=None, phase: NoisePhase = NoisePhase.INITIAL) -> float:
    x, n = np.asarray(x, dtype=float), np.asarray(n_hat, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not (x.shape == n.shape == mask.shape):
        raise ValueError("length mismatch")
    s = None if s_hat is None else _row(s_hat)
    return noise_estimator(Tape(), _row(x), _row(n), mask[None], s, phase).item()


def ssvep_loss(x, components, y: int) -> float:
    comps = np.asarray(components, dtype=np.float64)
    l1, l2 = ssvep(Tape(), _row(x), comps[None], [y])
    return l1.item() + l2.item()
