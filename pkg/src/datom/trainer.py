"""Epoch loop: shuffled mini-batches, Adam, schedules and atom reassignment."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import losses
from .autodiff import Tape, Var
from .losses import LossWeights, NoisePhase
from .models import (
    BasicDecomposer,
    ERPDecomposer,
    NoiseDecomposer,
    SSVEPDecomposer,
    atom_reassign,
    banks,
    choose_donor,
    detect_dead_atoms,
)
from .optim import Adam
from .signal import Dataset

log = logging.getLogger(__name__)

CONFIG_VERSION = 1


class CompatibilityError(ValueError):
    """The dataset lacks what the architecture needs (labels, masks, length)."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    # (start_epoch, alpha) steps; the last step whose start <= epoch is active.
    alpha_sparsity_schedule: list = field(default_factory=lambda: [(0, 0.0)])
    sparsity_normalize: bool = False
    noise_phase_switch_epoch: Optional[int] = None
    reassign_check_every: int = 100
    reassign_threshold: float = 1e-3
    resample_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.alpha_sparsity_schedule = [(int(e), float(a)) for e, a in self.alpha_sparsity_schedule]
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("lr and weight_decay must be non-negative, eps positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        starts = [e for e, _ in self.alpha_sparsity_schedule]
        if not starts or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("alpha_sparsity_schedule epochs must be strictly increasing")
        if any(a < 0 for _, a in self.alpha_sparsity_schedule):
            raise ValueError("alpha_sparsity must be non-negative")
        if self.reassign_check_every < 0 or self.reassign_threshold <= 0:
            raise ValueError("invalid reassignment policy")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_sparsity_schedule"] = [list(s) for s in self.alpha_sparsity_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


def apply_schedules(config: TrainConfig, epoch: int) -> LossWeights:
    """Active sparsity weight and noise-loss phase at ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    alpha = 0.0
    for start, value in config.alpha_sparsity_schedule:
        if epoch >= start:
            alpha = value
    switch = config.noise_phase_switch_epoch
    phase = NoisePhase.REFINED if switch is not None and epoch >= switch else NoisePhase.INITIAL
    return LossWeights(alpha, phase)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    fidelity: float
    sparsity: float
    reassigns: int = 0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    reassign_events: list = field(default_factory=list)  # (epoch, bank, dead, donor)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "total", "fidelity", "sparsity", "reassigns"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.total), repr(r.fidelity), repr(r.sparsity), r.reassigns])


def check_compatible(model, data: Dataset):
    """Raise :class:`CompatibilityError` when ``data`` cannot train ``model``."""
    if len(data) == 0:
        raise CompatibilityError("dataset is empty")
    if isinstance(model, NoiseDecomposer) and data.masks is None:
        raise CompatibilityError("the noise architecture needs noise masks")
    if isinstance(model, SSVEPDecomposer):
        if data.labels is None:
            raise CompatibilityError("the ssvep architecture needs class labels")
        if data.n_classes > model.n_components:
            raise CompatibilityError(f"{data.n_classes} classes but {model.n_components} detectors")
    if getattr(model, "pair_classes", None) is not None:
        if data.labels is None:
            raise CompatibilityError("per-class decomposers need class labels")
        if data.n_classes > int(model.pair_classes.max()) + 1:
            raise CompatibilityError("some classes have no pairs assigned")
    if isinstance(model, ERPDecomposer) and data.length != model.signal_length:
        raise CompatibilityError(f"ERP atoms have length {model.signal_length}, signals have {data.length}")


def _reconstruction_term(tape, model, x, out, labels, n_classes):
    pc = getattr(model, "pair_classes", None)
    if pc is None:
        return losses.fidelity(tape, x, out["reconstruction"])
    return losses.class_supervised(tape, x, out["components"], pc, labels, n_classes)


def objective(model, tape: Tape, x: Var, labels, masks, weights: LossWeights, normalize: bool = False,
              n_classes: Optional[int] = None) -> dict:
    """Build the training loss of ``model`` on one batch.

    Returns the ``total`` loss node plus ``fidelity`` and ``sparsity`` nodes
    and the forward outputs.
    """
    if isinstance(model, NoiseDecomposer):
        out = model.forward(tape, x, detach_noise=True)
        n_const = out["n_hat_detached"]
        # Each estimator is driven by its own loss only.
        l_s = losses.noise_signal(tape, x, out["s_hat"], n_const)
        s_const = Var(out["s_hat"].value)
        l_n = losses.noise_estimator(tape, x, out["n_hat"], masks, s_const, weights.phase)
        fid = l_s
        main = tape.add(l_s, l_n)
        sp = tape.add(losses.sparsity(tape, out["signal"]["z"], normalize),
                      losses.sparsity(tape, out["noise"]["z"], normalize))
    elif isinstance(model, SSVEPDecomposer):
        out = model.forward(tape, x)
        fid, leak = losses.ssvep(tape, x, out["components"], labels)
        main = tape.add(fid, leak)
        sp = losses.sparsity(tape, out["z"], normalize)
    else:
        out = model.forward(tape, x)
        fid = _reconstruction_term(tape, model, x, out, labels, n_classes)
        main = fid
        sp = losses.sparsity(tape, out["z"], normalize)
    total = tape.add(main, tape.scale(sp, weights.alpha_sparsity)) if weights.alpha_sparsity else main
    return {"total": total, "fidelity": fid, "sparsity": sp, "out": out}


def _pair_energy(model, out) -> list:
    if isinstance(model, NoiseDecomposer):
        return [np.mean(out[k]["components"].value ** 2, axis=(0, 2)) for k in ("signal", "noise")]
    if isinstance(model, (BasicDecomposer, ERPDecomposer)):
        return [np.mean(out["components"].value ** 2, axis=(0, 2))]
    return []


def reassign_dead(model, energies, threshold: float) -> list:
    """Revive dead atoms in every bank; returns ``(bank, dead, donor)`` events."""
    events = []
    for b, (bank, energy) in enumerate(zip(banks(model), energies)):
        dead = detect_dead_atoms(bank, threshold)
        used = list(dead)
        for k in dead:
            donor = choose_donor(bank, k, energy, exclude=used)
            if donor is None:
                continue
            atom_reassign(bank, k, donor)
            used.append(donor)
            events.append((b, k, donor))
    return events


def _diagnostic(model, epoch, batch) -> str:
    norms = ", ".join(f"{p.name}={np.linalg.norm(p.value):.3g}" for p in model.parameters())
    return f"non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}"


def train(
    model,
    data: Dataset,
    config: TrainConfig,
    resample: Optional[Callable[[int, np.random.Generator], Dataset]] = None,
    callback: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainHistory:
    """Train ``model`` in place and return the per-epoch history.

    Each epoch draws a permutation from a PCG64 generator seeded with
    ``config.seed``; batches are consecutive slices of it, the last one
    possibly shorter. Adam steps once per batch on the batch-mean loss.
    Every ``reassign_check_every`` epochs dead atoms are revived from the
    pair with the largest output energy on the most recent batch.
    ``resample(epoch, rng)``, called every ``resample_every`` epochs,
    may swap in a fresh training set.
    """
    check_compatible(model, data)
    config.validate()
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.lr, (config.beta1, config.beta2), config.eps, config.weight_decay)
    history = TrainHistory()
    energies = None
    n_classes = data.n_classes

    for epoch in range(config.epochs):
        if resample is not None and config.resample_every and epoch > 0 and epoch % config.resample_every == 0:
            data = resample(epoch, rng)
            check_compatible(model, data)
        reassigns = 0
        if config.reassign_check_every and epoch > 0 and epoch % config.reassign_check_every == 0 and energies:
            events = reassign_dead(model, energies, config.reassign_threshold)
            reassigns = len(events)
            history.reassign_events += [(epoch, *e) for e in events]
            if events:
                log.info("epoch %d: reassigned %s", epoch, events)

        weights = apply_schedules(config, epoch)
        order = rng.permutation(len(data))
        sums = np.zeros(3)
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            tape = Tape()
            res = objective(
                model, tape, Var(data.signals[idx]),
                None if data.labels is None else data.labels[idx],
                None if data.masks is None else data.masks[idx],
                weights, config.sparsity_normalize, n_classes,
            )
            total = res["total"].item()
            if not np.isfinite(total):
                raise NumericalError(_diagnostic(model, epoch, b))
            opt.zero_grad()
            tape.backward(res["total"])
            opt.step()
            sums += len(idx) * np.array([total, res["fidelity"].item(), res["sparsity"].item()])
            energies = _pair_energy(model, res["out"])

        t, f, s = sums / len(data)
        rec = EpochRecord(epoch, float(t), float(f), float(s), reassigns)
        history.records.append(rec)
        if callback is not None:
            callback(rec)
    return history


def dataset_losses(model, data: Dataset, weights: LossWeights = LossWeights(), normalize: bool = False) -> dict:
    """Whole-dataset ``total``/``fidelity``/``sparsity`` without updating anything."""
    res = objective(
        model, Tape(), Var(data.signals), data.labels, data.masks, weights, normalize, data.n_classes
    )
    return {k: res[k].item() for k in ("total", "fidelity", "sparsity")}
