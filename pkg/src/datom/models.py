"""Detector-atom decomposers.

A decomposer is a bank of ``N`` detector-atom pairs. The detector of every
pair is a stack of causal convolutions ending in a ReLU, so its output
``z_n`` is a non-negative activation signal as long as the input. The atom
``a_n`` is convolved with ``z_n`` to give the pair's component; components
add up to the reconstruction.

All pairs of one bank share the same layer layout, which lets the whole
bank run as a single batched convolution per layer. Parameters are stacked
along a leading pair axis.

Variants:

* :class:`BasicDecomposer` -- independent pairs, optionally partitioned
  into per-class groups for supervised training.
* :class:`NoiseDecomposer` -- a noise bank estimates ``n_hat`` from ``x``
  and a signal bank estimates ``s_hat`` from ``x - n_hat``.
* :class:`SSVEPDecomposer` -- one detector per class, all convolved with
  one shared atom.
* :class:`ERPDecomposer` -- detectors emit one scalar each and atoms span
  the whole signal, ``x_hat = sum_p d_p(x) a_p``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .autodiff import Parameter, Tape, Var
from .signal import ConfigurationError, Signal


@dataclass(frozen=True)
class DetectorSpec:
    """Layer layout of one detector.

    ``layers`` holds ``(in_channels, out_channels, kernel_size)`` triples.
    A ReLU follows every hidden layer when ``hidden_relu`` is set. When the
    last layer has several output channels they are summed before the final
    ReLU. With ``final_scalar`` the last conv output is summed over time and
    mapped to one value by a dense layer before the ReLU.
    """

    layers: tuple = ((1, 1, 16),)
    final_scalar: bool = False
    hidden_relu: bool = True

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ConfigurationError("detector needs at least one layer")
        if layers[0][0] != 1:
            raise ConfigurationError("first detector layer must take 1 input channel")
        for (_, c_out, _), (c_in, _, _) in zip(layers, layers[1:]):
            if c_out != c_in:
                raise ConfigurationError(f"layer channels do not chain: {c_out} -> {c_in}")
        for c_in, c_out, p in layers:
            if c_in < 1 or c_out < 1 or p < 1:
                raise ConfigurationError(f"invalid layer {(c_in, c_out, p)}")

    @classmethod
    def stack(cls, n_layers: int, kernel_size: int, channels: int = 1, **kw) -> "DetectorSpec":
        """``n_layers`` convolutions with ``channels`` hidden channels each."""
        if n_layers < 1:
            raise ConfigurationError("detector needs at least one layer")
        layers = [(1 if k == 0 else channels, channels, kernel_size) for k in range(n_layers)]
        return cls(tuple(layers), **kw)

    def to_dict(self) -> dict:
        return {
            "layers": [list(layer) for layer in self.layers],
            "final_scalar": self.final_scalar,
            "hidden_relu": self.hidden_relu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorSpec":
        return cls(tuple(tuple(layer) for layer in d["layers"]), bool(d.get("final_scalar", False)),
                   bool(d.get("hidden_relu", True)))


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class DetectorBank:
    """``n`` detectors with identical layout, evaluated together."""

    def __init__(self, spec: DetectorSpec, n: int, rng: np.random.Generator, prefix: str = "detector"):
        if n < 1:
            raise ConfigurationError("bank needs at least one detector")
        self.spec = spec
        self.n = n
        self.kernels: list[Parameter] = []
        self.biases: list[Parameter] = []
        for k, (c_in, c_out, p) in enumerate(spec.layers):
            bound = 1.0 / np.sqrt(c_in * p)
            self.kernels.append(Parameter(_uniform(rng, bound, (n, c_out, c_in, p)), f"{prefix}.{k}.kernel"))
            self.biases.append(Parameter(_uniform(rng, bound, (n, c_out)), f"{prefix}.{k}.bias"))
        self.head_weight = self.head_bias = None
        if spec.final_scalar:
            c = spec.layers[-1][1]
            bound = 1.0 / np.sqrt(c)
            self.head_weight = Parameter(_uniform(rng, bound, (n, 1, c)), f"{prefix}.head.weight")
            self.head_bias = Parameter(_uniform(rng, bound, (n, 1)), f"{prefix}.head.bias")

    def parameters(self) -> list[Parameter]:
        ps = [p for pair in zip(self.kernels, self.biases) for p in pair]
        if self.head_weight is not None:
            ps += [self.head_weight, self.head_bias]
        return ps

    def forward(self, tape: Tape, x: Var) -> Var:
        """``x``: ``(B, T)``. Returns ``(B, n, T)``, or ``(B, n)`` for scalar heads."""
        B, T = x.shape
        h = tape.broadcast_to(tape.reshape(x, (B, 1, 1, T)), (B, self.n, 1, T))
        last = len(self.kernels) - 1
        for k, (w, b) in enumerate(zip(self.kernels, self.biases)):
            h = tape.conv(h, w, b)
            if k < last and self.spec.hidden_relu:
                h = tape.relu(h)
        if self.spec.final_scalar:
            h = tape.dense(tape.sum(h, axis=3), self.head_weight, self.head_bias)
            return tape.relu(tape.reshape(h, (B, self.n)))
        if h.shape[2] > 1:
            h = tape.sum(h, axis=2)
        else:
            h = tape.reshape(h, (B, self.n, T))
        return tape.relu(h)

    def copy_pair(self, src: int, dst: int):
        for p in self.parameters():
            p.value[dst] = p.value[src]


def _atom_components(tape: Tape, z: Var, atoms: Var) -> Var:
    """Convolve each ``z[:, n]`` with ``atoms[n]``: ``(B, n, T)``."""
    B, n, T = z.shape
    m = atoms.shape[-1]
    out = tape.conv(tape.reshape(z, (B, n, 1, T)), tape.reshape(atoms, (n, 1, 1, m)))
    return tape.reshape(out, (B, n, T))


def _as_batch(x) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        return a[None, :], True
    if a.ndim != 2:
        raise ConfigurationError(f"expected (T,) or (B, T) input, got {a.shape}")
    return a, False


class Decomposition(NamedTuple):
    """Numeric result of a forward pass; arrays keep the batch axis."""

    components: np.ndarray  # (B, N, T)
    reconstruction: np.ndarray  # (B, T)
    activations: np.ndarray  # (B, N, T), or (B, N) detector scalars for ERP


class _Model:
    arch: str = ""

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def forward(self, tape: Tape, x: Var) -> dict:
        raise NotImplementedError

    def decompose(self, x) -> Decomposition:
        xb, _ = _as_batch(x)
        out = self.forward(Tape(), Var(xb))
        return Decomposition(out["components"].value, out["reconstruction"].value, out["z"].value)

    def round_float32(self):
        """Round every parameter to float32, matching what a saved file holds."""
        for p in self.parameters():
            p.value[...] = p.value.astype(np.float32).astype(np.float64)
        return self

    def clone(self):
        return copy.deepcopy(self)

    @property
    def n_components(self) -> int:
        raise NotImplementedError


class BasicDecomposer(_Model):
    """``N`` independent detector-atom pairs whose components sum to ``x_hat``.

    ``pair_classes`` assigns each pair to a class; the summed components of
    the pairs of class ``c`` then act as the ``c``-th per-class decomposer
    for supervised training.
    """

    arch = "basic"

    def __init__(
        self,
        n_pairs: int,
        atom_length: int,
        detector: DetectorSpec = DetectorSpec(),
        pair_classes: Optional[Sequence[int]] = None,
        seed: int = 0,
        prefix: str = "",
    ):
        if atom_length < 1:
            raise ConfigurationError("atom length must be at least 1")
        rng = np.random.default_rng(seed)
        self.detector_spec = detector
        self.detectors = DetectorBank(detector, n_pairs, rng, prefix + "detector")
        # The atom layer maps n_pairs channels to one, so its fan-in is n_pairs * atom_length.
        self.atoms = Parameter(_uniform(rng, 1.0 / np.sqrt(n_pairs * atom_length), (n_pairs, atom_length)),
                               prefix + "atoms")
        self.pair_classes = None
        if pair_classes is not None:
            pc = np.asarray(pair_classes, dtype=np.int64)
            if pc.shape != (n_pairs,) or pc.min() < 0:
                raise ConfigurationError("pair_classes needs one non-negative class per pair")
            self.pair_classes = pc

    @property
    def n_components(self) -> int:
        return self.detectors.n

    @property
    def atom_length(self) -> int:
        return self.atoms.shape[1]

    def parameters(self) -> list[Parameter]:
        return self.detectors.parameters() + [self.atoms]

    def forward(self, tape: Tape, x: Var) -> dict:
        z = self.detectors.forward(tape, x)
        comps = _atom_components(tape, z, self.atoms)
        return {"z": z, "components": comps, "reconstruction": tape.sum(comps, axis=1)}

    def config(self) -> dict:
        return {
            "n_pairs": self.detectors.n,
            "atom_length": self.atom_length,
            "detector": self.detector_spec.to_dict(),
            "pair_classes": None if self.pair_classes is None else self.pair_classes.tolist(),
        }

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 0, prefix: str = "") -> "BasicDecomposer":
        return cls(cfg["n_pairs"], cfg["atom_length"], DetectorSpec.from_dict(cfg["detector"]),
                   cfg.get("pair_classes"), seed=seed, prefix=prefix)


class NoiseDecomposer(_Model):
    """Signal and noise estimators: ``n_hat = N(x)``, ``s_hat = S(x - n_hat)``."""

    arch = "noise"

    def __init__(self, signal: BasicDecomposer, noise: BasicDecomposer):
        self.signal = signal
        self.noise = noise

    @classmethod
    def build(cls, n_signal: int, n_noise: int, atom_length: int, detector: DetectorSpec = DetectorSpec(),
              noise_atom_length: Optional[int] = None, noise_detector: Optional[DetectorSpec] = None,
              seed: int = 0) -> "NoiseDecomposer":
        seeds = np.random.SeedSequence(seed).generate_state(2)
        return cls(
            BasicDecomposer(n_signal, atom_length, detector, seed=int(seeds[0]), prefix="signal."),
            BasicDecomposer(n_noise, noise_atom_length or atom_length, noise_detector or detector,
                            seed=int(seeds[1]), prefix="noise."),
        )

    @property
    def n_components(self) -> int:
        return 2

    def parameters(self) -> list[Parameter]:
        return self.signal.parameters() + self.noise.parameters()

    def forward(self, tape: Tape, x: Var, detach_noise: bool = False) -> dict:
        """With ``detach_noise`` the signal bank sees ``n_hat`` as a constant.

        Values are identical either way; only the gradient routing differs.
        """
        nz = self.noise.forward(tape, x)
        n_hat = nz["reconstruction"]
        n_in = Var(n_hat.value) if detach_noise else n_hat
        sz = self.signal.forward(tape, tape.sub(x, n_in))
        s_hat = sz["reconstruction"]
        B, T = x.shape
        comps = tape.add(
            tape.mul(tape.reshape(s_hat, (B, 1, T)), np.array([1.0, 0.0])[None, :, None]),
            tape.mul(tape.reshape(n_hat, (B, 1, T)), np.array([0.0, 1.0])[None, :, None]),
        )
        return {
            "s_hat": s_hat,
            "n_hat": n_hat,
            "n_hat_detached": n_in,
            "signal": sz,
            "noise": nz,
            "z": Var(np.concatenate([sz["z"].value, nz["z"].value], axis=1)),
            "components": comps,
            "reconstruction": tape.add(s_hat, n_hat),
        }

    def config(self) -> dict:
        return {"signal": self.signal.config(), "noise": self.noise.config()}

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 0) -> "NoiseDecomposer":
        seeds = np.random.SeedSequence(seed).generate_state(2)
        return cls(BasicDecomposer.from_config(cfg["signal"], int(seeds[0]), "signal."),
                   BasicDecomposer.from_config(cfg["noise"], int(seeds[1]), "noise."))


class SSVEPDecomposer(_Model):
    """One detector per stimulus class, all sharing a single atom."""

    arch = "ssvep"

    def __init__(self, n_classes: int, atom_length: int, detector: DetectorSpec = DetectorSpec(), seed: int = 0):
        if atom_length < 1:
            raise ConfigurationError("atom length must be at least 1")
        rng = np.random.default_rng(seed)
        self.detector_spec = detector
        self.detectors = DetectorBank(detector, n_classes, rng)
        self.atom = Parameter(_uniform(rng, 1.0 / np.sqrt(n_classes * atom_length), (1, atom_length)), "atom")

    @property
    def n_components(self) -> int:
        return self.detectors.n

    def parameters(self) -> list[Parameter]:
        return self.detectors.parameters() + [self.atom]

    def forward(self, tape: Tape, x: Var) -> dict:
        z = self.detectors.forward(tape, x)
        atoms = tape.broadcast_to(self.atom, (self.detectors.n, self.atom.shape[1]))
        comps = _atom_components(tape, z, atoms)
        return {"z": z, "components": comps, "reconstruction": tape.sum(comps, axis=1)}

    def config(self) -> dict:
        return {"n_classes": self.detectors.n, "atom_length": self.atom.shape[1],
                "detector": self.detector_spec.to_dict()}

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 0) -> "SSVEPDecomposer":
        return cls(cfg["n_classes"], cfg["atom_length"], DetectorSpec.from_dict(cfg["detector"]), seed)


class ERPDecomposer(_Model):
    """Scalar detectors scaling full-length atoms: ``x_hat = sum_p d_p(x) a_p``."""

    arch = "erp"

    def __init__(
        self,
        n_components: int,
        signal_length: int,
        detector: DetectorSpec = DetectorSpec(final_scalar=True),
        pair_classes: Optional[Sequence[int]] = None,
        seed: int = 0,
    ):
        if not detector.final_scalar:
            detector = DetectorSpec(detector.layers, True, detector.hidden_relu)
        rng = np.random.default_rng(seed)
        self.detector_spec = detector
        self.detectors = DetectorBank(detector, n_components, rng)
        bound = 1.0 / np.sqrt(n_components * signal_length)
        self.atoms = Parameter(_uniform(rng, bound, (n_components, signal_length)), "atoms")
        self.pair_classes = None
        if pair_classes is not None:
            pc = np.asarray(pair_classes, dtype=np.int64)
            if pc.shape != (n_components,) or pc.min() < 0:
                raise ConfigurationError("pair_classes needs one non-negative class per pair")
            self.pair_classes = pc

    @property
    def n_components(self) -> int:
        return self.detectors.n

    @property
    def signal_length(self) -> int:
        return self.atoms.shape[1]

    @property
    def atom_length(self) -> int:
        return self.atoms.shape[1]

    def parameters(self) -> list[Parameter]:
        return self.detectors.parameters() + [self.atoms]

    def forward(self, tape: Tape, x: Var) -> dict:
        B, T = x.shape
        if T != self.signal_length:
            raise ConfigurationError(f"ERP atoms have length {self.signal_length}, input has {T}")
        w = self.detectors.forward(tape, x)
        comps = tape.mul(tape.reshape(w, (B, self.detectors.n, 1)), self.atoms)
        return {"z": w, "components": comps, "reconstruction": tape.sum(comps, axis=1)}

    def config(self) -> dict:
        return {
            "n_components": self.detectors.n,
            "signal_length": self.signal_length,
            "detector": self.detector_spec.to_dict(),
            "pair_classes": None if self.pair_classes is None else self.pair_classes.tolist(),
        }

    @classmethod
    def from_config(cls, cfg: dict, seed: int = 0) -> "ERPDecomposer":
        return cls(cfg["n_components"], cfg["signal_length"], DetectorSpec.from_dict(cfg["detector"]),
                   cfg.get("pair_classes"), seed)


ARCHITECTURES = {
    "basic": BasicDecomposer,
    "noise": NoiseDecomposer,
    "ssvep": SSVEPDecomposer,
    "erp": ERPDecomposer,
}


def build_model(arch: str, cfg: dict, seed: int = 0) -> _Model:
    """Construct a model from its ``config()`` dictionary."""
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ConfigurationError(f"unknown architecture {arch!r}") from None
    return cls.from_config(cfg, seed=seed)


# -- numeric forward helpers on single signals ---------------------------


def _signals(a: np.ndarray) -> list[Signal]:
    return [Signal(row) for row in a]


def basic_forward(model: BasicDecomposer, x) -> tuple[list[Signal], Signal]:
    d = model.decompose(np.asarray(x))
    return _signals(d.components[0]), Signal(d.reconstruction[0])


def ssvep_forward(model: SSVEPDecomposer, x) -> tuple[list[Signal], Signal]:
    d = model.decompose(np.asarray(x))
    return _signals(d.components[0]), Signal(d.reconstruction[0])


def noise_forward(model: NoiseDecomposer, x) -> tuple[Signal, Signal]:
    d = model.decompose(np.asarray(x))
    return Signal(d.components[0, 0]), Signal(d.components[0, 1])


def erp_forward(model: ERPDecomposer, x) -> tuple[np.ndarray, Signal]:
    x = np.asarray(x)
    if x.shape[-1] != model.signal_length:
        raise ConfigurationError(f"ERP atoms have length {model.signal_length}, input has {x.shape[-1]}")
    d = model.decompose(x)
    return d.activations[0], Signal(d.reconstruction[0])


# -- atom reassignment ---------------------------------------------------


def banks(model) -> list:
    """Sub-models whose pairs each own an atom (reassignment targets)."""
    if isinstance(model, NoiseDecomposer):
        return [model.signal, model.noise]
    if isinstance(model, (BasicDecomposer, ERPDecomposer)):
        return [model]
    return []


def atom_norms(bank) -> np.ndarray:
    return np.linalg.norm(bank.atoms.value, axis=1)


def detect_dead_atoms(bank, threshold: float = 1e-3) -> list[int]:
    """Pairs whose atom norm is below ``threshold`` times the median atom norm."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    norms = atom_norms(bank)
    cut = threshold * np.median(norms)
    return [int(k) for k in np.flatnonzero(norms < cut)]


def atom_reassign(bank, dead: int, donor: int):
    """Hand half of the donor's atom to a dead pair.

    The dead pair gets a copy of the donor detector and the first half of the
    donor atom (zero-padded); the donor keeps only its second half. Both
    detectors then produce the same activation, so the sum of the two pairs'
    components equals the donor's component before the split. For odd atom
    lengths the first half takes the extra sample.
    """
    n = bank.atoms.shape[0]
    if dead == donor:
        raise ValueError("a pair cannot donate to itself")
    if not (0 <= dead < n and 0 <= donor < n):
        raise IndexError(f"pair index out of range for a bank of {n}")
    a = bank.atoms.value
    if a[dead].shape != a[donor].shape:
        raise ConfigurationError("reassignment needs atoms of equal length")
    half = (a.shape[1] + 1) // 2
    bank.detectors.copy_pair(donor, dead)
    src = a[donor].copy()
    a[dead] = 0.0
    a[dead, :half] = src[:half]
    a[donor, :half] = 0.0


def choose_donor(bank, dead: int, energy: np.ndarray, exclude: Sequence[int] = ()) -> Optional[int]:
    """Live pair with the largest output energy, within the dead pair's class group."""
    exclude = set(exclude) | {dead}
    candidates = [k for k in range(bank.atoms.shape[0]) if k not in exclude]
    pc = getattr(bank, "pair_classes", None)
    if pc is not None:
        candidates = [k for k in candidates if pc[k] == pc[dead]]
    if not candidates:
        return None
    return max(candidates, key=lambda k: (energy[k], -k))
