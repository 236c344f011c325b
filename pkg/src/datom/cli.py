"""Command-line interface.

Subcommands: ``synth``, ``train``, ``decompose``, ``eval``, ``inspect-atoms``.
Exit codes: 0 ok, 2 invalid spec/config, 3 incompatible inputs, 4 numeric
failure, 5 unreadable file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, synth
from .datasets import DatasetFormatError, dumps_truth, load_dataset, loads_truth, save_dataset
from .metrics import EvalReport, evaluate, periodogram, write_psd, write_reports
from .models import (
    ARCHITECTURES,
    BasicDecomposer,
    DetectorSpec,
    ERPDecomposer,
    NoiseDecomposer,
    SSVEPDecomposer,
)
from .serialize import ModelFormatError, load_model, save_model
from .signal import ConfigurationError
from .trainer import CompatibilityError, NumericalError, TrainConfig, check_compatible, train

EXIT_OK, EXIT_SPEC, EXIT_COMPAT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("datom")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_json(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CLIError(EXIT_SPEC, f"{path}: not valid JSON ({e})") from e
    if not isinstance(cfg, dict):
        raise CLIError(EXIT_SPEC, f"{path}: top level must be an object")
    if cfg.get("version", 1) != 1:
        raise CLIError(EXIT_SPEC, f"{path}: unsupported version {cfg.get('version')!r}")
    return cfg


def _field(cfg: dict, key: str, kind, default=..., where: str = "spec"):
    if key not in cfg:
        if default is ...:
            raise CLIError(EXIT_SPEC, f"{where}.{key}: required field missing")
        return default
    value = cfg[key]
    try:
        if kind is list:
            if not isinstance(value, list):
                raise TypeError
            return value
        if kind is int and (isinstance(value, bool) or float(value) != int(value)):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise CLIError(EXIT_SPEC, f"{where}.{key}: expected {kind.__name__}, got {value!r}") from None


# -- synth -----------------------------------------------------------------


def builtin_atoms(count: int, length: int) -> list:
    """Hann-windowed sinusoids of increasing frequency with alternating phase."""
    t = np.arange(length) / length
    win = np.hanning(length)
    out = []
    for k in range(count):
        phase = 0.0 if k % 2 == 0 else np.pi / 2
        out.append(win * np.sin(2 * np.pi * (k // 2 + 1) * t + phase))
    return out


def blink_artifact(length: int, amplitude: float = 5.0) -> np.ndarray:
    return amplitude * np.hanning(length + 2)[1:-1]


def erp_waveforms(count: int, T: int) -> np.ndarray:
    """Gaussian-windowed bumps at staggered latencies with alternating sign."""
    t = np.arange(T)
    rows = []
    for k in range(count):
        center = T * (k + 1) / (count + 1)
        width = T / (4 * (count + 1))
        rows.append((-1) ** k * np.exp(-0.5 * ((t - center) / width) ** 2))
    return np.array(rows)


def _atoms_from(spec: dict, key: str, T: int) -> list:
    raw = spec.get(key)
    if isinstance(raw, dict):
        return builtin_atoms(_field(raw, "count", int, where=key), _field(raw, "length", int, where=key))
    if isinstance(raw, list) and raw and all(isinstance(a, list) and a for a in raw):
        try:
            return [np.asarray(a, dtype=float) for a in raw]
        except ValueError:
            pass
    raise CLIError(EXIT_SPEC, f"spec.{key}: expected a list of waveforms or {{count, length}}")


def _basic_spec(spec: dict, seed: int) -> synth.SynthSpec:
    T = _field(spec, "T", int)
    try:
        return synth.SynthSpec(
            T=T,
            true_atoms=_atoms_from(spec, "atoms", T),
            activation_density=_field(spec, "activation_density", float, 0.02),
            amplitude_range=tuple(_field(spec, "amplitude_range", list, [0.5, 1.5])),
            noise_sigma=_field(spec, "noise_sigma", float, 0.0),
            relative_noise=bool(spec.get("relative_noise", False)),
            seed=seed,
        )
    except ValueError as e:
        raise CLIError(EXIT_SPEC, f"spec: {e}") from None


def generate_from_spec(spec: dict, seed: Optional[int] = None):
    """Build ``(dataset, truth_fields)`` from a synth spec dictionary."""
    kind = spec.get("kind")
    seed = int(spec.get("seed", 0)) if seed is None else seed
    if kind == "basic":
        data, truth = synth.gen_basic(_basic_spec(spec, seed), _field(spec, "n", int))
        fields = {f"component_{k}": truth.components[:, k] for k in range(truth.components.shape[1])}
        fields["noise"] = truth.noise
        return data, fields
    if kind == "noise":
        base = _basic_spec(spec, seed)
        art = spec.get("artifact", {"length": 32})
        if isinstance(art, dict):
            art = blink_artifact(_field(art, "length", int, where="artifact"),
                                 _field(art, "amplitude", float, 5.0, where="artifact"))
        elif not isinstance(art, list):
            raise CLIError(EXIT_SPEC, "spec.artifact: expected a waveform list or {length, amplitude}")
        try:
            data, truth = synth.gen_noise_mixture(
                base, art, _field(spec, "event_rate", float, 1.0), _field(spec, "n", int),
                tuple(_field(spec, "artifact_gain_range", list, [1.0, 1.0])),
            )
        except ValueError as e:
            raise CLIError(EXIT_SPEC, f"spec: {e}") from None
        return data, {"s": truth.s, "n": truth.n}
    if kind == "ssvep":
        fs = _field(spec, "sampling_rate", float)
        flash = spec.get("flash_response")
        if flash is None:
            flash = synth.default_flash_response(fs, _field(spec, "flash_duration", float, 0.1))
        try:
            sspec = synth.SSVEPSynthSpec(
                T=_field(spec, "T", int), sampling_rate=fs, flash_response=flash,
                gain_range=tuple(_field(spec, "gain_range", list, [1.0, 1.0])),
                noise_sigma=_field(spec, "noise_sigma", float, 0.0),
                phases=spec.get("phases"), seed=seed,
            )
            data, truth = synth.gen_ssvep(sspec, _field(spec, "frequencies", list), _field(spec, "n_per_class", int))
        except (ValueError, TypeError) as e:
            raise CLIError(EXIT_SPEC, f"spec: {e}") from None
        return data, {"clean": truth.clean, "noise": truth.noise}
    if kind == "erp":
        T = _field(spec, "T", int)
        wave = spec.get("waveforms", {"count": 2})
        if isinstance(wave, dict):
            wave = erp_waveforms(_field(wave, "count", int, where="waveforms"), T)
        try:
            espec = synth.ERPSynthSpec(wave, _field(spec, "gain_means", list), spec.get("gain_std"),
                                       _field(spec, "noise_sigma", float, 0.0), seed)
            if espec.T != T:
                raise ValueError(f"waveforms have length {espec.T}, T is {T}")
            data, truth = synth.gen_erp(espec, range(espec.gain_means.shape[0]), _field(spec, "n_per_class", int))
        except ValueError as e:
            raise CLIError(EXIT_SPEC, f"spec: {e}") from None
        return data, {"gains": truth.gains, "noise": truth.noise}
    raise CLIError(EXIT_SPEC, f"spec.kind: expected one of basic, noise, ssvep, erp; got {kind!r}")


def cmd_synth(args) -> int:
    spec = _read_json(args.config)
    data, fields = generate_from_spec(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".dtmd" if args.binary else ".txt"
    save_dataset(data, out / f"dataset{ext}")
    (out / "truth.txt").write_text(dumps_truth(fields, data.length))
    seed = int(spec.get("seed", 0)) if args.seed is None else args.seed
    manifest = {"tool": "datom", "version": __version__, "command": "synth", "seed": seed, "spec": spec,
                "dataset": f"dataset{ext}", "truth": "truth.txt"}
    (out / "synth_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d signals of length %d to %s", len(data), data.length, out)
    return EXIT_OK


# -- train -----------------------------------------------------------------


def _detector(cfg, where: str, scalar: bool = False) -> DetectorSpec:
    cfg = cfg or {}
    try:
        if "layers" in cfg:
            return DetectorSpec(tuple(tuple(layer) for layer in cfg["layers"]), scalar,
                                bool(cfg.get("hidden_relu", True)))
        return DetectorSpec.stack(
            _field(cfg, "n_layers", int, 1, where), _field(cfg, "kernel_size", int, 16, where),
            _field(cfg, "channels", int, 1, where), final_scalar=scalar,
            hidden_relu=bool(cfg.get("hidden_relu", True)),
        )
    except (ConfigurationError, TypeError, ValueError) as e:
        raise CLIError(EXIT_SPEC, f"{where}: {e}") from None


def build_from_config(arch: str, cfg: dict, T: int, n_classes: Optional[int], seed: int):
    """Model from the ``model`` section of a training config."""
    w = "model"
    try:
        if arch == "basic":
            return BasicDecomposer(_field(cfg, "n_pairs", int, 4, w), _field(cfg, "atom_length", int, 32, w),
                                   _detector(cfg.get("detector"), "model.detector"), cfg.get("pair_classes"), seed)
        if arch == "noise":
            return NoiseDecomposer.build(
                _field(cfg, "n_signal", int, 4, w), _field(cfg, "n_noise", int, 2, w),
                _field(cfg, "atom_length", int, 32, w), _detector(cfg.get("detector"), "model.detector"),
                cfg.get("noise_atom_length"), seed=seed,
            )
        if arch == "ssvep":
            n = _field(cfg, "n_classes", int, n_classes or 0, w)
            if n < 1:
                raise CLIError(EXIT_COMPAT, "ssvep needs labeled data or model.n_classes")
            return SSVEPDecomposer(n, _field(cfg, "atom_length", int, 32, w),
                                   _detector(cfg.get("detector"), "model.detector"), seed)
        if arch == "erp":
            return ERPDecomposer(_field(cfg, "n_components", int, 2, w), _field(cfg, "signal_length", int, T, w),
                                 _detector(cfg.get("detector"), "model.detector", scalar=True),
                                 cfg.get("pair_classes"), seed)
    except ConfigurationError as e:
        raise CLIError(EXIT_SPEC, f"model: {e}") from None
    raise CLIError(EXIT_SPEC, f"unknown architecture {arch!r}")


def _load_data(path):
    try:
        return load_dataset(path)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read {path}: {e}") from None
    except DatasetFormatError as e:
        raise CLIError(EXIT_IO, f"{path}: {e}") from None


def _load_model(path):
    try:
        return load_model(path)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read {path}: {e}") from None
    except (ModelFormatError, ConfigurationError) as e:
        raise CLIError(EXIT_IO, f"{path}: {e}") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_train(args) -> int:
    cfg = _read_json(args.config) if args.config else {}
    data = _load_data(args.data)
    tcfg = dict(cfg.get("train", {}))
    if args.seed is not None:
        tcfg["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(tcfg)
    except (TypeError, ValueError) as e:
        raise CLIError(EXIT_SPEC, f"train: {e}") from None
    model = build_from_config(args.arch, cfg.get("model", {}), data.length, data.n_classes, config.seed)
    try:
        check_compatible(model, data)
    except CompatibilityError as e:
        raise CLIError(EXIT_COMPAT, str(e)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        if rec.epoch % max(1, config.epochs // 20) == 0 or rec.epoch == config.epochs - 1:
            log.info("epoch %d total %.6g fidelity %.6g sparsity %.6g", rec.epoch, rec.total, rec.fidelity,
                     rec.sparsity)

    try:
        history = train(model, data, config, callback=progress)
    except NumericalError as e:
        raise CLIError(EXIT_NUMERIC, str(e)) from None
    except CompatibilityError as e:
        raise CLIError(EXIT_COMPAT, str(e)) from None
    save_model(model, out / "model.dtmm")
    history.to_csv(out / "history.csv")
    # Replaying this snapshot with the same dataset regenerates the model file.
    snapshot = {"version": 1, "model": cfg.get("model", {}), "train": config.to_dict()}
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    manifest = {
        "tool": "datom",
        "version": __version__,
        "command": "train",
        "arch": args.arch,
        "seed": config.seed,
        "config": snapshot,
        "model_config": model.config(),
        "dataset": str(Path(args.data)),
        "dataset_sha256": _sha256(args.data),
        "model": "model.dtmm",
        "history": "history.csv",
        "output_dir": str(out),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- decompose / eval -------------------------------------------------------


def _decompose_all(model, data):
    if isinstance(model, ERPDecomposer) and data.length != model.signal_length:
        raise CLIError(EXIT_COMPAT, f"ERP atoms have length {model.signal_length}, signals have {data.length}")
    return model.decompose(data.signals)


def _component_names(model) -> list:
    if isinstance(model, NoiseDecomposer):
        return ["s_hat", "n_hat"]
    return [f"component_{k}" for k in range(model.n_components)]


def _nmae_or_nan(x, x_hat) -> float:
    ma = np.mean(np.abs(x))
    return float(np.mean(np.abs(x - x_hat)) / ma) if ma > 0 else float("nan")


def cmd_decompose(args) -> int:
    model = _load_model(args.model)
    data = _load_data(args.data)
    d = _decompose_all(model, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = _component_names(model)
    reports = []
    for k in range(len(data)):
        x = data.signals[k]
        with open(out / f"sample_{k:05d}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "input", "reconstruction"] + names)
            for i in range(data.length):
                w.writerow([i, repr(float(x[i])), repr(float(d.reconstruction[k, i]))]
                          + [repr(float(v)) for v in d.components[k, :, i]])
        err = x - d.reconstruction[k]
        reports.append(EvalReport(float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err))),
                                  _nmae_or_nan(x, d.reconstruction[k])))
    write_reports(out / "metrics.csv", reports)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    data = _load_data(args.data)
    d = _decompose_all(model, data)
    truth = None
    if args.truth:
        try:
            truth = loads_truth(Path(args.truth).read_text())
        except OSError as e:
            raise CLIError(EXIT_IO, f"cannot read {args.truth}: {e}") from None
        except DatasetFormatError as e:
            raise CLIError(EXIT_IO, f"{args.truth}: {e}") from None
    ref = None
    if truth is not None:
        if isinstance(model, NoiseDecomposer) and {"s", "n"} <= set(truth):
            ref = np.stack([truth["s"], truth["n"]], axis=1)
        else:
            keys = sorted(k for k in truth if k.startswith("component_"))
            if keys:
                ref = np.stack([truth[k] for k in keys], axis=1)
    reports = []
    for k in range(len(data)):
        x = data.signals[k]
        r = evaluate(x, d.reconstruction[k])
        r.nmae = _nmae_or_nan(x, d.reconstruction[k])
        if ref is not None and ref.shape[1] == d.components.shape[1]:
            r.component_rmse = [float(np.sqrt(np.mean((d.components[k, j] - ref[k, j]) ** 2)))
                                for j in range(ref.shape[1])]
        reports.append(r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_reports(out / "report.csv", reports)
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean"])
        for key in ("rmse", "mae", "nmae"):
            w.writerow([key, repr(float(np.nanmean([getattr(r, key) for r in reports])))])
    if args.fs:
        freqs, p = periodogram(data.signals[0], args.fs)
        mean_input = np.mean([periodogram(x, args.fs)[1] for x in data.signals], axis=0)
        write_psd(out / "psd_input.csv", freqs, mean_input)
        for j, name in enumerate(_component_names(model)):
            mean_p = np.mean([periodogram(c, args.fs)[1] for c in d.components[:, j]], axis=0)
            write_psd(out / f"psd_{name}.csv", freqs, mean_p)
    return EXIT_OK


# -- inspect-atoms -----------------------------------------------------------


def model_atoms(model) -> list:
    """``(name, waveform)`` for every atom of the model."""
    if isinstance(model, NoiseDecomposer):
        return [(f"signal_atom_{k}", a) for k, a in enumerate(model.signal.atoms.value)] + \
               [(f"noise_atom_{k}", a) for k, a in enumerate(model.noise.atoms.value)]
    if isinstance(model, SSVEPDecomposer):
        return [("atom_0", model.atom.value[0])]
    return [(f"atom_{k}", a) for k, a in enumerate(model.atoms.value)]


def cmd_inspect_atoms(args) -> int:
    model = _load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atoms = model_atoms(model)
    with open(out / "norms.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["atom", "length", "norm"])
        for name, a in atoms:
            w.writerow([name, a.size, repr(float(np.linalg.norm(a)))])
            with open(out / f"{name}.csv", "w", newline="") as g:
                wa = csv.writer(g)
                wa.writerow(["index", "value"])
                for i, v in enumerate(a):
                    wa.writerow([i, repr(float(np.float32(v)))])
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed in the spec/config")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="JSON spec or config file")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="datom", description="Detector-atom signal decomposition")
    parser.add_argument("--version", action="version", version=f"datom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--binary", action="store_true", help="write the binary dataset format")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a decomposer")
    p.add_argument("arch", choices=sorted(ARCHITECTURES))
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose", parents=[common], help="decompose signals with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("eval", parents=[common], help="score reconstructions and export spectra")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help="ground-truth file from synth")
    p.add_argument("--fs", type=float, help="sampling rate; enables periodogram export")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-atoms", parents=[common], help="export atom waveforms and norms")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect_atoms)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    if args.command == "synth" and not args.config:
        print("datom: error: synth needs --config", file=sys.stderr)
        return EXIT_SPEC
    try:
        return args.func(args)
    except CLIError as e:
        print(f"datom: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
