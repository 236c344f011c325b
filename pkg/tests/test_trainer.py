import numpy as np
import pytest

from datom.losses import LossWeights, NoisePhase
from datom.models import BasicDecomposer, DetectorSpec, ERPDecomposer, NoiseDecomposer, SSVEPDecomposer
from datom.serialize import ModelFormatError, load_model, model_from_bytes, model_to_bytes, save_model
from datom.signal import Dataset
from datom.synth import SynthSpec, gen_basic
from datom.trainer import (
    CompatibilityError,
    NumericalError,
    TrainConfig,
    apply_schedules,
    dataset_losses,
    reassign_dead,
    train,
)


def small_data(n=20, T=48, seed=0):
    return gen_basic(SynthSpec(T, [np.hanning(8), -np.hanning(5)], 0.05, noise_sigma=0.01, seed=seed), n)[0]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(alpha_sparsity_schedule=[(5, 0.0), (5, 1.0)])
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epoch": 3})
    cfg = TrainConfig(epochs=3, alpha_sparsity_schedule=[[0, 0], [2, 1e-4]])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_sparsity_schedule_steps():
    cfg = TrainConfig(alpha_sparsity_schedule=[(0, 0.0), (4000, 1e-4)])
    assert apply_schedules(cfg, 3999).alpha_sparsity == 0.0
    assert apply_schedules(cfg, 4000).alpha_sparsity == 1e-4


def test_noise_phase_switch():
    cfg = TrainConfig(noise_phase_switch_epoch=1000)
    assert apply_schedules(cfg, 999).phase is NoisePhase.INITIAL
    assert apply_schedules(cfg, 1000).phase is NoisePhase.REFINED
    assert apply_schedules(TrainConfig(), 10**6).phase is NoisePhase.INITIAL


def test_zero_learning_rate_leaves_parameters():
    data = small_data()
    m = BasicDecomposer(2, 8, seed=1)
    before = [p.value.copy() for p in m.parameters()]
    hist = train(m, data, TrainConfig(epochs=3, batch_size=7, lr=0.0, weight_decay=0.0))
    for b, p in zip(before, m.parameters()):
        assert np.array_equal(b, p.value)
    assert len(hist) == 3
    assert hist.column("fidelity")[0] == pytest.approx(hist.column("fidelity")[-1], rel=1e-12)


def test_single_epoch_zero_lr_has_one_record():
    m = BasicDecomposer(2, 8, seed=1)
    before = [p.value.copy() for p in m.parameters()]
    hist = train(m, small_data(), TrainConfig(epochs=1, lr=0.0))
    assert len(hist) == 1
    assert all(np.array_equal(b, p.value) for b, p in zip(before, m.parameters()))


def test_training_reduces_fidelity_tenfold():
    t = np.arange(16) / 16
    atoms = [np.hanning(16) * np.sin(2 * np.pi * t), -np.hanning(16)]
    data = gen_basic(SynthSpec(128, atoms, 0.02, seed=6), 100)[0]
    m = BasicDecomposer(2, 16, seed=2)
    f = train(m, data, TrainConfig(epochs=500, batch_size=100)).column("fidelity")
    assert f[-1] < 0.1 * f[0]


def test_sparsity_pressure_lowers_l1():
    data = small_data(40)
    m = BasicDecomposer(3, 8, seed=3)
    cfg = TrainConfig(epochs=100, batch_size=10, alpha_sparsity_schedule=[(0, 1e-2)])
    sp = train(m, data, cfg).column("sparsity")
    assert sp[-10:].mean() <= sp[:10].mean()


def test_history_is_deterministic(tmp_path):
    data = small_data()
    paths = []
    for k in range(2):
        m = BasicDecomposer(3, 8, seed=5)
        hist = train(m, data, TrainConfig(epochs=4, batch_size=6, seed=9, reassign_check_every=2))
        paths.append(tmp_path / f"h{k}.csv")
        hist.to_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_text().splitlines()[0] == "epoch,total,fidelity,sparsity,reassigns"


def test_compatibility_errors():
    data = small_data()
    with pytest.raises(CompatibilityError):
        train(NoiseDecomposer.build(1, 1, 4), data, TrainConfig(epochs=1))
    with pytest.raises(CompatibilityError):
        train(SSVEPDecomposer(2, 4), data, TrainConfig(epochs=1))
    with pytest.raises(CompatibilityError):
        train(ERPDecomposer(2, 30), data, TrainConfig(epochs=1))
    labeled = Dataset(data.signals, np.arange(len(data)) % 3, n_classes=3)
    with pytest.raises(CompatibilityError):
        train(SSVEPDecomposer(2, 4), labeled, TrainConfig(epochs=1))
    with pytest.raises(CompatibilityError):
        train(BasicDecomposer(2, 4, pair_classes=[0, 1]), labeled, TrainConfig(epochs=1))


def test_divergence_raises_numerical_error():
    data = small_data()
    m = BasicDecomposer(2, 8, seed=1)
    m.atoms.value[:] = np.nan
    with pytest.raises(NumericalError, match="epoch 0"):
        train(m, data, TrainConfig(epochs=2))


@pytest.mark.parametrize("make, data", [
    (lambda: NoiseDecomposer.build(2, 1, 6, noise_atom_length=4, seed=3),
     Dataset(small_data().signals, masks=np.random.default_rng(0).random((20, 48)) < 0.2)),
    (lambda: SSVEPDecomposer(3, 6, seed=3),
     Dataset(small_data().signals, np.arange(20) % 3, n_classes=3)),
    (lambda: ERPDecomposer(2, 48, DetectorSpec.stack(1, 5), pair_classes=[0, 1], seed=3),
     Dataset(small_data().signals, np.arange(20) % 2, n_classes=2)),
])
def test_every_architecture_trains(make, data):
    m = make()
    hist = train(m, data, TrainConfig(epochs=5, batch_size=8, lr=1e-2, noise_phase_switch_epoch=2,
                                      alpha_sparsity_schedule=[(0, 0.0), (3, 1e-3)]))
    assert np.all(np.isfinite(hist.column("total")))
    assert hist.column("total")[-1] <= hist.column("total")[0]


def test_reassignment_during_training_keeps_fidelity():
    data = small_data()
    m = BasicDecomposer(3, 8, seed=4)
    m.atoms.value[1] = 0.0
    train(m, data, TrainConfig(epochs=1, lr=0.0, weight_decay=0.0))
    energy = [np.ones(3)]
    before = dataset_losses(m, data)["fidelity"]
    events = reassign_dead(m, energy, 1e-3)
    assert [(b, k) for b, k, _ in events] == [(0, 1)]
    assert dataset_losses(m, data)["fidelity"] == pytest.approx(before, abs=1e-12)


def test_dataset_losses_uses_weights():
    data = small_data()
    m = BasicDecomposer(2, 8, seed=1)
    plain = dataset_losses(m, data)
    weighted = dataset_losses(m, data, LossWeights(0.5))
    assert weighted["total"] == pytest.approx(plain["fidelity"] + 0.5 * plain["sparsity"], rel=1e-12)


@pytest.mark.parametrize("make", [
    lambda: BasicDecomposer(3, 7, DetectorSpec.stack(2, 5, channels=2), pair_classes=[0, 0, 1], seed=1),
    lambda: NoiseDecomposer.build(2, 2, 6, noise_atom_length=9, seed=2),
    lambda: SSVEPDecomposer(3, 5, seed=3),
    lambda: ERPDecomposer(2, 20, DetectorSpec.stack(2, 4), seed=4),
])
def test_serialization_round_trip_is_bit_identical(make, tmp_path):
    m = make()
    m.round_float32()
    save_model(m, tmp_path / "m.dtmm")
    back = load_model(tmp_path / "m.dtmm")
    assert type(back) is type(m)
    x = np.random.default_rng(0).normal(size=(5, 20))
    a, b = m.decompose(x), back.decompose(x)
    assert a.reconstruction.tobytes() == b.reconstruction.tobytes()
    assert a.components.tobytes() == b.components.tobytes()
    assert model_to_bytes(back) == model_to_bytes(m)


def test_corrupt_model_rejected():
    raw = model_to_bytes(BasicDecomposer(2, 4))
    for bad in (b"", b"XXXX" + raw[4:], raw[:-2], raw + b"\0"):
        with pytest.raises(ModelFormatError):
            model_from_bytes(bad)
