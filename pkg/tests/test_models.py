import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from datom.losses import fidelity_loss
from datom.models import (
    BasicDecomposer,
    DetectorSpec,
    ERPDecomposer,
    NoiseDecomposer,
    SSVEPDecomposer,
    atom_reassign,
    basic_forward,
    choose_donor,
    detect_dead_atoms,
    erp_forward,
    noise_forward,
    ssvep_forward,
)
from datom.serialize import ModelFormatError, load_model, model_from_bytes, model_to_bytes, save_model
from datom.signal import ConfigurationError


def impulse_detector(bank):
    """Make every detector of a one-layer P=1 bank pass its input through."""
    bank.kernels[0].value[...] = 1.0
    bank.biases[0].value[...] = 0.0


def direct_components(z, atoms):
    """Brute-force sum over time shifts."""
    n, T = z.shape
    out = np.zeros((n, T))
    for k in range(n):
        for i in range(T):
            for j in range(atoms.shape[1]):
                if i - j >= 0:
                    out[k, i] += atoms[k, j] * z[k, i - j]
    return out


def test_detector_spec_validation():
    with pytest.raises(ConfigurationError):
        DetectorSpec(((2, 1, 3),))
    with pytest.raises(ConfigurationError):
        DetectorSpec(((1, 2, 3), (3, 1, 3)))
    with pytest.raises(ConfigurationError):
        DetectorSpec(((1, 1, 0),))
    spec = DetectorSpec.stack(3, 5, channels=2)
    assert spec.layers == ((1, 2, 5), (2, 2, 5), (2, 2, 5))
    assert DetectorSpec.from_dict(spec.to_dict()) == spec


def test_basic_zero_atoms_give_zero_reconstruction():
    m = BasicDecomposer(3, 5, DetectorSpec.stack(2, 4), seed=1)
    m.atoms.value[...] = 0
    comps, rec = basic_forward(m, np.random.default_rng(0).normal(size=20))
    assert np.all(rec.samples == 0) and len(comps) == 3


def test_basic_impulse_detector_places_atom():
    m = BasicDecomposer(1, 2, DetectorSpec(((1, 1, 1),)))
    impulse_detector(m.detectors)
    m.atoms.value[...] = [[2, 3]]
    x = np.zeros(6)
    x[2] = 1.0
    comps, rec = basic_forward(m, x)
    z = np.maximum(x, 0)[None]
    np.testing.assert_array_equal(comps[0].samples, direct_components(z, m.atoms.value)[0])
    np.testing.assert_array_equal(rec.samples, [0, 0, 2, 3, 0, 0])


def test_basic_reconstruction_is_sum_and_matches_brute_force():
    rng = np.random.default_rng(2)
    m = BasicDecomposer(4, 7, DetectorSpec.stack(2, 5), seed=3)
    x = rng.normal(size=(5, 30))
    d = m.decompose(x)
    np.testing.assert_allclose(d.reconstruction, d.components.sum(axis=1), atol=1e-12)
    for b in range(5):
        np.testing.assert_allclose(d.components[b], direct_components(d.activations[b], m.atoms.value), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 40))
def test_congruent_length_and_nonnegative_activations(seed, T):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=3, size=(2, T))
    for m in (
        BasicDecomposer(3, 4, DetectorSpec.stack(2, 3, channels=2), seed=seed),
        SSVEPDecomposer(3, 4, DetectorSpec.stack(2, 3, channels=2), seed=seed),
        NoiseDecomposer.build(2, 2, 4, DetectorSpec.stack(1, 3), seed=seed),
    ):
        d = m.decompose(x)
        assert d.components.shape[-1] == T and d.reconstruction.shape == (2, T)
        assert np.all(d.activations >= 0)
    erp = ERPDecomposer(2, T, DetectorSpec.stack(2, 3), seed=seed)
    d = erp.decompose(x)
    assert d.activations.shape == (2, 2) and np.all(d.activations >= 0)


# -- noise ---------------------------------------------------------------


def test_noise_forward_zero_banks():
    rng = np.random.default_rng(4)
    x = rng.normal(size=25)
    m = NoiseDecomposer.build(2, 3, 5, DetectorSpec.stack(2, 4), seed=5)
    m.noise.atoms.value[...] = 0
    s_hat, n_hat = noise_forward(m, x)
    assert np.all(n_hat.samples == 0)
    np.testing.assert_array_equal(s_hat.samples, m.signal.decompose(x).reconstruction[0])

    m2 = NoiseDecomposer.build(2, 3, 5, DetectorSpec.stack(2, 4), seed=6)
    m2.signal.atoms.value[...] = 0
    s_hat, _ = noise_forward(m2, x)
    assert np.all(s_hat.samples == 0)


def test_noise_forward_composition():
    rng = np.random.default_rng(7)
    x = rng.normal(size=25)
    m = NoiseDecomposer.build(2, 2, 6, DetectorSpec.stack(2, 3), seed=8)
    s_hat, n_hat = noise_forward(m, x)
    n_ref = m.noise.decompose(x).reconstruction[0]
    s_ref = m.signal.decompose(x - n_ref).reconstruction[0]
    np.testing.assert_array_equal(n_hat.samples, n_ref)
    np.testing.assert_array_equal(s_hat.samples, s_ref)


# -- ssvep ---------------------------------------------------------------


def test_ssvep_shares_one_atom():
    m = SSVEPDecomposer(3, 6, DetectorSpec.stack(2, 4, channels=2), seed=9)
    atoms = [p for p in m.parameters() if "atom" in p.name]
    assert atoms == [m.atom] and m.atom.shape == (1, 6)
    x = np.random.default_rng(0).normal(size=40)
    before = m.decompose(x).components[0]
    m.atom.value[0, 2] += 0.5
    after = m.decompose(x).components[0]
    active = np.any(m.decompose(x).activations[0] > 0, axis=1)
    assert active.all()
    assert all(not np.allclose(before[k], after[k]) for k in range(3))


def test_ssvep_identical_detectors_give_identical_components():
    m = SSVEPDecomposer(2, 5, DetectorSpec.stack(2, 4, channels=2), seed=10)
    m.detectors.copy_pair(0, 1)
    comps, rec = ssvep_forward(m, np.random.default_rng(1).normal(size=30))
    np.testing.assert_array_equal(comps[0].samples, comps[1].samples)


def test_ssvep_impulse_detector_reproduces_shared_atom():
    m = SSVEPDecomposer(2, 3, DetectorSpec(((1, 1, 1),)))
    impulse_detector(m.detectors)
    m.atom.value[...] = [[1.0, -2.0, 0.5]]
    x = np.zeros(8)
    x[4] = 2.0
    comps, rec = ssvep_forward(m, x)
    expected = direct_components(np.maximum(x, 0)[None], m.atom.value)[0]
    for c in comps:
        np.testing.assert_array_equal(c.samples, expected)
    np.testing.assert_array_equal(rec.samples, 2 * expected)


# -- erp -----------------------------------------------------------------


def constant_erp(weights, atoms):
    """ERP model whose detector scalars are fixed at ``weights``."""
    n, T = np.shape(atoms)
    m = ERPDecomposer(n, T, DetectorSpec(((1, 1, 1),), final_scalar=True))
    m.detectors.kernels[0].value[...] = 0
    m.detectors.biases[0].value[...] = 0
    m.detectors.head_weight.value[...] = 0
    m.detectors.head_bias.value[...] = np.asarray(weights, dtype=float)[:, None]
    m.atoms.value[...] = atoms
    return m


def test_erp_zero_weights():
    m = constant_erp([0.0, -1.0], np.ones((2, 6)))
    w, rec = erp_forward(m, np.random.default_rng(0).normal(size=6))
    assert np.all(w == 0) and np.all(rec.samples == 0)


def test_erp_single_component_scaling():
    a = np.array([1.0, -2.0, 3.0, 0.5])
    w, rec = erp_forward(constant_erp([2.5], a[None]), np.ones(4))
    assert w[0] == 2.5
    np.testing.assert_array_equal(rec.samples, 2.5 * a)


def test_erp_two_components_hand_arithmetic():
    atoms = np.array([[1.0, 0.0, -1.0], [0.5, 2.0, 1.0]])
    w, rec = erp_forward(constant_erp([2.0, 3.0], atoms), np.zeros(3))
    # 2*[1,0,-1] + 3*[0.5,2,1] = [3.5, 6, 1]
    np.testing.assert_array_equal(rec.samples, [3.5, 6.0, 1.0])


def test_erp_length_mismatch():
    m = ERPDecomposer(2, 10, DetectorSpec.stack(1, 3))
    with pytest.raises(ConfigurationError):
        erp_forward(m, np.zeros(9))


def test_erp_reconstruction_lies_in_atom_span():
    rng = np.random.default_rng(11)
    m = ERPDecomposer(3, 40, DetectorSpec.stack(2, 5), seed=12)
    d = m.decompose(rng.normal(size=(6, 40)))
    A = m.atoms.value.T
    for r in d.reconstruction:
        coef, *_ = np.linalg.lstsq(A, r, rcond=None)
        assert np.max(np.abs(A @ coef - r)) < 1e-10
    np.testing.assert_allclose(d.reconstruction, d.activations @ m.atoms.value, atol=1e-12)


# -- reassignment --------------------------------------------------------


def test_reassign_example_split():
    m = BasicDecomposer(2, 4, DetectorSpec.stack(1, 3))
    m.atoms.value[...] = [[9, 9, 9, 9], [1, 2, 3, 4]]
    atom_reassign(m, 0, 1)
    np.testing.assert_array_equal(m.atoms.value, [[1, 2, 0, 0], [0, 0, 3, 4]])
    for p in m.detectors.parameters():
        np.testing.assert_array_equal(p.value[0], p.value[1])


def test_reassign_odd_length():
    m = BasicDecomposer(2, 5, DetectorSpec.stack(1, 3))
    m.atoms.value[1] = [1, 2, 3, 4, 5]
    atom_reassign(m, 0, 1)
    np.testing.assert_array_equal(m.atoms.value, [[1, 2, 3, 0, 0], [0, 0, 0, 4, 5]])


def test_reassign_rejects_self():
    m = BasicDecomposer(2, 4)
    with pytest.raises(ValueError):
        atom_reassign(m, 1, 1)


@pytest.mark.parametrize("make", [
    lambda: BasicDecomposer(4, 12, DetectorSpec.stack(2, 5, channels=2), seed=13),
    lambda: ERPDecomposer(3, 30, DetectorSpec.stack(2, 5), seed=14),
])
def test_reassign_preserves_outputs(make):
    m = make()
    K, R = 0, 2
    m.atoms.value[K] = 0.0  # pair K is dead, so it contributes nothing before the split
    x = np.random.default_rng(15).normal(size=(100, 30))
    before = m.decompose(x)
    loss_before = fidelity_loss(x, before.reconstruction)
    atom_reassign(m, K, R)
    after = m.decompose(x)
    pair_sum = after.components[:, K] + after.components[:, R]
    assert np.max(np.abs(pair_sum - before.components[:, R])) < 1e-12
    assert abs(fidelity_loss(x, after.reconstruction) - loss_before) < 1e-10


def test_detect_dead_atoms():
    m = BasicDecomposer(3, 4)
    m.atoms.value[...] = 1.0
    assert detect_dead_atoms(m) == []
    m.atoms.value[1] = 0.0
    assert detect_dead_atoms(m) == [1]
    m.atoms.value[...] = 0.0
    m.atoms.value[0, 0] = 1.0
    m.atoms.value[1, 0] = 1.0
    m.atoms.value[2, 0] = 1e-6
    assert detect_dead_atoms(m, 1e-3) == [2]
    with pytest.raises(ValueError):
        detect_dead_atoms(m, 0)


def test_choose_donor_respects_energy_and_classes():
    m = BasicDecomposer(4, 4, pair_classes=[0, 0, 1, 1])
    energy = np.array([0.0, 1.0, 5.0, 0.5])
    assert choose_donor(m, 0, energy) == 1
    assert choose_donor(m, 3, energy) == 2
    m.pair_classes = None
    assert choose_donor(m, 0, energy) == 2


# -- serialization -------------------------------------------------------


@pytest.mark.parametrize("model", [
    BasicDecomposer(3, 6, DetectorSpec.stack(2, 4, channels=2), pair_classes=[0, 1, 1], seed=1),
    NoiseDecomposer.build(2, 3, 5, DetectorSpec.stack(2, 3), seed=2),
    SSVEPDecomposer(4, 7, DetectorSpec.stack(2, 30, channels=2), seed=3),
    ERPDecomposer(2, 20, DetectorSpec.stack(3, 4), seed=4),
])
def test_save_load_is_bit_identical_at_float32(model, tmp_path):
    x = np.random.default_rng(0).normal(size=(4, 20))
    path = tmp_path / "m.dtmm"
    save_model(model, path)
    loaded = load_model(path)
    assert type(loaded) is type(model) and loaded.config() == model.config()
    model.round_float32()
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert a.name == b.name
        np.testing.assert_array_equal(a.value, b.value)
    da, db = model.decompose(x), loaded.decompose(x)
    assert np.array_equal(da.reconstruction, db.reconstruction)
    assert np.array_equal(da.components, db.components)
    assert path.read_bytes()[:4] == b"DTMM"


def test_corrupt_model_rejected():
    data = model_to_bytes(BasicDecomposer(2, 4))
    with pytest.raises(ModelFormatError):
        model_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError):
        model_from_bytes(data[:-3])
    with pytest.raises(ModelFormatError):
        model_from_bytes(data + b"\0")
    with pytest.raises(ModelFormatError):
        model_from_bytes(data[:20])
