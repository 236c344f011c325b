import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from datom.datasets import (
    DatasetFormatError,
    dataset_from_bytes,
    dataset_to_bytes,
    dumps_dataset,
    dumps_truth,
    load_dataset,
    loads_dataset,
    loads_truth,
    save_dataset,
)
from datom.signal import Dataset


def make(seed, labels=True, masks=True, n=4, T=9):
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.normal(size=(n, T)),
        rng.integers(0, 3, n) if labels else None,
        rng.random((n, T)) < 0.3 if masks else None,
        3 if labels else None,
    )


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.booleans())
def test_text_round_trip_is_exact(seed, labels, masks):
    d = make(seed, labels, masks)
    back = loads_dataset(dumps_dataset(d), d.n_classes)
    assert back.signals.tobytes() == d.signals.tobytes()
    if labels:
        assert back.labels.tolist() == d.labels.tolist()
    else:
        assert back.labels is None
    if masks:
        assert np.array_equal(back.masks, d.masks)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.booleans())
def test_binary_round_trip_is_float32(seed, labels, masks):
    d = make(seed, labels, masks)
    back = dataset_from_bytes(dataset_to_bytes(d), d.n_classes)
    assert np.array_equal(back.signals, d.signals.astype(np.float32))
    assert (back.masks is None) == (not masks)


def test_file_helpers_pick_format(tmp_path):
    d = make(1)
    save_dataset(d, tmp_path / "a.dtmd")
    save_dataset(d, tmp_path / "a.txt")
    assert (tmp_path / "a.dtmd").read_bytes()[:4] == b"DTMD"
    assert (tmp_path / "a.txt").read_text().startswith("datom-dataset v1, T=9, n=4")
    for name in ("a.dtmd", "a.txt"):
        assert load_dataset(tmp_path / name).labels.tolist() == d.labels.tolist()


@pytest.mark.parametrize("text", [
    "",
    "garbage\n",
    "datom-dataset v1, T=2, n=2, labels=0, masks=0\n1,2\n",
    "datom-dataset v1, T=2, n=1, labels=0, masks=0\n1,2,3\n",
    "datom-dataset v1, T=2, n=1, labels=0, masks=0\n1,x\n",
    "datom-dataset v1, T=2, n=1, labels=0, masks=1\n1,2,12\n",
    "datom-dataset v1, T=2, n=1, labels=1, masks=0\n1,2,-1\n",
])
def test_malformed_text_rejected(text):
    with pytest.raises(DatasetFormatError):
        loads_dataset(text)


def test_malformed_binary_rejected():
    raw = dataset_to_bytes(make(2))
    with pytest.raises(DatasetFormatError):
        dataset_from_bytes(raw[:-1])
    with pytest.raises(DatasetFormatError):
        dataset_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError):
        dataset_from_bytes(raw[:4] + b"\x02" + raw[5:])


def test_truth_round_trip():
    rng = np.random.default_rng(3)
    fields = {"s": rng.normal(size=(3, 8)), "gains": rng.normal(size=(3, 2))}
    back = loads_truth(dumps_truth(fields, 8))
    assert list(back) == ["s", "gains"]
    for k in fields:
        assert back[k].tobytes() == fields[k].tobytes()
    with pytest.raises(DatasetFormatError):
        loads_truth("datom-truth v1, T=8, n=2, fields=a\n1,2\n")
