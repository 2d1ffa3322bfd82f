"""Parser, serializer, and partition scheme tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedosaa.dataset import (
    Dataset,
    Example,
    InvalidConfigurationError,
    ParseError,
    Partition,
    parse_libsvm,
    partition_iid,
    partition_imbalanced,
    partition_label_skew,
    serialize_libsvm,
)


def test_parse_basic():
    ds = parse_libsvm("+1 1:0.5 3:2.0\n-1 2:1.5\n")
    assert ds.n == 2
    assert ds.d == 3
    assert ds.examples[0] == Example(1, (1, 3), (0.5, 2.0))
    assert ds.examples[1] == Example(-1, (2,), (1.5,))


def test_parse_blank_lines_and_whitespace():
    ds = parse_libsvm("\n  \n+1 1:1\n\n-1 1:2\n\n")
    assert ds.n == 2


def test_parse_default_label_map():
    # raw 1 maps to +1, anything else to -1
    ds = parse_libsvm("1 1:1\n0 1:1\n2 1:1\n-1 1:1\n")
    assert [ex.label for ex in ds.examples] == [1, -1, -1, -1]


def test_parse_explicit_label_map():
    ds = parse_libsvm("3 1:1\n7 1:1\n", label_map={3: 1, 7: -1})
    assert [ex.label for ex in ds.examples] == [1, -1]


def test_parse_unmapped_label_raises_with_line_number():
    with pytest.raises(ParseError) as exc:
        parse_libsvm("3 1:1\n9 1:1\n", label_map={3: 1})
    assert exc.value.line_number == 2


def test_parse_bad_feature_token():
    with pytest.raises(ParseError) as exc:
        parse_libsvm("+1 1:abc\n")
    assert exc.value.line_number == 1


def test_parse_rejects_nonincreasing_indices():
    with pytest.raises(ParseError):
        parse_libsvm("+1 2:1 2:2\n")
    with pytest.raises(ParseError):
        parse_libsvm("+1 3:1 2:2\n")


def test_parse_rejects_nonpositive_index():
    with pytest.raises(ParseError):
        parse_libsvm("+1 0:1\n")


def test_parse_label_only_line():
    ds = parse_libsvm("+1\n-1 1:1\n")
    assert ds.examples[0].indices == ()
    assert ds.d == 1


def test_dimension_override():
    ds = parse_libsvm("+1 1:1\n", d=5)
    assert ds.d == 5
    with pytest.raises(ParseError):
        parse_libsvm("+1 7:1\n", d=3)


def test_serialize_round_trip_exact_floats():
    # .17g rendering must round-trip float64 bit-exactly
    vals = [0.1, 1 / 3, 1e-300, 123456.789, np.nextafter(1.0, 2.0)]
    ds = Dataset(
        (Example(1, tuple(range(1, len(vals) + 1)), tuple(vals)),), len(vals)
    )
    text = serialize_libsvm(ds)
    again = parse_libsvm(text)
    assert again.examples[0].values == ds.examples[0].values
    assert serialize_libsvm(again) == text


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_serialize_parse_round_trip_property(data):
    n = data.draw(st.integers(1, 10))
    examples = []
    max_idx = 1
    for _ in range(n):
        k = data.draw(st.integers(0, 5))
        idx = sorted(
            data.draw(
                st.sets(st.integers(1, 30), min_size=k, max_size=k)
            )
        )
        vals = tuple(
            data.draw(
                st.floats(
                    allow_nan=False, allow_infinity=False, width=64,
                    min_value=-1e6, max_value=1e6,
                )
            )
            for _ in idx
        )
        label = data.draw(st.sampled_from([-1, 1]))
        if idx:
            max_idx = max(max_idx, idx[-1])
        examples.append(Example(label, tuple(idx), vals))
    ds = Dataset(tuple(examples), max_idx)
    text = serialize_libsvm(ds)
    again = parse_libsvm(text, d=max_idx)
    assert again == ds


def _toy_dataset(n, labels=None):
    labels = labels or [1 if i % 2 == 0 else -1 for i in range(n)]
    return Dataset(
        tuple(Example(lab, (1,), (float(i),)) for i, lab in enumerate(labels)), 1
    )


def test_partition_iid_shapes_and_disjointness():
    ds = _toy_dataset(23)
    part = partition_iid(ds, 4, seed=0)
    assert part.client_sizes == (5, 5, 5, 5)  # remainder of 3 dropped
    flat = [i for c in part.assignments for i in c]
    assert len(flat) == len(set(flat))
    assert set(flat) <= set(range(23))


def test_partition_iid_seed_determinism():
    ds = _toy_dataset(40)
    assert partition_iid(ds, 4, seed=7) == partition_iid(ds, 4, seed=7)
    assert partition_iid(ds, 4, seed=7) != partition_iid(ds, 4, seed=8)


def test_partition_iid_validation():
    ds = _toy_dataset(3)
    with pytest.raises(InvalidConfigurationError):
        partition_iid(ds, 0, seed=0)
    with pytest.raises(InvalidConfigurationError):
        partition_iid(ds, 4, seed=0)


def test_partition_imbalanced_sizes():
    ds = _toy_dataset(100)
    part = partition_imbalanced(ds, [0.5, 0.3, 0.2], seed=1)
    assert part.client_sizes == (50, 30, 20)
    assert part.total == 100


def test_partition_imbalanced_remainder_to_largest():
    ds = _toy_dataset(10)
    part = partition_imbalanced(ds, [0.55, 0.25, 0.2], seed=1)
    # floors are 5, 2, 2; the leftover example goes to the largest client
    assert part.client_sizes == (6, 2, 2)


def test_partition_imbalanced_validation():
    ds = _toy_dataset(10)
    with pytest.raises(InvalidConfigurationError):
        partition_imbalanced(ds, [0.5, 0.4], seed=0)
    with pytest.raises(InvalidConfigurationError):
        partition_imbalanced(ds, [1.5, -0.5], seed=0)
    with pytest.raises(InvalidConfigurationError):
        partition_imbalanced(ds, [0.99, 0.01], seed=0)  # empty client


def test_partition_label_skew_single_label_clients():
    labels = [1] * 60 + [-1] * 40
    ds = _toy_dataset(100, labels)
    part = partition_label_skew(ds, 5, seed=3)
    assert part.n_clients == 5
    assert part.total == 100
    for client in part.assignments:
        got = {ds.examples[i].label for i in client}
        assert len(got) == 1


def test_partition_label_skew_proportional_allotment():
    labels = [1] * 90 + [-1] * 10
    ds = _toy_dataset(100, labels)
    part = partition_label_skew(ds, 10, seed=0)
    # the minority label still receives a client
    minority = [
        c for c in part.assignments if ds.examples[c[0]].label == -1
    ]
    assert len(minority) == 1
    majority = [
        c for c in part.assignments if ds.examples[c[0]].label == 1
    ]
    assert len(majority) == 9
    sizes = sorted(len(c) for c in majority)
    assert sizes[-1] - sizes[0] <= 1


def test_partition_label_skew_validation():
    ds = _toy_dataset(10)
    with pytest.raises(InvalidConfigurationError):
        partition_label_skew(ds, 1, seed=0)  # two labels, one client


def test_partition_invariants():
    with pytest.raises(ValueError):
        Partition(((0, 1), (1, 2)))  # duplicate assignment
    with pytest.raises(ValueError):
        Partition(((0,), ()))  # empty client


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(4, 60),
    k=st.integers(1, 4),
    seed=st.integers(0, 2**16),
)
def test_partition_iid_property(n, k, seed):
    ds = _toy_dataset(n)
    part = partition_iid(ds, k, seed)
    assert all(s == n // k for s in part.client_sizes)
    flat = [i for c in part.assignments for i in c]
    assert len(flat) == len(set(flat))
