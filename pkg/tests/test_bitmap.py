"""Core bitmap tests: hash-set oracles, algebra laws, canonical serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profilebits.bitmap import (
    ARRAY_CONTAINER_MAX,
    CompressedBitmap,
    _is_array,
)
from profilebits.errors import CorruptionError


def test_add_singleton_from_empty():
    b = CompressedBitmap()
    b.add(0)
    assert 0 in b and len(b) == 1


def test_add_is_idempotent():
    b = CompressedBitmap([5])
    b.add(5)
    assert len(b) == 1 and list(b) == [5]


def test_add_crossing_threshold_converts_container():
    b = CompressedBitmap()
    for v in range(ARRAY_CONTAINER_MAX + 1):  # 0..4096 inclusive = 4097 values
        b.add(v)
    assert not _is_array(b._containers[0])
    assert len(b) == ARRAY_CONTAINER_MAX + 1
    b.validate()


def test_bulk_build_threshold_boundary():
    exactly = CompressedBitmap(np.arange(ARRAY_CONTAINER_MAX, dtype=np.uint32))
    assert _is_array(exactly._containers[0])
    over = CompressedBitmap(np.arange(ARRAY_CONTAINER_MAX + 1, dtype=np.uint32))
    assert not _is_array(over._containers[0])
    for b in (exactly, over):
        b.validate()


def test_contains_empty_and_singleton():
    assert 7 not in CompressedBitmap()
    assert 7 in CompressedBitmap([7])


def test_contains_against_hash_set_oracle_full_chunk():
    rng = np.random.default_rng(7)
    values = rng.integers(0, 2**16, size=10_000, dtype=np.uint32)
    oracle = set(values.tolist())
    b = CompressedBitmap(values)
    for probe in range(2**16):
        assert (probe in b) == (probe in oracle)


def test_cardinality_trivial():
    assert len(CompressedBitmap()) == 0
    assert CompressedBitmap([1, 2, 3]).cardinality == 3


def test_cardinality_random_set_matches_oracle():
    rng = np.random.default_rng(11)
    values = rng.integers(0, 2**32, size=100_000, dtype=np.uint64)
    assert len(CompressedBitmap(values)) == len(set(values.tolist()))


def test_algebraic_identities():
    rng = np.random.default_rng(3)
    a = CompressedBitmap(rng.integers(0, 2**20, size=5000, dtype=np.uint32))
    empty = CompressedBitmap()
    assert (a & a) == a
    assert len(a ^ a) == 0
    assert (a | empty) == a


def test_table_fixture_and_composition():
    # gender=male {0, 1} intersected with age=15 {0} leaves exactly {0}.
    male = CompressedBitmap([0, 1])
    age15 = CompressedBitmap([0])
    assert list(male & age15) == [0]


def _random_pair(rng):
    n_a = int(rng.integers(0, 6000))
    n_b = int(rng.integers(0, 6000))
    a = rng.integers(0, 2**20, size=n_a, dtype=np.uint32)
    b = rng.integers(0, 2**20, size=n_b, dtype=np.uint32)
    return a, b


def test_all_four_ops_match_hash_set_oracle_over_1000_pairs():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        raw_a, raw_b = _random_pair(rng)
        a, b = CompressedBitmap(raw_a), CompressedBitmap(raw_b)
        sa, sb = set(raw_a.tolist()), set(raw_b.tolist())
        got = {
            "and": (a & b).to_array().tolist(),
            "or": (a | b).to_array().tolist(),
            "xor": (a ^ b).to_array().tolist(),
            "andnot": (a - b).to_array().tolist(),
        }
        want = {
            "and": sorted(sa & sb),
            "or": sorted(sa | sb),
            "xor": sorted(sa ^ sb),
            "andnot": sorted(sa - sb),
        }
        assert got == want


def test_operations_leave_inputs_unmodified():
    rng = np.random.default_rng(17)
    raw_a = rng.integers(0, 2**18, size=3000, dtype=np.uint32)
    raw_b = rng.integers(0, 2**18, size=3000, dtype=np.uint32)
    a, b = CompressedBitmap(raw_a), CompressedBitmap(raw_b)
    before_a, before_b = a.serialize(), b.serialize()
    for op in ("__and__", "__or__", "__xor__", "__sub__"):
        result = getattr(a, op)(b)
        result.validate()
        result.add(0)  # mutating the result must not leak into the inputs
    assert a.serialize() == before_a
    assert b.serialize() == before_b


def test_iterate_trivial_and_sorted():
    assert list(CompressedBitmap()) == []
    assert list(CompressedBitmap([3, 1, 2])) == [1, 2, 3]


def test_iterate_matches_sorted_oracle():
    rng = np.random.default_rng(19)
    values = rng.integers(0, 2**32, size=20_000, dtype=np.uint64)
    b = CompressedBitmap(values)
    assert list(b) == sorted(set(values.tolist()))
    assert b.to_array().tolist() == sorted(set(values.tolist()))


def test_serialize_round_trip_trivial():
    empty = CompressedBitmap()
    assert CompressedBitmap.deserialize(empty.serialize()) == empty
    edge = CompressedBitmap([0, 2**16, 2**32 - 1])
    back = CompressedBitmap.deserialize(edge.serialize())
    assert list(back) == [0, 2**16, 2**32 - 1]


def test_serialize_round_trip_1000_random_sets():
    rng = np.random.default_rng(23)
    for _ in range(1000):
        n = int(rng.integers(0, 3000))
        values = rng.integers(0, 2**32, size=n, dtype=np.uint64)
        b = CompressedBitmap(values)
        data = b.serialize()
        back = CompressedBitmap.deserialize(data)
        assert back == b
        assert back.serialize() == data  # canonical form is byte-stable


def test_deserialize_rejects_truncation_bad_magic_and_bad_invariants():
    b = CompressedBitmap(np.arange(5000, dtype=np.uint32))
    data = b.serialize()
    with pytest.raises(CorruptionError):
        CompressedBitmap.deserialize(data[:-3])
    with pytest.raises(CorruptionError):
        CompressedBitmap.deserialize(b"XXXX" + data[4:])
    with pytest.raises(CorruptionError):
        CompressedBitmap.deserialize(data + b"\x00")
    # Declared cardinality that disagrees with the bitset payload.
    tampered = bytearray(data)
    tampered[13] ^= 0xFF  # cardinality byte of the first container header
    with pytest.raises(CorruptionError):
        CompressedBitmap.deserialize(bytes(tampered))


def test_deserialize_rejects_misordered_keys():
    a = CompressedBitmap([1, 2**16 + 1]).serialize()
    # Swap the two container records (each 7-byte header + 2-byte payload).
    head, rec1, rec2 = a[:8], a[8:17], a[17:]
    with pytest.raises(CorruptionError):
        CompressedBitmap.deserialize(head + rec2 + rec1)


@st.composite
def value_arrays(draw):
    n = draw(st.integers(min_value=0, max_value=2000))
    seed = draw(st.integers(min_value=0, max_value=2**31))
    rng = np.random.default_rng(seed)
    span = draw(st.sampled_from([2**12, 2**17, 2**32]))
    return rng.integers(0, span, size=n, dtype=np.uint64)


@settings(max_examples=60, deadline=None)
@given(value_arrays(), value_arrays())
def test_property_ops_match_set_oracle(raw_a, raw_b):
    a, b = CompressedBitmap(raw_a), CompressedBitmap(raw_b)
    sa, sb = set(raw_a.tolist()), set(raw_b.tolist())
    assert (a & b).to_array().tolist() == sorted(sa & sb)
    assert (a | b).to_array().tolist() == sorted(sa | sb)
    assert (a ^ b).to_array().tolist() == sorted(sa ^ sb)
    assert (a - b).to_array().tolist() == sorted(sa - sb)


@settings(max_examples=60, deadline=None)
@given(value_arrays(), value_arrays())
def test_property_inclusion_exclusion(raw_a, raw_b):
    a, b = CompressedBitmap(raw_a), CompressedBitmap(raw_b)
    assert len(a | b) == len(a) + len(b) - len(a & b)


@settings(max_examples=60, deadline=None)
@given(value_arrays(), value_arrays())
def test_property_container_invariants_after_ops(raw_a, raw_b):
    a, b = CompressedBitmap(raw_a), CompressedBitmap(raw_b)
    for result in (a & b, a | b, a ^ b, a - b):
        result.validate()


@settings(max_examples=60, deadline=None)
@given(value_arrays())
def test_property_serialize_is_identity(raw):
    b = CompressedBitmap(raw)
    data = b.serialize()
    back = CompressedBitmap.deserialize(data)
    assert back == b
    assert back.serialize() == data


def test_rejects_out_of_domain_values():
    with pytest.raises(ValueError):
        CompressedBitmap([2**32])
    with pytest.raises(ValueError):
        CompressedBitmap([-1])
    with pytest.raises(ValueError):
        CompressedBitmap().add(2**32)
