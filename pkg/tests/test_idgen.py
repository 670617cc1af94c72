"""Id generator tests: plan arithmetic, allocation, day-over-day stability."""

from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profilebits.errors import (
    CapacityOverflowError,
    CorruptionError,
    PartitionExhaustedError,
    PlanMismatchError,
)
from profilebits.idgen import (
    ADDRESS_SPACE,
    IdSnapshot,
    PartitionPlan,
    assign_day,
    next_id,
    partition_count_for,
    plan_partitions,
)

DAY1 = date(2024, 3, 1)
DAY2 = date(2024, 3, 2)


class TestPlanPartitions:
    def test_ten_billion_ids_need_one_thousand_partitions(self):
        # The headline sizing: 10 billion ids at 10 million per partition.
        assert partition_count_for(10_000_000_000, 10_000_000) == 1000

    def test_ten_billion_id_plan_overflows_the_address_space(self):
        # 1000 partitions with 2x headroom cannot fit below 2**33 ids.
        with pytest.raises(CapacityOverflowError):
            plan_partitions(10_000_000_000, 10_000_000)

    def test_minimal_plan(self):
        plan = plan_partitions(1, 1000)
        assert plan.partition_count == 1
        assert plan.per_partition_capacity == 2000

    def test_billion_id_plan_fits(self):
        plan = plan_partitions(10**9, 10**6)
        assert plan.partition_count == 1000
        assert plan.per_partition_capacity == 2 * 10**6
        assert plan.total_capacity == 2 * 10**9 <= ADDRESS_SPACE

    def test_bases_are_disjoint_and_contiguous(self):
        plan = PartitionPlan(4, 100)
        assert [plan.base(p) for p in range(4)] == [0, 100, 200, 300]

    def test_rejects_nonpositive_inputs(self):
        with pytest.raises(ValueError):
            plan_partitions(0, 10)
        with pytest.raises(ValueError):
            plan_partitions(10, 0)


class TestAllocator:
    def test_counts_from_zero_in_partition_zero(self):
        snap = IdSnapshot.empty(PartitionPlan(4, 1000), DAY1)
        assert next_id(snap, 0) == 0
        assert next_id(snap, 0) == 1

    def test_partition_base_offsets_allocation(self):
        snap = IdSnapshot.empty(PartitionPlan(4, 1000), DAY1)
        assert next_id(snap, 3) == 3000

    def test_exhaustion_is_an_error(self):
        snap = IdSnapshot.empty(PartitionPlan(1, 2), DAY1)
        next_id(snap, 0)
        next_id(snap, 0)
        with pytest.raises(PartitionExhaustedError):
            next_id(snap, 0)

    def test_preseeded_offsets_shift_allocation(self):
        snap = IdSnapshot.empty(PartitionPlan(2, 2**32), DAY1, initial_offsets={1: 5})
        assert next_id(snap, 1) == 2**32 + 5


@pytest.fixture
def small_plan():
    return PartitionPlan(8, 10_000)


class TestAssignDay:
    def test_fresh_assignment_then_fixpoint(self, small_plan):
        first = assign_day(None, ["sam", "alex"], day=DAY1, plan=small_plan)
        assert set(first.records) == {"sam", "alex"}
        for name in ("sam", "alex"):
            p = first.partition_of(name)
            base = small_plan.base(p)
            assert base <= first.records[name] < base + small_plan.per_partition_capacity
        again = assign_day(first, ["sam", "alex"], day=DAY2)
        assert again.records == first.records
        assert again.next_offsets == first.next_offsets

    def test_known_id_kept_new_id_fresh(self, small_plan):
        day1 = assign_day(None, ["sam"], day=DAY1, plan=small_plan)
        sam_id = day1.records["sam"]
        day2 = assign_day(day1, ["sam", "alex"], day=DAY2)
        assert day2.records["sam"] == sam_id
        assert day2.records["alex"] != sam_id

    def test_bulk_two_day_assignment(self, small_plan):
        day1_ids = [f"user{i}" for i in range(10_000)]
        day1 = assign_day(None, day1_ids, day=DAY1, plan=small_plan)
        day2_ids = day1_ids + [f"new{i}" for i in range(5_000)]
        day2 = assign_day(day1, day2_ids, day=DAY2)
        assert all(day2.records[e] == day1.records[e] for e in day1_ids)
        assert len(day2.records) == 15_000
        assert len(set(day2.records.values())) == 15_000  # no collisions

    def test_duplicates_in_stream_allocate_once(self, small_plan):
        snap = assign_day(None, ["a", "a", "a", "b"], day=DAY1, plan=small_plan)
        assert len(snap.records) == 2

    def test_plan_mismatch_rejected(self, small_plan):
        day1 = assign_day(None, ["sam"], day=DAY1, plan=small_plan)
        with pytest.raises(PlanMismatchError):
            assign_day(day1, ["alex"], day=DAY2, plan=PartitionPlan(9, 10_000))
        with pytest.raises(PlanMismatchError):
            assign_day(day1, ["alex"], day=DAY2, hash_seed=12345)

    def test_absent_ids_never_recycled(self, small_plan):
        day1 = assign_day(None, ["gone"], day=DAY1, plan=small_plan)
        gone_id = day1.records["gone"]
        day2 = assign_day(day1, ["other"], day=DAY2)
        assert day2.records["gone"] == gone_id
        assert day2.records["other"] != gone_id


class TestLookups:
    def test_unknown_lookup_absent(self, small_plan):
        snap = assign_day(None, ["sam"], day=DAY1, plan=small_plan)
        assert snap.lookup("nobody") is None
        assert snap.reverse_lookup(10**9) is None

    def test_round_trip_identities(self, small_plan):
        snap = assign_day(None, [f"u{i}" for i in range(500)], day=DAY1, plan=small_plan)
        for external, numeric in snap.records.items():
            assert snap.reverse_lookup(snap.lookup(external)) == external
            assert snap.lookup(snap.reverse_lookup(numeric)) == numeric

    def test_bulk_reverse_reproduces_ingested_set(self, small_plan):
        ingested = {f"id-{i:04d}" for i in range(2_000)}
        snap = assign_day(None, ingested, day=DAY1, plan=small_plan)
        recovered = {snap.reverse_lookup(n) for n in snap.records.values()}
        assert recovered == ingested


class TestSnapshotFile:
    def test_save_load_round_trip(self, small_plan, tmp_path):
        snap = assign_day(None, [f"u{i}" for i in range(1000)], day=DAY1, plan=small_plan)
        path = tmp_path / "day1.bups"
        snap.save(path)
        back = IdSnapshot.load(path)
        assert back.records == snap.records
        assert back.next_offsets == snap.next_offsets
        assert back.plan == snap.plan
        assert back.day == snap.day
        assert back.hash_seed == snap.hash_seed

    def test_save_is_deterministic(self, small_plan, tmp_path):
        snap = assign_day(None, ["b", "a", "c"], day=DAY1, plan=small_plan)
        snap.save(tmp_path / "one.bups")
        snap.save(tmp_path / "two.bups")
        assert (tmp_path / "one.bups").read_bytes() == (tmp_path / "two.bups").read_bytes()

    def test_load_rejects_corruption(self, small_plan, tmp_path):
        snap = assign_day(None, ["sam", "alex"], day=DAY1, plan=small_plan)
        path = tmp_path / "snap.bups"
        snap.save(path)
        data = path.read_bytes()
        bad = tmp_path / "bad.bups"
        bad.write_bytes(data[:-2])
        with pytest.raises(CorruptionError):
            IdSnapshot.load(bad)
        bad.write_bytes(b"NOPE" + data[4:])
        with pytest.raises(CorruptionError):
            IdSnapshot.load(bad)

    def test_unicode_ids_round_trip(self, small_plan, tmp_path):
        snap = assign_day(None, ["ανδρέας", "გიორგი", "李雷"], day=DAY1, plan=small_plan)
        path = tmp_path / "uni.bups"
        snap.save(path)
        assert IdSnapshot.load(path).records == snap.records


@settings(max_examples=40, deadline=None)
@given(
    streams=st.lists(
        st.lists(st.text(min_size=1, max_size=12), max_size=40), min_size=1, max_size=5
    )
)
def test_property_stability_and_injectivity(streams):
    plan = PartitionPlan(4, 5_000)
    snapshot = None
    seen: dict[str, int] = {}
    for i, stream in enumerate(streams):
        snapshot = assign_day(snapshot, stream, day=DAY1 + timedelta(days=i), plan=plan if snapshot is None else None)
        for external, numeric in seen.items():
            assert snapshot.records[external] == numeric
        seen = dict(snapshot.records)
        values = list(snapshot.records.values())
        assert len(values) == len(set(values))
        for external, numeric in snapshot.records.items():
            p = snapshot.partition_of(external)
            assert plan.base(p) <= numeric < plan.base(p) + plan.per_partition_capacity


def test_determinism_across_runs(small_plan):
    ids = [f"user-{i}" for i in range(777)]
    a = assign_day(None, ids, day=DAY1, plan=small_plan)
    b = assign_day(None, list(reversed(ids)), day=DAY1, plan=small_plan)
    assert a.records == b.records
    assert a.next_offsets == b.next_offsets
