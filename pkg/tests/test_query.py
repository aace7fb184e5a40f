import random

import pytest
from hypothesis import given, strategies as st

from gridlet.catalog import CentralCatalog, canonical_logical_path, nightly_sync
from gridlet.clock import SimClock
from gridlet.query import (BadRuns, SelectionCriteria, TaskList,
                           allocate_priority, chunk, load_plan, parse_tasklist,
                           select_files, select_with_badruns, serialize_tasklist,
                           split_by_index, write_plan)
from gridlet.transport import Transport

from conftest import make_catalog, make_central, make_dataset


def crit(lo, hi, **kw):
    return SelectionCriteria(lo, hi, kw.pop("typ", "T1"), kw.pop("proc", "P1"), **kw)


# --- selection --------------------------------------------------------------

def test_select_returns_local_matches_ascending():
    catalog = make_catalog("A", "/data/a", range(1, 11))
    got = select_files(crit(1, 10), catalog)
    assert [r.dataset.run_number for r in got] == list(range(1, 11))


def test_select_skips_non_local():
    catalog = make_catalog("A", "/data/a", range(1, 11),
                           local_runs=set(range(1, 11)) - {5})
    got = select_files(crit(1, 10), catalog)
    assert 5 not in [r.dataset.run_number for r in got]


def test_select_max_files_truncates_by_run_order():
    catalog = make_catalog("A", "/data/a", range(1, 11))
    got = select_files(crit(1, 10, max_files=3), catalog)
    # oracle: sort then truncate
    assert [r.dataset.run_number for r in got] == [1, 2, 3]


def test_select_filters_on_type_and_proc():
    catalog = make_catalog("A", "/data/a", [1, 2], typ="T2")
    assert select_files(crit(1, 2), catalog) == []
    assert len(select_files(crit(1, 2, typ="T2"), catalog)) == 2


def test_badruns_empty_is_identity():
    catalog = make_catalog("A", "/data/a", range(1, 6))
    assert select_with_badruns(crit(1, 5), catalog, BadRuns()) == \
        select_files(crit(1, 5), catalog)


def test_badruns_all_matched_is_empty():
    catalog = make_catalog("A", "/data/a", range(1, 6))
    assert select_with_badruns(crit(1, 5), catalog,
                               BadRuns(frozenset(range(1, 6)))) == []


def test_badruns_random_equals_set_difference():
    rng = random.Random(7)
    catalog = make_catalog("A", "/data/a", range(1, 51))
    for _ in range(20):
        bad = frozenset(rng.sample(range(1, 51), rng.randint(0, 50)))
        got = {r.dataset.run_number
               for r in select_with_badruns(crit(1, 50), catalog, BadRuns(bad))}
        assert got == set(range(1, 51)) - bad  # brute-force difference oracle


# --- chunking ---------------------------------------------------------------

def records_for(n):
    if n == 0:
        return []
    return select_files(crit(1, n), make_catalog("A", "/data/a", range(1, n + 1)))


def test_chunk_single():
    assert len(chunk(records_for(100), 100)) == 1


def test_chunk_typical_shape():
    lists = chunk(records_for(10_000), 100)
    assert len(lists) == 100
    assert all(len(t.entries) == 100 for t in lists)


def test_chunk_last_partial():
    sizes = [len(t.entries) for t in chunk(records_for(7), 3)]
    assert sizes == [3, 3, 1]


def test_chunk_rejects_zero():
    with pytest.raises(ValueError):
        chunk(records_for(3), 0)


@given(n=st.integers(min_value=0, max_value=200), size=st.integers(min_value=1, max_value=50))
def test_chunk_properties(n, size):
    lists = chunk(records_for(n), size)
    flat = [p for t in lists for p in t.entries]
    assert flat == [r.logical_path for r in records_for(n)]  # order preserved
    assert [t.index for t in lists] == list(range(len(lists)))
    assert all(len(t.entries) == size for t in lists[:-1])


# --- priority allocation ----------------------------------------------------

def greedy_oracle(local_runs, priority, matching):
    """Brute-force greedy-by-priority assignment."""
    claimed, out = set(), {}
    for site in priority:
        mine = (local_runs[site] & matching) - claimed
        out[site] = mine
        claimed |= mine
    return out, matching - claimed


def test_allocate_priority_single_site_covers_all(two_site_catalogs):
    plan = allocate_priority(crit(1, 4), ["A"], two_site_catalogs, chunk_size=2)
    assert plan.runs_for("A") == {1, 2, 3, 4}
    assert plan.uncovered == frozenset()


def test_allocate_priority_order_a_first(two_site_catalogs):
    plan = allocate_priority(crit(1, 6), ["A", "B"], two_site_catalogs, 100)
    assert plan.runs_for("A") == {1, 2, 3, 4}
    assert plan.runs_for("B") == {5, 6}


def test_allocate_priority_order_b_first(two_site_catalogs):
    plan = allocate_priority(crit(1, 6), ["B", "A"], two_site_catalogs, 100)
    assert plan.runs_for("B") == {3, 4, 5, 6}
    assert plan.runs_for("A") == {1, 2}


def test_allocate_priority_charges_query_delay(two_site_catalogs):
    clock = SimClock()
    allocate_priority(crit(1, 6), ["A", "B"], two_site_catalogs, 100,
                      clock=clock, query_delay=120.0)
    assert clock.now == 240.0


def test_allocate_priority_uncovered(two_site_catalogs):
    # runs 1-6 exist; nothing local beyond them, criteria reach to 8 but
    # metadata only knows 1-6, so uncovered is empty; drop flags instead
    two_site_catalogs["A"].set_local_flag(
        canonical_logical_path(make_dataset(1)), False)
    two_site_catalogs["B"].set_local_flag(
        canonical_logical_path(make_dataset(6)), False)
    plan = allocate_priority(crit(1, 6), ["A", "B"], two_site_catalogs, 100)
    assert plan.uncovered == {1, 6}
    assert plan.runs_for("A") | plan.runs_for("B") == {2, 3, 4, 5}


def random_world(rng, n_runs, n_sites):
    sites = [f"S{i}" for i in range(n_sites)]
    local = {s: {r for r in range(1, n_runs + 1) if rng.random() < 0.4}
             for s in sites}
    catalogs = {s: make_catalog(s, f"/data/{s.lower()}", range(1, n_runs + 1),
                                local_runs=local[s]) for s in sites}
    return sites, local, catalogs


def test_allocate_priority_matches_greedy_oracle_randomized():
    rng = random.Random(20260808)
    for _ in range(60):
        n_runs = rng.randint(1, 50)
        sites, local, catalogs = random_world(rng, n_runs, rng.randint(1, 5))
        priority = rng.sample(sites, len(sites))
        plan = allocate_priority(crit(1, n_runs), priority, catalogs, 10)
        expected, uncovered = greedy_oracle(local, priority, set(range(1, n_runs + 1)))
        assert plan.run_map() == expected
        assert plan.uncovered == uncovered
        # disjoint cover invariant
        all_assigned = [r for s in priority for r in plan.runs_for(s)]
        assert len(all_assigned) == len(set(all_assigned))


# --- index split ------------------------------------------------------------

def synced_matrix(catalogs):
    central = make_central([])
    for cat in catalogs.values():
        for rec in cat.files.values():
            central.register_file(rec)
    return central, nightly_sync(central, catalogs, Transport()).matrix


def test_split_by_index_agrees_with_priority_when_disjoint():
    catalogs = {
        "A": make_catalog("A", "/data/a", range(1, 7), local_runs=[1, 2, 3]),
        "B": make_catalog("B", "/data/b", range(1, 7), local_runs=[4, 5, 6]),
    }
    central, matrix = synced_matrix(catalogs)
    by_priority = allocate_priority(crit(1, 6), ["A", "B"], catalogs, 2)
    by_index = split_by_index(crit(1, 6), matrix, ["A", "B"], 2, metadata=central)
    assert by_priority.run_map() == by_index.run_map()
    assert by_priority.assignments == by_index.assignments


def test_split_by_index_priority_rule(two_site_catalogs):
    central, matrix = synced_matrix(two_site_catalogs)
    plan = split_by_index(crit(3, 3), matrix, ["A", "B"], 10, metadata=central)
    assert plan.runs_for("A") == {3}
    assert plan.runs_for("B") == set()


def test_split_by_index_round_robin_even_split():
    catalogs = {
        "A": make_catalog("A", "/data/a", range(1, 11)),
        "B": make_catalog("B", "/data/b", range(1, 11)),
    }
    central, matrix = synced_matrix(catalogs)
    plan = split_by_index(crit(1, 10), matrix, ["A", "B"], 10,
                          balance="round_robin", metadata=central)
    # cyclic-assignment oracle: rank k of the multi-holder subset goes to
    # holders[k % 2] with holders ordered [A, B]
    assert plan.runs_for("A") == {1, 3, 5, 7, 9}
    assert plan.runs_for("B") == {2, 4, 6, 8, 10}


def test_split_by_index_agreement_randomized_fresh_index():
    rng = random.Random(99)
    for _ in range(40):
        n_runs = rng.randint(1, 40)
        sites, local, catalogs = random_world(rng, n_runs, rng.randint(1, 4))
        central, matrix = synced_matrix(catalogs)
        priority = rng.sample(sites, len(sites))
        a = allocate_priority(crit(1, n_runs), priority, catalogs, 10)
        b = split_by_index(crit(1, n_runs), matrix, priority, 10, metadata=central)
        assert a.run_map() == b.run_map()
        assert a.uncovered == b.uncovered


def test_split_by_index_staleness_divergence(two_site_catalogs):
    central, matrix = synced_matrix(two_site_catalogs)
    # flip one flag after the sync: index method lags, divergence is the
    # changed run exactly
    two_site_catalogs["A"].set_local_flag(
        canonical_logical_path(make_dataset(1)), False)
    fresh = allocate_priority(crit(1, 6), ["A", "B"], two_site_catalogs, 10)
    stale = split_by_index(crit(1, 6), matrix, ["A", "B"], 10, metadata=central)
    assert stale.runs_for("A") - fresh.runs_for("A") == {1}
    _, resynced = synced_matrix(two_site_catalogs)
    agreed = split_by_index(crit(1, 6), resynced, ["A", "B"], 10, metadata=central)
    assert agreed.run_map() == fresh.run_map()


# --- order preservation + files ---------------------------------------------

def test_tasklists_preserve_ascending_run_order(two_site_catalogs):
    plan = allocate_priority(crit(1, 6), ["A", "B"], two_site_catalogs, 2)
    for site in plan.site_order:
        runs = [r for t in plan.assignments[site] for r in t.runs()]
        assert runs == sorted(runs)


def test_tasklist_file_format_and_round_trip():
    task = TaskList(3, ("$BFROOT/data/run000001-procP1-selV1-typT1.data",))
    text = serialize_tasklist(task)
    assert text == "input add $BFROOT/data/run000001-procP1-selV1-typT1.data\n"
    assert task.filename() == "data-3.tcl"
    assert parse_tasklist(text, 3) == task


def test_plan_write_and_load(tmp_path, two_site_catalogs):
    plan = allocate_priority(crit(1, 6), ["A", "B"], two_site_catalogs, 2)
    plan_path = write_plan(plan, tmp_path / "plan")
    lines = plan_path.read_text().splitlines()
    assert lines[0] == "A data-0.tcl"
    loaded = load_plan(plan_path)
    assert loaded.site_order == ("A", "B")
    assert loaded.run_map() == plan.run_map()
