import pytest
from hypothesis import given, strategies as st

from gridlet.catalog import (AvailabilityMatrix, CentralCatalog, DatasetName,
                             FileRecord, SiteCatalog, canonical_logical_path,
                             file_record, nightly_sync, parse_catalog,
                             parse_dataset_name, parse_index, resolve_path,
                             serialize_catalog, serialize_index, set_local_flag)
from gridlet.errors import DatasetNameError, PathPrefixError, UnknownPathError
from gridlet.transport import Transport

from conftest import make_catalog, make_dataset


# --- dataset name codec -----------------------------------------------------

def test_parse_dataset_name_example():
    d = parse_dataset_name("run000123-procR14-selV3-typBch.data")
    assert d == DatasetName(123, "R14", "V3", "Bch")
    # round-trip oracle
    assert d.encode() == "run000123-procR14-selV3-typBch.data"


@pytest.mark.parametrize("bad,segment", [
    ("garbage", "suffix"),
    ("run000001-procA-selB.data", "structure"),
    ("run1-procA-selB-typC.data", "run"),
    ("run000000-procA-selB-typC.data", "run"),
    ("run000001-prsquare-selB-typC.data", "proc"),
    ("run000001-procA-selB-typ!.data", "typ"),
])
def test_parse_dataset_name_names_offending_segment(bad, segment):
    with pytest.raises(DatasetNameError) as err:
        parse_dataset_name(bad)
    assert err.value.segment == segment


_token = st.text(alphabet="ABCDEFGHabcdefgh0123456789", min_size=1, max_size=6)


@given(run=st.integers(min_value=1, max_value=999_999),
       proc=_token, sel=_token, typ=_token)
def test_dataset_name_round_trip(run, proc, sel, typ):
    d = DatasetName(run, proc, sel, typ)
    assert parse_dataset_name(d.encode()) == d


# --- local flags ------------------------------------------------------------

def test_flag_on_then_off():
    catalog = make_catalog("A", "/data/a", [1, 2], local_runs=[])
    path = canonical_logical_path(make_dataset(1))
    set_local_flag(catalog, path, True)
    assert catalog.local_paths() == [path]
    set_local_flag(catalog, path, False)
    assert catalog.local_paths() == []


def test_flag_unknown_path_errors():
    catalog = make_catalog("A", "/data/a", [1])
    with pytest.raises(UnknownPathError):
        set_local_flag(catalog, "$BFROOT/data/nope.data", True)


def test_flag_count():
    catalog = make_catalog("A", "/data/a", range(1, 101), local_runs=[])
    for run in range(1, 11):
        set_local_flag(catalog, canonical_logical_path(make_dataset(run)), True)
    # count oracle
    assert len(catalog.local_paths()) == 10


# --- path resolution --------------------------------------------------------

def test_resolve_substitutes_root():
    catalog = SiteCatalog("A", "/data/a")
    assert resolve_path(catalog, "$BFROOT/x/y") == "/data/a/x/y"


def test_same_logical_path_resolves_per_site_with_same_suffix():
    a = SiteCatalog("A", "/data/a")
    b = SiteCatalog("B", "/mnt/bulk")
    path = "$BFROOT/data/run000007-procP1-selV1-typT1.data"
    ra, rb = resolve_path(a, path), resolve_path(b, path)
    assert ra != rb
    assert ra.removeprefix(a.bfroot) == rb.removeprefix(b.bfroot)


def test_resolve_requires_prefix():
    with pytest.raises(PathPrefixError):
        resolve_path(SiteCatalog("A", "/data/a"), "relative/x")


def test_file_record_requires_prefix():
    with pytest.raises(PathPrefixError):
        FileRecord(make_dataset(1), "no-prefix/path.data")


# --- nightly sync -----------------------------------------------------------

def _matrix_oracle(sites):
    """Brute force: run -> {site : some file of the run is flagged local}."""
    rows = {}
    for site_id, cat in sites.items():
        for run in cat.local_runs():
            rows.setdefault(run, set()).add(site_id)
    return rows


def test_sync_message_count_is_two_per_site():
    central = CentralCatalog()
    sites = {s: make_catalog(s, f"/data/{s}", [1, 2]) for s in "ABC"}
    transport = Transport()
    result = nightly_sync(central, sites, transport)
    assert result.message_count == 6
    assert transport.count("flag-upload") == 3
    assert transport.count("matrix-download") == 3


def test_sync_no_sites():
    result = nightly_sync(CentralCatalog(), {}, Transport())
    assert result.message_count == 0
    assert result.matrix.rows == {}


def test_sync_rows_match_flag_assignment():
    sites = {
        "A": make_catalog("A", "/data/a", [7, 8], local_runs=[7]),
        "B": make_catalog("B", "/data/b", [7, 8], local_runs=[8]),
        "C": make_catalog("C", "/data/c", [7, 8], local_runs=[7, 8]),
    }
    result = nightly_sync(CentralCatalog(), sites, Transport())
    assert result.matrix.sites_for(7) == {"A", "C"}
    # brute-force recomputation oracle over the whole matrix
    assert {r: set(s) for r, s in result.matrix.rows.items()} == _matrix_oracle(sites)


def test_sync_freshness_lag():
    central = CentralCatalog()
    sites = {"A": make_catalog("A", "/data/a", [1, 2], local_runs=[1])}
    first = nightly_sync(central, sites, Transport())
    assert first.matrix.sites_for(2) == frozenset()
    sites["A"].set_local_flag(canonical_logical_path(make_dataset(2)), True)
    # flag flipped after upload: invisible until the next round
    assert central.matrix.sites_for(2) == frozenset()
    second = nightly_sync(central, sites, Transport())
    assert second.matrix.sites_for(2) == {"A"}
    assert second.matrix.as_of == first.matrix.as_of + 1


def test_sync_unreachable_site_reuses_previous_upload():
    central = CentralCatalog()
    sites = {
        "A": make_catalog("A", "/data/a", [1], local_runs=[1]),
        "B": make_catalog("B", "/data/b", [2], local_runs=[2]),
    }
    transport = Transport()
    nightly_sync(central, sites, transport)
    sites["B"].set_local_flag(canonical_logical_path(make_dataset(2)), False)
    transport.set_down("B")
    result = nightly_sync(central, sites, transport)
    # upload skipped (2N - 1 messages), previous snapshot reused, site stale
    assert result.message_count == 3
    assert result.matrix.sites_for(2) == {"B"}
    assert result.stale == {"B"}
    # next round with B back: fresh upload wins
    transport.set_up("B")
    result = nightly_sync(central, sites, transport)
    assert result.matrix.sites_for(2) == frozenset()
    assert result.stale == frozenset()


# --- serializations ---------------------------------------------------------

def test_catalog_file_round_trip():
    catalog = make_catalog("A", "/data/a", [3, 1, 2], local_runs=[2])
    text = serialize_catalog(catalog)
    lines = text.splitlines()
    assert lines == sorted(lines)  # sorted by run number (zero padded)
    parsed = parse_catalog(text, "A", "/data/a")
    assert parsed.local == catalog.local
    assert set(parsed.files) == set(catalog.files)


def test_index_file_round_trip():
    matrix = AvailabilityMatrix({7: frozenset({"A", "C"}), 9: frozenset({"B"})}, as_of=4)
    text = serialize_index(matrix)
    assert text.splitlines()[0] == "as_of 4"
    parsed = parse_index(text)
    assert parsed.as_of == 4
    assert parsed.rows == matrix.rows
