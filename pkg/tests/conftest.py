import pytest

from gridlet.catalog import (CentralCatalog, DatasetName, SiteCatalog,
                             file_record)


def make_dataset(run, proc="P1", sel="V1", typ="T1"):
    return DatasetName(run, proc, sel, typ)


def make_catalog(site_id, bfroot, runs, local_runs=None, proc="P1", sel="V1", typ="T1"):
    """A site catalog carrying metadata for `runs`, flagged local for `local_runs`."""
    catalog = SiteCatalog(site_id, bfroot)
    local_runs = set(runs if local_runs is None else local_runs)
    for run in runs:
        rec = file_record(make_dataset(run, proc, sel, typ))
        catalog.register_file(rec)
        if run in local_runs:
            catalog.set_local_flag(rec.logical_path, True)
    return catalog


def make_central(runs, proc="P1", sel="V1", typ="T1", events=600_000):
    central = CentralCatalog()
    for run in runs:
        central.register_file(file_record(make_dataset(run, proc, sel, typ)))
    return central


@pytest.fixture
def two_site_catalogs():
    # runs 1-4 at A, 3-6 at B; metadata for 1-6 known everywhere
    a = make_catalog("A", "/data/a", range(1, 7), local_runs=range(1, 5))
    b = make_catalog("B", "/data/b", range(1, 7), local_runs=range(3, 7))
    return {"A": a, "B": b}
