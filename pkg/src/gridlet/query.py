"""Data selection and the split of an analysis into per-site task lists.

Two planning strategies produce the same shape of result, a SitePlan:

* ``allocate_priority`` queries each site's catalog in priority order and
  passes the runs already claimed by earlier sites as an exclusion set
  ("badruns"), so no run is assigned twice.  Each per-site query charges a
  simulated delay, which is exactly why the second strategy exists.
* ``split_by_index`` reads the centrally synced availability matrix once
  and assigns every run to the highest-priority site holding it (or cycles
  multi-holder runs round-robin), with no per-site remote queries.

On a fresh index both strategies agree; after a flag flips, the index one
lags until the next sync round.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import (AvailabilityMatrix, BFROOT_PREFIX, CentralCatalog,
                      FileRecord, SiteCatalog, parse_dataset_name)
from .clock import SimClock

DEFAULT_CHUNK_SIZE = 100
DEFAULT_QUERY_DELAY = 120.0  # simulated seconds per remote catalog query

BALANCE_NONE = "none"
BALANCE_ROUND_ROBIN = "round_robin"

TASKLIST_LINE_PREFIX = "input add "


@dataclass(frozen=True)
class SelectionCriteria:
    run_lo: int
    run_hi: int
    selection_type: str
    processing_version: str
    max_files: int | None = None

    def __post_init__(self):
        if self.run_lo > self.run_hi:
            raise ValueError("run range lower bound exceeds upper bound")

    def matches(self, record: FileRecord) -> bool:
        d = record.dataset
        return (self.run_lo <= d.run_number <= self.run_hi
                and d.selection_type == self.selection_type
                and d.processing_version == self.processing_version)


@dataclass(frozen=True)
class BadRuns:
    runs: frozenset[int] = frozenset()

    def __contains__(self, run_number: int) -> bool:
        return run_number in self.runs


@dataclass(frozen=True)
class TaskList:
    index: int
    entries: tuple[str, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("task list must not be empty")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("task list entries must be unique")
        for e in self.entries:
            if not e.startswith(BFROOT_PREFIX):
                raise ValueError(f"task entry {e!r} lacks the {BFROOT_PREFIX!r} prefix")

    def runs(self) -> list[int]:
        return [run_of_path(p) for p in self.entries]

    def filename(self) -> str:
        return tasklist_filename(self.index)


def run_of_path(logical_path: str) -> int:
    return parse_dataset_name(logical_path.rsplit("/", 1)[-1]).run_number


def tasklist_filename(index: int) -> str:
    return f"data-{index}.tcl"


_TASKLIST_NAME_RE = re.compile(r"^data-(\d+)\.tcl$")


def select_files(criteria: SelectionCriteria, catalog: SiteCatalog) -> list[FileRecord]:
    """Records matching the criteria that exist locally, ascending by run."""
    hits = [
        rec for rec in catalog.records()
        if criteria.matches(rec) and catalog.local.get(rec.logical_path)
    ]
    if criteria.max_files is not None:
        hits = hits[:criteria.max_files]
    return hits


def select_with_badruns(criteria: SelectionCriteria, catalog: SiteCatalog,
                        badruns: BadRuns) -> list[FileRecord]:
    return [rec for rec in select_files(criteria, catalog)
            if rec.dataset.run_number not in badruns]


def chunk(records: list[FileRecord], chunk_size: int) -> list[TaskList]:
    """Cut an ordered record list into task lists of chunk_size entries."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    paths = [rec.logical_path for rec in records]
    return [
        TaskList(i, tuple(paths[start:start + chunk_size]))
        for i, start in enumerate(range(0, len(paths), chunk_size))
    ]


@dataclass
class SitePlan:
    site_order: tuple[str, ...]
    assignments: dict[str, list[TaskList]] = field(default_factory=dict)
    uncovered: frozenset[int] = frozenset()

    def runs_for(self, site_id: str) -> set[int]:
        out: set[int] = set()
        for task in self.assignments.get(site_id, []):
            out.update(task.runs())
        return out

    def run_map(self) -> dict[str, set[int]]:
        return {s: self.runs_for(s) for s in self.site_order}

    def total_tasks(self) -> int:
        return sum(len(tasks) for tasks in self.assignments.values())

    def nonempty_sites(self) -> list[str]:
        return [s for s in self.site_order if self.assignments.get(s)]


def _matching_runs(criteria: SelectionCriteria, files: dict[str, FileRecord]) -> set[int]:
    return {rec.dataset.run_number for rec in files.values() if criteria.matches(rec)}


def allocate_priority(criteria: SelectionCriteria, sites_in_priority: list[str],
                      catalogs: dict[str, SiteCatalog], chunk_size: int,
                      clock: SimClock | None = None,
                      query_delay: float = DEFAULT_QUERY_DELAY) -> SitePlan:
    """Greedy allocation by site priority using per-site catalog queries.

    Site i gets the matching runs local to it that sites 1..i-1 did not
    claim; the claimed set rides along as the badruns exclusion.  Every
    per-site query advances the clock by query_delay when one is given.
    """
    if len(set(sites_in_priority)) != len(sites_in_priority):
        raise ValueError("priority list contains duplicate sites")
    claimed: set[int] = set()
    assignments: dict[str, list[TaskList]] = {}
    known_files: dict[str, FileRecord] = {}
    for site_id in sites_in_priority:
        catalog = catalogs[site_id]
        known_files.update(catalog.files)
        if clock is not None:
            clock.advance(query_delay)
        records = select_with_badruns(criteria, catalog, BadRuns(frozenset(claimed)))
        assignments[site_id] = chunk(records, chunk_size)
        claimed.update(rec.dataset.run_number for rec in records)
    uncovered = _matching_runs(criteria, known_files) - claimed
    return SitePlan(tuple(sites_in_priority), assignments, frozenset(uncovered))


def split_by_index(criteria: SelectionCriteria, matrix: AvailabilityMatrix,
                   sites_in_priority: list[str], chunk_size: int,
                   balance: str = BALANCE_NONE,
                   metadata: CentralCatalog | dict[str, FileRecord] | None = None) -> SitePlan:
    """Allocation driven by one read of the availability index.

    The global matching run list is computed once; each run goes to the
    highest-priority listed site holding it.  Under round_robin, runs held
    by more than one listed site are cycled among their holders: run of
    rank k in the multi-holder subset (ascending run order) goes to holder
    k mod h, holders ordered by priority.
    """
    if len(set(sites_in_priority)) != len(sites_in_priority):
        raise ValueError("priority list contains duplicate sites")
    if balance not in (BALANCE_NONE, BALANCE_ROUND_ROBIN):
        raise ValueError(f"unknown balance policy {balance!r}")
    if metadata is None:
        raise ValueError("split_by_index needs the metadata catalog")
    files = metadata.files if isinstance(metadata, CentralCatalog) else metadata

    by_run: dict[int, list[FileRecord]] = {}
    for rec in files.values():
        if criteria.matches(rec):
            by_run.setdefault(rec.dataset.run_number, []).append(rec)

    holders: dict[int, list[str]] = {}
    uncovered: set[int] = set()
    for run in sorted(by_run):
        held_by = [s for s in sites_in_priority if s in matrix.sites_for(run)]
        if held_by:
            holders[run] = held_by
        else:
            uncovered.add(run)

    chosen: dict[int, str] = {}
    if balance == BALANCE_NONE:
        for run, held_by in holders.items():
            chosen[run] = held_by[0]
    else:
        multi = [run for run in sorted(holders) if len(holders[run]) > 1]
        for run, held_by in holders.items():
            if len(held_by) == 1:
                chosen[run] = held_by[0]
        for rank, run in enumerate(multi):
            held_by = holders[run]
            chosen[run] = held_by[rank % len(held_by)]

    assignments: dict[str, list[TaskList]] = {}
    for site_id in sites_in_priority:
        site_records: list[FileRecord] = []
        for run in sorted(chosen):
            if chosen[run] == site_id:
                site_records.extend(
                    sorted(by_run[run], key=lambda r: r.logical_path))
        assignments[site_id] = chunk(site_records, chunk_size)
    return SitePlan(tuple(sites_in_priority), assignments, frozenset(uncovered))


def serialize_tasklist(task: TaskList) -> str:
    return "".join(f"{TASKLIST_LINE_PREFIX}{path}\n" for path in task.entries)


def parse_tasklist(text: str, index: int) -> TaskList:
    entries = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if not raw.startswith(TASKLIST_LINE_PREFIX):
            raise ValueError(f"bad task list line: {raw!r}")
        entries.append(raw[len(TASKLIST_LINE_PREFIX):])
    return TaskList(index, tuple(entries))


PLAN_FILENAME = "plan.txt"


def write_plan(plan: SitePlan, directory: Path) -> Path:
    """Lay a plan out on disk: plan.txt plus per-site data-<nn>.tcl files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for site_id in plan.site_order:
        site_dir = directory / site_id
        for task in plan.assignments.get(site_id, []):
            site_dir.mkdir(parents=True, exist_ok=True)
            (site_dir / task.filename()).write_text(serialize_tasklist(task))
            lines.append(f"{site_id} {task.filename()}")
    plan_path = directory / PLAN_FILENAME
    plan_path.write_text("".join(line + "\n" for line in lines))
    return plan_path


def load_plan(plan_path: Path) -> SitePlan:
    plan_path = Path(plan_path)
    directory = plan_path.parent
    site_order: list[str] = []
    assignments: dict[str, list[TaskList]] = {}
    for raw in plan_path.read_text().splitlines():
        if not raw.strip():
            continue
        site_id, _, filename = raw.partition(" ")
        m = _TASKLIST_NAME_RE.match(filename)
        if not m:
            raise ValueError(f"bad plan line: {raw!r}")
        if site_id not in assignments:
            assignments[site_id] = []
            site_order.append(site_id)
        text = (directory / site_id / filename).read_text()
        assignments[site_id].append(parse_tasklist(text, int(m.group(1))))
    return SitePlan(tuple(site_order), assignments)
