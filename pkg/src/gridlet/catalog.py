"""Run/dataset metadata catalog and the multi-site availability index.

The dataset name is the metadata: run number, processing version, selection
version, and selection type are all encoded in the filename, so every site
can carry a full copy of the catalog and only needs one extra bit per file,
the local-availability flag.  Logical paths start with the ``$BFROOT``
token; each site resolves it to its own mount point, so the same name works
everywhere.

A nightly sync gathers each site's flags centrally and pushes back the
merged run-to-sites matrix: 2 messages per site per round, 2N total, not
N^2 site-to-site gossip.  The matrix is therefore as fresh as each site's
last successful upload and no fresher.
"""

import re
from dataclasses import dataclass, field

from .errors import DatasetNameError, PathPrefixError, UnknownPathError
from .transport import Transport

BFROOT = "$BFROOT"
BFROOT_PREFIX = BFROOT + "/"

DEFAULT_EVENTS_PER_RUN = 600_000

_TOKEN_RE = re.compile(r"^[A-Za-z0-9]+$")
_RUN_RE = re.compile(r"^run(\d{6})$")


@dataclass(frozen=True)
class DatasetName:
    run_number: int
    processing_version: str
    selection_version: str
    selection_type: str

    def encode(self) -> str:
        return (f"run{self.run_number:06d}-proc{self.processing_version}"
                f"-sel{self.selection_version}-typ{self.selection_type}.data")


def _check_token(name: str, segment: str, prefix: str, value: str) -> str:
    if not value.startswith(prefix):
        raise DatasetNameError(name, segment, f"must start with {prefix!r}")
    token = value[len(prefix):]
    if not _TOKEN_RE.match(token):
        raise DatasetNameError(name, segment, "token must be [A-Za-z0-9]+")
    return token


def parse_dataset_name(name: str) -> DatasetName:
    """Decode ``run<6 digits>-proc<tok>-sel<tok>-typ<tok>.data``."""
    if not name.endswith(".data"):
        raise DatasetNameError(name, "suffix", "must end with '.data'")
    stem = name[:-len(".data")]
    parts = stem.split("-")
    if len(parts) != 4:
        raise DatasetNameError(name, "structure",
                               "expected run-proc-sel-typ segments")
    m = _RUN_RE.match(parts[0])
    if not m:
        raise DatasetNameError(name, "run", "must be 'run' + 6 digits")
    run_number = int(m.group(1))
    if run_number <= 0:
        raise DatasetNameError(name, "run", "run number must be positive")
    proc = _check_token(name, "proc", "proc", parts[1])
    sel = _check_token(name, "sel", "sel", parts[2])
    typ = _check_token(name, "typ", "typ", parts[3])
    return DatasetName(run_number, proc, sel, typ)


def canonical_logical_path(dataset: DatasetName) -> str:
    return f"{BFROOT_PREFIX}data/{dataset.encode()}"


@dataclass(frozen=True)
class RunRecord:
    run_number: int
    event_count: int = DEFAULT_EVENTS_PER_RUN

    def __post_init__(self):
        if self.event_count < 0:
            raise ValueError("event_count must be nonnegative")


@dataclass(frozen=True)
class FileRecord:
    dataset: DatasetName
    logical_path: str
    size_hint: int = 0

    def __post_init__(self):
        if not self.logical_path.startswith(BFROOT_PREFIX):
            raise PathPrefixError(
                f"logical path {self.logical_path!r} must start with {BFROOT_PREFIX!r}")


def file_record(dataset: DatasetName, size_hint: int = 0) -> FileRecord:
    return FileRecord(dataset, canonical_logical_path(dataset), size_hint)


@dataclass
class AvailabilityMatrix:
    rows: dict[int, frozenset[str]] = field(default_factory=dict)
    as_of: int = 0

    def sites_for(self, run_number: int) -> frozenset[str]:
        return self.rows.get(run_number, frozenset())


class SiteCatalog:
    """One site's copy of the metadata plus its local-availability flags."""

    def __init__(self, site_id: str, bfroot: str):
        self.site_id = site_id
        self.bfroot = bfroot.rstrip("/")
        self.files: dict[str, FileRecord] = {}
        self.local: dict[str, bool] = {}
        self.matrix_copy: AvailabilityMatrix | None = None

    def register_file(self, record: FileRecord) -> None:
        self.files[record.logical_path] = record
        self.local.setdefault(record.logical_path, False)

    def set_local_flag(self, logical_path: str, present: bool) -> None:
        if logical_path not in self.files:
            raise UnknownPathError(
                f"{logical_path!r} is not registered at {self.site_id}")
        self.local[logical_path] = present

    def local_paths(self) -> list[str]:
        return [p for p, flag in sorted(self.local.items()) if flag]

    def local_runs(self) -> set[int]:
        return {self.files[p].dataset.run_number for p in self.local_paths()}

    def records(self) -> list[FileRecord]:
        return sorted(self.files.values(), key=lambda r: r.dataset.run_number)


def set_local_flag(catalog: SiteCatalog, logical_path: str, present: bool) -> SiteCatalog:
    catalog.set_local_flag(logical_path, present)
    return catalog


def resolve_path(catalog: SiteCatalog, logical_path: str) -> str:
    """Swap the root token for this site's mount; the suffix is untouched."""
    if not logical_path.startswith(BFROOT_PREFIX):
        raise PathPrefixError(
            f"{logical_path!r} does not start with {BFROOT_PREFIX!r}")
    return catalog.bfroot + "/" + logical_path[len(BFROOT_PREFIX):]


class CentralCatalog:
    """Central metadata plus the per-site upload snapshots behind the matrix."""

    def __init__(self):
        self.runs: dict[int, RunRecord] = {}
        self.files: dict[str, FileRecord] = {}
        self.site_ids: set[str] = set()
        self.last_upload: dict[str, frozenset[int]] = {}
        self.stale: set[str] = set()
        self.matrix = AvailabilityMatrix()
        self.round = 0

    def register_run(self, record: RunRecord) -> None:
        self.runs[record.run_number] = record

    def register_file(self, record: FileRecord) -> None:
        self.files[record.logical_path] = record
        if record.dataset.run_number not in self.runs:
            self.runs[record.dataset.run_number] = RunRecord(record.dataset.run_number)

    def register_site(self, site_id: str) -> None:
        self.site_ids.add(site_id)


@dataclass(frozen=True)
class SyncResult:
    matrix: AvailabilityMatrix
    message_count: int
    stale: frozenset[str]


def nightly_sync(central: CentralCatalog, sites: dict[str, SiteCatalog],
                 transport: Transport | None = None,
                 download_failed: frozenset[str] = frozenset()) -> SyncResult:
    """One sync round: collect per-site flags, rebuild and distribute the matrix.

    Costs one flag upload plus one matrix download per site.  A site whose
    upload does not arrive is marked stale and its previous snapshot is
    reused; the matrix copy is still pushed to it (the stated cost law is
    2N - u for u unreachable sites).
    """
    messages = 0
    for site_id in sorted(sites):
        central.register_site(site_id)
        cat = sites[site_id]
        if transport is None or transport.is_up(site_id):
            if transport is not None:
                transport.send("flag-upload", src=site_id, dst="central")
            central.last_upload[site_id] = frozenset(cat.local_runs())
            central.stale.discard(site_id)
            messages += 1
        else:
            central.stale.add(site_id)

    rows: dict[int, set[str]] = {}
    for site_id, run_set in central.last_upload.items():
        for run in run_set:
            rows.setdefault(run, set()).add(site_id)
    central.round += 1
    central.matrix = AvailabilityMatrix(
        {run: frozenset(site_set) for run, site_set in rows.items()},
        as_of=central.round,
    )

    # The matrix push is forced: a site whose upload path was down this
    # round still receives (and counts) its copy, giving the 2N-u law.
    for site_id in sorted(sites):
        if site_id in download_failed:
            continue
        if transport is not None:
            transport.send("matrix-download", src="central", dst=site_id, force=True)
        sites[site_id].matrix_copy = central.matrix
        messages += 1

    return SyncResult(central.matrix, messages, frozenset(central.stale))


def serialize_catalog(catalog: SiteCatalog) -> str:
    lines = []
    for rec in catalog.records():
        flag = 1 if catalog.local.get(rec.logical_path) else 0
        lines.append(f"{rec.dataset.encode()} {flag}")
    return "".join(line + "\n" for line in lines)


def parse_catalog(text: str, site_id: str, bfroot: str) -> SiteCatalog:
    catalog = SiteCatalog(site_id, bfroot)
    for raw in text.splitlines():
        if not raw.strip():
            continue
        name, _, flag = raw.rpartition(" ")
        dataset = parse_dataset_name(name)
        rec = file_record(dataset)
        catalog.register_file(rec)
        catalog.set_local_flag(rec.logical_path, flag == "1")
    return catalog


def serialize_index(matrix: AvailabilityMatrix) -> str:
    lines = [f"as_of {matrix.as_of}"]
    for run in sorted(matrix.rows):
        sites = ",".join(sorted(matrix.rows[run]))
        lines.append(f"{run} {sites}")
    return "".join(line + "\n" for line in lines)


def parse_index(text: str) -> AvailabilityMatrix:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("as_of "):
        raise ValueError("index file must start with an 'as_of' header")
    as_of = int(lines[0].split()[1])
    rows: dict[int, frozenset[str]] = {}
    for raw in lines[1:]:
        run_str, _, sites_str = raw.partition(" ")
        rows[int(run_str)] = frozenset(s for s in sites_str.split(",") if s)
    return AvailabilityMatrix(rows, as_of)
