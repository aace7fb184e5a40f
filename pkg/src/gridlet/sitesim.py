"""A simulated remote site.

Each site bundles the pieces a submission meets on arrival: a gatekeeper
that authenticates DNs through the gridmap and account pool, an artifact
cache that stores staged files once, a FIFO batch queue with a configurable
number of worker slots, a stub analysis binary, and per-superjob outboxes
whose rolling tar always holds every output finished so far.

The stub binary is deterministic: its payload is a function of the site,
the task index, and the runs processed, and the failure/loss draws come
from a per-site seeded generator, so identical scenarios replay to
identical event logs byte for byte.
"""

import io
import random
import re
import tarfile
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import BFROOT_PREFIX
from .errors import (AuthorizationError, DelegationExpiredError,
                     DuplicateOutputError, OutboxAccessError, StubRunFailure)
from .query import TaskList, run_of_path
from .sandbox import Script, inventory_aux
from .voauth import AccountPool, GridmapFile

MODE_SHARED_FS = "shared_fs"
MODE_STAGED = "staged_sandbox"

FATE_OK = "ok"
FATE_FAIL = "fail"
FATE_VANISH = "vanish"

_OUTPUT_NAME_RE = re.compile(r"^output-(\d+)$")


def output_name(index: int) -> str:
    return f"output-{index}"


def output_index(name: str) -> int | None:
    m = _OUTPUT_NAME_RE.match(name)
    return int(m.group(1)) if m else None


@dataclass(frozen=True)
class SiteConfig:
    site_id: str
    bfroot: str
    workers: int = 1
    failure_rate: float = 0.0
    loss_rate: float = 0.0
    seed: int = 0
    job_duration: float = 30.0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for rate in (self.failure_rate, self.loss_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must be within [0, 1]")


@dataclass(frozen=True)
class SiteSession:
    site_id: str
    dn: str
    account: str


@dataclass(frozen=True)
class StubRunResult:
    task_index: int
    runs_processed: tuple[int, ...]
    events: int
    payload: bytes
    manifest_text: str


@dataclass
class SuperjobOutbox:
    superjob_id: str
    dir: Path
    tar_path: Path
    owner_account: str

    def members(self) -> set[str]:
        if not self.dir.exists():
            return set()
        return {p.name for p in self.dir.iterdir() if p.is_file()}


class Site:
    def __init__(self, config: SiteConfig, root: Path,
                 gridmap: GridmapFile | None = None,
                 pool: AccountPool | None = None):
        self.config = config
        self.site_id = config.site_id
        self.bfroot = config.bfroot.rstrip("/")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.gridmap = gridmap if gridmap is not None else GridmapFile()
        self.pool = pool if pool is not None else AccountPool(config.site_id)
        self.queue: deque[str] = deque()            # job ids, FIFO
        self.running: list[tuple[str, float]] = []  # (job id, ends_at), start order
        self.artifact_cache: dict[str, bytes] = {}
        self.transfer_count = 0
        self.present: set[str] = set()              # resolved data paths on disk
        self.run_events: dict[int, int] = {}
        self.outboxes: dict[str, SuperjobOutbox] = {}
        self._rng = random.Random(config.seed)
        self._lock = threading.RLock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    # -- gatekeeper ----------------------------------------------------------

    def gatekeep(self, dn: str, token, now: float) -> SiteSession:
        """Authenticate a request and resolve it to a local account."""
        if token is None:
            raise AuthorizationError(f"no delegation presented for {dn!r}")
        if not token.valid(now):
            raise DelegationExpiredError(f"delegation for {dn!r} has expired")
        with self._lock:
            if dn not in self.gridmap:
                raise AuthorizationError(
                    f"DN {dn!r} is not mapped at site {self.site_id}")
            assignment = self.pool.map_dn(dn, self.gridmap)
            return SiteSession(self.site_id, dn, assignment.account_name)

    def stage_artifact(self, name: str, data: bytes) -> str:
        """Store an artifact once; repeats are skipped without a transfer."""
        with self._lock:
            if name in self.artifact_cache:
                return "skipped"
            self.artifact_cache[name] = data
            self.transfer_count += 1
            return "cached"

    # -- local data ------------------------------------------------------------

    def resolve(self, logical_path: str) -> str:
        return self.bfroot + "/" + logical_path[len(BFROOT_PREFIX):]

    def materialize_run(self, logical_path: str, run_number: int,
                        event_count: int) -> None:
        self.present.add(self.resolve(logical_path))
        self.run_events[run_number] = event_count

    def remove_run(self, logical_path: str) -> None:
        self.present.discard(self.resolve(logical_path))

    # -- batch queue -----------------------------------------------------------

    def enqueue(self, job_id: str) -> None:
        with self._lock:
            self.queue.append(job_id)

    def pop_due(self, now: float) -> list[str]:
        with self._lock:
            due = [job_id for job_id, ends_at in self.running if ends_at <= now]
            self.running = [(j, e) for j, e in self.running if e > now]
            return due

    def start_slots(self, now: float) -> list[str]:
        """Move queued jobs into free worker slots, FIFO."""
        started = []
        with self._lock:
            while self.queue and len(self.running) < self.config.workers:
                job_id = self.queue.popleft()
                self.running.append((job_id, now + self.config.job_duration))
                started.append(job_id)
        return started

    def drop_running(self, job_id: str) -> None:
        with self._lock:
            self.running = [(j, e) for j, e in self.running if j != job_id]

    def busy(self) -> bool:
        with self._lock:
            return bool(self.queue or self.running)

    def draw_fate(self) -> str:
        # both draws always happen so the stream is stable across rate changes
        r_fail = self._rng.random()
        r_vanish = self._rng.random()
        if r_fail < self.config.failure_rate:
            return FATE_FAIL
        if r_vanish < self.config.loss_rate:
            return FATE_VANISH
        return FATE_OK

    # -- outboxes ----------------------------------------------------------------

    def gatekeeper_dir(self) -> Path:
        return self.root / "gatekeeper"

    def outbox(self, superjob_id: str, owner_account: str) -> SuperjobOutbox:
        with self._lock:
            box = self.outboxes.get(superjob_id)
            if box is None:
                box = SuperjobOutbox(
                    superjob_id,
                    self.gatekeeper_dir() / superjob_id,
                    self.gatekeeper_dir() / f"{superjob_id}.tar",
                    owner_account,
                )
                box.dir.mkdir(parents=True, exist_ok=True)
                self.outboxes[superjob_id] = box
            return box

    def finish_job(self, superjob_id: str, result: StubRunResult) -> SuperjobOutbox:
        """Move one finished output into the outbox and refresh the rolling tar."""
        with self._lock:
            box = self.outboxes.get(superjob_id)
            if box is None:
                raise OutboxAccessError(
                    f"no outbox for superjob {superjob_id} at {self.site_id}")
            target = box.dir / output_name(result.task_index)
            if target.exists():
                raise DuplicateOutputError(
                    f"{target.name} already finished in superjob {superjob_id}")
            target.write_bytes(result.payload)
            self._rebuild_tar(box)
            return box

    def _rebuild_tar(self, box: SuperjobOutbox) -> None:
        names = sorted(box.members(), key=lambda n: (output_index(n) is None,
                                                     output_index(n) or 0, n))
        with tarfile.open(box.tar_path, "w", format=tarfile.USTAR_FORMAT) as tar:
            for name in names:
                data = (box.dir / name).read_bytes()
                info = tarfile.TarInfo(name)
                info.size = len(data)
                info.mtime = 0
                info.uid = info.gid = 0
                info.mode = 0o644
                tar.addfile(info, io.BytesIO(data))

    def outbox_members(self, superjob_id: str) -> set[str]:
        box = self.outboxes.get(superjob_id)
        return box.members() if box else set()

    def read_outbox_tar(self, superjob_id: str, account: str | None = None) -> bytes:
        """Read the rolling tar; access is keyed by the owning account."""
        with self._lock:
            box = self.outboxes.get(superjob_id)
            if box is None:
                raise OutboxAccessError(
                    f"no outbox for superjob {superjob_id} at {self.site_id}")
            if account is not None and account != box.owner_account:
                raise OutboxAccessError(
                    f"account {account} may not read outbox of {box.owner_account}")
            return box.tar_path.read_bytes()


def run_stub_binary(site: Site, task: TaskList, mode: str,
                    aux_available: frozenset[str] | set[str] = frozenset(),
                    script: Script | None = None,
                    extra_aux_reads: tuple[str, ...] = ()) -> StubRunResult:
    """Process a task list the way the analysis binary would.

    In staged mode every aux file the script reads (including run-time
    reads the manifest never saw) must have been staged; in shared mode the
    working directory provides everything.  Each data entry must actually
    be present under the site's root, whatever the catalog flag claimed.
    """
    if mode == MODE_STAGED:
        required = list(inventory_aux(script)) if script is not None else []
        required.extend(extra_aux_reads)
        for name in required:
            if name not in aux_available:
                raise StubRunFailure(f"missing aux file {name}")
    runs: list[int] = []
    events = 0
    for logical_path in task.entries:
        resolved = site.resolve(logical_path)
        if resolved not in site.present:
            raise StubRunFailure(f"missing data file {resolved}")
        run = run_of_path(logical_path)
        runs.append(run)
        events += site.run_events.get(run, 0)
    payload = (f"SITE={site.site_id}\n"
               f"TASK={task.index}\n"
               f"RUNS={','.join(str(r) for r in runs)}\n"
               f"EVENTS={events}\n").encode()
    manifest_lines = [f"run {r} events {site.run_events.get(r, 0)}" for r in runs]
    manifest_lines.append(f"total {events}")
    manifest_text = "".join(line + "\n" for line in manifest_lines)
    return StubRunResult(task.index, tuple(runs), events, payload, manifest_text)
