"""Submission orchestration: the per-task command path and the portal path.

The per-task path (`gsub`) runs a two-phase protocol against one site:
stage the token-login helper and the binary if the site does not have them
yet, then enqueue a wrapper that logs in as the user's DN, changes to the
user's working directory on the shared filesystem, points the data-root
variable at the *site's* mount, and runs the binary on the task script.
Every call charges a fixed simulated latency, which is what makes a
several-hundred-job loop take a barely acceptable time.

The portal path submits a whole plan at once: per site, a stage-in job
(job0) delivers the binary, the flattened script, and the aux files into a
superjob directory, and the member jobs are only released to the batch
queue once job0 completes.  A failed job0 fails its superjob; the members
never leave `submitted`.

There is deliberately no bookkeeping: a lost job stays lost, and no job is
ever reassigned to another site.
"""

import re
import threading
from dataclasses import dataclass
from pathlib import Path

from .clock import SimClock
from .errors import (AuthorizationError, DelegationExpiredError, GridletError,
                     NoLogError, StateTransitionError, StubRunFailure,
                     SubmissionError, UnknownJobError)
from .events import (DONE, FAILED, LOST, QUEUED, RUNNING, STAGED, SUBMITTED,
                     TERMINAL, EventLog, is_legal_transition)
from .query import SitePlan, TaskList, tasklist_filename
from .sandbox import (KIND_INPUT, KIND_SOURCE, SandboxManifest, Script,
                      dir_resolver, expand)
from .sitesim import (FATE_FAIL, FATE_OK, FATE_VANISH, MODE_SHARED_FS,
                      MODE_STAGED, Site, output_name, run_stub_binary)
from .transport import Transport
from .voauth import validate_dn

DEFAULT_GSUB_LATENCY = 10.0
DEFAULT_LOG_LATENCY = 5.0
DEFAULT_LOST_TIMEOUT = 300.0
DEFAULT_PROXY_LIFETIME = 12 * 3600.0

TOKEN_HELPER_NAME = "token-login"
TOKEN_HELPER_BYTES = b"#!/bin/sh\n# acquires a filesystem token from the grid credential\n"

KIND_JOB0 = "job0"
KIND_MEMBER = "member"
KIND_GSUB = "gsub"


def binary_bytes(name: str) -> bytes:
    return f"binary:{name}\n".encode()


@dataclass(frozen=True)
class TokenRecord:
    dn: str
    issued_at: float
    expires_at: float

    def valid(self, now: float) -> bool:
        return now < self.expires_at


@dataclass
class JobSpec:
    site_id: str
    binary: str
    script: TaskList | Script
    mode: str
    dn: str
    working_dir: str | None = None
    manifest: SandboxManifest | None = None

    def __post_init__(self):
        if self.mode == MODE_SHARED_FS and not self.working_dir:
            raise ValueError("shared_fs jobs need a working_dir")
        if self.mode == MODE_STAGED and self.manifest is None:
            raise ValueError("staged_sandbox jobs need a manifest")


@dataclass
class JobHandle:
    job_id: str
    site_id: str
    sequence_index: int | None  # None for job0
    state: str = SUBMITTED


@dataclass
class _JobRecord:
    handle: JobHandle
    kind: str
    dn: str
    binary: str = ""
    task: TaskList | None = None
    script: Script | None = None
    mode: str = MODE_STAGED
    aux_available: frozenset[str] = frozenset()
    extra_aux_reads: tuple[str, ...] = ()
    superjob_id: str | None = None
    working_dir: str | None = None
    stage_items: tuple[tuple[str, bytes], ...] = ()
    doomed_fail: bool = False
    doomed_vanish: bool = False
    fate: str = FATE_OK
    vanished: bool = False
    started_at: float | None = None
    log_text: str | None = None


@dataclass
class Superjob:
    superjob_id: str
    site_id: str
    job0: JobHandle
    jobs: list[JobHandle]
    dn: str
    account: str | None = None
    failed_reason: str | None = None

    def all_handles(self) -> list[JobHandle]:
        return [self.job0] + list(self.jobs)


@dataclass
class Hyperjob:
    hyperjob_id: str
    superjobs: list[Superjob]
    plan: SitePlan
    proxy: TokenRecord
    dn: str
    result_path: str | None = None

    def all_handles(self) -> list[JobHandle]:
        out = []
        for sj in self.superjobs:
            out.extend(sj.all_handles())
        return out


class Orchestrator:
    def __init__(self, clock: SimClock, event_log: EventLog,
                 transport: Transport, sites: dict[str, Site],
                 gsub_latency: float = DEFAULT_GSUB_LATENCY,
                 log_latency: float = DEFAULT_LOG_LATENCY,
                 lost_timeout: float = DEFAULT_LOST_TIMEOUT):
        self.clock = clock
        self.event_log = event_log
        self.transport = transport
        self.sites = sites
        self.gsub_latency = gsub_latency
        self.log_latency = log_latency
        self.lost_timeout = lost_timeout
        self.proxies: dict[str, TokenRecord] = {}
        self.jobs: dict[str, _JobRecord] = {}
        self.superjobs: dict[str, Superjob] = {}
        self.hyperjobs: dict[str, Hyperjob] = {}
        self._next_id = {"job": 0, "sj": 0, "hj": 0}
        self._lock = threading.RLock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    # -- identity ------------------------------------------------------------

    def delegate_proxy(self, dn: str, lifetime: float = DEFAULT_PROXY_LIFETIME) -> TokenRecord:
        """Bind a delegation to a DN; submissions through it act as that DN."""
        validate_dn(dn)
        token = TokenRecord(dn, self.clock.now, self.clock.now + lifetime)
        with self._lock:
            self.proxies[dn] = token
        return token

    def _require_proxy(self, dn: str) -> TokenRecord:
        token = self.proxies.get(dn)
        if token is None:
            raise AuthorizationError(f"no delegation uploaded for {dn!r}")
        if not token.valid(self.clock.now):
            raise DelegationExpiredError(f"delegation for {dn!r} has expired")
        return token

    # -- bookkeeping primitives -----------------------------------------------

    def _mint(self, prefix: str) -> str:
        n = self._next_id[prefix]
        self._next_id[prefix] = n + 1
        return f"{prefix}-{n}"

    def _new_job(self, site_id: str, nn: int | None, kind: str, dn: str) -> _JobRecord:
        handle = JobHandle(self._mint("job"), site_id, nn)
        record = _JobRecord(handle, kind, dn)
        self.jobs[handle.job_id] = record
        self.event_log.append(handle.job_id, "none", SUBMITTED)
        return record

    def _transition(self, record: _JobRecord, dst: str) -> None:
        src = record.handle.state
        if src in TERMINAL:
            raise StateTransitionError(
                f"{record.handle.job_id}: job already terminal ({src})")
        if not is_legal_transition(src, dst):
            raise StateTransitionError(
                f"{record.handle.job_id}: illegal {src} -> {dst}")
        record.handle.state = dst
        self.event_log.append(record.handle.job_id, src, dst)

    # -- gsub path -------------------------------------------------------------

    def gsub(self, spec: JobSpec) -> JobHandle:
        """Stage-then-submit one task to one site over the shared filesystem."""
        with self._lock:
            if spec.mode != MODE_SHARED_FS:
                raise SubmissionError("gsub submits shared-filesystem jobs")
            site = self.sites.get(spec.site_id)
            if site is None:
                raise SubmissionError(f"unknown site {spec.site_id!r}")
            token = self._require_proxy(spec.dn)
            if spec.dn not in site.gridmap:
                raise AuthorizationError(
                    f"DN {spec.dn!r} is not mapped at site {spec.site_id}")
            self.clock.advance(self.gsub_latency)

            task, nn = self._task_of(spec)
            record = self._new_job(spec.site_id, nn, KIND_GSUB, spec.dn)
            record.binary = spec.binary
            record.task = task
            record.script = spec.script if isinstance(spec.script, Script) else None
            record.mode = MODE_SHARED_FS
            record.working_dir = spec.working_dir

            if not self.transport.is_up(spec.site_id):
                self._transition(record, LOST)
                err = SubmissionError(f"site {spec.site_id} is unreachable")
                err.handle = record.handle
                raise err

            # phase 1: stage the helper and the binary iff absent
            self.transport.send("stage", src="home", dst=spec.site_id)
            site.stage_artifact(TOKEN_HELPER_NAME, TOKEN_HELPER_BYTES)
            site.stage_artifact(spec.binary, binary_bytes(spec.binary))
            self._transition(record, STAGED)
            # phase 2: enqueue the wrapper
            self.transport.send("submit", src="home", dst=spec.site_id)
            site.enqueue(record.handle.job_id)
            self._transition(record, QUEUED)
            return record.handle

    def _task_of(self, spec: JobSpec) -> tuple[TaskList, int]:
        if isinstance(spec.script, TaskList):
            return spec.script, spec.script.index
        # a user script run from the working directory: flatten it against
        # the directory contents and collect its data entries
        resolver = dir_resolver(spec.working_dir)
        flattened = expand(spec.script, resolver)
        entries = tuple(l.payload for l in flattened.lines if l.kind == KIND_INPUT)
        if not entries:
            raise SubmissionError(
                f"script {spec.script.name!r} references no data files")
        # the task index follows the sourced data-<nn>.tcl (output-<nn> pairs
        # with it); fall back to the script's own name, then a counter
        index = None
        for line in spec.script.lines:
            if line.kind == KIND_SOURCE:
                index = _index_from_name(line.payload)
                if index is not None:
                    break
        if index is None:
            index = _index_from_name(spec.script.name)
        if index is None:
            index = sum(1 for r in self.jobs.values()
                        if r.kind == KIND_GSUB and r.working_dir == spec.working_dir)
        return TaskList(index, entries), index

    # -- hyperjob path -----------------------------------------------------------

    def submit_hyperjob(self, plan: SitePlan, manifest: SandboxManifest, dn: str,
                        fail_job0: frozenset[str] = frozenset()) -> Hyperjob:
        """One superjob per planned site; job0 stages, members follow it."""
        with self._lock:
            if plan.total_tasks() == 0:
                raise SubmissionError("plan contains no task lists")
            token = self._require_proxy(dn)
            hyperjob_id = self._mint("hj")
            superjobs: list[Superjob] = []
            for site_id in plan.nonempty_sites():
                if site_id not in self.sites:
                    raise SubmissionError(f"plan names unknown site {site_id!r}")
                superjob_id = self._mint("sj")
                stage_items = [(manifest.binary, binary_bytes(manifest.binary)),
                               ("script.tcl", manifest.flattened_script.text().encode())]
                stage_items += [(name, f"aux:{name}\n".encode())
                                for name in manifest.aux_files]
                job0 = self._new_job(site_id, None, KIND_JOB0, dn)
                job0.binary = manifest.binary
                job0.superjob_id = superjob_id
                job0.stage_items = tuple(stage_items)
                job0.doomed_fail = site_id in fail_job0
                members: list[JobHandle] = []
                for task in plan.assignments[site_id]:
                    member = self._new_job(site_id, task.index, KIND_MEMBER, dn)
                    member.binary = manifest.binary
                    member.task = task
                    member.script = manifest.flattened_script
                    member.aux_available = frozenset(manifest.aux_files)
                    member.superjob_id = superjob_id
                    members.append(member.handle)
                superjob = Superjob(superjob_id, site_id, job0.handle, members, dn)
                self.superjobs[superjob_id] = superjob
                superjobs.append(superjob)
                # job0 goes straight to the site queue
                self._transition(job0, STAGED)
                self.sites[site_id].enqueue(job0.handle.job_id)
                self._transition(job0, QUEUED)
            hyperjob = Hyperjob(hyperjob_id, superjobs, plan, token, dn)
            self.hyperjobs[hyperjob_id] = hyperjob
            return hyperjob

    # -- batch progress ------------------------------------------------------------

    def site_tick(self, site: Site) -> bool:
        """Complete due jobs, then start queued ones; True if anything moved."""
        now = self.clock.now
        moved = False
        for job_id in site.pop_due(now):
            self._complete(site, self.jobs[job_id])
            moved = True
        for job_id in site.start_slots(now):
            self._start(site, self.jobs[job_id])
            moved = True
        return moved

    def _start(self, site: Site, record: _JobRecord) -> None:
        record.started_at = self.clock.now
        self._transition(record, RUNNING)
        try:
            session = site.gatekeep(record.dn, self.proxies.get(record.dn),
                                    self.clock.now)
        except Exception as err:
            site.drop_running(record.handle.job_id)
            record.log_text = f"gatekeeper rejected {record.dn}: {err}\nexit 1\n"
            self._transition(record, FAILED)
            return
        if record.superjob_id is not None:
            superjob = self.superjobs[record.superjob_id]
            if superjob.account is None:
                superjob.account = session.account
        record.log_text = self._wrapper_header(site, record, session.account)
        if record.kind != KIND_JOB0:
            record.fate = FATE_VANISH if record.doomed_vanish else site.draw_fate()
            if record.fate == FATE_VANISH:
                # the node died: the job vanishes, holds no slot, leaves no log
                site.drop_running(record.handle.job_id)
                record.vanished = True
                record.log_text = None

    def _wrapper_header(self, site: Site, record: _JobRecord, account: str) -> str:
        workdir = record.working_dir if record.mode == MODE_SHARED_FS else \
            str(site.root / "stage" / (record.superjob_id or ""))
        if record.kind == KIND_GSUB and record.script is not None:
            script_name = record.script.name
        elif record.task is not None:
            script_name = tasklist_filename(record.task.index)
        else:
            script_name = "script.tcl"
        lines = [
            f"{TOKEN_HELPER_NAME} {record.dn} ok account={account}",
            f"cd {workdir}",
            f"export BFROOT={site.bfroot}",
            f"run {record.binary} {script_name}",
        ]
        if record.kind == KIND_JOB0:
            lines[3] = "run stage-in"
        return "".join(line + "\n" for line in lines)

    def _complete(self, site: Site, record: _JobRecord) -> None:
        if record.kind == KIND_JOB0:
            self._complete_job0(site, record)
            return
        if record.fate == FATE_FAIL:
            record.log_text += "error: injected failure\nexit 1\n"
            self._transition(record, FAILED)
            return
        try:
            result = run_stub_binary(site, record.task, record.mode,
                                     aux_available=record.aux_available,
                                     script=record.script,
                                     extra_aux_reads=record.extra_aux_reads)
        except StubRunFailure as err:
            record.log_text += f"error: {err}\nexit 1\n"
            self._transition(record, FAILED)
            return
        try:
            if record.kind == KIND_MEMBER:
                site.finish_job(record.superjob_id, result)
            else:  # gsub: output lands straight in the user's working directory
                out = Path(record.working_dir) / output_name(result.task_index)
                out.write_bytes(result.payload)
        except (OSError, GridletError) as err:
            record.log_text += f"error: cannot deliver output: {err}\nexit 1\n"
            self._transition(record, FAILED)
            return
        record.log_text += (
            f"processed runs={','.join(str(r) for r in result.runs_processed)} "
            f"events={result.events}\nexit 0\n")
        self._transition(record, DONE)

    def _complete_job0(self, site: Site, record: _JobRecord) -> None:
        superjob = self.superjobs[record.superjob_id]
        if record.doomed_fail:
            record.log_text += "error: stage-in failed\nexit 1\n"
            self._transition(record, FAILED)
            superjob.failed_reason = "job0 failed"
            return
        stage_dir = site.root / "stage" / record.superjob_id
        stage_dir.mkdir(parents=True, exist_ok=True)
        for name, data in record.stage_items:
            (stage_dir / name).write_bytes(data)
        site.outbox(record.superjob_id, superjob.account)
        record.log_text += f"staged {len(record.stage_items)} items\nexit 0\n"
        self._transition(record, DONE)
        self._release_members(site, superjob)

    def _release_members(self, site: Site, superjob: Superjob) -> None:
        proxy = self.proxies.get(superjob.dn)
        for handle in superjob.jobs:
            record = self.jobs[handle.job_id]
            if proxy is None or not proxy.valid(self.clock.now):
                record.log_text = "delegation expired before submission\n"
                self._transition(record, FAILED)
                continue
            self._transition(record, STAGED)
            site.enqueue(handle.job_id)
            self._transition(record, QUEUED)

    def sweep_lost(self) -> list[str]:
        """Mark vanished jobs lost once the site has been silent long enough."""
        swept = []
        with self._lock:
            for record in self.jobs.values():
                if not record.vanished or record.handle.state != RUNNING:
                    continue
                if self.clock.now - (record.started_at or 0) >= self.lost_timeout:
                    self._transition(record, LOST)
                    swept.append(record.handle.job_id)
        return swept

    # -- inspection -------------------------------------------------------------

    def poll(self, any_id: str):
        """Job id -> state; superjob/hyperjob id -> consistent state map."""
        with self._lock:
            if any_id in self.jobs:
                return self.jobs[any_id].handle.state
            if any_id in self.superjobs:
                sj = self.superjobs[any_id]
                return {h.job_id: h.state for h in sj.all_handles()}
            if any_id in self.hyperjobs:
                hj = self.hyperjobs[any_id]
                return {h.job_id: h.state for h in hj.all_handles()}
        raise UnknownJobError(f"unknown id {any_id!r}")

    def retrieve_log(self, job_id: str) -> str:
        record = self.jobs.get(job_id)
        if record is None:
            raise UnknownJobError(f"unknown job {job_id!r}")
        self.clock.advance(self.log_latency)
        if record.log_text is None:
            raise NoLogError(f"no log for job {job_id} (state {record.handle.state})")
        return record.log_text

    def status_lines(self, hyperjob_id: str) -> list[str]:
        """`JOB <id> <site> <nn> <state>` lines, job0 first per superjob."""
        hj = self.hyperjobs.get(hyperjob_id)
        if hj is None:
            raise UnknownJobError(f"unknown hyperjob {hyperjob_id!r}")
        lines = []
        with self._lock:
            for sj in hj.superjobs:
                for handle in sj.all_handles():
                    nn = "job0" if handle.sequence_index is None else handle.sequence_index
                    lines.append(
                        f"JOB {handle.job_id} {handle.site_id} {nn} {handle.state}")
        return lines


def _index_from_name(name: str) -> int | None:
    m = re.match(r"^data-(\d+)\.tcl$", name)
    return int(m.group(1)) if m else None
