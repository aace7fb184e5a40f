"""The assembled simulation: clock, transport, sites, catalogs, orchestrator.

This is the integration surface the CLI, the status server, and the
acceptance scenarios drive.  Everything here is deterministic: sites are
visited in sorted order, the batch loop advances a simulated clock in
fixed ticks, and all randomness comes from per-site seeds.
"""

import pickle
import threading
from pathlib import Path

from .catalog import (CentralCatalog, DatasetName, RunRecord, SiteCatalog,
                      SyncResult, file_record, nightly_sync)
from .clock import SimClock
from .collector import (DownloadRecord, FetchResult, MergedBundle,
                        fetch_bundles, merge, write_bundle)
from .errors import UnknownJobError
from .events import TERMINAL, EventLog
from .orchestrator import Hyperjob, JobHandle, JobSpec, Orchestrator
from .query import (SelectionCriteria, SitePlan, allocate_priority,
                    split_by_index)
from .sandbox import SandboxManifest
from .sitesim import Site, SiteConfig
from .transport import Transport
from .voauth import (AccountPool, AclList, GridmapFile, HomeRegistry,
                     ScanResult, VoList, publish_vo, scan_registrations,
                     sync_gridmap)

DEFAULT_TICK = 5.0


class Grid:
    def __init__(self, root: Path, site_configs: list[SiteConfig],
                 tick: float = DEFAULT_TICK,
                 pool_prefix: str = "babar", pool_width: int = 2,
                 pool_size: int = 99):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.tick = tick
        self.pool_prefix = pool_prefix
        self.clock = SimClock()
        self.transport = Transport()
        self.event_log = EventLog()
        self.registry = HomeRegistry()
        self.acl = AclList()
        self.vo_list = VoList()
        self.blocklists: dict[str, set[str]] = {}
        self.central = CentralCatalog()
        self.catalogs: dict[str, SiteCatalog] = {}
        self.sites: dict[str, Site] = {}
        self._forwarded: dict[str, str] = {}   # user id -> last DN sent to the VO
        self._vo_inbox: list[str] = []
        self.default_dn: str | None = None
        self._lock = threading.RLock()
        for config in site_configs:
            self.add_site(config, pool_prefix, pool_width, pool_size)
        self.orchestrator = Orchestrator(self.clock, self.event_log,
                                         self.transport, self.sites)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    def add_site(self, config: SiteConfig, pool_prefix: str | None = None,
                 pool_width: int = 2, pool_size: int = 99) -> Site:
        prefix = pool_prefix or self.pool_prefix
        pool = AccountPool(config.site_id, prefix, pool_width, pool_size)
        site = Site(config, self.root / "sites" / config.site_id, pool=pool)
        self.sites[config.site_id] = site
        self.catalogs[config.site_id] = SiteCatalog(config.site_id, config.bfroot)
        self.blocklists.setdefault(config.site_id, set())
        self.central.register_site(config.site_id)
        return site

    # -- authorization workflow -------------------------------------------------

    def vo_register(self, user_id: str, dn: str):
        return self.registry.register(user_id, dn)

    def vo_authorize(self, user_id: str, authorized: bool = True) -> None:
        self.acl.set(user_id, authorized)

    def vo_tick_scan(self) -> ScanResult:
        """Scan the registry and forward new or changed DNs to the VO."""
        result = scan_registrations(self.registry, self.acl)
        with self._lock:
            for rec in result.matched:
                if self._forwarded.get(rec.user_id) == rec.dn:
                    continue
                self.transport.send("registration", src=rec.user_id, dst="vo")
                self._forwarded[rec.user_id] = rec.dn
                self._vo_inbox.append(rec.dn)
        return result

    def vo_publish(self) -> VoList:
        with self._lock:
            self.vo_list = publish_vo(self._vo_inbox, self.vo_list)
            self._vo_inbox = []
        return self.vo_list

    def vo_sync(self, site_id: str) -> GridmapFile:
        site = self.sites[site_id]
        site.gridmap = sync_gridmap(site.gridmap, self.vo_list,
                                    self.blocklists.get(site_id, set()),
                                    pool_prefix=site.pool.prefix,
                                    transport=self.transport, site_id=site_id)
        return site.gridmap

    def vo_sync_all(self) -> None:
        for site_id in sorted(self.sites):
            self.vo_sync(site_id)

    def vo_round(self) -> None:
        """One full round: scan, publish, sync every site."""
        self.vo_tick_scan()
        self.vo_publish()
        self.vo_sync_all()

    def add_specific_mapping(self, site_id: str, dn: str, account: str) -> None:
        from .voauth import GridmapLine, ORIGIN_SPECIFIC
        site = self.sites[site_id]
        site.gridmap = GridmapFile(
            [GridmapLine(dn, account, ORIGIN_SPECIFIC)] + site.gridmap.lines)

    # -- data fixtures ------------------------------------------------------------

    def register_runs(self, datasets: list[DatasetName],
                      events_per_run: int = 600_000) -> None:
        """Register metadata centrally and at every site's catalog copy."""
        for dataset in datasets:
            rec = file_record(dataset)
            self.central.register_run(RunRecord(dataset.run_number, events_per_run))
            self.central.register_file(rec)
            for catalog in self.catalogs.values():
                catalog.register_file(rec)

    def set_run_local(self, site_id: str, run_number: int, present: bool = True,
                      materialize: bool = True) -> None:
        """Flag every file of a run local at a site; optionally put the data there.

        materialize=False leaves the flag lying (set without data present),
        which is the negative-test scenario.
        """
        catalog = self.catalogs[site_id]
        site = self.sites[site_id]
        for path, rec in catalog.files.items():
            if rec.dataset.run_number != run_number:
                continue
            catalog.set_local_flag(path, present)
            if not materialize:
                continue
            if present:
                run = self.central.runs.get(run_number, RunRecord(run_number))
                site.materialize_run(path, run_number, run.event_count)
            else:
                site.remove_run(path)

    def place_runs(self, site_id: str, run_numbers, materialize: bool = True) -> None:
        for run in run_numbers:
            self.set_run_local(site_id, run, True, materialize)

    def nightly_sync(self) -> SyncResult:
        return nightly_sync(self.central, self.catalogs, self.transport)

    # -- planning --------------------------------------------------------------

    def plan_priority(self, criteria: SelectionCriteria, sites: list[str],
                      chunk_size: int, charge_latency: bool = True) -> SitePlan:
        return allocate_priority(criteria, sites, self.catalogs, chunk_size,
                                 clock=self.clock if charge_latency else None)

    def plan_index(self, criteria: SelectionCriteria, sites: list[str],
                   chunk_size: int, balance: str = "none") -> SitePlan:
        return split_by_index(criteria, self.central.matrix, sites, chunk_size,
                              balance=balance, metadata=self.central)

    # -- submission --------------------------------------------------------------

    def delegate(self, dn: str, lifetime: float | None = None):
        if lifetime is None:
            return self.orchestrator.delegate_proxy(dn)
        return self.orchestrator.delegate_proxy(dn, lifetime)

    def gsub(self, spec: JobSpec) -> JobHandle:
        return self.orchestrator.gsub(spec)

    def submit_hyperjob(self, plan: SitePlan, manifest: SandboxManifest, dn: str,
                        fail_job0: frozenset[str] = frozenset()) -> Hyperjob:
        return self.orchestrator.submit_hyperjob(plan, manifest, dn, fail_job0)

    # -- batch progress ------------------------------------------------------------

    def step(self) -> bool:
        moved = False
        for site_id in sorted(self.sites):
            if self.orchestrator.site_tick(self.sites[site_id]):
                moved = True
        self.clock.advance(self.tick)
        return moved

    def busy(self) -> bool:
        return any(site.busy() for site in self.sites.values())

    def drain(self, max_ticks: int = 100_000, settle_lost: bool = True) -> None:
        """Run the batch queues dry; then age vanished jobs into `lost`."""
        ticks = 0
        while self.busy():
            self.step()
            ticks += 1
            if ticks >= max_ticks:
                raise RuntimeError("drain did not converge")
        self.step()  # flush completions that landed exactly on the last tick
        if settle_lost:
            self.clock.advance(self.orchestrator.lost_timeout)
            self.orchestrator.sweep_lost()

    # -- collection --------------------------------------------------------------

    def fetch(self, hyperjob_id: str) -> FetchResult:
        hyperjob = self._hyperjob(hyperjob_id)
        return fetch_bundles(hyperjob, self.sites, self.transport)

    def merge(self, hyperjob_id: str, out_path: Path | None = None
              ) -> tuple[MergedBundle, DownloadRecord]:
        hyperjob = self._hyperjob(hyperjob_id)
        fetched = self.fetch(hyperjob_id)
        merged = merge(fetched.bundles, hyperjob.plan, hyperjob_id)
        if out_path is None:
            out_path = self.root / "results" / f"{hyperjob_id}.tar"
        record = write_bundle(merged, out_path)
        hyperjob.result_path = str(record.path)
        return merged, record

    def result_path(self, hyperjob_id: str) -> str | None:
        """Merged-bundle path once every job is terminal, else None."""
        hyperjob = self._hyperjob(hyperjob_id)
        states = [h.state for h in hyperjob.all_handles()]
        if not all(s in TERMINAL for s in states):
            return None
        if hyperjob.result_path is None:
            self.merge(hyperjob_id)
        return hyperjob.result_path

    def _hyperjob(self, hyperjob_id: str) -> Hyperjob:
        hyperjob = self.orchestrator.hyperjobs.get(hyperjob_id)
        if hyperjob is None:
            raise UnknownJobError(f"unknown hyperjob {hyperjob_id!r}")
        return hyperjob

    # -- persistence --------------------------------------------------------------

    STATE_FILENAME = "world.pkl"

    def save(self, state_dir: Path | None = None) -> Path:
        target = Path(state_dir) if state_dir else self.root
        target.mkdir(parents=True, exist_ok=True)
        path = target / self.STATE_FILENAME
        with open(path, "wb") as fh:
            pickle.dump(self, fh)
        (target / "events.log").write_text(self.event_log.text())
        return path

    @classmethod
    def load(cls, state_dir: Path) -> "Grid":
        path = Path(state_dir) / cls.STATE_FILENAME
        with open(path, "rb") as fh:
            world = pickle.load(fh)
        if not isinstance(world, cls):
            raise TypeError(f"{path} does not hold a saved grid")
        return world
