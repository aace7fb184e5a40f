"""Output retrieval and the hole-free merge.

Each site keeps one rolling tar per superjob with everything finished so
far; fetching copies those tars back read-only, so it can be repeated as
more jobs finish.  The merge unpacks every fetched tar, orders the outputs
by (site order in the plan, original index), and renumbers them densely, so
failed or lost jobs leave no holes in the final sequence.  The bundle's
manifest records where each member came from, which runs it covers, its
event total, and the completed fraction of the plan.

The shared-filesystem path needs none of this: outputs are already in the
user's working directory, and collection is just a listing.
"""

import io
import tarfile
from dataclasses import dataclass
from pathlib import Path

from .errors import BundleError
from .query import SitePlan
from .sitesim import Site, output_index, output_name
from .transport import Transport

MEDIA_TYPE = "application/x-gridlet-bundle"
MANIFEST_MEMBER = "manifest.txt"


@dataclass(frozen=True)
class DownloadRecord:
    path: Path
    media_type: str = MEDIA_TYPE


@dataclass(frozen=True)
class FetchResult:
    bundles: tuple[tuple[str, bytes], ...]
    pending: tuple[str, ...]


def fetch_bundles(hyperjob, sites: dict[str, Site],
                  transport: Transport | None = None) -> FetchResult:
    """One rolling tar per superjob with a non-empty outbox.

    Unreachable sites are omitted and reported pending; the fetch never
    mutates site state, so a later call returns a superset per site.
    """
    bundles: list[tuple[str, bytes]] = []
    pending: list[str] = []
    for superjob in hyperjob.superjobs:
        site = sites[superjob.site_id]
        if transport is not None and not transport.is_up(superjob.site_id):
            pending.append(superjob.site_id)
            continue
        if not site.outbox_members(superjob.superjob_id):
            continue
        data = site.read_outbox_tar(superjob.superjob_id, account=superjob.account)
        if transport is not None:
            transport.send("bundle-fetch", src=superjob.site_id, dst="server")
        bundles.append((superjob.site_id, data))
    return FetchResult(tuple(bundles), tuple(pending))


@dataclass(frozen=True)
class BundleMember:
    final_index: int
    origin_site: str
    origin_nn: int
    payload: bytes
    runs: tuple[int, ...]
    events: int


@dataclass(frozen=True)
class MergedBundle:
    hyperjob_id: str
    members: tuple[BundleMember, ...]
    completeness: float

    def run_set(self) -> set[int]:
        return {r for m in self.members for r in m.runs}


def parse_payload(payload: bytes) -> dict:
    fields = {}
    for raw in payload.decode().splitlines():
        key, _, value = raw.partition("=")
        fields[key] = value
    runs = tuple(int(r) for r in fields.get("RUNS", "").split(",") if r)
    return {
        "site": fields.get("SITE", ""),
        "task": int(fields.get("TASK", -1)),
        "runs": runs,
        "events": int(fields.get("EVENTS", 0)),
    }


def merge(bundles, plan: SitePlan, hyperjob_id: str) -> MergedBundle:
    """Untar everything and renumber densely by (plan site order, origin nn)."""
    site_rank = {site: i for i, site in enumerate(plan.site_order)}
    raw: dict[tuple[str, int], bytes] = {}
    for site_id, data in bundles:
        try:
            tar = tarfile.open(fileobj=io.BytesIO(data))
        except tarfile.TarError as err:
            raise BundleError(f"corrupt archive from site {site_id}: {err}")
        with tar:
            for info in tar.getmembers():
                nn = output_index(info.name)
                if nn is None:
                    raise BundleError(
                        f"unexpected member {info.name!r} from site {site_id}")
                key = (site_id, nn)
                if key in raw:
                    raise BundleError(
                        f"duplicate output {info.name} from site {site_id}")
                raw[key] = tar.extractfile(info).read()
    ordered = sorted(raw, key=lambda k: (site_rank.get(k[0], len(site_rank)), k[1]))
    members = []
    for final_index, (site_id, nn) in enumerate(ordered):
        payload = raw[(site_id, nn)]
        meta = parse_payload(payload)
        members.append(BundleMember(final_index, site_id, nn, payload,
                                    meta["runs"], meta["events"]))
    planned = plan.total_tasks()
    completeness = (len(members) / planned) if planned else 0.0
    return MergedBundle(hyperjob_id, tuple(members), completeness)


def bundle_manifest_text(merged: MergedBundle) -> str:
    lines = []
    for m in merged.members:
        runs_csv = ",".join(str(r) for r in m.runs)
        lines.append(
            f"member {m.final_index} {m.origin_site} {m.origin_nn} {runs_csv} {m.events}")
    lines.append(f"completeness {round(merged.completeness, 6)}")
    return "".join(line + "\n" for line in lines)


def write_bundle(merged: MergedBundle, path: Path) -> DownloadRecord:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tarfile.open(path, "w", format=tarfile.USTAR_FORMAT) as tar:
        def add(name: str, data: bytes):
            info = tarfile.TarInfo(name)
            info.size = len(data)
            info.mtime = 0
            info.uid = info.gid = 0
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(data))
        add(MANIFEST_MEMBER, bundle_manifest_text(merged).encode())
        for m in merged.members:
            add(output_name(m.final_index), m.payload)
    return DownloadRecord(path)


def read_bundle(path: Path) -> tuple[str, dict[str, bytes]]:
    """Return (manifest text, member name -> payload) of a written bundle."""
    members: dict[str, bytes] = {}
    manifest = ""
    with tarfile.open(path) as tar:
        for info in tar.getmembers():
            data = tar.extractfile(info).read()
            if info.name == MANIFEST_MEMBER:
                manifest = data.decode()
            else:
                members[info.name] = data
    return manifest, members


def collect_shared_fs(working_dir: Path) -> list[Path]:
    """The outputs already sitting in the working directory, by origin nn."""
    working_dir = Path(working_dir)
    if not working_dir.exists():
        return []
    hits = [(output_index(p.name), p) for p in working_dir.iterdir()
            if p.is_file() and output_index(p.name) is not None]
    return [p for _, p in sorted(hits)]
