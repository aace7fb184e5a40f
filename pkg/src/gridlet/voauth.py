"""Membership, publication, and pooled-account authorization.

A user proves membership by dropping their certificate DN into a well-known
file in their home-registry area.  A scan step filters those files against
the experiment ACL and forwards the surviving DNs to the VO list; each site
then syncs the published list into its gridmap, mapping visiting DNs onto a
pool of numbered generic accounts.  A DN with a site-specific gridmap line
always takes that account instead of a pooled one, and a DN returning to a
pool gets its previous account back when it is free.

Registering M users and syncing N sites costs M + N transactions, never
M x N: users talk only to the VO, sites talk only to the VO.
"""

import bisect
import logging
import re
from dataclasses import dataclass, field, replace

from .errors import MalformedDnError, PoolExhaustedError, ScanError, UnknownDnError
from .transport import Transport

log = logging.getLogger(__name__)

DEFAULT_POOL_PREFIX = "babar"
DEFAULT_POOL_WIDTH = 2
DEFAULT_POOL_SIZE = 99
DEFAULT_REGISTRATION_FILENAME = "grid-dn.txt"

GRIDMAP_DELIMITER = "# --- vo-appended ---"

ORIGIN_SPECIFIC = "specific"
ORIGIN_VO = "vo-appended"

_COMPONENT_RE = re.compile(r"^[^=]+=[^=]*$")


def validate_dn(dn: str) -> str:
    """Check the slash-separated attr=value grammar, e.g. ``/O=org/CN=Alice``.

    Returns the DN unchanged; raises MalformedDnError carrying the index of
    the first offending component.
    """
    if not dn or not dn.startswith("/"):
        raise MalformedDnError(dn, 0, "must begin with '/'")
    components = dn[1:].split("/")
    for i, comp in enumerate(components):
        if not comp:
            raise MalformedDnError(dn, i, "empty component")
        if comp.count("=") != 1:
            raise MalformedDnError(dn, i, "component must contain exactly one '='")
        if not _COMPONENT_RE.match(comp):
            raise MalformedDnError(dn, i, "not of the form attribute=value")
    return dn


def is_valid_dn(dn: str) -> bool:
    try:
        validate_dn(dn)
        return True
    except MalformedDnError:
        return False


@dataclass(frozen=True)
class RegistrationFile:
    user_id: str
    dn: str
    path: str


class HomeRegistry:
    """Simulated home-registry area holding one registration file per user.

    Enumeration is sorted by user id so scans are deterministic.
    """

    def __init__(self, name: str = "home-registry",
                 well_known_name: str = DEFAULT_REGISTRATION_FILENAME):
        self.name = name
        self.well_known_name = well_known_name
        self.readable = True
        self._files: dict[str, RegistrationFile] = {}

    def register(self, user_id: str, dn: str) -> RegistrationFile:
        validate_dn(dn)
        rec = RegistrationFile(user_id, dn, f"{user_id}/{self.well_known_name}")
        self._files[user_id] = rec
        return rec

    def remove(self, user_id: str) -> None:
        self._files.pop(user_id, None)

    def get(self, user_id: str) -> RegistrationFile | None:
        return self._files.get(user_id)

    def files(self) -> list[RegistrationFile]:
        return [self._files[u] for u in sorted(self._files)]


def register_dn(user_id: str, dn: str, registry: HomeRegistry) -> RegistrationFile:
    return registry.register(user_id, dn)


class AclList:
    def __init__(self, flags: dict[str, bool] | None = None):
        self.flags: dict[str, bool] = dict(flags or {})

    def set(self, user_id: str, authorized: bool = True) -> None:
        self.flags[user_id] = authorized

    def authorized(self, user_id: str) -> bool:
        return self.flags.get(user_id, False)


@dataclass(frozen=True)
class ScanResult:
    candidates: tuple[str, ...]          # DNs, in registry enumeration order
    skipped: tuple[str, ...]             # user ids that failed the ACL flag
    matched: tuple[RegistrationFile, ...]


def scan_registrations(registry: HomeRegistry, acl: AclList) -> ScanResult:
    """Pick up registration files whose owner carries the experiment flag.

    Files of non-authorized users are reported as skipped, not errors.
    """
    if not registry.readable:
        raise ScanError(f"registry {registry.name!r} is not readable")
    matched: list[RegistrationFile] = []
    skipped: list[str] = []
    for rec in registry.files():
        if acl.authorized(rec.user_id):
            matched.append(rec)
        else:
            skipped.append(rec.user_id)
    return ScanResult(tuple(r.dn for r in matched), tuple(skipped), tuple(matched))


@dataclass(frozen=True)
class VoEntry:
    dn: str
    registered_at: int


@dataclass(frozen=True)
class VoList:
    entries: tuple[VoEntry, ...] = ()
    version: int = 0

    def dns(self) -> set[str]:
        return {e.dn for e in self.entries}

    def __contains__(self, dn: str) -> bool:
        return any(e.dn == dn for e in self.entries)


def publish_vo(candidates: list[str] | tuple[str, ...], current: VoList) -> VoList:
    """Union the candidate DNs into the list; bump the version iff it changed."""
    known = current.dns()
    stamp = max((e.registered_at for e in current.entries), default=-1) + 1
    added: list[VoEntry] = []
    for dn in candidates:
        if dn in known:
            continue
        known.add(dn)
        added.append(VoEntry(dn, stamp))
        stamp += 1
    if not added:
        return current
    return VoList(current.entries + tuple(added), current.version + 1)


def serialize_vo_list(vo: VoList) -> str:
    lines = [str(vo.version)]
    lines.extend(e.dn for e in vo.entries)
    return "".join(line + "\n" for line in lines)


def parse_vo_list(text: str) -> VoList:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty VO list export")
    version = int(lines[0])
    entries = tuple(VoEntry(dn, i) for i, dn in enumerate(lines[1:]) if dn)
    return VoList(entries, version)


@dataclass(frozen=True)
class GridmapLine:
    dn: str
    account: str
    origin: str  # ORIGIN_SPECIFIC | ORIGIN_VO


@dataclass
class GridmapFile:
    lines: list[GridmapLine] = field(default_factory=list)

    def specific(self) -> list[GridmapLine]:
        return [l for l in self.lines if l.origin == ORIGIN_SPECIFIC]

    def appended(self) -> list[GridmapLine]:
        return [l for l in self.lines if l.origin == ORIGIN_VO]

    def lookup(self, dn: str) -> GridmapLine | None:
        """Specific lines win over vo-appended ones for the same DN."""
        hit = None
        for l in self.lines:
            if l.dn != dn:
                continue
            if l.origin == ORIGIN_SPECIFIC:
                return l
            hit = hit or l
        return hit

    def __contains__(self, dn: str) -> bool:
        return self.lookup(dn) is not None


def sync_gridmap(site_gridmap: GridmapFile, vo_list: VoList,
                 blocklist: set[str] | frozenset[str] = frozenset(),
                 pool_prefix: str = DEFAULT_POOL_PREFIX,
                 transport: Transport | None = None,
                 site_id: str | None = None) -> GridmapFile:
    """Replace the vo-appended section with the published list.

    Specific lines are preserved verbatim and first.  A DN that already has
    a specific line gets no pooled line (the specific account takes
    precedence), and blocklisted DNs are dropped at sync time.
    """
    specific = site_gridmap.specific()
    specific_dns = {l.dn for l in specific}
    appended = [
        GridmapLine(e.dn, pool_prefix, ORIGIN_VO)
        for e in vo_list.entries
        if e.dn not in blocklist and e.dn not in specific_dns
    ]
    if transport is not None:
        transport.send("gridmap-sync", src="vo", dst=site_id)
    return GridmapFile(specific + appended)


def serialize_gridmap(gridmap: GridmapFile) -> str:
    lines = [f'"{l.dn}" {l.account}' for l in gridmap.specific()]
    lines.append(GRIDMAP_DELIMITER)
    lines.extend(f'"{l.dn}" {l.account}' for l in gridmap.appended())
    return "".join(line + "\n" for line in lines)


_GRIDMAP_LINE_RE = re.compile(r'^"(?P<dn>[^"]+)"\s+(?P<account>\S+)$')


def parse_gridmap(text: str) -> GridmapFile:
    lines: list[GridmapLine] = []
    origin = ORIGIN_SPECIFIC
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if raw == GRIDMAP_DELIMITER:
            origin = ORIGIN_VO
            continue
        m = _GRIDMAP_LINE_RE.match(raw)
        if not m:
            raise ValueError(f"bad gridmap line: {raw!r}")
        lines.append(GridmapLine(m.group("dn"), m.group("account"), origin))
    return GridmapFile(lines)


@dataclass(frozen=True)
class AccountAssignment:
    dn: str
    account_name: str
    kind: str  # "specific" | "pooled"
    fresh: bool


class AccountPool:
    """Numbered generic accounts with sticky reuse.

    `live` maps DNs to the account they currently hold; `remembered` keeps
    every DN's last account so a returning DN is given the same one when it
    is still free.  Remembering is a preference, not a reservation: the
    lowest-numbered free account goes to whoever asks first.
    """

    def __init__(self, site_id: str, prefix: str = DEFAULT_POOL_PREFIX,
                 width: int = DEFAULT_POOL_WIDTH, size: int = DEFAULT_POOL_SIZE):
        if size < 1 or size > 10 ** width - 1:
            raise ValueError(f"pool size {size} does not fit in width {width}")
        self.site_id = site_id
        self.prefix = prefix
        self.width = width
        self.size = size
        self.live: dict[str, str] = {}
        self.remembered: dict[str, str] = {}
        self._free: list[int] = list(range(1, size + 1))  # kept sorted

    def account_name(self, number: int) -> str:
        return f"{self.prefix}{number:0{self.width}d}"

    def _number_of(self, account: str) -> int:
        return int(account[len(self.prefix):])

    def is_pool_account(self, account: str) -> bool:
        if not account.startswith(self.prefix):
            return False
        suffix = account[len(self.prefix):]
        if not (suffix.isdigit() and len(suffix) == self.width):
            return False
        return 1 <= int(suffix) <= self.size

    def free_accounts(self) -> list[str]:
        return [self.account_name(n) for n in self._free]

    def _take(self, number: int, dn: str, fresh: bool) -> AccountAssignment:
        self._free.remove(number)
        account = self.account_name(number)
        self.live[dn] = account
        self.remembered[dn] = account
        return AccountAssignment(dn, account, "pooled", fresh)

    def map_dn(self, dn: str, gridmap: GridmapFile | None = None) -> AccountAssignment:
        """Resolve a DN to an account.

        Precedence: a specific gridmap line wins outright; otherwise the
        remembered account is reused when free; otherwise the lowest
        numbered free account is taken.
        """
        if gridmap is not None:
            line = gridmap.lookup(dn)
            if line is None:
                raise UnknownDnError(
                    f"DN {dn!r} is not in the gridmap of site {self.site_id}")
            if line.origin == ORIGIN_SPECIFIC:
                return AccountAssignment(dn, line.account, "specific", False)
        if dn in self.live:
            return AccountAssignment(dn, self.live[dn], "pooled", False)
        previous = self.remembered.get(dn)
        if previous is not None:
            number = self._number_of(previous)
            if number in self._free:
                return self._take(number, dn, fresh=False)
        if not self._free:
            raise PoolExhaustedError(self.site_id, self.size)
        return self._take(self._free[0], dn, fresh=True)

    def release(self, dn: str) -> bool:
        """Return the DN's account to the free set; remembered is retained."""
        account = self.live.pop(dn, None)
        if account is None:
            log.warning("release for DN %r which holds no account at %s",
                        dn, self.site_id)
            return False
        bisect.insort(self._free, self._number_of(account))
        return True


def map_dn(pool: AccountPool, dn: str,
           gridmap: GridmapFile | None = None) -> AccountAssignment:
    return pool.map_dn(dn, gridmap)


def release_account(pool: AccountPool, dn: str) -> bool:
    return pool.release(dn)
