"""Exception types shared across the toolkit."""


class GridletError(Exception):
    pass


class MalformedDnError(GridletError):
    """A distinguished name failed the slash-separated attr=value grammar."""

    def __init__(self, dn: str, position: int, reason: str):
        self.dn = dn
        self.position = position
        super().__init__(f"malformed DN {dn!r}: component {position}: {reason}")


class ScanError(GridletError):
    pass


class PoolExhaustedError(GridletError):
    def __init__(self, site_id: str, size: int):
        self.site_id = site_id
        self.size = size
        super().__init__(f"account pool exhausted at {site_id} (size {size})")


class UnknownDnError(GridletError):
    pass


class DatasetNameError(GridletError):
    def __init__(self, name: str, segment: str, reason: str):
        self.segment = segment
        super().__init__(f"bad dataset name {name!r}: {segment}: {reason}")


class UnknownPathError(GridletError):
    pass


class PathPrefixError(GridletError):
    pass


class UnresolvedSourceError(GridletError):
    def __init__(self, target: str, chain: list[str]):
        self.target = target
        self.chain = list(chain)
        super().__init__(
            "cannot resolve sourced script %r (included via %s)"
            % (target, " -> ".join(chain))
        )


class SourceCycleError(GridletError):
    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("source cycle: " + " -> ".join(cycle))


class ExpansionDepthError(GridletError):
    pass


class AuthorizationError(GridletError):
    pass


class DelegationExpiredError(GridletError):
    pass


class SubmissionError(GridletError):
    pass


class UnknownJobError(GridletError):
    pass


class NoLogError(GridletError):
    pass


class StubRunFailure(GridletError):
    """Raised by the stub analysis binary when a job cannot complete."""


class DuplicateOutputError(GridletError):
    pass


class OutboxAccessError(GridletError):
    pass


class BundleError(GridletError):
    pass


class ProtocolError(GridletError):
    pass


class ScenarioError(GridletError):
    pass


class StateTransitionError(GridletError):
    pass
