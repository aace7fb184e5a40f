"""Counted message transport between simulation actors.

Every cross-actor exchange (user registration forwarded to the VO, gridmap
sync, catalog flag upload, availability-matrix download, ...) is recorded
here by kind, which is what the scaling assertions count.  Destinations can
be marked down to model unreachable sites; a message to a down destination
is logged but not delivered and not counted.
"""

from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class Message:
    kind: str
    src: str | None
    dst: str | None
    delivered: bool


class Transport:
    def __init__(self):
        self.counts: Counter[str] = Counter()
        self.log: list[Message] = []
        self._down: set[str] = set()

    def set_down(self, name: str) -> None:
        self._down.add(name)

    def set_up(self, name: str) -> None:
        self._down.discard(name)

    def is_up(self, name: str) -> bool:
        return name not in self._down

    def send(self, kind: str, src: str | None = None, dst: str | None = None,
             force: bool = False) -> bool:
        delivered = force or dst is None or self.is_up(dst)
        self.log.append(Message(kind, src, dst, delivered))
        if delivered:
            self.counts[kind] += 1
        return delivered

    def count(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    def total(self, *kinds: str) -> int:
        if not kinds:
            return sum(self.counts.values())
        return sum(self.counts.get(k, 0) for k in kinds)
