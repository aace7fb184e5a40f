"""Job states, legal transitions, and the append-only event log.

The normal life of a job is the chain

    submitted -> staged -> queued -> running -> done | failed

with two sanctioned deviations: `lost` may strike from any non-terminal
state (a job can vanish before the site ever acknowledges it), and a job
that was never submitted to a site because its delegation expired goes
`submitted -> failed` directly.  Everything else is illegal and raises.

The event log is line-oriented (`epoch <n> job <id> <from> <to>`) and is
the ground truth the property tests replay: barrier ordering, absence of
resubmission, and state-machine legality are all checked against it.
"""

import threading
from dataclasses import dataclass

SUBMITTED = "submitted"
STAGED = "staged"
QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"
LOST = "lost"

STATES = (SUBMITTED, STAGED, QUEUED, RUNNING, DONE, FAILED, LOST)
TERMINAL = frozenset((DONE, FAILED, LOST))

LEGAL_NEXT = {
    SUBMITTED: frozenset((STAGED, FAILED, LOST)),
    STAGED: frozenset((QUEUED, LOST)),
    QUEUED: frozenset((RUNNING, LOST)),
    RUNNING: frozenset((DONE, FAILED, LOST)),
    DONE: frozenset(),
    FAILED: frozenset(),
    LOST: frozenset(),
}


def is_legal_transition(src: str, dst: str) -> bool:
    return dst in LEGAL_NEXT.get(src, frozenset())


def is_legal_history(states: list[str]) -> bool:
    """True iff a sequence of observed states is a legal job history."""
    if not states or states[0] != SUBMITTED:
        return False
    for a, b in zip(states, states[1:]):
        if not is_legal_transition(a, b):
            return False
    return True


@dataclass(frozen=True)
class TransitionEvent:
    epoch: int
    job_id: str
    src: str
    dst: str

    def line(self) -> str:
        return f"epoch {self.epoch} job {self.job_id} {self.src} {self.dst}"


class EventLog:
    def __init__(self):
        self._events: list[TransitionEvent] = []
        self._lock = threading.Lock()

    def append(self, job_id: str, src: str, dst: str) -> TransitionEvent:
        with self._lock:
            ev = TransitionEvent(len(self._events), job_id, src, dst)
            self._events.append(ev)
            return ev

    @property
    def events(self) -> list[TransitionEvent]:
        return list(self._events)

    def for_job(self, job_id: str) -> list[TransitionEvent]:
        return [e for e in self._events if e.job_id == job_id]

    def lines(self) -> list[str]:
        return [e.line() for e in self._events]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def __getstate__(self):
        return {"events": self._events}

    def __setstate__(self, state):
        self._events = state["events"]
        self._lock = threading.Lock()


def parse_event_log(text: str) -> list[TransitionEvent]:
    events = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 6 or parts[0] != "epoch" or parts[2] != "job":
            raise ValueError(f"bad event line: {raw!r}")
        events.append(TransitionEvent(int(parts[1]), parts[3], parts[4], parts[5]))
    return events
