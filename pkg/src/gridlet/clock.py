"""Simulated wall clock.

All latencies in the toolkit (submission cost, log retrieval, remote catalog
queries, batch execution) advance this clock instead of sleeping, so whole
scenarios replay in milliseconds of real time.
"""


class SimClock:
    def __init__(self, start: float = 0.0):
        self._now = float(start)

    @property
    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        self._now += seconds
        return self._now

    def __repr__(self) -> str:
        return f"SimClock(now={self._now:.1f})"
