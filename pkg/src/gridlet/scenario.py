"""Scenario configuration: declarative site blocks plus fixture helpers.

A scenario file is line oriented; a ``site <id>`` line opens a block and
the following key lines configure it:

    site A
    bfroot /data/a
    workers 2
    failure_rate 0.1
    loss_rate 0.0
    seed 42

Blank lines and ``#`` comments are ignored.  `build_world` combines a
scenario with run placements into a ready Grid.
"""

from pathlib import Path

from .catalog import DatasetName
from .errors import ScenarioError
from .grid import Grid
from .sitesim import SiteConfig

_FLOAT_KEYS = {"failure_rate", "loss_rate", "job_duration"}
_INT_KEYS = {"workers", "seed"}


def parse_scenario(text: str) -> list[SiteConfig]:
    configs: list[SiteConfig] = []
    current: dict | None = None

    def flush():
        nonlocal current
        if current is None:
            return
        if "bfroot" not in current:
            raise ScenarioError(f"site {current['site_id']!r} lacks a bfroot")
        configs.append(SiteConfig(**current))
        current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if not value:
            raise ScenarioError(f"line {lineno}: {key!r} needs a value")
        if key == "site":
            flush()
            current = {"site_id": value}
            continue
        if current is None:
            raise ScenarioError(f"line {lineno}: {key!r} outside a site block")
        if key == "bfroot":
            current["bfroot"] = value
        elif key in _INT_KEYS:
            current[key] = int(value)
        elif key in _FLOAT_KEYS:
            current[key] = float(value)
        else:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
    flush()
    if not configs:
        raise ScenarioError("scenario defines no sites")
    ids = [c.site_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate site ids in scenario")
    return configs


def parse_placements(specs: list[str]) -> dict[str, list[int]]:
    """``SITE=LO-HI[,LO-HI...]`` strings to per-site run lists."""
    out: dict[str, list[int]] = {}
    for spec in specs:
        site_id, sep, ranges = spec.partition("=")
        if not sep:
            raise ScenarioError(f"bad placement {spec!r} (want SITE=LO-HI)")
        runs = out.setdefault(site_id, [])
        for part in ranges.split(","):
            lo, sep, hi = part.partition("-")
            try:
                lo_i = int(lo)
                hi_i = int(hi) if sep else lo_i
            except ValueError:
                raise ScenarioError(f"bad run range {part!r} in {spec!r}")
            if hi_i < lo_i:
                raise ScenarioError(f"empty run range {part!r} in {spec!r}")
            runs.extend(range(lo_i, hi_i + 1))
    return out


def build_world(root: Path, configs: list[SiteConfig],
                placements: dict[str, list[int]],
                proc: str = "P1", sel: str = "V1", typ: str = "T1",
                events_per_run: int = 600_000, tick: float = 5.0) -> Grid:
    grid = Grid(root, configs, tick=tick)
    all_runs = sorted({run for runs in placements.values() for run in runs})
    grid.register_runs([DatasetName(run, proc, sel, typ) for run in all_runs],
                       events_per_run=events_per_run)
    for site_id, runs in placements.items():
        if site_id not in grid.sites:
            raise ScenarioError(f"placement names unknown site {site_id!r}")
        grid.place_runs(site_id, runs)
    return grid
