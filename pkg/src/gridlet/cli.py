"""Command line interface.

State lives in a directory (``--state``, ``$GRIDLET_STATE``, or
``./gridlet-state``): ``init`` builds a world from a scenario file and run
placements, every other command loads it, acts, and saves it back.
"""

import argparse
import os
import sys
from pathlib import Path

from .catalog import parse_dataset_name, resolve_path, serialize_index
from .collector import collect_shared_fs
from .errors import GridletError
from .grid import Grid
from .orchestrator import JobSpec
from .query import (SelectionCriteria, load_plan, parse_tasklist, write_plan)
from .sandbox import (build_manifest, dir_resolver, expand, parse_script,
                      serialize_manifest)
from .scenario import build_world, parse_placements, parse_scenario
from .server import GridPump, HttpShim, ProtocolEngine, StatusTcpServer
from .sitesim import MODE_SHARED_FS
from .voauth import serialize_gridmap, serialize_vo_list


def _state_dir(args) -> Path:
    if args.state:
        return Path(args.state)
    env = os.environ.get("GRIDLET_STATE")
    return Path(env) if env else Path("gridlet-state")


def _load(args) -> Grid:
    return Grid.load(_state_dir(args))


def _range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition("-")
    return int(lo), int(hi or lo)


def _criteria(args) -> SelectionCriteria:
    lo, hi = _range(args.range)
    return SelectionCriteria(lo, hi, args.typ, args.proc,
                             getattr(args, "max", None))


def _read_script(path: Path):
    path = Path(path)
    return parse_script(path.read_text(), path.name)


def _script_or_tasklist(path: Path):
    from .orchestrator import _index_from_name
    script = _read_script(path)
    index = _index_from_name(path.name)
    if index is not None:
        return parse_tasklist(path.read_text(), index)
    return script


def cmd_init(args):
    configs = parse_scenario(Path(args.scenario).read_text())
    placements = parse_placements(args.place or [])
    grid = build_world(_state_dir(args), configs, placements,
                       proc=args.proc, sel=args.sel, typ=args.typ,
                       events_per_run=args.events, tick=args.tick)
    grid.save()
    print(f"initialized {len(configs)} sites, "
          f"{len(grid.central.runs)} runs under {_state_dir(args)}")


def cmd_vo(args):
    grid = _load(args)
    if args.vo_cmd == "register":
        grid.vo_register(args.user, args.dn)
        print(f"registered {args.user} -> {args.dn}")
    elif args.vo_cmd == "authorize":
        grid.vo_authorize(args.user, not args.revoke)
        print(f"{'revoked' if args.revoke else 'authorized'} {args.user}")
    elif args.vo_cmd == "tick-scan":
        result = grid.vo_tick_scan()
        print(f"candidates: {len(result.candidates)} "
              f"skipped: {','.join(result.skipped) or '-'}")
    elif args.vo_cmd == "publish":
        vo = grid.vo_publish()
        print(f"vo version {vo.version} with {len(vo.entries)} members")
    elif args.vo_cmd == "sync":
        if args.site:
            grid.vo_sync(args.site)
            print(serialize_gridmap(grid.sites[args.site].gridmap), end="")
        else:
            grid.vo_sync_all()
            print(f"synced {len(grid.sites)} sites")
    elif args.vo_cmd == "show-pool":
        pool = grid.sites[args.site].pool
        for dn, account in sorted(pool.live.items()):
            print(f"live {account} {dn}")
        for dn, account in sorted(pool.remembered.items()):
            if dn not in pool.live:
                print(f"remembered {account} {dn}")
        print(f"free {len(pool.free_accounts())}/{pool.size}")
    elif args.vo_cmd == "blocklist":
        grid.blocklists.setdefault(args.site, set()).add(args.dn)
        print(f"blocklisted at {args.site}: {args.dn}")
    elif args.vo_cmd == "show":
        print(serialize_vo_list(grid.vo_list), end="")
    grid.save()


def cmd_catalog(args):
    grid = _load(args)
    if args.catalog_cmd == "flag":
        present = not args.off
        grid.set_run_local(args.site, args.run, present,
                           materialize=not args.no_materialize)
        print(f"run {args.run} at {args.site}: local={'1' if present else '0'}")
    elif args.catalog_cmd == "sync":
        result = grid.nightly_sync()
        print(f"round {result.matrix.as_of}: {result.message_count} messages"
              + (f", stale: {','.join(sorted(result.stale))}" if result.stale else ""))
    elif args.catalog_cmd == "resolve":
        print(resolve_path(grid.catalogs[args.site], args.path))
    elif args.catalog_cmd == "show-index":
        print(serialize_index(grid.central.matrix), end="")
    elif args.catalog_cmd == "export":
        from .catalog import serialize_catalog
        print(serialize_catalog(grid.catalogs[args.site]), end="")
    grid.save()


def cmd_skimdata(args):
    grid = _load(args)
    criteria = _criteria(args)
    if args.skim_cmd == "select":
        from .query import select_files
        for rec in select_files(criteria, grid.catalogs[args.site]):
            print(rec.logical_path)
    else:  # plan
        sites = args.sites.split(",")
        balance = "round_robin" if args.balance == "rr" else "none"
        if args.mode == "priority":
            plan = grid.plan_priority(criteria, sites, args.chunk)
        else:
            plan = grid.plan_index(criteria, sites, args.chunk, balance)
        plan_path = write_plan(plan, Path(args.out))
        counts = " ".join(f"{s}:{len(plan.assignments.get(s, []))}"
                          for s in plan.site_order)
        print(f"wrote {plan_path} ({counts})")
        if plan.uncovered:
            print("uncovered runs: "
                  + ",".join(str(r) for r in sorted(plan.uncovered)))
    grid.save()


def cmd_sandbox(args):
    script = _read_script(args.script)
    resolver = dir_resolver(Path(args.script).parent)
    if args.sandbox_cmd == "expand":
        out = expand(script, resolver).text()
    else:
        out = serialize_manifest(build_manifest(script, resolver, args.binary))
    if args.output:
        Path(args.output).write_text(out)
        print(f"wrote {args.output}")
    else:
        print(out, end="")


def cmd_delegate(args):
    grid = _load(args)
    token = grid.delegate(args.dn, args.lifetime)
    grid.default_dn = args.dn
    print(f"delegated {args.dn} until t={token.expires_at}")
    grid.save()


def _default_dn(grid, args):
    dn = args.dn or getattr(grid, "default_dn", None)
    if dn is None:
        raise GridletError("no DN given and none delegated yet (run `gridlet delegate`)")
    return dn


def cmd_gsub(args):
    grid = _load(args)
    dn = _default_dn(grid, args)
    workdir = Path(args.workdir or os.getcwd())
    spec = JobSpec(args.site, args.binary, _script_or_tasklist(Path(args.script)),
                   MODE_SHARED_FS, dn, working_dir=str(workdir))
    handle = grid.gsub(spec)
    print(f"{handle.job_id} {handle.site_id} nn={handle.sequence_index} "
          f"{handle.state}")
    grid.save()


def cmd_hyperjob(args):
    grid = _load(args)
    dn = _default_dn(grid, args)
    plan = load_plan(Path(args.plan))
    from .sandbox import parse_manifest
    manifest = parse_manifest(Path(args.manifest).read_text())
    hyperjob = grid.submit_hyperjob(plan, manifest, dn)
    jobs = sum(1 + len(sj.jobs) for sj in hyperjob.superjobs)
    print(f"{hyperjob.hyperjob_id} with {len(hyperjob.superjobs)} superjobs, "
          f"{jobs} jobs")
    grid.save()


def cmd_jobs(args):
    grid = _load(args)
    if args.jobs_cmd == "poll":
        snapshot = grid.orchestrator.poll(args.id)
        if isinstance(snapshot, str):
            print(snapshot)
        else:
            for job_id, state in snapshot.items():
                print(f"{job_id} {state}")
    else:
        print(grid.orchestrator.retrieve_log(args.id), end="")
    grid.save()


def cmd_collect(args):
    grid = _load(args)
    if args.collect_cmd == "fetch":
        fetched = grid.fetch(args.hyperjob)
        for site_id, data in fetched.bundles:
            print(f"{site_id} {len(data)} bytes")
        for site_id in fetched.pending:
            print(f"{site_id} pending")
    elif args.collect_cmd == "merge":
        merged, record = grid.merge(
            args.hyperjob, Path(args.output) if args.output else None)
        print(f"{record.path} completeness={round(merged.completeness, 6)} "
              f"media-type={record.media_type}")
    else:  # ls
        for path in collect_shared_fs(Path(args.dir)):
            print(path)
        grid = None
    if grid is not None:
        grid.save()


def cmd_drain(args):
    grid = _load(args)
    grid.drain(settle_lost=not args.no_settle)
    print(f"drained at t={grid.clock.now}")
    grid.save()


def cmd_serve(args):
    import signal
    import threading

    grid = _load(args)
    if grid.central.matrix.as_of == 0:
        grid.nightly_sync()
    engine = ProtocolEngine(grid)
    tcp = StatusTcpServer(engine, port=args.tcp_port)
    shim = HttpShim(engine, port=args.http_port,
                    static_dir=Path(args.static) if args.static else None)
    pump = GridPump(grid, interval=args.interval)
    threading.Thread(target=tcp.serve_forever, daemon=True).start()
    threading.Thread(target=shim.serve_forever, daemon=True).start()
    pump.start()
    print(f"status protocol on tcp port {tcp.port}, http shim on {shim.port}")
    stop = threading.Event()
    for signum in (signal.SIGTERM, signal.SIGINT):
        signal.signal(signum, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        pump.stop()
        tcp.shutdown()
        shim.shutdown()
        with grid.lock:
            grid.save()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridlet")
    parser.add_argument("--state", help="state directory (default $GRIDLET_STATE "
                                        "or ./gridlet-state)")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("init", help="build a world from a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--place", action="append", metavar="SITE=LO-HI[,LO-HI...]",
                   help="place runs locally at a site (repeatable)")
    p.add_argument("--proc", default="P1")
    p.add_argument("--sel", default="V1")
    p.add_argument("--typ", default="T1")
    p.add_argument("--events", type=int, default=600_000)
    p.add_argument("--tick", type=float, default=5.0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("vo", help="membership and gridmap maintenance")
    vo = p.add_subparsers(dest="vo_cmd", required=True)
    q = vo.add_parser("register"); q.add_argument("user"); q.add_argument("dn")
    q = vo.add_parser("authorize"); q.add_argument("user")
    q.add_argument("--revoke", action="store_true")
    vo.add_parser("tick-scan")
    vo.add_parser("publish")
    q = vo.add_parser("sync"); q.add_argument("--site")
    q = vo.add_parser("show-pool"); q.add_argument("--site", required=True)
    q = vo.add_parser("blocklist"); q.add_argument("--site", required=True)
    q.add_argument("dn")
    vo.add_parser("show")
    p.set_defaults(func=cmd_vo)

    p = sub.add_parser("catalog", help="flags, sync, and path resolution")
    cat = p.add_subparsers(dest="catalog_cmd", required=True)
    q = cat.add_parser("flag")
    q.add_argument("--site", required=True)
    q.add_argument("--run", type=int, required=True)
    onoff = q.add_mutually_exclusive_group(required=True)
    onoff.add_argument("--on", action="store_true")
    onoff.add_argument("--off", action="store_true")
    q.add_argument("--no-materialize", action="store_true",
                   help="set the flag without placing data (lying-flag test)")
    cat.add_parser("sync")
    q = cat.add_parser("resolve"); q.add_argument("--site", required=True)
    q.add_argument("path")
    cat.add_parser("show-index")
    q = cat.add_parser("export"); q.add_argument("--site", required=True)
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("skimdata", help="select data and plan task lists")
    skim = p.add_subparsers(dest="skim_cmd", required=True)
    q = skim.add_parser("select")
    q.add_argument("--site", required=True)
    q.add_argument("--range", required=True, metavar="LO-HI")
    q.add_argument("--typ", default="T1")
    q.add_argument("--proc", default="P1")
    q.add_argument("--max", type=int)
    q = skim.add_parser("plan")
    q.add_argument("--mode", choices=("priority", "index"), required=True)
    q.add_argument("--sites", required=True, metavar="A,B,C")
    q.add_argument("--chunk", type=int, default=100)
    q.add_argument("--balance", choices=("none", "rr"), default="none")
    q.add_argument("--range", required=True, metavar="LO-HI")
    q.add_argument("--typ", default="T1")
    q.add_argument("--proc", default="P1")
    q.add_argument("--out", required=True)
    p.set_defaults(func=cmd_skimdata)

    p = sub.add_parser("sandbox", help="flatten scripts and build manifests")
    box = p.add_subparsers(dest="sandbox_cmd", required=True)
    q = box.add_parser("expand"); q.add_argument("script")
    q.add_argument("-o", "--output")
    q = box.add_parser("manifest"); q.add_argument("script")
    q.add_argument("--binary", default="BetaApp")
    q.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sandbox)

    p = sub.add_parser("delegate", help="upload a delegation for a DN")
    p.add_argument("dn")
    p.add_argument("--lifetime", type=float, default=None)
    p.set_defaults(func=cmd_delegate)

    p = sub.add_parser("gsub", help="stage-then-submit one task to one site")
    p.add_argument("site")
    p.add_argument("binary")
    p.add_argument("script")
    p.add_argument("--dn")
    p.add_argument("--workdir")
    p.set_defaults(func=cmd_gsub)

    p = sub.add_parser("hyperjob", help="submit a whole plan")
    hyper = p.add_subparsers(dest="hyper_cmd", required=True)
    q = hyper.add_parser("submit")
    q.add_argument("--plan", required=True)
    q.add_argument("--manifest", required=True)
    q.add_argument("--dn")
    p.set_defaults(func=cmd_hyperjob)

    p = sub.add_parser("jobs", help="poll states and read logs")
    jobs = p.add_subparsers(dest="jobs_cmd", required=True)
    q = jobs.add_parser("poll"); q.add_argument("id")
    q = jobs.add_parser("log"); q.add_argument("id")
    p.set_defaults(func=cmd_jobs)

    p = sub.add_parser("collect", help="fetch, merge, or list outputs")
    col = p.add_subparsers(dest="collect_cmd", required=True)
    q = col.add_parser("fetch"); q.add_argument("hyperjob")
    q = col.add_parser("merge"); q.add_argument("hyperjob")
    q.add_argument("-o", "--output")
    q = col.add_parser("ls"); q.add_argument("dir")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("drain", help="run the batch queues dry")
    p.add_argument("--no-settle", action="store_true",
                   help="do not age vanished jobs into lost")
    p.set_defaults(func=cmd_drain)

    p = sub.add_parser("serve", help="status protocol + http shim for the portal")
    p.add_argument("--tcp-port", type=int, default=7480)
    p.add_argument("--http-port", type=int, default=7481)
    p.add_argument("--static", help="directory of portal assets to serve at /")
    p.add_argument("--interval", type=float, default=0.1)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except GridletError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


def gsub_entry() -> int:
    """`gsub <site> <binary> <script>` as a standalone command."""
    return main(["gsub"] + sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
