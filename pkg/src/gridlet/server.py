"""The portal-facing endpoint: a line-oriented protocol over TCP and HTTP.

Core commands (one request line, response lines, blank-line terminated on
the socket):

    STATUS <hyperjob_id>                 -> JOB <id> <site> <nn> <state>  (per job)
    SUBMIT <plan-file> <manifest-file>   -> HYPERJOB <id>
    RESULT <hyperjob_id>                 -> <merged bundle path> | PENDING

plus two verbs the portal needs to drive the full flow:

    DELEGATE <dn> <lifetime-seconds>     -> DELEGATED <dn> <expires-at>
    PLAN <lo> <hi> <type> <proc> <sites> <chunk> <mode> <balance>
                                         -> PLAN <plan-file> <manifest-file> | EMPTY

Errors come back as a single ``ERR <message>`` line.  The HTTP shim maps
``POST /api`` (body: one command line) onto the same engine and serves the
merged bundle at ``GET /api/download/<hyperjob_id>`` with the bundle media
type.
"""

import socketserver
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .collector import MEDIA_TYPE
from .errors import GridletError
from .grid import Grid
from .query import SelectionCriteria, write_plan
from .sandbox import build_manifest, parse_manifest, parse_script, serialize_manifest

DEFAULT_PORTAL_SCRIPT = "setup analysis\nuseFile tables.dat\n"
DEFAULT_PORTAL_BINARY = "BetaApp"

_BALANCES = {"none": "none", "rr": "round_robin", "round_robin": "round_robin"}


class ProtocolEngine:
    """Executes protocol lines against one grid; single portal session."""

    def __init__(self, grid: Grid, portal_script: str = DEFAULT_PORTAL_SCRIPT,
                 portal_binary: str = DEFAULT_PORTAL_BINARY):
        self.grid = grid
        self.portal_script = portal_script
        self.portal_binary = portal_binary
        self.session_dn: str | None = None
        self._plan_counter = 0
        self._lock = grid.lock  # commands and the pump serialize on the grid

    def handle_line(self, line: str) -> list[str]:
        parts = line.strip().split()
        if not parts:
            return ["ERR empty command"]
        verb, args = parts[0].upper(), parts[1:]
        handler = getattr(self, f"_cmd_{verb.lower()}", None)
        if handler is None:
            return [f"ERR unknown command {verb}"]
        try:
            with self._lock:
                return handler(args)
        except GridletError as err:
            return [f"ERR {err}"]
        except (ValueError, KeyError, OSError) as err:
            return [f"ERR {err}"]

    def _cmd_status(self, args: list[str]) -> list[str]:
        if len(args) != 1:
            return ["ERR usage: STATUS <hyperjob_id>"]
        return self.grid.orchestrator.status_lines(args[0])

    def _cmd_submit(self, args: list[str]) -> list[str]:
        if len(args) != 2:
            return ["ERR usage: SUBMIT <plan-file> <manifest-file>"]
        if self.session_dn is None:
            return ["ERR no delegation uploaded"]
        from .query import load_plan
        plan = load_plan(Path(args[0]))
        manifest = parse_manifest(Path(args[1]).read_text())
        hyperjob = self.grid.submit_hyperjob(plan, manifest, self.session_dn)
        return [f"HYPERJOB {hyperjob.hyperjob_id}"]

    def _cmd_result(self, args: list[str]) -> list[str]:
        if len(args) != 1:
            return ["ERR usage: RESULT <hyperjob_id>"]
        path = self.grid.result_path(args[0])
        return ["PENDING"] if path is None else [path]

    def _cmd_delegate(self, args: list[str]) -> list[str]:
        if len(args) != 2:
            return ["ERR usage: DELEGATE <dn> <lifetime-seconds>"]
        dn, lifetime = args[0], float(args[1])
        token = self.grid.delegate(dn, lifetime)
        self.session_dn = dn
        return [f"DELEGATED {dn} {token.expires_at}"]

    def _cmd_plan(self, args: list[str]) -> list[str]:
        if len(args) != 8:
            return ["ERR usage: PLAN <lo> <hi> <type> <proc> <sites> <chunk>"
                    " <mode> <balance>"]
        lo, hi = int(args[0]), int(args[1])
        criteria = SelectionCriteria(lo, hi, args[2], args[3])
        sites = [s for s in args[4].split(",") if s]
        chunk_size = int(args[5])
        mode = args[6]
        balance = _BALANCES.get(args[7])
        if balance is None:
            return [f"ERR unknown balance {args[7]!r}"]
        if mode == "priority":
            plan = self.grid.plan_priority(criteria, sites, chunk_size)
        elif mode == "index":
            plan = self.grid.plan_index(criteria, sites, chunk_size, balance)
        else:
            return [f"ERR unknown mode {mode!r}"]
        if plan.total_tasks() == 0:
            return ["EMPTY"]
        self._plan_counter += 1
        plan_dir = self.grid.root / "portal" / f"plan-{self._plan_counter}"
        plan_path = write_plan(plan, plan_dir)
        manifest = build_manifest(
            parse_script(self.portal_script, "myAnalysis.tcl"), {},
            self.portal_binary)
        manifest_path = plan_dir / "manifest.txt"
        manifest_path.write_text(serialize_manifest(manifest))
        return [f"PLAN {plan_path} {manifest_path}"]

    def _cmd_ping(self, args: list[str]) -> list[str]:
        return ["PONG"]

    def result_file(self, hyperjob_id: str) -> Path | None:
        with self._lock:
            path = self.grid.result_path(hyperjob_id)
        return Path(path) if path else None


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            raw = self.rfile.readline()
            if not raw:
                return
            line = raw.decode("utf-8", "replace").rstrip("\r\n")
            if not line:
                continue
            response = self.server.engine.handle_line(line)
            payload = "".join(part + "\n" for part in response) + "\n"
            self.wfile.write(payload.encode())
            self.wfile.flush()


class StatusTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, engine: ProtocolEngine, host: str = "127.0.0.1",
                 port: int = 0):
        super().__init__((host, port), _LineHandler)
        self.engine = engine

    @property
    def port(self) -> int:
        return self.server_address[1]


class _ShimHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # keep test output quiet
        pass

    def _send(self, code: int, body: bytes, content_type: str,
              extra: dict | None = None):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def do_HEAD(self):
        self.do_GET()

    def do_POST(self):
        if self.path.rstrip("/") != "/api":
            self._send(404, b"not found\n", "text/plain")
            return
        length = int(self.headers.get("Content-Length") or 0)
        line = self.rfile.read(length).decode("utf-8", "replace").strip()
        response = self.server.engine.handle_line(line)
        body = "".join(part + "\n" for part in response).encode()
        self._send(200, body, "text/plain; charset=utf-8")

    def do_GET(self):
        if self.path.startswith("/api/download/"):
            hyperjob_id = self.path.rsplit("/", 1)[-1]
            try:
                path = self.server.engine.result_file(hyperjob_id)
            except GridletError as err:
                self._send(404, f"{err}\n".encode(), "text/plain")
                return
            if path is None:
                self._send(409, b"PENDING\n", "text/plain")
                return
            data = path.read_bytes()
            self._send(200, data, MEDIA_TYPE, {
                "Content-Disposition": f'attachment; filename="{path.name}"'})
            return
        self._serve_static()

    def _serve_static(self):
        static = self.server.static_dir
        if static is None:
            self._send(404, b"no static content\n", "text/plain")
            return
        rel = self.path.split("?")[0].lstrip("/") or "index.html"
        target = (static / rel).resolve()
        if not str(target).startswith(str(static.resolve())) or not target.is_file():
            self._send(404, b"not found\n", "text/plain")
            return
        types = {".html": "text/html", ".js": "text/javascript",
                 ".css": "text/css", ".json": "application/json"}
        self._send(200, target.read_bytes(),
                   types.get(target.suffix, "application/octet-stream"))


class HttpShim(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, engine: ProtocolEngine, host: str = "127.0.0.1",
                 port: int = 0, static_dir: Path | None = None):
        super().__init__((host, port), _ShimHandler)
        self.engine = engine
        self.static_dir = Path(static_dir) if static_dir else None

    @property
    def port(self) -> int:
        return self.server_address[1]


class GridPump:
    """Advances the simulation in the background while a server runs."""

    def __init__(self, grid: Grid, interval: float = 0.1):
        self.grid = grid
        self.interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        while not self._stop.wait(self.interval):
            with self.grid.lock:
                self.grid.step()
                self.grid.orchestrator.sweep_lost()

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
