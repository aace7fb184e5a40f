"""Task-script flattening and input-sandbox inventory.

An analysis script sources other scripts, which source others in turn; a
job shipped to a remote site cannot chase that chain, so `expand` replaces
every source directive with the body of its target, depth first, until the
script is self-complete.  Expansion is purely textual: a script included
twice is pasted twice, and cycles are detected and reported with the full
inclusion path.  Non-script file reads are marked with `useFile` lines and
collected into the manifest so they can be staged alongside the binary;
anything the scan does not recognize passes through untouched.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ExpansionDepthError, SourceCycleError, UnresolvedSourceError

KIND_SOURCE = "source_directive"
KIND_INPUT = "input_entry"
KIND_AUX = "aux_reference"
KIND_PLAIN = "plain"

DEFAULT_MAX_DEPTH = 64

MANIFEST_SEPARATOR = "--- script ---"


@dataclass(frozen=True)
class ScriptLine:
    kind: str
    payload: str
    raw: str


@dataclass(frozen=True)
class Script:
    name: str
    lines: tuple[ScriptLine, ...]

    def text(self) -> str:
        return "".join(line.raw + "\n" for line in self.lines)

    def count(self, kind: str) -> int:
        return sum(1 for line in self.lines if line.kind == kind)


def classify_line(raw: str) -> ScriptLine:
    tokens = raw.strip().split()
    if len(tokens) == 2 and tokens[0] in ("source", "sourceFoundFile"):
        return ScriptLine(KIND_SOURCE, tokens[1], raw)
    if len(tokens) == 2 and tokens[0] == "useFile":
        return ScriptLine(KIND_AUX, tokens[1], raw)
    if len(tokens) == 3 and tokens[0] == "input" and tokens[1] == "add":
        return ScriptLine(KIND_INPUT, tokens[2], raw)
    return ScriptLine(KIND_PLAIN, raw, raw)


def parse_script(text: str, name: str = "<script>") -> Script:
    return Script(name, tuple(classify_line(raw) for raw in text.splitlines()))


Resolver = Mapping[str, Script]


def make_resolver(sources: Mapping[str, str]) -> dict[str, Script]:
    return {name: parse_script(text, name) for name, text in sources.items()}


def dir_resolver(directory: Path) -> dict[str, Script]:
    """Resolve sourced names against the files of one directory."""
    out: dict[str, Script] = {}
    for path in sorted(Path(directory).iterdir()):
        if path.is_file():
            out[path.name] = parse_script(path.read_text(), path.name)
    return out


def expand(script: Script, resolver: Resolver,
           max_depth: int = DEFAULT_MAX_DEPTH) -> Script:
    """Flatten every source directive, depth first, with textual semantics.

    Each inclusion site expands independently (no include guards).  An
    unresolved target reports the inclusion chain that reached it; a cycle
    reports the cycle path; nesting beyond max_depth is its own error.
    """

    def walk(current: Script, chain: list[str]) -> list[ScriptLine]:
        if len(chain) - 1 > max_depth:
            raise ExpansionDepthError(
                f"source nesting exceeds {max_depth} (at {' -> '.join(chain)})")
        out: list[ScriptLine] = []
        for line in current.lines:
            if line.kind != KIND_SOURCE:
                out.append(line)
                continue
            target = line.payload
            if target in chain:
                cycle = chain[chain.index(target):] + [target]
                raise SourceCycleError(cycle)
            sub = resolver.get(target)
            if sub is None:
                raise UnresolvedSourceError(target, chain)
            out.extend(walk(sub, chain + [target]))
        return out

    return Script(script.name, tuple(walk(script, [script.name])))


def inventory_aux(flattened: Script) -> list[str]:
    """Aux references in first-occurrence order, deduplicated."""
    seen: set[str] = set()
    out: list[str] = []
    for line in flattened.lines:
        if line.kind == KIND_AUX and line.payload not in seen:
            seen.add(line.payload)
            out.append(line.payload)
    return out


@dataclass(frozen=True)
class SandboxManifest:
    binary: str
    flattened_script: Script
    aux_files: tuple[str, ...]


def build_manifest(user_script: Script, resolver: Resolver,
                   binary_name: str) -> SandboxManifest:
    flattened = expand(user_script, resolver)
    return SandboxManifest(binary_name, flattened, tuple(inventory_aux(flattened)))


def serialize_manifest(manifest: SandboxManifest) -> str:
    lines = [f"binary {manifest.binary}"]
    lines.extend(f"aux {path}" for path in manifest.aux_files)
    lines.append(MANIFEST_SEPARATOR)
    return "".join(line + "\n" for line in lines) + manifest.flattened_script.text()


def parse_manifest(text: str, script_name: str = "<manifest>") -> SandboxManifest:
    header, sep, body = text.partition(MANIFEST_SEPARATOR + "\n")
    if not sep:
        raise ValueError("manifest lacks the script separator")
    binary = None
    aux: list[str] = []
    for raw in header.splitlines():
        if raw.startswith("binary "):
            binary = raw[len("binary "):]
        elif raw.startswith("aux "):
            aux.append(raw[len("aux "):])
        elif raw.strip():
            raise ValueError(f"bad manifest line: {raw!r}")
    if binary is None:
        raise ValueError("manifest lacks a binary line")
    return SandboxManifest(binary, parse_script(body, script_name), tuple(aux))
