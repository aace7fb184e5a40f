import pytest

from gridlet.errors import (ExpansionDepthError, SourceCycleError,
                            UnresolvedSourceError)
from gridlet.sandbox import (KIND_AUX, KIND_INPUT, KIND_PLAIN, KIND_SOURCE,
                             Script, build_manifest, expand, inventory_aux,
                             make_resolver, parse_manifest, parse_script,
                             serialize_manifest)


# --- classification ---------------------------------------------------------

def test_source_directive_forms():
    s = parse_script("source a.tcl\nsourceFoundFile b.tcl\n")
    assert [l.kind for l in s.lines] == [KIND_SOURCE, KIND_SOURCE]
    assert [l.payload for l in s.lines] == ["a.tcl", "b.tcl"]


def test_input_entry():
    s = parse_script("input add $BFROOT/x")
    assert s.lines[0].kind == KIND_INPUT
    assert s.lines[0].payload == "$BFROOT/x"


def test_mixed_fixture_classification():
    # hand-classified 4-line fixture
    text = ("source std.tcl\n"
            "set verbose 1\n"
            "useFile tables/pid.dat\n"
            "input add $BFROOT/data/run000001-procP1-selV1-typT1.data\n")
    kinds = [l.kind for l in parse_script(text).lines]
    assert kinds == [KIND_SOURCE, KIND_PLAIN, KIND_AUX, KIND_INPUT]


def test_unknown_lines_are_plain_and_total():
    text = "source\nsource a b\nuseFile\nwhatever else\n"
    s = parse_script(text)
    assert all(l.kind == KIND_PLAIN for l in s.lines)
    assert s.text() == text


# --- expansion --------------------------------------------------------------

def test_expand_identity_without_directives():
    s = parse_script("set x 1\nset y 2\n", "plain.tcl")
    assert expand(s, {}) == s


def test_expand_three_level_chain():
    resolver = make_resolver({
        "b.tcl": "line b\nsource c.tcl\n",
        "c.tcl": "line c\n",
    })
    root = parse_script("line a\nsource b.tcl\n", "a.tcl")
    out = expand(root, resolver)
    # manual flattening of the fixture
    assert [l.raw for l in out.lines] == ["line a", "line b", "line c"]
    assert out.count(KIND_SOURCE) == 0


def test_expand_two_node_cycle():
    resolver = make_resolver({
        "a.tcl": "source b.tcl\n",
        "b.tcl": "source a.tcl\n",
    })
    with pytest.raises(SourceCycleError) as err:
        expand(resolver["a.tcl"], resolver)
    assert err.value.cycle == ["a.tcl", "b.tcl", "a.tcl"]


def test_expand_three_node_cycle_path():
    resolver = make_resolver({
        "a.tcl": "source b.tcl\n",
        "b.tcl": "source c.tcl\n",
        "c.tcl": "source a.tcl\n",
    })
    with pytest.raises(SourceCycleError) as err:
        expand(resolver["a.tcl"], resolver)
    assert err.value.cycle == ["a.tcl", "b.tcl", "c.tcl", "a.tcl"]


def test_expand_unresolved_names_target_and_chain():
    resolver = make_resolver({"b.tcl": "source missing.tcl\n"})
    root = parse_script("source b.tcl\n", "a.tcl")
    with pytest.raises(UnresolvedSourceError) as err:
        expand(root, resolver)
    assert err.value.target == "missing.tcl"
    assert err.value.chain == ["a.tcl", "b.tcl"]


def test_expand_repeated_inclusion_is_textual():
    resolver = make_resolver({"inc.tcl": "included\n"})
    root = parse_script("source inc.tcl\nsource inc.tcl\n", "a.tcl")
    out = expand(root, resolver)
    assert [l.raw for l in out.lines] == ["included", "included"]


def test_expand_depth_limit_distinct_from_cycle():
    resolver = make_resolver(
        {f"s{i}.tcl": f"source s{i + 1}.tcl\n" for i in range(10)}
        | {"s10.tcl": "bottom\n"})
    root = parse_script("source s0.tcl\n", "root.tcl")
    assert [l.raw for l in expand(root, resolver).lines] == ["bottom"]
    with pytest.raises(ExpansionDepthError):
        expand(root, resolver, max_depth=5)


def line_count_oracle(name, resolver, root):
    """DFS over the inclusion tree counting non-directive lines with multiplicity."""
    script = root if name is None else resolver[name]
    total = 0
    for line in script.lines:
        if line.kind == KIND_SOURCE:
            total += line_count_oracle(line.payload, resolver, root)
        else:
            total += 1
    return total


def test_line_conservation_against_dfs_oracle():
    resolver = make_resolver({
        "std.tcl": "s1\nsource deep.tcl\ns2\n",
        "deep.tcl": "d1\nuseFile aux.dat\n",
        "other.tcl": "o1\nsource deep.tcl\n",
    })
    root = parse_script("a\nsource std.tcl\nsource other.tcl\nsource deep.tcl\n",
                        "root.tcl")
    out = expand(root, resolver)
    assert len(out.lines) == line_count_oracle(None, resolver, root)


def test_expand_is_idempotent():
    resolver = make_resolver({
        "std.tcl": "s1\nsource deep.tcl\n",
        "deep.tcl": "useFile aux.dat\nd\n",
    })
    root = parse_script("a\nsource std.tcl\n", "root.tcl")
    once = expand(root, resolver)
    assert expand(once, resolver) == once


# --- aux inventory and manifest ----------------------------------------------

def test_inventory_empty():
    assert inventory_aux(parse_script("plain\n")) == []


def test_inventory_dedupes_keeping_first_occurrence():
    s = parse_script("useFile x.dat\nuseFile y.dat\nuseFile x.dat\n")
    assert inventory_aux(s) == ["x.dat", "y.dat"]


def test_inventory_follows_inclusion_order():
    resolver = make_resolver({
        "one.tcl": "useFile a.dat\n",
        "two.tcl": "useFile b.dat\nuseFile c.dat\n",
    })
    root = parse_script("source two.tcl\nsource one.tcl\n", "root.tcl")
    assert inventory_aux(expand(root, resolver)) == ["b.dat", "c.dat", "a.dat"]


def test_build_manifest_trivial():
    m = build_manifest(parse_script("hello\n", "u.tcl"), {}, "BetaApp")
    assert m.binary == "BetaApp"
    assert m.aux_files == ()


def test_build_manifest_user_analysis_fixture():
    # user script + 2 standard scripts + 2 aux files
    resolver = make_resolver({
        "std-main.tcl": "setup\nsource std-pid.tcl\n",
        "std-pid.tcl": "useFile pid-tables.dat\n",
        "std-eff.tcl": "useFile efficiencies.dat\neff setup\n",
    })
    user = parse_script(
        "source std-main.tcl\nsource std-eff.tcl\n"
        "input add $BFROOT/data/run000001-procP1-selV1-typT1.data\n",
        "myAnalysis.tcl")
    m = build_manifest(user, resolver, "BetaApp")
    assert list(m.aux_files) == ["pid-tables.dat", "efficiencies.dat"]
    assert m.flattened_script.count(KIND_SOURCE) == 0


def test_build_manifest_missing_standard_script():
    user = parse_script("source std-main.tcl\n", "u.tcl")
    with pytest.raises(UnresolvedSourceError):
        build_manifest(user, {}, "BetaApp")


def test_manifest_serialization_round_trip():
    resolver = make_resolver({"std.tcl": "useFile t.dat\nwork\n"})
    user = parse_script("source std.tcl\ninput add $BFROOT/x\n", "u.tcl")
    m = build_manifest(user, resolver, "BetaApp")
    text = serialize_manifest(m)
    assert text.splitlines()[0] == "binary BetaApp"
    assert "--- script ---" in text.splitlines()
    parsed = parse_manifest(text)
    assert parsed.binary == m.binary
    assert parsed.aux_files == m.aux_files
    assert parsed.flattened_script.text() == m.flattened_script.text()


def test_cycle_soundness_iff_on_random_graphs():
    # expand errors exactly when the inclusion graph reachable from the
    # root is cyclic; oracle: independent iterative DFS cycle check
    import random

    rng = random.Random(1337)

    def has_cycle(edges, root):
        WHITE, GREY, BLACK = 0, 1, 2
        color = {}

        def visit(node):
            color[node] = GREY
            for nxt in edges.get(node, []):
                state = color.get(nxt, WHITE)
                if state == GREY:
                    return True
                if state == WHITE and visit(nxt):
                    return True
            color[node] = BLACK
            return False

        return visit(root)

    for _ in range(80):
        n = rng.randint(2, 8)
        names = [f"n{i}.tcl" for i in range(n)]
        edges = {
            name: [t for t in names if t != name and rng.random() < 0.3]
            for name in names
        }
        resolver = make_resolver({
            name: "".join(f"source {t}\n" for t in targets) + "body\n"
            for name, targets in edges.items()
        })
        root = names[0]
        cyclic = has_cycle(edges, root)
        try:
            out = expand(resolver[root], resolver)
            assert not cyclic, f"oracle saw a cycle expand missed: {edges}"
            assert out.count(KIND_SOURCE) == 0
        except SourceCycleError as err:
            assert cyclic, f"expand saw a cycle the oracle missed: {edges}"
            # the reported path really is a cycle in the graph
            path = err.cycle
            assert path[0] == path[-1]
            for a, b in zip(path, path[1:]):
                assert b in edges[a]
