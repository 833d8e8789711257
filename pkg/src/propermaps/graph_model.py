"""Finite descriptions of locally finite tree-with-loops graphs.

An UnfoldingAutomaton generates a rooted tree with one-edge loops attached
at vertices: vertices of the graph are the finite child-index paths of the
automaton, and a vertex instantiated from state ``s`` carries ``loops(s)``
loops.  All classification data (core, genus, end spaces, characteristic
pairs) is computed from the finite automaton.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

INFINITY = float("inf")

Path = tuple[int, ...]


class UnsupportedPairError(ValueError):
    pass


@dataclass(frozen=True)
class UnfoldingAutomaton:
    root: str
    children: Mapping[str, tuple[str, ...]]
    loops: Mapping[str, int]

    @classmethod
    def make(cls, root: str, children: Mapping[str, Iterable[str]], loops: Mapping[str, int] | None = None) -> "UnfoldingAutomaton":
        ch = {s: tuple(cs) for s, cs in children.items()}
        lp = dict(loops or {})
        for s in ch:
            lp.setdefault(s, 0)
        for s, cs in ch.items():
            for c in cs:
                if c not in ch:
                    raise ValueError(f"unknown child state {c!r} of {s!r}")
        if root not in ch:
            raise ValueError(f"unknown root state {root!r}")
        for s, n in lp.items():
            if n < 0:
                raise ValueError(f"negative loop count at {s!r}")
        a = cls(root, ch, lp)
        reach = a.reachable_states()
        if reach != set(ch):
            extra = set(ch) - reach
            raise ValueError(f"states not reachable from root: {sorted(extra)}")
        return a

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(sorted(self.children))

    def reachable_states(self) -> set[str]:
        seen = {self.root}
        stack = [self.root]
        while stack:
            s = stack.pop()
            for c in self.children[s]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def state_of(self, path: Path) -> str:
        s = self.root
        for i in path:
            s = self.children[s][i]
        return s

    def __eq__(self, other):
        return (
            isinstance(other, UnfoldingAutomaton)
            and self.root == other.root
            and dict(self.children) == dict(other.children)
            and {s: self.loops[s] for s in self.children} == {s: other.loops[s] for s in other.children}
        )

    def __hash__(self):
        return hash((self.root, tuple(sorted((s, cs) for s, cs in self.children.items()))))


def path_str(path: Path) -> str:
    return "." if not path else "/".join(str(i) for i in path)


def parse_path(text: str) -> Path:
    text = text.strip()
    if text in (".", ""):
        return ()
    return tuple(int(p) for p in text.split("/"))


def bisimulation_classes(a: UnfoldingAutomaton) -> dict[str, int]:
    """Partition of states by unfolding behavior (loops and child structure).

    Two states in the same class generate identical rooted subtrees, so a
    map may carry one onto the other canonically.
    """
    cls = {s: 0 for s in a.children}
    while True:
        sig = {s: (a.loops[s], cls[s], tuple(cls[c] for c in a.children[s])) for s in a.children}
        order = {v: i for i, v in enumerate(sorted(set(sig.values())))}
        new_cls = {s: order[sig[s]] for s in a.children}
        if new_cls == cls:
            return cls
        cls = new_cls


# -- truncations -------------------------------------------------------------


@dataclass(frozen=True)
class GraphTruncation:
    automaton: UnfoldingAutomaton
    depth: int
    vertices: tuple[Path, ...]
    tree_edges: tuple[tuple[Path, Path], ...]
    loop_edges: tuple[tuple[Path, int], ...]
    frontier: Mapping[Path, str]


def unfold(a: UnfoldingAutomaton, depth: int) -> GraphTruncation:
    """Materialize the generated graph down to the given depth."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    vertices: list[Path] = []
    tree_edges: list[tuple[Path, Path]] = []
    loop_edges: list[tuple[Path, int]] = []
    frontier: dict[Path, str] = {}
    level: list[Path] = [()]
    for d in range(depth + 1):
        nxt: list[Path] = []
        for v in level:
            vertices.append(v)
            s = a.state_of(v)
            for k in range(a.loops[s]):
                loop_edges.append((v, k))
            if d == depth:
                frontier[v] = s
            else:
                for i in range(len(a.children[s])):
                    w = v + (i,)
                    tree_edges.append((v, w))
                    nxt.append(w)
        level = nxt
    return GraphTruncation(a, depth, tuple(vertices), tuple(tree_edges), tuple(loop_edges), frontier)


# -- state analysis -----------------------------------------------------------


def loop_reaching_states(a: UnfoldingAutomaton) -> frozenset[str]:
    """States from which some loop-bearing state is reachable."""
    reach = {s for s in a.children if a.loops[s] > 0}
    changed = True
    while changed:
        changed = False
        for s, cs in a.children.items():
            if s not in reach and any(c in reach for c in cs):
                reach.add(s)
                changed = True
    return frozenset(reach)


def _cycle_states(children: Mapping[str, tuple[str, ...]]) -> frozenset[str]:
    """States lying on a directed cycle of the (restricted) children relation."""
    states = set(children)
    on_cycle = set()
    for s in states:
        # s on a cycle iff s reachable from one of its own children
        stack = list(children.get(s, ()))
        seen = set()
        while stack:
            t = stack.pop()
            if t == s:
                on_cycle.add(s)
                break
            if t in seen:
                continue
            seen.add(t)
            stack.extend(children.get(t, ()))
    return frozenset(on_cycle)


def _reachable_from(children: Mapping[str, tuple[str, ...]], sources: Iterable[str]) -> frozenset[str]:
    seen = set(sources)
    stack = list(seen)
    while stack:
        s = stack.pop()
        for c in children.get(s, ()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return frozenset(seen)


def live_states(a: UnfoldingAutomaton) -> frozenset[str]:
    """States admitting an infinite path (they reach a directed cycle)."""
    cyc = _cycle_states(a.children)
    live = set(cyc)
    changed = True
    while changed:
        changed = False
        for s, cs in a.children.items():
            if s not in live and any(c in live for c in cs):
                live.add(s)
                changed = True
    return frozenset(live)


def restrict(a: UnfoldingAutomaton, keep: frozenset[str]) -> UnfoldingAutomaton | None:
    """Sub-automaton on a child-closed-along-paths state set containing root."""
    if a.root not in keep:
        return None
    ch = {s: tuple(c for c in cs if c in keep) for s, cs in a.children.items() if s in keep}
    lp = {s: a.loops[s] for s in ch}
    # drop states that became unreachable after restriction
    seen = {a.root}
    stack = [a.root]
    while stack:
        s = stack.pop()
        for c in ch[s]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    ch = {s: cs for s, cs in ch.items() if s in seen}
    lp = {s: lp[s] for s in ch}
    return UnfoldingAutomaton(a.root, ch, lp)


# -- core, genus, genus ends ---------------------------------------------------


def core(a: UnfoldingAutomaton) -> UnfoldingAutomaton | None:
    """Generator of the smallest subgraph containing all loops (None if a tree).

    A vertex lies in the core iff it carries a loop or has at least two
    loop-bearing directions; the walk from the root to the first such vertex
    stays loop-free, so the core automaton is the loop-reaching restriction
    rooted there.
    """
    reach = loop_reaching_states(a)
    if a.root not in reach:
        return None
    s = a.root
    seen_guard = 0
    while True:
        loopy_children = [c for c in a.children[s] if c in reach]
        if a.loops[s] > 0 or len(loopy_children) >= 2:
            break
        s = loopy_children[0]
        seen_guard += 1
        if seen_guard > len(a.children) + 1:
            raise AssertionError("core root walk failed to terminate")
    ch = {}
    stack = [s]
    while stack:
        t = stack.pop()
        if t in ch:
            continue
        ch[t] = tuple(c for c in a.children[t] if c in reach)
        stack.extend(ch[t])
    lp = {t: a.loops[t] for t in ch}
    return UnfoldingAutomaton(s, ch, lp)


def genus(a: UnfoldingAutomaton) -> int | float:
    """Total number of loop instances in the unfolding (or INFINITY)."""
    reach = loop_reaching_states(a)
    if a.root not in reach:
        return 0
    sub = {s: tuple(c for c in a.children[s] if c in reach) for s in reach}
    if _cycle_states(sub):
        return INFINITY
    # topological path counting on the loop-reaching DAG
    order: list[str] = []
    marks: dict[str, int] = {}

    def visit(s):
        if marks.get(s) == 2:
            return
        marks[s] = 1
        for c in sub[s]:
            visit(c)
        marks[s] = 2
        order.append(s)

    visit(a.root)
    inst = {s: 0 for s in sub}
    inst[a.root] = 1
    for s in reversed(order):
        for c in sub[s]:
            inst[c] += inst[s]
    return sum(a.loops[s] * inst[s] for s in sub)


def genus_ends(a: UnfoldingAutomaton) -> UnfoldingAutomaton | None:
    """Restriction to loop-reaching states; its infinite paths are the genus ends."""
    reach = loop_reaching_states(a)
    return restrict(a, reach)


# -- end space classification ---------------------------------------------------


@dataclass(frozen=True)
class EndFamily:
    kind: str  # "empty" | "finite" | "cantor" | "cantor_plus" | "other"
    count: int | None = None

    def decidable(self) -> bool:
        return self.kind != "other"

    def __str__(self):
        if self.kind == "finite":
            return f"finite({self.count})"
        if self.kind == "cantor_plus":
            return f"cantor+{self.count}"
        return self.kind


def classify_end_space(a: UnfoldingAutomaton | None) -> EndFamily:
    """Homeomorphism type of the space of infinite paths, when decidable.

    Decides membership in {empty, finite n, Cantor, Cantor plus finitely many
    isolated points}; anything else (e.g. infinitely many isolated points)
    comes back as "other".
    """
    if a is None:
        return EndFamily("empty")
    live = live_states(a)
    if a.root not in live:
        return EndFamily("empty")
    sub = restrict(a, live)
    assert sub is not None
    ch = sub.children
    cyc = _cycle_states(ch)
    after_cycle = _reachable_from(ch, cyc)
    branch = {s for s in ch if len(ch[s]) >= 2}
    can_reach_branch = set(branch)
    changed = True
    while changed:
        changed = False
        for s in ch:
            if s not in can_reach_branch and any(c in can_reach_branch for c in ch[s]):
                can_reach_branch.add(s)
                changed = True

    if not (branch & after_cycle):
        # finitely many branch instances: count the ends
        memo: dict[str, int] = {}

        def ends_from(s) -> int:
            if s in memo:
                return memo[s]
            if s not in can_reach_branch:
                memo[s] = 1
                return 1
            memo[s] = sum(ends_from(c) for c in ch[s])
            return memo[s]

        return EndFamily("finite", ends_from(sub.root))

    rays = {s for s in ch if s not in can_reach_branch}
    if not rays:
        return EndFamily("cantor")
    # isolated ends correspond to entries into ray states
    entries = []
    for s in ch:
        if s in rays:
            continue
        for c in ch[s]:
            if c in rays:
                entries.append(s)
    if any(s in after_cycle for s in entries):
        return EndFamily("other")
    # count instances of entry sources on the cycle-free part
    na = {s: tuple(c for c in ch[s] if c not in after_cycle) for s in ch if s not in after_cycle}
    inst = {s: 0 for s in na}
    if sub.root in inst:
        inst[sub.root] = 1
        order: list[str] = []
        marks: dict[str, int] = {}

        def visit(s):
            if marks.get(s) == 2:
                return
            marks[s] = 1
            for c in na[s]:
                visit(c)
            marks[s] = 2
            order.append(s)

        visit(sub.root)
        for s in reversed(order):
            for c in na[s]:
                inst[c] += inst[s]
    k = sum(inst.get(s, 0) for s in entries)
    if k == 0:
        # the only ray entries are unreachable; no isolated points after all
        return EndFamily("cantor")
    return EndFamily("cantor_plus", k)


# -- characteristic pairs --------------------------------------------------------


@dataclass(frozen=True)
class CharacteristicData:
    end_space: UnfoldingAutomaton | None
    genus: int | float
    genus_end_space: UnfoldingAutomaton | None

    @property
    def kind(self) -> str:
        return "FINITE_GENUS" if self.genus != INFINITY else "INFINITE_GENUS"

    def end_family(self) -> EndFamily:
        return classify_end_space(self.end_space)

    def genus_end_family(self) -> EndFamily:
        return classify_end_space(self.genus_end_space)


def characteristic_pair(a: UnfoldingAutomaton) -> CharacteristicData:
    ends = restrict(a, live_states(a))
    g = genus(a)
    gends = genus_ends(a)
    data = CharacteristicData(ends, g, gends)
    nonempty_gends = classify_end_space(gends).kind != "empty"
    assert (g == INFINITY) == nonempty_gends, "genus/genus-ends invariant violated"
    return data


def classify_equivalent(x: UnfoldingAutomaton, y: UnfoldingAutomaton) -> str:
    """YES/NO/UNKNOWN for proper homotopy equivalence of the generated graphs.

    Characteristic pairs are compared componentwise inside the decidable
    family of end spaces; anything outside it answers UNKNOWN.
    """
    cx, cy = characteristic_pair(x), characteristic_pair(y)
    ex, ey = cx.end_family(), cy.end_family()
    gx, gy = cx.genus_end_family(), cy.genus_end_family()
    if not all(f.decidable() for f in (ex, ey, gx, gy)):
        return "UNKNOWN"
    if cx.kind != cy.kind:
        return "NO"
    if cx.kind == "FINITE_GENUS":
        return "YES" if (ex == ey and cx.genus == cy.genus) else "NO"
    return "YES" if (ex == ey and gx == gy) else "NO"


# -- standard models ---------------------------------------------------------------


def _tree_part(kind: str, count: int | None) -> tuple[dict[str, tuple[str, ...]], dict[str, int], str]:
    """Children/loops/root for the loop-free tree realizing an end family."""
    if kind == "empty":
        return {"root": ()}, {"root": 0}, "root"
    if kind == "finite":
        if count == 1:
            return {"ray": ("ray",)}, {"ray": 0}, "ray"
        ch = {"root": tuple("ray" for _ in range(count)), "ray": ("ray",)}
        return ch, {"root": 0, "ray": 0}, "root"
    if kind == "cantor":
        return {"b": ("b", "b")}, {"b": 0}, "b"
    if kind == "cantor_plus":
        ch = {"root": ("b",) + tuple("ray" for _ in range(count)), "b": ("b", "b"), "ray": ("ray",)}
        return ch, {"root": 0, "b": 0, "ray": 0}, "root"
    raise UnsupportedPairError(f"end family {kind} outside the decidable family")


def standard_model(c: CharacteristicData) -> UnfoldingAutomaton:
    """Canonical automaton with the same characteristic pair (decidable family)."""
    ef = c.end_family()
    if not ef.decidable():
        raise UnsupportedPairError("end space outside the decidable family")
    if c.kind == "FINITE_GENUS":
        g = int(c.genus)
        ch, lp, root = _tree_part(ef.kind, ef.count)
        if g > 0:
            if root in ("ray", "b"):
                # give the loops their own root state
                ch = {"root": (root,) * len(ch[root]) if root == "b" else (root,), **ch}
                if root == "b":
                    ch["root"] = ("b", "b")
                lp = {"root": g, **lp}
                root = "root"
            else:
                lp[root] = g
        return UnfoldingAutomaton.make(root, ch, lp)

    gf = c.genus_end_family()
    if not gf.decidable():
        raise UnsupportedPairError("genus end space outside the decidable family")
    if gf.kind == "empty":
        raise UnsupportedPairError("infinite genus with empty genus end space")
    if ef == gf:
        ch, lp, root = _core_part(gf)
        return UnfoldingAutomaton.make(root, ch, lp)
    if ef.kind == "cantor":
        ch, lp, root = _core_part(gf)
        ch = {s: cs + ("b",) for s, cs in ch.items()}
        ch["b"] = ("b", "b")
        lp["b"] = 0
        return UnfoldingAutomaton.make(root, ch, lp)
    if ef.kind == "cantor_plus":
        k = ef.count
        ch, lp, croot = _core_part(gf)
        ch = {s: cs + ("b",) for s, cs in ch.items()}
        ch["b"] = ("b", "b")
        lp["b"] = 0
        ch["top"] = (croot,) + tuple("xray" for _ in range(k))
        ch["xray"] = ("xray",)
        lp["top"] = 0
        lp["xray"] = 0
        return UnfoldingAutomaton.make("top", ch, lp)
    if ef.kind == "finite":
        if gf.kind != "finite" or gf.count > ef.count:
            raise UnsupportedPairError(f"cannot embed {gf} in {ef}")
        extra = ef.count - gf.count
        ch, lp, croot = _core_part(gf)
        ch["top"] = (croot,) + tuple("xray" for _ in range(extra))
        ch["xray"] = ("xray",)
        lp["top"] = 0
        lp["xray"] = 0
        return UnfoldingAutomaton.make("top", ch, lp)
    raise UnsupportedPairError(f"cannot embed {gf} in {ef}")


def _core_part(gf: EndFamily) -> tuple[dict[str, tuple[str, ...]], dict[str, int], str]:
    """Core graph automaton (one loop at every vertex) realizing an end family."""
    if gf.kind == "finite":
        if gf.count == 1:
            return {"cray": ("cray",)}, {"cray": 1}, "cray"
        return (
            {"croot": tuple("cray" for _ in range(gf.count)), "cray": ("cray",)},
            {"croot": 1, "cray": 1},
            "croot",
        )
    if gf.kind == "cantor":
        return {"cb": ("cb", "cb")}, {"cb": 1}, "cb"
    if gf.kind == "cantor_plus":
        ch = {"croot": ("cb",) + tuple("cray" for _ in range(gf.count)), "cb": ("cb", "cb"), "cray": ("cray",)}
        return ch, {"croot": 1, "cb": 1, "cray": 1}, "croot"
    raise UnsupportedPairError(f"genus end family {gf} outside the decidable family")


# -- DX geometry helpers (used by mapclass) ---------------------------------------


def dx_states(a: UnfoldingAutomaton) -> frozenset[str]:
    """States with a non-genus end somewhere below them."""
    live = live_states(a)
    reach = loop_reaching_states(a)
    outside = live - reach
    has_dx = set(outside)
    changed = True
    while changed:
        changed = False
        for s, cs in a.children.items():
            if s not in has_dx and any(c in has_dx for c in cs):
                has_dx.add(s)
                changed = True
    return frozenset(has_dx)


def genus_end_states(a: UnfoldingAutomaton) -> frozenset[str]:
    """States with a genus end below (an infinite path inside the loop-reaching set)."""
    reach = loop_reaching_states(a)
    sub = {s: tuple(c for c in a.children[s] if c in reach) for s in reach}
    gcyc = _cycle_states(sub)
    out = set()
    for s in reach:
        stack = [s]
        seen = set()
        while stack:
            t = stack.pop()
            if t in gcyc:
                out.add(s)
                break
            if t in seen:
                continue
            seen.add(t)
            stack.extend(sub.get(t, ()))
    return frozenset(out)


def mixed_states(a: UnfoldingAutomaton) -> frozenset[str]:
    """States with both genus ends and DX ends below."""
    return genus_end_states(a) & dx_states(a)


def deep_mixed_states(a: UnfoldingAutomaton) -> frozenset[str]:
    """States below which DX ends accumulate onto genus ends.

    These are the states that can reach a mixed state with unboundedly many
    instances (a mixed state reachable from a live cycle).
    """
    live = live_states(a)
    cyc = _cycle_states({s: tuple(c for c in a.children[s] if c in live) for s in live})
    after = _reachable_from(a.children, cyc)
    bad = mixed_states(a) & after
    if not bad:
        return frozenset()
    out = set()
    for s in a.children:
        if _reachable_from(a.children, [s]) & bad:
            out.add(s)
    return frozenset(out)


def dx_compact(a: UnfoldingAutomaton) -> bool:
    """Whether DX is clopen: no DX ends accumulate onto genus ends."""
    return not deep_mixed_states(a)


def core_vertices(a: UnfoldingAutomaton, depth: int) -> frozenset[Path]:
    """Truncation vertices lying in the core (hull of all loops)."""
    reach = loop_reaching_states(a)
    out: set[Path] = set()

    def walk(path: Path, s: str, outside: bool, d: int):
        if s not in reach:
            return
        loopy = [c for c in a.children[s] if c in reach]
        directions = len(loopy) + (1 if outside else 0)
        if a.loops[s] > 0 or directions >= 2:
            out.add(path)
        if d == depth:
            return
        for i, c in enumerate(a.children[s]):
            if c not in reach:
                continue
            side_loops = a.loops[s] > 0 or any(cc in reach for j, cc in enumerate(a.children[s]) if j != i)
            walk(path + (i,), c, outside or side_loops, d + 1)

    walk((), a.root, False, 0)
    return frozenset(out)


def cylinders(a: UnfoldingAutomaton, depth: int) -> tuple[Path, ...]:
    """Live depth-D vertices; their shadows partition the end space."""
    live = live_states(a)
    out = []

    def walk(path: Path, s: str, d: int):
        if s not in live:
            return
        if d == depth:
            out.append(path)
            return
        for i, c in enumerate(a.children[s]):
            walk(path + (i,), c, d + 1)

    walk((), a.root, 0)
    return tuple(sorted(out))


# -- text format and DOT export -----------------------------------------------------


def parse_automaton(text: str) -> UnfoldingAutomaton:
    """One record per line: `state <id> loops=<n> children=<id>,...` plus `root <id>`."""
    children: dict[str, tuple[str, ...]] = {}
    loops: dict[str, int] = {}
    root = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "root":
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: bad root line")
            root = parts[1]
        elif parts[0] == "state":
            if len(parts) != 4 or not parts[2].startswith("loops=") or not parts[3].startswith("children="):
                raise ValueError(f"line {lineno}: bad state line {line!r}")
            sid = parts[1]
            loops[sid] = int(parts[2][len("loops=") :])
            kids = parts[3][len("children=") :]
            children[sid] = tuple(k for k in kids.split(",") if k)
        else:
            raise ValueError(f"line {lineno}: unknown record {parts[0]!r}")
    if root is None:
        raise ValueError("missing root line")
    return UnfoldingAutomaton.make(root, children, loops)


def format_automaton(a: UnfoldingAutomaton) -> str:
    lines = [f"root {a.root}"]
    for s in a.states:
        kids = ",".join(a.children[s])
        lines.append(f"state {s} loops={a.loops[s]} children={kids}")
    return "\n".join(lines) + "\n"


def truncation_to_dot(t: GraphTruncation) -> str:
    lines = ["digraph truncation {"]
    for v in t.vertices:
        label = path_str(v)
        shape = "doublecircle" if v in t.frontier else "circle"
        lines.append(f'  "{label}" [shape={shape}];')
    for u, v in t.tree_edges:
        lines.append(f'  "{path_str(u)}" -> "{path_str(v)}";')
    for v, k in t.loop_edges:
        lines.append(f'  "{path_str(v)}" -> "{path_str(v)}" [label="loop{k}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
