"""Clopen-set algebra on end spaces: metrics, partitions, telescopes.

Ends of an automaton-generated graph are infinite child-index paths; a
depth-D cylinder is a live depth-D vertex, standing for the clopen set of
ends through it.  All distances are exact rationals (ties against epsilon
matter, the joining relation is strictly `< eps`).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .graph_model import Path, UnfoldingAutomaton, cylinders, live_states, path_str


class DepthTooShallowError(ValueError):
    pass


class NotAnActionError(ValueError):
    pass


class NotInvariantError(ValueError):
    pass


class NotRefiningError(ValueError):
    pass


def common_prefix_len(u: Path, v: Path) -> int:
    n = 0
    for a, b in zip(u, v):
        if a != b:
            break
        n += 1
    return n


def is_ancestor(u: Path, v: Path) -> bool:
    """u an ancestor of (or equal to) v."""
    return len(u) <= len(v) and v[: len(u)] == u


@dataclass(frozen=True)
class ClopenSet:
    """Union of shadows Sh(v) over an antichain of truncation vertices."""

    cylinders: frozenset[Path]
    reference_depth: int

    @classmethod
    def make(cls, cyls: Iterable[Path], reference_depth: int) -> "ClopenSet":
        cs = set(cyls)
        # normalize: drop any vertex with a strict ancestor present
        keep = {v for v in cs if not any(is_ancestor(u, v) and u != v for u in cs)}
        return cls(frozenset(keep), reference_depth)

    def min_cylinder(self) -> Path:
        return min(sorted(self.cylinders))


def expand_to_depth(a: UnfoldingAutomaton, cyls: Iterable[Path], depth: int) -> frozenset[Path]:
    """Live descendants at exactly `depth` of each (shallower) cylinder."""
    live = live_states(a)
    out: set[Path] = set()

    def walk(path: Path, d: int):
        s = a.state_of(path)
        if s not in live:
            return
        if d == depth:
            out.add(path)
            return
        for i in range(len(a.children[s])):
            walk(path + (i,), d + 1)

    for v in cyls:
        if len(v) > depth:
            raise DepthTooShallowError(f"cylinder {path_str(v)} deeper than {depth}")
        walk(v, len(v))
    return frozenset(out)


def clopen_subset(a: UnfoldingAutomaton, c1: ClopenSet, c2: ClopenSet) -> bool:
    d = max(c1.reference_depth, c2.reference_depth, max((len(v) for v in c1.cylinders | c2.cylinders), default=0))
    return expand_to_depth(a, c1.cylinders, d) <= expand_to_depth(a, c2.cylinders, d)


@dataclass(frozen=True)
class Partition:
    automaton: UnfoldingAutomaton
    depth: int
    blocks: tuple[ClopenSet, ...]
    level: int | None = None

    @classmethod
    def make(cls, a: UnfoldingAutomaton, depth: int, blocks: Iterable[ClopenSet], level: int | None = None) -> "Partition":
        blocks = tuple(sorted(blocks, key=lambda b: b.min_cylinder()))
        seen: set[Path] = set()
        total: set[Path] = set()
        for b in blocks:
            ex = expand_to_depth(a, b.cylinders, depth)
            if ex & seen:
                raise ValueError("partition blocks overlap")
            seen |= ex
            total |= ex
        if total != set(cylinders(a, depth)):
            raise ValueError("partition blocks do not cover the end space")
        return cls(a, depth, blocks, level)

    @classmethod
    def trivial(cls, a: UnfoldingAutomaton, depth: int, level: int | None = 0) -> "Partition":
        return cls.make(a, depth, [ClopenSet.make([()], 0)], level)

    def with_level(self, n: int) -> "Partition":
        return Partition(self.automaton, self.depth, self.blocks, n)

    def block_of(self, cyl: Path) -> int:
        for i, b in enumerate(self.blocks):
            if any(is_ancestor(u, cyl) for u in b.cylinders):
                return i
        raise KeyError(f"cylinder {path_str(cyl)} not covered")


# -- metrics -----------------------------------------------------------------


class EndMetric:
    """Exact metric on depth-D cylinders; BASE is the 2^-prefix ultrametric."""

    def __init__(self, automaton: UnfoldingAutomaton, depth: int, kind: str = "base", table: Mapping[tuple[Path, Path], Fraction] | None = None):
        self.automaton = automaton
        self.depth = depth
        self.kind = kind
        self._table = dict(table) if table is not None else None

    @classmethod
    def base(cls, a: UnfoldingAutomaton, depth: int) -> "EndMetric":
        return cls(a, depth, "base")

    def distance(self, u: Path, v: Path) -> Fraction:
        if u == v:
            return Fraction(0)
        if self.kind == "base":
            return Fraction(1, 2 ** common_prefix_len(u, v))
        key = (u, v) if u <= v else (v, u)
        if self._table is None or key not in self._table:
            raise DepthTooShallowError(f"averaged metric has no value for {path_str(u)},{path_str(v)}")
        return self._table[key]


class FiniteCylinderGroup:
    """Finite group acting by tree-compatible bijections of depth-D cylinders."""

    def __init__(self, automaton: UnfoldingAutomaton, depth: int, elements: Mapping[str, Mapping[Path, Path]]):
        self.automaton = automaton
        self.depth = depth
        self.elements = {name: dict(perm) for name, perm in elements.items()}
        self._validate()

    @classmethod
    def trivial(cls, a: UnfoldingAutomaton, depth: int) -> "FiniteCylinderGroup":
        cyls = cylinders(a, depth)
        return cls(a, depth, {"e": {c: c for c in cyls}})

    def _validate(self):
        cyls = set(cylinders(self.automaton, self.depth))
        perms = list(self.elements.items())
        for name, perm in perms:
            if set(perm) != cyls or set(perm.values()) != cyls:
                raise NotAnActionError(f"element {name} is not a bijection of the depth-{self.depth} cylinders")
            # tree compatibility: same prefix at depth k maps to same prefix
            for k in range(self.depth):
                images: dict[Path, Path] = {}
                for c, d in perm.items():
                    pre, img = c[:k], d[:k]
                    if pre in images and images[pre] != img:
                        raise NotAnActionError(f"element {name} is incompatible with the cylinder tree at depth {k}")
                    images[pre] = img
        # closure under composition (finite closed sets of bijections are groups)
        keyed = {tuple(sorted(p.items())): n for n, p in self.elements.items()}
        for n1, p1 in perms:
            for n2, p2 in perms:
                comp = {c: p2[p1[c]] for c in p1}
                if tuple(sorted(comp.items())) not in keyed:
                    raise NotAnActionError(f"composition {n2}*{n1} escapes the element set")
        if not any(all(p[c] == c for c in p) for p in self.elements.values()):
            raise NotAnActionError("identity element missing")

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.elements))

    def apply(self, name: str, cyl: Path) -> Path:
        return self.elements[name][cyl]

    def apply_to_prefix(self, name: str, v: Path) -> Path:
        """Induced action on shallower vertices (uses tree compatibility)."""
        perm = self.elements[name]
        for c, d in perm.items():
            if is_ancestor(v, c):
                return d[: len(v)]
        raise KeyError(f"{path_str(v)} has no live extension")

    def block_image(self, name: str, block: ClopenSet) -> frozenset[Path]:
        ex = expand_to_depth(self.automaton, block.cylinders, self.depth)
        return frozenset(self.apply(name, c) for c in ex)


def average_metric(d: EndMetric, action: FiniteCylinderGroup) -> EndMetric:
    """Group-average d over the finite action; exact rational arithmetic.

    The result is invariant: d'(hp, hq) = d'(p, q) for every element h, and
    this is asserted pairwise on all cylinders.
    """
    if action.automaton != d.automaton or action.depth != d.depth:
        raise NotAnActionError("action and metric live on different cylinder sets")
    cyls = cylinders(d.automaton, d.depth)
    n = len(action.elements)
    table: dict[tuple[Path, Path], Fraction] = {}
    for i, u in enumerate(cyls):
        for v in cyls[i + 1 :]:
            total = sum((d.distance(action.apply(h, u), action.apply(h, v)) for h in action.names()), Fraction(0))
            table[(u, v)] = total / n
    out = EndMetric(d.automaton, d.depth, "averaged", table)
    for h in action.names():
        for i, u in enumerate(cyls):
            for v in cyls[i + 1 :]:
                assert out.distance(action.apply(h, u), action.apply(h, v)) == out.distance(u, v)
    return out


# -- epsilon partitions -------------------------------------------------------


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            if ry < rx:
                rx, ry = ry, rx
            self.parent[ry] = rx


def epsilon_partition(m: EndMetric, eps: Fraction | int, depth: int, level: int | None = None) -> Partition:
    """Blocks are the eps-path-connected components (strict `< eps` joins)."""
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if m.kind == "averaged" and depth != m.depth:
        raise DepthTooShallowError("averaged metrics evaluate only at their construction depth")
    cyls = cylinders(m.automaton, depth)
    uf = _UnionFind(cyls)
    for i, u in enumerate(cyls):
        for v in cyls[i + 1 :]:
            if m.distance(u, v) < eps:
                uf.union(u, v)
    groups: dict[Path, set[Path]] = {}
    for c in cyls:
        groups.setdefault(uf.find(c), set()).add(c)
    blocks = [ClopenSet.make(g, depth) for g in groups.values()]
    return Partition.make(m.automaton, depth, blocks, level)


def refines(p: Partition, q: Partition) -> bool:
    """Whether every block of p lies inside some block of q."""
    if p.automaton != q.automaton:
        raise ValueError("partitions of different end spaces")
    for b in p.blocks:
        if not any(clopen_subset(p.automaton, b, c) for c in q.blocks):
            return False
    return True


# -- telescopes ----------------------------------------------------------------


Vertex = tuple[int, int]  # (level, block index)


@dataclass(frozen=True)
class TelescopeTree:
    """Mapping telescope of a refining partition sequence."""

    partitions: tuple[Partition, ...]
    edges: tuple[tuple[Vertex, Vertex], ...]  # ((n+1, i), (n, j))

    @property
    def automaton(self) -> UnfoldingAutomaton:
        return self.partitions[0].automaton

    def vertices(self) -> tuple[Vertex, ...]:
        return tuple((n, i) for n, p in enumerate(self.partitions) for i in range(len(p.blocks)))

    def block_of(self, v: Vertex) -> ClopenSet:
        n, i = v
        return self.partitions[n].blocks[i]

    def parent_of(self, v: Vertex) -> Vertex | None:
        for child, parent in self.edges:
            if child == v:
                return parent
        return None

    def check_tree(self):
        vs = self.vertices()
        if len(self.edges) != len(vs) - 1:
            raise AssertionError("telescope is not a tree: wrong edge count")
        for n, p in enumerate(self.partitions):
            if n == 0:
                continue
            for i in range(len(p.blocks)):
                parents = [e[1] for e in self.edges if e[0] == (n, i)]
                if len(parents) != 1 or parents[0][0] != n - 1:
                    raise AssertionError(f"vertex {(n, i)} does not have exactly one parent one level down")


def telescope(seq: Sequence[Partition]) -> TelescopeTree:
    """Tree with an edge (P, n+1) -- (Q, n) whenever P is contained in Q."""
    if not seq:
        raise ValueError("empty partition sequence")
    if len(seq[0].blocks) != 1:
        raise NotRefiningError("sequence must start with the trivial partition")
    parts = tuple(p.with_level(n) for n, p in enumerate(seq))
    edges: list[tuple[Vertex, Vertex]] = []
    for n in range(1, len(parts)):
        fine, coarse = parts[n], parts[n - 1]
        if not refines(fine, coarse):
            raise NotRefiningError(f"partition {n} does not refine partition {n - 1}")
        for i, b in enumerate(fine.blocks):
            js = [j for j, c in enumerate(coarse.blocks) if clopen_subset(fine.automaton, b, c)]
            if len(js) != 1:
                raise NotRefiningError(f"block {i} of level {n} has {len(js)} parents")
            edges.append(((n, i), (n - 1, js[0])))
    t = TelescopeTree(parts, tuple(edges))
    t.check_tree()
    return t


@dataclass(frozen=True)
class BoundaryCorrespondence:
    """Level-wise bijection between telescope vertices and partition blocks.

    A branch (P_n) of the telescope corresponds to the end in the nested
    intersection of its blocks.
    """

    tree: TelescopeTree

    def block_of(self, v: Vertex) -> ClopenSet:
        return self.tree.block_of(v)

    def vertex_of(self, level: int, cyl: Path) -> Vertex:
        p = self.tree.partitions[level]
        return (level, p.block_of(cyl))

    def check_bijective(self):
        for n, p in enumerate(self.tree.partitions):
            seen = {self.vertex_of(n, c) for c in cylinders(p.automaton, p.depth)}
            if seen != {(n, i) for i in range(len(p.blocks))}:
                raise AssertionError(f"level {n} correspondence is not onto")

    def check_equivariant(self, action: FiniteCylinderGroup, tele_action: "TelescopeAction"):
        for h in action.names():
            for n, p in enumerate(self.tree.partitions):
                for c in cylinders(p.automaton, p.depth):
                    lhs = tele_action.apply(h, self.vertex_of(n, c))
                    rhs = self.vertex_of(n, action.apply(h, c))
                    if lhs != rhs:
                        raise AssertionError(f"boundary correspondence not equivariant at {h}, level {n}")


def boundary_map(t: TelescopeTree) -> BoundaryCorrespondence:
    bc = BoundaryCorrespondence(t)
    bc.check_bijective()
    return bc


@dataclass(frozen=True)
class TelescopeAction:
    tree: TelescopeTree
    vertex_maps: Mapping[str, Mapping[Vertex, Vertex]]

    def apply(self, name: str, v: Vertex) -> Vertex:
        return self.vertex_maps[name][v]

    def names(self):
        return tuple(sorted(self.vertex_maps))


def induced_telescope_action(t: TelescopeTree, action: FiniteCylinderGroup) -> TelescopeAction:
    """Permute level-n vertices by permuting blocks; verified simplicial."""
    a = t.automaton
    maps: dict[str, dict[Vertex, Vertex]] = {}
    for h in action.names():
        vmap: dict[Vertex, Vertex] = {}
        for n, p in enumerate(t.partitions):
            ex_blocks = [expand_to_depth(a, b.cylinders, action.depth) for b in p.blocks]
            for i, b in enumerate(p.blocks):
                img = action.block_image(h, b)
                js = [j for j, e in enumerate(ex_blocks) if e == img]
                if not js:
                    raise NotInvariantError(f"element {h} does not preserve partition level {n}")
                vmap[(n, i)] = (n, js[0])
        maps[h] = vmap
    out = TelescopeAction(t, maps)
    # simplicial check: levels preserved by construction, edges must map to edges
    edge_set = set(t.edges)
    for h, vmap in maps.items():
        for child, parent in t.edges:
            if (vmap[child], vmap[parent]) not in edge_set:
                raise AssertionError(f"element {h} does not act simplicially")
    return out


# -- file format / DOT ----------------------------------------------------------


def parse_partition_file(a: UnfoldingAutomaton, depth: int, text: str) -> Partition:
    """`block <name>: <path>,<path>,...` with slash-separated child indices."""
    from .graph_model import parse_path

    blocks = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if not line.startswith("block"):
            raise ValueError(f"bad partition line {line!r}")
        _, rest = line.split(None, 1)
        _, paths = rest.split(":", 1)
        cyls = [parse_path(p) for p in paths.split(",") if p.strip()]
        blocks.append(ClopenSet.make(cyls, depth))
    return Partition.make(a, depth, blocks)


def format_partition(p: Partition) -> str:
    lines = []
    for i, b in enumerate(p.blocks):
        paths = ",".join(path_str(c) for c in sorted(b.cylinders))
        lines.append(f"block b{i}: {paths}")
    return "\n".join(lines) + "\n"


def telescope_to_dot(t: TelescopeTree) -> str:
    lines = ["graph telescope {"]
    for n, p in enumerate(t.partitions):
        for i, b in enumerate(p.blocks):
            label = "|".join(path_str(c) for c in sorted(b.cylinders))
            lines.append(f'  "v{n}_{i}" [label="{n}:{label}"];')
    for (n1, i1), (n0, i0) in t.edges:
        lines.append(f'  "v{n1}_{i1}" -- "v{n0}_{i0}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
