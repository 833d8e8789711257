"""Stallings graphs and free factor system arithmetic.

Subgroups of a free group are carried around as folded labeled graphs:
directed edges labeled by ambient generators, with based graphs describing
subgroups and basepoint-free core graphs describing conjugacy classes.
Free factor systems are finite lists of such core graphs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import words as W
from .words import Word


class NotAnAutomorphismError(ValueError):
    pass


Edge = tuple[int, str, int]  # (origin, label, terminus)


@dataclass(frozen=True)
class LabeledGraph:
    vertices: frozenset[int]
    edges: frozenset[Edge]
    basepoint: int | None = None

    @classmethod
    def make(cls, vertices: Iterable[int], edges: Iterable[Edge], basepoint: int | None = None) -> "LabeledGraph":
        vs = set(vertices)
        es = set(edges)
        for u, _, v in es:
            vs.add(u)
            vs.add(v)
        if basepoint is not None:
            vs.add(basepoint)
        return cls(frozenset(vs), frozenset(es), basepoint)

    @classmethod
    def empty(cls) -> "LabeledGraph":
        return cls(frozenset(), frozenset(), None)

    @classmethod
    def rose(cls, labels: Iterable[str], basepoint: int = 0) -> "LabeledGraph":
        return cls.make([basepoint], [(basepoint, lab, basepoint) for lab in labels], basepoint)

    @classmethod
    def from_words(cls, ws: Iterable[Sequence[tuple[str, int]]]) -> "LabeledGraph":
        """Wedge of subdivided loops spelling the given words, based at 0."""
        edges: list[Edge] = []
        nxt = 1
        for w in ws:
            w = W.reduce_word(w)
            if not w:
                continue
            prev = 0
            for i, (g, s) in enumerate(w):
                cur = 0 if i == len(w) - 1 else nxt
                if cur != 0:
                    nxt += 1
                if s > 0:
                    edges.append((prev, g, cur))
                else:
                    edges.append((cur, g, prev))
                prev = cur
        return cls.make([0], edges, 0)

    # -- basic structure ------------------------------------------------

    def is_empty(self) -> bool:
        return not self.vertices

    def out_edges(self, v: int):
        return [e for e in self.edges if e[0] == v]

    def in_edges(self, v: int):
        return [e for e in self.edges if e[2] == v]

    def degree(self, v: int) -> int:
        d = 0
        for u, _, w in self.edges:
            if u == v:
                d += 1
            if w == v:
                d += 1
        return d

    def labels(self) -> frozenset[str]:
        return frozenset(l for _, l, _ in self.edges)

    def betti(self) -> int:
        return len(self.edges) - len(self.vertices) + len(self.component_vertex_sets())

    def rank(self) -> int:
        """First Betti number of a connected graph."""
        if not self.vertices:
            return 0
        return len(self.edges) - len(self.vertices) + 1

    def component_vertex_sets(self) -> list[frozenset[int]]:
        adj: dict[int, set[int]] = {v: set() for v in self.vertices}
        for u, _, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        seen: set[int] = set()
        comps = []
        for v in sorted(self.vertices):
            if v in seen:
                continue
            stack, comp = [v], set()
            while stack:
                x = stack.pop()
                if x in comp:
                    continue
                comp.add(x)
                stack.extend(adj[x] - comp)
            seen |= comp
            comps.append(frozenset(comp))
        return comps

    def components(self) -> list["LabeledGraph"]:
        out = []
        for comp in self.component_vertex_sets():
            es = frozenset(e for e in self.edges if e[0] in comp)
            bp = self.basepoint if self.basepoint in comp else None
            out.append(LabeledGraph(comp, es, bp))
        return out

    def is_folded(self) -> bool:
        seen_out: set[tuple[int, str]] = set()
        seen_in: set[tuple[int, str]] = set()
        for u, l, v in self.edges:
            if (u, l) in seen_out or (v, l) in seen_in:
                return False
            seen_out.add((u, l))
            seen_in.add((v, l))
        return True

    # -- folding ---------------------------------------------------------

    def fold(self) -> "LabeledGraph":
        """Identify same-label edges at shared endpoints until folded.

        The result is independent of the fold order (confluence).
        """
        parent = {v: v for v in self.vertices}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                if rb < ra:
                    ra, rb = rb, ra
                parent[rb] = ra

        edges = set(self.edges)
        changed = True
        while changed:
            changed = False
            collapsed = {(find(u), l, find(v)) for u, l, v in edges}
            out_map: dict[tuple[int, str], int] = {}
            in_map: dict[tuple[int, str], int] = {}
            for u, l, v in sorted(collapsed):
                if (u, l) in out_map and out_map[(u, l)] != v:
                    union(out_map[(u, l)], v)
                    changed = True
                    break
                out_map[(u, l)] = v
                if (l, v) in in_map and in_map[(l, v)] != u:
                    union(in_map[(l, v)], u)
                    changed = True
                    break
                in_map[(l, v)] = u
            edges = collapsed
        vs = frozenset(find(v) for v in self.vertices)
        es = frozenset((find(u), l, find(v)) for u, l, v in edges)
        bp = find(self.basepoint) if self.basepoint is not None else None
        return LabeledGraph(vs, es, bp)

    def core(self) -> "LabeledGraph":
        """Iteratively delete valence-1 (and isolated) vertices.

        The basepoint, when present, is kept; a tree collapses to the empty
        marker (or to the bare basepoint for based graphs).
        """
        vs = set(self.vertices)
        es = set(self.edges)
        while True:
            deg: dict[int, int] = {v: 0 for v in vs}
            for u, _, v in es:
                deg[u] += 1
                deg[v] += 1
            prune = {v for v in vs if deg[v] <= 1 and v != self.basepoint}
            if not prune:
                break
            vs -= prune
            es = {e for e in es if e[0] not in prune and e[2] not in prune}
        if not es and self.basepoint is None:
            return LabeledGraph.empty()
        if not es and self.basepoint is not None:
            return LabeledGraph(frozenset([self.basepoint]), frozenset(), self.basepoint)
        return LabeledGraph(frozenset(vs), frozenset(es), self.basepoint)

    # -- canonical form ---------------------------------------------------

    def _encode_from(self, start: int) -> tuple | None:
        """BFS encoding from a start vertex; deterministic on folded graphs."""
        order = {start: 0}
        queue = [start]
        rows = []
        while queue:
            v = queue.pop(0)
            row = []
            for lab in sorted({l for _, l, _ in self.edges}):
                nxt_out = [t for (u, l, t) in self.edges if u == v and l == lab]
                nxt_in = [u for (u, l, t) in self.edges if t == v and l == lab]
                for direction, targets in (("+", nxt_out), ("-", nxt_in)):
                    if not targets:
                        row.append((lab, direction, -1))
                        continue
                    t = targets[0]
                    if t not in order:
                        order[t] = len(order)
                        queue.append(t)
                    row.append((lab, direction, order[t]))
            rows.append(tuple(row))
        if len(order) != len(self.vertices):
            return None  # disconnected
        return tuple(rows)

    def canonical_key(self) -> tuple:
        """Canonical encoding of a connected folded graph.

        Based graphs are encoded from the basepoint; otherwise the least
        encoding over all start vertices is taken.  Equal keys mean equal
        subgroups (based) or conjugate subgroups (basepoint-free).
        """
        if not self.vertices:
            return ()
        if self.basepoint is not None:
            enc = self._encode_from(self.basepoint)
            if enc is None:
                raise ValueError("canonical_key requires a connected graph")
            return enc
        encs = [self._encode_from(v) for v in sorted(self.vertices)]
        encs = [e for e in encs if e is not None]
        if not encs:
            raise ValueError("canonical_key requires a connected graph")
        return min(encs)

    # -- paths and membership ----------------------------------------------

    def step(self, v: int, gen: str, sign: int) -> int | None:
        if sign > 0:
            for u, l, t in self.edges:
                if u == v and l == gen:
                    return t
        else:
            for u, l, t in self.edges:
                if t == v and l == gen:
                    return u
        return None

    def trace(self, word: Sequence[tuple[str, int]], start: int) -> int | None:
        v = start
        for g, s in word:
            v = self.step(v, g, s)
            if v is None:
                return None
        return v

    def reads(self, word: Sequence[tuple[str, int]]) -> bool:
        """Membership of a word in the subgroup of a based folded graph."""
        if self.basepoint is None:
            raise ValueError("reads() needs a basepoint")
        return self.trace(W.reduce_word(word), self.basepoint) == self.basepoint

    def spanning_tree(self, base: int) -> dict[int, tuple[int, str, int, int]]:
        """BFS tree as {vertex: (parent, label, sign, depth)}; base maps to itself."""
        tree: dict[int, tuple[int, str, int, int]] = {base: (base, "", 0, 0)}
        queue = [base]
        while queue:
            v = queue.pop(0)
            nbrs = []
            for u, l, t in sorted(self.edges):
                if u == v:
                    nbrs.append((t, l, 1))
                if t == v:
                    nbrs.append((u, l, -1))
            for t, l, s in nbrs:
                if t not in tree:
                    tree[t] = (v, l, s, tree[v][3] + 1)
                    queue.append(t)
        return tree

    def tree_path_word(self, tree, src: int, dst: int) -> Word:
        """Word read along the spanning-tree path from src to dst."""

        def to_base(x):
            out = []
            while tree[x][0] != x:
                p, l, s, _ = tree[x]
                out.append((l, -s))
                x = p
            return out  # word from x up to base

        up = to_base(src)
        down = to_base(dst)
        return W.reduce_word(up + [(g, -s) for g, s in reversed(down)])

    def petals(self, base: int):
        """Non-tree edges with their ambient petal words.

        Returns (tree, [(edge, name, ambient_word), ...]) with deterministic
        petal names p0, p1, ...
        """
        tree = self.spanning_tree(base)
        tree_edges = set()
        for v, (p, l, s, _) in tree.items():
            if p == v:
                continue
            tree_edges.add((p, l, v) if s > 0 else (v, l, p))
        out = []
        for e in sorted(self.edges - frozenset(tree_edges)):
            u, l, v = e
            word = W.mul(self.tree_path_word(tree, base, u), ((l, 1),), self.tree_path_word(tree, v, base))
            out.append((e, f"p{len(out)}", word))
        return tree, out

    def rewrite_in_petals(self, base: int, word: Sequence[tuple[str, int]]) -> Word | None:
        """Express a subgroup word in the petal basis at `base`.

        Returns None when the word does not read as a loop at `base`.
        """
        tree, petals = self.petals(base)
        petal_of = {}
        for e, name, _ in petals:
            petal_of[e] = name
        v = base
        out: list[tuple[str, int]] = []
        for g, s in W.reduce_word(word):
            if s > 0:
                nxt = self.step(v, g, 1)
                if nxt is None:
                    return None
                e = (v, g, nxt)
                if e in petal_of:
                    out.append((petal_of[e], 1))
                v = nxt
            else:
                nxt = self.step(v, g, -1)
                if nxt is None:
                    return None
                e = (nxt, g, v)
                if e in petal_of:
                    out.append((petal_of[e], -1))
                v = nxt
        if v != base:
            return None
        return W.reduce_word(out)

    # -- morphisms ----------------------------------------------------------

    def immersions_into(self, other: "LabeledGraph"):
        """All label-preserving morphisms into a folded target.

        Folded targets make propagation deterministic, so a morphism is
        determined by the image of one vertex.  Yields {vertex: image} maps.
        """
        if self.is_empty():
            yield {}
            return
        v0 = min(self.vertices)
        for w0 in sorted(other.vertices):
            fmap = {v0: w0}
            queue = [v0]
            ok = True
            while queue and ok:
                v = queue.pop(0)
                for u, l, t in sorted(self.edges):
                    pairs = []
                    if u == v:
                        pairs.append((t, l, 1))
                    if t == v:
                        pairs.append((u, l, -1))
                    for nbr, lab, sgn in pairs:
                        img = other.step(fmap[v], lab, sgn)
                        if img is None:
                            ok = False
                            break
                        if nbr in fmap:
                            if fmap[nbr] != img:
                                ok = False
                                break
                        else:
                            fmap[nbr] = img
                            queue.append(nbr)
                    if not ok:
                        break
            if ok and len(fmap) == len(self.vertices):
                # every edge must be consistent, re-check globally
                if all(other.step(fmap[u], l, 1) == fmap[t] for u, l, t in self.edges):
                    yield dict(fmap)

    def immerses_into(self, other: "LabeledGraph") -> bool:
        for _ in self.immersions_into(other):
            return True
        return False


def fold(g: LabeledGraph) -> LabeledGraph:
    return g.fold()


def core_of(g: LabeledGraph) -> LabeledGraph:
    return g.core()


def pullback(g1: LabeledGraph, g2: LabeledGraph) -> LabeledGraph:
    """Fiber product over the rose; folded when both inputs are folded.

    Only vertex pairs incident to an edge are kept (isolated pairs are
    contractible anyway).
    """
    pair_id: dict[tuple[int, int], int] = {}

    def pid(p):
        if p not in pair_id:
            pair_id[p] = len(pair_id)
        return pair_id[p]

    edges = []
    by_label1: dict[str, list[Edge]] = {}
    for e in sorted(g1.edges):
        by_label1.setdefault(e[1], []).append(e)
    for u2, l, v2 in sorted(g2.edges):
        for u1, _, v1 in by_label1.get(l, []):
            edges.append((pid((u1, u2)), l, pid((v1, v2))))
    bp = None
    if g1.basepoint is not None and g2.basepoint is not None:
        bp = pid((g1.basepoint, g2.basepoint))
    return LabeledGraph.make(pair_id.values(), edges, bp)


def subgroup_graph(generators: Iterable[Word]) -> LabeledGraph:
    """Based folded core graph (Stallings graph) of the generated subgroup."""
    return LabeledGraph.from_words(generators).fold().core()


# -- free factor systems ----------------------------------------------------


@dataclass(frozen=True)
class FreeFactorSystem:
    """Conjugacy classes of free factors as canonical basepoint-free cores."""

    components: tuple[LabeledGraph, ...]

    @classmethod
    def from_graphs(cls, graphs: Iterable[LabeledGraph]) -> "FreeFactorSystem":
        comps = []
        for g in graphs:
            g = g.fold()
            g = LabeledGraph(g.vertices, g.edges, None).core()
            if g.is_empty():
                continue
            for c in g.components():
                comps.append(c)
        comps.sort(key=lambda c: c.canonical_key())
        return cls(tuple(comps))

    @classmethod
    def from_generator_lists(cls, lists: Iterable[Iterable[Word]]) -> "FreeFactorSystem":
        return cls.from_graphs(LabeledGraph.from_words(ws) for ws in lists)

    @classmethod
    def empty(cls) -> "FreeFactorSystem":
        return cls(())

    def ranks(self) -> tuple[int, ...]:
        return tuple(c.rank() for c in self.components)

    def keys(self) -> tuple[tuple, ...]:
        return tuple(c.canonical_key() for c in self.components)

    def __eq__(self, other) -> bool:
        return isinstance(other, FreeFactorSystem) and self.keys() == other.keys()

    def __hash__(self):
        return hash(self.keys())

    def is_empty(self) -> bool:
        return not self.components


def intersect_ffs(f1: FreeFactorSystem, f2: FreeFactorSystem) -> FreeFactorSystem:
    """Pairwise pullbacks with contractible components discarded."""
    pieces = []
    for c1 in f1.components:
        for c2 in f2.components:
            pieces.append(pullback(c1, c2))
    return FreeFactorSystem.from_graphs(pieces)


def contained_in(f: FreeFactorSystem, fprime: FreeFactorSystem) -> bool:
    """Whether each component conjugates into some component of fprime."""
    for c in f.components:
        if not any(c.immerses_into(d) for d in fprime.components):
            return False
    return True


# -- automorphisms ------------------------------------------------------------


@dataclass(frozen=True)
class FreeGroupAutomorphism:
    basis: tuple[str, ...]
    images: dict[str, Word] = field(compare=False)

    @classmethod
    def from_images(cls, basis: Sequence[str], images: dict[str, Word]) -> "FreeGroupAutomorphism":
        imgs = {x: W.reduce_word(images.get(x, W.gen(x))) for x in basis}
        return cls(tuple(basis), imgs)

    @classmethod
    def identity(cls, basis: Sequence[str]) -> "FreeGroupAutomorphism":
        return cls(tuple(basis), {x: W.gen(x) for x in basis})

    @classmethod
    def inner(cls, basis: Sequence[str], w: Word) -> "FreeGroupAutomorphism":
        return cls(tuple(basis), {x: W.conjugate(W.gen(x), w) for x in basis})

    def __call__(self, word: Sequence[tuple[str, int]]) -> Word:
        out: list[tuple[str, int]] = []
        for g, s in word:
            img = self.images[g]
            out.extend(img if s > 0 else W.inv(img))
        return W.reduce_word(out)

    def compose(self, other: "FreeGroupAutomorphism") -> "FreeGroupAutomorphism":
        """self after other (self ∘ other)."""
        return FreeGroupAutomorphism(self.basis, {x: self(other.images[x]) for x in self.basis})

    def tuple_images(self) -> tuple[Word, ...]:
        return tuple(self.images[x] for x in self.basis)

    def is_identity(self) -> bool:
        return all(self.images[x] == W.gen(x) for x in self.basis)

    def is_automorphism(self) -> bool:
        """Surjectivity check: the images generate the whole group."""
        if not self.basis:
            return True
        g = subgroup_graph(self.tuple_images())
        return g.canonical_key() == LabeledGraph.rose(sorted(self.basis)).canonical_key()

    def inverse(self) -> "FreeGroupAutomorphism":
        """Invert by Nielsen reduction with Whitehead moves at plateaus."""
        inv_images = _invert_tuple(self.basis, self.tuple_images())
        cand = FreeGroupAutomorphism(self.basis, dict(zip(self.basis, inv_images)))
        check = self.compose(cand)
        if not check.is_identity():
            raise NotAnAutomorphismError(f"inversion failed for {self.images}")
        return cand


def _elementary_right_multiply(basis, i, j, side, sign):
    """Automorphism x_i -> x_i x_j^sign (side='R') or x_j^sign x_i (side='L')."""
    imgs = {x: W.gen(x) for x in basis}
    xi, xj = basis[i], basis[j]
    if side == "R":
        imgs[xi] = W.mul(W.gen(xi), W.gen(xj, sign))
    else:
        imgs[xi] = W.mul(W.gen(xj, sign), W.gen(xi))
    return FreeGroupAutomorphism(tuple(basis), imgs)


def _whitehead_moves(basis):
    """Type-II Whitehead automorphisms for a small basis."""
    n = len(basis)
    for a_idx in range(n):
        for a_sign in (1, -1):
            a = (basis[a_idx], a_sign)
            others = [x for x in basis if x != basis[a_idx]]
            for choice in itertools.product(range(4), repeat=len(others)):
                if all(c == 0 for c in choice):
                    continue
                imgs = {basis[a_idx]: W.gen(*a)}
                aw = (a,)
                for x, c in zip(others, choice):
                    if c == 0:
                        imgs[x] = W.gen(x)
                    elif c == 1:
                        imgs[x] = W.mul(W.gen(x), aw)
                    elif c == 2:
                        imgs[x] = W.mul(W.inv(aw), W.gen(x))
                    else:
                        imgs[x] = W.mul(W.inv(aw), W.gen(x), aw)
                yield FreeGroupAutomorphism(tuple(basis), imgs)


def _invert_tuple(basis: Sequence[str], images: Sequence[Word]) -> tuple[Word, ...]:
    """Carry (images) to a signed permutation of the basis by elementary moves.

    Tracks pre-moves nu and post-moves alpha so that
    alpha_total ∘ phi ∘ nu_total = pi, whence phi^-1 = nu_total ∘ pi^-1 ∘ alpha_total.
    """
    basis = tuple(basis)
    n = len(basis)
    t = [W.reduce_word(w) for w in images]
    nu_total = FreeGroupAutomorphism.identity(basis)
    alpha_total = FreeGroupAutomorphism.identity(basis)

    def total_len():
        return sum(len(w) for w in t)

    if any(not w for w in t):
        raise NotAnAutomorphismError("image of a generator is trivial")

    while total_len() > n:
        best = None
        # Nielsen pair moves
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for side, sign in (("R", 1), ("R", -1), ("L", 1), ("L", -1)):
                    if side == "R":
                        cand = W.mul(t[i], t[j] if sign > 0 else W.inv(t[j]))
                    else:
                        cand = W.mul(t[j] if sign > 0 else W.inv(t[j]), t[i])
                    if len(cand) < len(t[i]):
                        best = ("pair", i, j, side, sign, cand)
                        break
                if best:
                    break
            if best:
                break
        if best and best[0] == "pair":
            _, i, j, side, sign, cand = best
            if not cand:
                raise NotAnAutomorphismError("tuple degenerated, not a basis")
            t[i] = cand
            nu_total = nu_total.compose(_elementary_right_multiply(basis, i, j, side, sign))
            continue
        # plateau: look for a strictly reducing Whitehead move applied to all coords
        found = False
        for alpha in _whitehead_moves(basis):
            new_t = [alpha(w) for w in t]
            if sum(len(w) for w in new_t) < total_len():
                t = new_t
                alpha_total = alpha.compose(alpha_total)
                found = True
                break
        if not found:
            raise NotAnAutomorphismError("tuple is not a basis (no reducing move)")

    # t must now be a signed permutation of the basis
    seen = {}
    for i, w in enumerate(t):
        if len(w) != 1:
            raise NotAnAutomorphismError("reduced tuple is not a signed permutation")
        g, s = w[0]
        if g in seen:
            raise NotAnAutomorphismError("repeated generator in reduced tuple")
        seen[g] = (i, s)
    if set(seen) != set(basis):
        raise NotAnAutomorphismError("reduced tuple misses generators")
    # pi: x_i -> t_i ; build pi^-1 directly
    pi_inv_images = {}
    for g, (i, s) in seen.items():
        pi_inv_images[g] = W.gen(basis[i], s)
    pi_inv = FreeGroupAutomorphism(basis, pi_inv_images)
    inv = nu_total.compose(pi_inv).compose(alpha_total)
    return inv.tuple_images()


def is_inner(rho: FreeGroupAutomorphism) -> Word | None:
    """Witness w with rho(x) = w x w^-1 for all basis x, or None.

    The candidate conjugators form a coset u<x1>; the exponent is bounded
    because excess x1-powers only lengthen the other images.
    """
    basis = rho.basis
    if not basis:
        return W.EMPTY
    if len(basis) == 1:
        x = basis[0]
        return W.EMPTY if rho.images[x] == W.gen(x) else None
    x1 = basis[0]
    u = W.conjugator(rho.images[x1], W.gen(x1))
    if u is None:
        return None
    maxlen = max(len(rho.images[x]) for x in basis)
    bound = len(u) + maxlen + 2
    for k in range(-bound, bound + 1):
        w = W.mul(u, W.power(W.gen(x1), k))
        if all(rho.images[x] == W.conjugate(W.gen(x), w) for x in basis):
            return w
    return None


def outer_equal(phi: FreeGroupAutomorphism, psi: FreeGroupAutomorphism) -> bool:
    """Whether phi and psi agree in Out, i.e. is_inner(phi ∘ psi^-1).

    Solved directly as "exists w with phi(x) = w psi(x) w^-1 for all x",
    which avoids materializing psi^-1.
    """
    basis = phi.basis
    if set(basis) != set(psi.basis):
        raise ValueError("automorphisms over different bases")
    if not basis:
        return True
    if len(basis) == 1:
        return phi.images[basis[0]] == psi.images[basis[0]]
    x1 = basis[0]
    u = W.conjugator(phi.images[x1], psi.images[x1])
    if u is None:
        return False
    # solution coset u * C(psi(x1)); psi(x1) may be a proper power in theory,
    # but as an automorphism image it is not, so C = <psi(x1)>.
    c1, p = W.cyclic_reduce(psi.images[x1])
    root, _ = W.root_of(c1)
    gen_c = W.conjugate(root, p)
    maxlen = max(max(len(phi.images[x]), len(psi.images[x])) for x in basis)
    bound = len(u) + maxlen + 2
    for k in range(-bound, bound + 1):
        w = W.mul(u, W.power(gen_c, k))
        if all(phi.images[x] == W.mul(w, psi.images[x], W.inv(w)) for x in basis):
            return True
    return False


def apply_automorphism(phi: FreeGroupAutomorphism, f: FreeFactorSystem) -> FreeFactorSystem:
    """Pushforward of a free factor system: map generators, refold, re-core."""
    if not phi.is_automorphism():
        raise NotAnAutomorphismError(f"{phi.images} is not an automorphism")
    pieces = []
    for comp in f.components:
        base = min(comp.vertices)
        _, petals = comp.petals(base)
        imgs = [phi(word) for _, _, word in petals]
        pieces.append(LabeledGraph.from_words(imgs))
    return FreeFactorSystem.from_graphs(pieces)


def restriction_outer(comp: LabeledGraph, phi: FreeGroupAutomorphism) -> FreeGroupAutomorphism:
    """Outer action induced by phi on an invariant component.

    Requires phi to carry the component's conjugacy class to itself; the
    result is an automorphism of the free group on the component's petal
    basis p0, p1, ..., well defined up to inner.
    """
    base = min(comp.vertices)
    _, petals = comp.petals(base)
    gens = [word for _, _, word in petals]
    imgs = [phi(wd) for wd in gens]
    k = subgroup_graph(imgs)
    c0 = LabeledGraph(k.vertices, k.edges, None).core()
    # tail from basepoint into the core copy
    v = k.basepoint
    u: list[tuple[str, int]] = []
    visited = {v}
    while v not in c0.vertices:
        nbrs = []
        for a, l, b in sorted(k.edges):
            if a == v and b not in visited:
                nbrs.append((b, l, 1))
            if b == v and a not in visited:
                nbrs.append((a, l, -1))
        if not nbrs:
            raise ValueError("component image does not contain a core")
        nxt, lab, sgn = nbrs[0]
        u.append((lab, sgn))
        visited.add(nxt)
        v = nxt
    uw = tuple(u)
    # identify the copy with comp
    iso = None
    for m in c0.immersions_into(comp):
        if len(set(m.values())) == len(comp.vertices):
            iso = m
            break
    if iso is None:
        raise ValueError("invariance failed: image core is not the component")
    entry = iso[v]
    tree = comp.spanning_tree(base)
    q = comp.tree_path_word(tree, base, entry)
    out_images = {}
    for (_, name, _), img in zip(petals, imgs):
        h = W.mul(W.inv(uw), img, uw)  # loop at v in the copy, same ambient word at `entry`
        loop_at_base = W.mul(q, h, W.inv(q))
        rewritten = comp.rewrite_in_petals(base, loop_at_base)
        if rewritten is None:
            raise ValueError("restriction does not read in the component")
        out_images[name] = rewritten
    basis = tuple(name for _, name, _ in petals)
    return FreeGroupAutomorphism(basis, out_images)


# -- file formats ---------------------------------------------------------------


def parse_subgroup_file(text: str) -> list[Word]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(W.word_from_str(line))
    return out


def parse_ffs_file(text: str) -> FreeFactorSystem:
    """Components separated by `---` lines, one generator word per line."""
    chunks: list[list[Word]] = [[]]
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("---"):
            chunks.append([])
            continue
        chunks[-1].append(W.word_from_str(line))
    return FreeFactorSystem.from_generator_lists([c for c in chunks if c])


def format_ffs(f: FreeFactorSystem) -> str:
    parts = []
    for comp in f.components:
        base = min(comp.vertices)
        _, petals = comp.petals(base)
        parts.append("\n".join(W.word_to_str(word) for _, _, word in petals))
    return "\n---\n".join(parts) + ("\n" if parts else "")
