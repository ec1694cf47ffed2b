"""Knowledge-graph data model, TSV I/O, seeds, and synthetic pairs.

A graph file is UTF-8 TSV, one triple per line::

    head \\t predicate \\t object \\t kind

with kind ``R`` (relationship: object is an entity) or ``A`` (attribute:
object is a literal).  Tabs, newlines, and backslashes inside fields are
escaped as ``\\t`` / ``\\n`` / ``\\\\``.  Seed files are ``entityA \\t
entityB`` lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OUT = "out"
IN = "in"

REL = "R"
ATTR = "A"

MAX_LITERAL_LEN = 64  # code points; bounds the char-GRU unroll


class ParseError(ValueError):
    pass


class InternTable:
    """String -> dense id, ids assigned in first-appearance order."""

    def __init__(self) -> None:
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, name: str) -> int:
        i = self._ids.get(name)
        if i is None:
            i = len(self._names)
            self._ids[name] = i
            self._names.append(name)
        return i

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, i: int) -> str:
        return self._names[i]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> list[str]:
        return self._names


class KnowledgeGraph:
    """One side of an alignment pair.

    Immutable once built: use :func:`build_graph` / :func:`parse_triples`.
    `adjacency[v]` lists (neighbor, predicate, direction) with one OUT
    entry at the head and one IN entry at the tail of every relationship
    triple.
    """

    def __init__(self, gid: str):
        self.id = gid
        self.entities = InternTable()
        self.predicates = InternTable()
        self.rel_triples: list[tuple[int, int, int]] = []
        self.attr_triples: list[tuple[int, int, str]] = []
        self._order: list[tuple[str, int]] = []  # unified (kind, index) load order
        self._seen: set[tuple] = set()
        self.adjacency: list[list[tuple[int, int, str]]] = []

    def _add(self, kind: str, head: str, pred: str, obj: str) -> None:
        h = self.entities.intern(head)
        p = self.predicates.intern(pred)
        if kind == REL:
            t = self.entities.intern(obj)
            key = (REL, h, p, t)
            if key in self._seen:
                return
            self._seen.add(key)
            self._order.append((REL, len(self.rel_triples)))
            self.rel_triples.append((h, p, t))
        else:
            lit = obj[:MAX_LITERAL_LEN]
            key = (ATTR, h, p, lit)
            if key in self._seen:
                return
            self._seen.add(key)
            self._order.append((ATTR, len(self.attr_triples)))
            self.attr_triples.append((h, p, lit))

    def _finalize(self) -> None:
        adj: list[list[tuple[int, int, str]]] = [[] for _ in range(len(self.entities))]
        for h, p, t in self.rel_triples:
            adj[h].append((t, p, OUT))
            adj[t].append((h, p, IN))
        self.adjacency = adj
        attrs: list[list[tuple[int, str]]] = [[] for _ in range(len(self.entities))]
        for h, p, lit in self.attr_triples:
            attrs[h].append((p, lit))
        self.attrs_of = attrs
        del self._seen

    def n_entities(self) -> int:
        return len(self.entities)

    def attr_triples_of(self, v: int) -> list[tuple[int, str]]:
        return list(self.attrs_of[v])


def build_graph(gid, records, preseed_entities=None) -> KnowledgeGraph:
    """records: iterable of (kind, head, predicate, object) string tuples."""
    kg = KnowledgeGraph(gid)
    if preseed_entities:
        for name in preseed_entities:
            kg.entities.intern(name)
    for kind, head, pred, obj in records:
        if kind not in (REL, ATTR):
            raise ParseError(f"unknown triple kind {kind!r}")
        kg._add(kind, head, pred, obj)
    kg._finalize()
    return kg


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(s: str) -> str:
    if "\\" not in s:
        return s
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "n":
                out.append("\n")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(c)
        i += 1
    return "".join(out)


def parse_triples(path, gid: str = "A") -> KnowledgeGraph:
    """Load a triple TSV file; see module docstring for the format."""

    def records():
        with open(path, encoding="utf-8", newline="\n") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 4:
                    raise ParseError(
                        f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}"
                    )
                head, pred, obj, kind = (_unescape(f) for f in fields)
                if kind not in (REL, ATTR):
                    raise ParseError(f"line {lineno}: unknown triple kind {kind!r}")
                yield kind, head, pred, obj

    return build_graph(gid, records())


def serialize_triples(kg: KnowledgeGraph, path) -> None:
    """Write the graph back to TSV in original load order (round-trips)."""
    ent = kg.entities.name
    prd = kg.predicates.name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for kind, idx in kg._order:
            if kind == REL:
                h, p, t = kg.rel_triples[idx]
                fields = (ent(h), prd(p), ent(t), REL)
            else:
                h, p, lit = kg.attr_triples[idx]
                fields = (ent(h), prd(p), lit, ATTR)
            fh.write("\t".join(_escape(f) for f in fields) + "\n")


# -- seed alignment -------------------------------------------------------------


@dataclass
class SeedAlignment:
    """Cross-graph entity pairs with a train/test split."""

    pairs: list[tuple[int, int]]
    train_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def train_pairs(self) -> list[tuple[int, int]]:
        return [p for p, m in zip(self.pairs, self.train_mask) if m]

    def test_pairs(self) -> list[tuple[int, int]]:
        return [p for p, m in zip(self.pairs, self.train_mask) if not m]

    @staticmethod
    def split(pairs: list[tuple[int, int]], train_fraction: float, rng_seed: int) -> "SeedAlignment":
        n = len(pairs)
        n_train = int(round(train_fraction * n))
        order = np.random.default_rng(rng_seed).permutation(n)
        mask = np.zeros(n, dtype=bool)
        mask[order[:n_train]] = True
        return SeedAlignment(pairs=list(pairs), train_mask=mask)


def load_seed_alignment(path, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph,
                        train_fraction: float, rng_seed: int) -> SeedAlignment:
    pairs: list[tuple[int, int]] = []
    used_a: set[int] = set()
    used_b: set[int] = set()
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = [_unescape(f) for f in line.split("\t")]
            if len(fields) != 2:
                raise ParseError(f"line {lineno}: expected 2 tab-separated fields")
            na, nb = fields
            if na not in kg_a.entities or nb not in kg_b.entities:
                raise ParseError(f"unknown entity at line {lineno}")
            ia, ib = kg_a.entities.id(na), kg_b.entities.id(nb)
            if ia in used_a or ib in used_b:
                raise ParseError(f"duplicate entity in alignment at line {lineno}")
            used_a.add(ia)
            used_b.add(ib)
            pairs.append((ia, ib))
    return SeedAlignment.split(pairs, train_fraction, rng_seed)


def serialize_seed_alignment(pairs, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ia, ib in pairs:
            fh.write(
                _escape(kg_a.entities.name(ia)) + "\t" + _escape(kg_b.entities.name(ib)) + "\n"
            )


# -- synthetic pair generation ----------------------------------------------------


N_REL_PREDICATES = 5
NAME_LEN = 8
LITERAL_LEN = 12


def _random_words(rng: np.random.Generator, n: int, length: int) -> list[str]:
    codes = rng.integers(0, 26, size=(n, length), dtype=np.uint8) + 97
    return [bytes(row).decode("ascii") for row in codes]


def _flip_chars(rng: np.random.Generator, words: list[str], rate: float) -> list[str]:
    if rate <= 0.0:
        return list(words)
    out = []
    for w in words:
        codes = np.frombuffer(w.encode("ascii"), dtype=np.uint8).copy()
        flip = rng.random(len(codes)) < rate
        if flip.any():
            # shift to a uniformly random *different* letter
            shift = rng.integers(1, 26, size=len(codes), dtype=np.uint8)
            flipped = (codes - 97 + shift) % 26 + 97
            codes = np.where(flip, flipped, codes)
        out.append(bytes(codes).decode("ascii"))
    return out


def gen_synthetic_pair(
    n_entities: int,
    attr_per_entity: int = 4,
    rel_density: float = 0.01,
    char_noise: float = 0.0,
    rel_dropout: float = 0.0,
    rng_seed: int = 0,
    name_len: int = NAME_LEN,
    literal_len: int = LITERAL_LEN,
):
    """Build a base KG and a noisy clone; returns (kg_a, kg_b, gold).

    Entity labels are shared across the pair; predicate names in B carry
    a ``_b`` suffix.  Every entity gets a unique "name" literal plus
    ``attr_per_entity - 1`` generic literals; B's literals have each
    character flipped with probability `char_noise` and each
    relationship triple dropped with probability `rel_dropout`.  gold is
    the identity on dense indices.
    """
    if n_entities < 2:
        raise ValueError("n_entities must be >= 2")
    for nm, r in (("rel_density", rel_density), ("char_noise", char_noise),
                  ("rel_dropout", rel_dropout)):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"{nm} must be in [0, 1]")
    n = n_entities
    rng = np.random.default_rng(rng_seed)
    labels = [f"ent{i:05d}" for i in range(n)]

    names = _random_words(rng, n, name_len)
    seen = set()
    for i, w in enumerate(names):  # names must be unique
        while names[i] in seen:
            names[i] = _random_words(rng, 1, name_len)[0]
        seen.add(names[i])
    extra: list[list[str]] = [
        _random_words(rng, n, literal_len) for _ in range(max(0, attr_per_entity - 1))
    ]

    m = int(round(rel_density * n * (n - 1) / 2.0))
    heads = rng.integers(0, n, size=2 * m + 8)
    tails = rng.integers(0, n, size=2 * m + 8)
    edges: list[tuple[int, int]] = []
    used = set()
    for u, v in zip(heads, tails):
        if len(edges) == m:
            break
        if u == v or (u, v) in used:
            continue
        used.add((int(u), int(v)))
        edges.append((int(u), int(v)))
    while len(edges) < m:
        u, v = int(rng.integers(0, n)), int(rng.integers(0, n))
        if u != v and (u, v) not in used:
            used.add((u, v))
            edges.append((u, v))
    edge_pred = rng.integers(0, N_REL_PREDICATES, size=m)

    names_b = _flip_chars(rng, names, char_noise)
    extra_b = [_flip_chars(rng, col, char_noise) for col in extra]
    keep = rng.random(m) >= rel_dropout

    attr_keys = ["name"] + [f"attr{j}" for j in range(1, attr_per_entity)]

    def records(suffix: str, name_col, extra_cols, edge_mask):
        for i in range(n):
            if attr_per_entity >= 1:
                yield ATTR, labels[i], attr_keys[0] + suffix, name_col[i]
                for j, col in enumerate(extra_cols):
                    yield ATTR, labels[i], attr_keys[j + 1] + suffix, col[i]
        for e, (u, v) in enumerate(edges):
            if edge_mask[e]:
                yield REL, labels[u], f"rel{edge_pred[e]}" + suffix, labels[v]

    all_keep = np.ones(m, dtype=bool)
    kg_a = build_graph("A", records("", names, extra, all_keep), preseed_entities=labels)
    kg_b = build_graph("B", records("_b", names_b, extra_b, keep), preseed_entities=labels)
    gold = [(i, i) for i in range(n)]
    return kg_a, kg_b, gold


# -- pair container ----------------------------------------------------------------


class GraphPair:
    """Two graphs under one global id space.

    Global entity ids: A's ids unchanged, B's shifted by ``len(A)``;
    likewise predicates.  Embedding tables and the historical store are
    indexed by global ids.
    """

    def __init__(self, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph):
        self.a = kg_a
        self.b = kg_b
        self.ent_offset = len(kg_a.entities)
        self.pred_offset = len(kg_a.predicates)
        self.n_entities = len(kg_a.entities) + len(kg_b.entities)
        self.n_predicates = len(kg_a.predicates) + len(kg_b.predicates)

    def graph(self, side: str) -> KnowledgeGraph:
        return self.a if side == "A" else self.b

    def global_entity(self, side: str, v: int) -> int:
        return v if side == "A" else self.ent_offset + v

    def global_pred(self, side: str, p: int) -> int:
        return p if side == "A" else self.pred_offset + p

    def side_of(self, gid: int) -> tuple[str, int]:
        if gid < self.ent_offset:
            return "A", gid
        return "B", gid - self.ent_offset
