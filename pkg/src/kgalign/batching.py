"""Graph partitioning and mini-batch assembly.

Each KG is split into balanced clusters by a greedy grow-and-refine
heuristic (a stand-in for METIS with the same contract: disjoint,
covering, balanced, low edge cut).  A mini-batch is one cluster (the
core) plus its 1-hop halo; parts from the two graphs are paired so that
as many training seed pairs as possible have both ends in scope.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .kg import IN, OUT, GraphPair, KnowledgeGraph

BALANCE_FACTOR = 1.3
TARGET_CORE_SIZE = 512


@dataclass
class Partition:
    parts: list[set[int]]
    edge_cut: int


def default_num_parts(n_entities: int) -> int:
    return max(1, round(n_entities / TARGET_CORE_SIZE))


def _neighbor_sets(kg: KnowledgeGraph) -> list[set[int]]:
    nbrs: list[set[int]] = [set() for _ in range(len(kg.entities))]
    for h, _, t in kg.rel_triples:
        if h != t:
            nbrs[h].add(t)
            nbrs[t].add(h)
    return nbrs


def _edge_cut(kg: KnowledgeGraph, assign: np.ndarray) -> int:
    return sum(1 for h, _, t in kg.rel_triples if assign[h] != assign[t])


def partition_graph(kg: KnowledgeGraph, num_parts: int, rng_seed: int = 0) -> Partition:
    """Deterministic balanced partition of the entity set.

    Seeds are picked in descending-degree order, skipping nodes adjacent
    to an already-chosen seed so seeds spread across components; parts
    then grow by BFS with the smallest part taking the next node, which
    keeps sizes within one of each other.  A single boundary-refinement
    pass moves nodes that strictly reduce the edge cut without pushing
    any part past the 1.3x balance bound or emptying a part.
    """
    n = len(kg.entities)
    if num_parts < 1:
        raise ValueError("num_parts must be >= 1")
    if num_parts > n:
        raise ValueError(f"num_parts {num_parts} exceeds entity count {n}")
    nbrs = _neighbor_sets(kg)
    degree = np.array([len(s) for s in nbrs])
    rng = np.random.default_rng(rng_seed)

    # degree-descending candidate order; rng breaks ties among equal degrees
    tiebreak = rng.permutation(n)
    order = sorted(range(n), key=lambda v: (-degree[v], tiebreak[v]))
    seeds: list[int] = []
    blocked: set[int] = set()
    for v in order:
        if len(seeds) == num_parts:
            break
        if v in blocked:
            continue
        seeds.append(v)
        blocked.update(nbrs[v])
    for v in order:  # fall back when adjacency blocks everything
        if len(seeds) == num_parts:
            break
        if v not in seeds:
            seeds.append(v)

    assign = np.full(n, -1, dtype=np.int64)
    sizes = [1] * num_parts
    frontiers: list[deque[int]] = []
    for p, s in enumerate(seeds):
        assign[s] = p
        frontiers.append(deque(sorted(nbrs[s])))
    unassigned = n - num_parts
    next_unseen = 0
    while unassigned > 0:
        p = min(range(num_parts), key=lambda i: (sizes[i], i))
        node = -1
        fr = frontiers[p]
        while fr:
            cand = fr.popleft()
            if assign[cand] < 0:
                node = cand
                break
        if node < 0:  # frontier exhausted: jump to the lowest unassigned node
            while assign[next_unseen] >= 0:
                next_unseen += 1
            node = next_unseen
        assign[node] = p
        sizes[p] += 1
        unassigned -= 1
        fr.extend(sorted(nbrs[node]))

    # one boundary-refinement pass
    max_size = math.floor(BALANCE_FACTOR * math.ceil(n / num_parts))
    for v in range(n):
        if not nbrs[v]:
            continue
        counts = np.zeros(num_parts, dtype=np.int64)
        for u in nbrs[v]:
            counts[assign[u]] += 1
        cur = assign[v]
        best = int(np.argmax(counts))
        if best != cur and counts[best] > counts[cur]:
            if sizes[best] + 1 <= max_size and sizes[cur] - 1 >= 1:
                assign[v] = best
                sizes[cur] -= 1
                sizes[best] += 1

    parts = [set(np.flatnonzero(assign == p).tolist()) for p in range(num_parts)]
    return Partition(parts=parts, edge_cut=_edge_cut(kg, assign))


@dataclass
class MiniBatch:
    """One training batch: a core cluster plus its 1-hop halo.

    `nodes` lists entity ids, core first; `local` maps entity id to its
    row in the batch.  Incidence arrays use global predicate ids so the
    encoder can index the shared relation-embedding table directly.
    `attr_slots[i]` holds (global predicate id, literal) pairs for core
    node i only.
    """

    side: str
    core: np.ndarray
    halo: np.ndarray
    nodes: np.ndarray
    local: dict[int, int]
    n_core: int
    # subgraph edges with both endpoints in the batch, both directions
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_pred: np.ndarray
    edge_dir: list[str]
    attr_slots: list[list[tuple[int, str]]]

    def global_ids(self, pair: GraphPair) -> np.ndarray:
        if self.side == "A":
            return self.nodes
        return self.nodes + pair.ent_offset


def assemble_batch(core: set[int], pair: GraphPair, side: str) -> MiniBatch:
    """Build the mini-batch around `core` for one side of the pair."""
    if not core:
        raise ValueError("batch core must be nonempty")
    kg = pair.graph(side)
    core_arr = np.array(sorted(core), dtype=np.int64)
    halo_set: set[int] = set()
    for v in core_arr:
        for u, _, _ in kg.adjacency[v]:
            if u not in core:
                halo_set.add(u)
    halo_arr = np.array(sorted(halo_set), dtype=np.int64)
    nodes = np.concatenate([core_arr, halo_arr])
    local = {int(v): i for i, v in enumerate(nodes)}

    edge_src: list[int] = []
    edge_dst: list[int] = []
    edge_pred: list[int] = []
    edge_dir: list[str] = []
    for i, v in enumerate(nodes):
        for u, p, d in kg.adjacency[v]:
            j = local.get(int(u))
            if j is not None:
                edge_src.append(i)
                edge_dst.append(j)
                edge_pred.append(pair.global_pred(side, p))
                edge_dir.append(d)

    attr_slots = [
        [(pair.global_pred(side, p), lit) for p, lit in kg.attrs_of[int(v)]]
        for v in core_arr
    ]
    return MiniBatch(
        side=side,
        core=core_arr,
        halo=halo_arr,
        nodes=nodes,
        local=local,
        n_core=len(core_arr),
        edge_src=np.array(edge_src, dtype=np.int64),
        edge_dst=np.array(edge_dst, dtype=np.int64),
        edge_pred=np.array(edge_pred, dtype=np.int64),
        edge_dir=edge_dir,
        attr_slots=attr_slots,
    )


def pair_parts(
    part_a: Partition, part_b: Partition, train_pairs: list[tuple[int, int]]
) -> list[tuple[int, int]]:
    """Greedy matching of A-parts to B-parts maximizing spanned seed pairs.

    Returns (a_index, b_index) tuples covering every part of the larger
    side; leftover parts pair with the opposite side round-robin so each
    part still appears at least once per epoch.
    """
    na, nb = len(part_a.parts), len(part_b.parts)
    where_a = {}
    for i, s in enumerate(part_a.parts):
        for v in s:
            where_a[v] = i
    where_b = {}
    for j, s in enumerate(part_b.parts):
        for v in s:
            where_b[v] = j
    count = np.zeros((na, nb), dtype=np.int64)
    for va, vb in train_pairs:
        count[where_a[va], where_b[vb]] += 1

    matches: list[tuple[int, int]] = []
    used_a: set[int] = set()
    used_b: set[int] = set()
    flat = sorted(
        ((int(count[i, j]), i, j) for i in range(na) for j in range(nb)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    for c, i, j in flat:
        if i in used_a or j in used_b:
            continue
        matches.append((i, j))
        used_a.add(i)
        used_b.add(j)
        if len(used_a) == na or len(used_b) == nb:
            break
    rest_a = sorted(set(range(na)) - used_a)
    rest_b = sorted(set(range(nb)) - used_b)
    for k, i in enumerate(rest_a):
        matches.append((i, k % nb))
    for k, j in enumerate(rest_b):
        matches.append((k % na, j))
    return matches
