"""Core domain types for payment-channel networks.

Nodes are dense integer ids. A channel holds a fixed total capacity split
between its two endpoints; processing an accepted transaction shifts balance
from every forwarding side to the receiving side along the transaction's
path. Rejecting costs ``f*x + m`` and leaves all balances untouched.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional

# Balances and amounts are 64-bit floats compared with this tolerance,
# consistently across the LP, the algorithms and the replay machinery.
EPS = 1e-9


class PcnError(Exception):
    """Base class for errors raised by this package."""


class ReplayInfeasibleError(PcnError):
    """An Accept verdict would drive a channel side negative."""

    def __init__(self, tx_index: int, edge: tuple[int, int]):
        self.tx_index = tx_index
        self.edge = edge
        super().__init__(
            f"transaction {tx_index} cannot be forwarded on edge {edge}: "
            "insufficient balance on the forwarding side"
        )


@dataclass(frozen=True)
class Transaction:
    """One (source, target, amount) item of a sequence."""

    index: int
    source: int
    target: int
    amount: float

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"transaction {self.index}: source equals target")
        if not self.amount > 0:
            raise ValueError(f"transaction {self.index}: amount must be positive")


@dataclass(frozen=True)
class TransactionSequence:
    """Ordered transactions over parties 0..party_count-1."""

    items: tuple[Transaction, ...]
    party_count: int

    def __post_init__(self):
        for pos, tx in enumerate(self.items):
            if tx.index != pos:
                raise ValueError(f"transaction at position {pos} has index {tx.index}")
            if not (0 <= tx.source < self.party_count and 0 <= tx.target < self.party_count):
                raise ValueError(f"transaction {pos}: endpoint outside 0..{self.party_count - 1}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self.items)

    @staticmethod
    def from_triples(triples: Iterable[tuple[int, int, float]], party_count: int) -> "TransactionSequence":
        items = tuple(
            Transaction(i, s, t, float(x)) for i, (s, t, x) in enumerate(triples)
        )
        return TransactionSequence(items, party_count)


@dataclass(frozen=True)
class CostParams:
    """Channel creation cost k, proportional rejection fee f, fixed fee m."""

    k: float = 0.0
    f: float = 0.0
    m: float = 0.0

    def __post_init__(self):
        if self.k < 0 or self.f < 0 or self.m < 0:
            raise ValueError("cost parameters must be non-negative")


def rejection_cost(x: float, costs: CostParams) -> float:
    """Cost of rejecting a transaction of size x."""
    return costs.f * x + costs.m


class TopologyKind(Enum):
    COMPLETE = "complete"
    STAR = "star"
    DOUBLE_STAR = "double_star"
    ARBITRARY = "arbitrary"


@dataclass(frozen=True)
class Topology:
    """A connected channel graph with a fixed, deterministic routing rule.

    Star and double-star routes are the unique simple paths; complete graphs
    route on the direct edge; arbitrary graphs route on the BFS shortest path
    with lowest-id tie-breaking.
    """

    kind: TopologyKind
    node_count: int
    edges: frozenset[tuple[int, int]]
    center: Optional[int] = None
    middles: tuple[int, ...] = ()
    # leaf -> middle, only for double stars
    middle_of: Optional[dict[int, int]] = field(default=None, hash=False)

    @staticmethod
    def complete(p: int) -> "Topology":
        edges = frozenset((u, v) for u in range(p) for v in range(u + 1, p))
        return Topology(TopologyKind.COMPLETE, p, edges)

    @staticmethod
    def star(p: int, center: int = 0) -> "Topology":
        if not 0 <= center < p:
            raise ValueError("center must be a node id")
        edges = frozenset(tuple(sorted((v, center))) for v in range(p) if v != center)
        return Topology(TopologyKind.STAR, p, edges, center=center)

    @staticmethod
    def double_star(center: int, middles: Iterable[int], clusters: Iterable[Iterable[int]]) -> "Topology":
        middles = tuple(middles)
        clusters = [tuple(c) for c in clusters]
        if len(middles) != len(clusters):
            raise ValueError("one middle node per cluster required")
        middle_of: dict[int, int] = {}
        edges = set()
        for mid, members in zip(middles, clusters):
            edges.add(tuple(sorted((mid, center))))
            for leaf in members:
                if leaf in middle_of:
                    raise ValueError(f"leaf {leaf} assigned to two clusters")
                if leaf != mid:
                    middle_of[leaf] = mid
                    edges.add(tuple(sorted((leaf, mid))))
        nodes = {center, *middles, *middle_of}
        if nodes != set(range(len(nodes))):
            raise ValueError("node ids must be dense 0..p-1")
        return Topology(
            TopologyKind.DOUBLE_STAR,
            len(nodes),
            frozenset(edges),
            center=center,
            middles=middles,
            middle_of=middle_of,
        )

    @staticmethod
    def arbitrary(p: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        normalized = frozenset(tuple(sorted(e)) for e in edges)
        top = Topology(TopologyKind.ARBITRARY, p, normalized)
        if not top.is_connected():
            raise ValueError("topology must be connected")
        return top

    def neighbors(self, v: int) -> list[int]:
        out = [b if a == v else a for a, b in self.edges if v in (a, b)]
        return sorted(out)

    def is_connected(self) -> bool:
        if self.node_count == 0:
            return True
        adj: dict[int, list[int]] = {v: [] for v in range(self.node_count)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen = {0}
        queue = deque([0])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == self.node_count

    def diameter(self) -> int:
        adj: dict[int, list[int]] = {v: [] for v in range(self.node_count)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        worst = 0
        for src in range(self.node_count):
            dist = {src: 0}
            queue = deque([src])
            while queue:
                v = queue.popleft()
                for w in adj[v]:
                    if w not in dist:
                        dist[w] = dist[v] + 1
                        queue.append(w)
            if len(dist) != self.node_count:
                raise PcnError("disconnected topology")
            worst = max(worst, max(dist.values()))
        return worst


def path_in_topology(top: Topology, s: int, t: int) -> list[int]:
    """Shortest path from s to t; unique for stars and double stars."""
    if s == t:
        raise ValueError("no path between a node and itself")
    if top.kind is TopologyKind.COMPLETE:
        return [s, t]
    if top.kind is TopologyKind.STAR:
        c = top.center
        if s == c or t == c:
            return [s, t]
        return [s, c, t]
    if top.kind is TopologyKind.DOUBLE_STAR:
        up = _double_star_ascent(top, s)
        down = _double_star_ascent(top, t)
        # trim the common tail: paths meet at the lowest shared ancestor
        while len(up) > 1 and len(down) > 1 and up[-2] == down[-2]:
            up.pop()
            down.pop()
        if up[-1] != down[-1]:
            raise PcnError("double star paths failed to meet")
        return up + down[-2::-1]
    return _bfs_path(top, s, t)


def _double_star_ascent(top: Topology, v: int) -> list[int]:
    path = [v]
    if v in top.middle_of:
        path.append(top.middle_of[v])
    if path[-1] != top.center:
        path.append(top.center)
    return path


def _bfs_path(top: Topology, s: int, t: int) -> list[int]:
    prev: dict[int, int] = {s: s}
    queue = deque([s])
    while queue:
        v = queue.popleft()
        if v == t:
            break
        for w in top.neighbors(v):  # sorted: lowest-id tie-break
            if w not in prev:
                prev[w] = v
                queue.append(w)
    if t not in prev:
        raise PcnError(f"no path from {s} to {t}")
    path = [t]
    while path[-1] != s:
        path.append(prev[path[-1]])
    return path[::-1]


class Verdict(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


# One verdict per transaction index, applied identically to every channel
# on the transaction's path.
DecisionSequence = list


@dataclass
class ChannelState:
    """Balance split of one channel; the total never changes."""

    node_a: int
    node_b: int
    balance_a: float
    balance_b: float

    def __post_init__(self):
        if self.balance_a < -EPS or self.balance_b < -EPS:
            raise ValueError("channel balances must be non-negative")

    @property
    def total(self) -> float:
        return self.balance_a + self.balance_b

    def balance_of(self, node: int) -> float:
        if node == self.node_a:
            return self.balance_a
        if node == self.node_b:
            return self.balance_b
        raise KeyError(node)

    def shift(self, sender: int, amount: float) -> None:
        if sender == self.node_a:
            self.balance_a -= amount
            self.balance_b += amount
        elif sender == self.node_b:
            self.balance_b -= amount
            self.balance_a += amount
        else:
            raise KeyError(sender)

    def copy(self) -> "ChannelState":
        return ChannelState(self.node_a, self.node_b, self.balance_a, self.balance_b)


@dataclass(frozen=True)
class CostBreakdown:
    creation: float
    capacity: float
    rejection: float

    @property
    def total(self) -> float:
        return self.creation + self.capacity + self.rejection

    def as_dict(self) -> dict:
        return {
            "creation": self.creation,
            "capacity": self.capacity,
            "rejection": self.rejection,
            "total": self.total,
        }


def replay(
    top: Topology,
    seq: TransactionSequence,
    decisions: DecisionSequence,
    initial: dict[tuple[int, int], ChannelState],
    costs: CostParams,
) -> tuple[dict[tuple[int, int], ChannelState], CostBreakdown]:
    """Process the whole sequence under fixed verdicts, exactly.

    Raises ReplayInfeasibleError naming the offending transaction and edge
    if an accepted transaction cannot be forwarded.
    """
    if len(decisions) != len(seq):
        raise ValueError("one verdict per transaction required")
    states = {edge: st.copy() for edge, st in initial.items()}
    totals = {edge: st.total for edge, st in states.items()}
    rejection = 0.0
    for tx, verdict in zip(seq, decisions):
        if verdict is Verdict.REJECT:
            rejection += rejection_cost(tx.amount, costs)
            continue
        path = path_in_topology(top, tx.source, tx.target)
        hops = list(zip(path, path[1:]))
        # validate the whole path before mutating anything
        for a, b in hops:
            edge = tuple(sorted((a, b)))
            state = states.get(edge)
            if state is None or state.balance_of(a) < tx.amount - EPS:
                raise ReplayInfeasibleError(tx.index, edge)
        for a, b in hops:
            edge = tuple(sorted((a, b)))
            state = states[edge]
            state.shift(a, tx.amount)
            if abs(state.total - totals[edge]) > EPS:
                raise PcnError(f"capacity conservation broken on edge {edge}")
            if state.balance_a < -EPS or state.balance_b < -EPS:
                raise ReplayInfeasibleError(tx.index, edge)
    creation = costs.k * len(top.edges)
    capacity = sum(totals.values())
    return states, CostBreakdown(creation, capacity, rejection)


def write_sequence_jsonl(seq: TransactionSequence, path: str) -> None:
    with open(path, "w") as fh:
        for tx in seq:
            fh.write(json.dumps({"i": tx.index, "s": tx.source, "t": tx.target, "x": tx.amount}) + "\n")


def read_sequence_jsonl(path: str, party_count: Optional[int] = None) -> TransactionSequence:
    triples = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            triples.append((obj["s"], obj["t"], obj["x"]))
    if party_count is None:
        party_count = 1 + max(max(s, t) for s, t, _ in triples) if triples else 0
    return TransactionSequence.from_triples(triples, party_count)
