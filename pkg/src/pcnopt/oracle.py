"""Brute-force ground truth at desk scale.

Exact optimal decisions by enumerating all 2^n verdict vectors (Gray-code
order so each step re-prices only the flipped transaction's path), minimal
all-accept capacities, and exhaustive small-graph sweeps used by the
approximation-bound tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .model import (
    ChannelState,
    CostBreakdown,
    CostParams,
    PcnError,
    Topology,
    TopologyKind,
    TransactionSequence,
    Verdict,
    path_in_topology,
    rejection_cost,
)
from . import lp as lp_mod
from . import simplex

MAX_ORACLE_N = 20
MAX_ENUM_P = 4


class OracleGuardError(PcnError):
    """Instance exceeds the brute-force guards."""


@dataclass
class OracleResult:
    decisions: list[Verdict]
    capacities: dict[tuple[int, int], ChannelState]
    cost: CostBreakdown
    explored: int

    def to_json_dict(self) -> dict:
        return {
            "decisions": [v.value for v in self.decisions],
            "capacities": {
                f"{a}-{b}": [st.balance_a, st.balance_b]
                for (a, b), st in sorted(self.capacities.items())
            },
            "cost": self.cost.as_dict(),
            "explored": self.explored,
        }


def _channel_events(
    top: Topology, seq: TransactionSequence
) -> dict[tuple[int, int], list[tuple[int, int, float]]]:
    """Per channel: (tx index, sender-is-edge[0] sign, amount) in order."""
    events: dict[tuple[int, int], list[tuple[int, int, float]]] = {e: [] for e in top.edges}
    for tx in seq:
        path = path_in_topology(top, tx.source, tx.target)
        for a, b in zip(path, path[1:]):
            edge = tuple(sorted((a, b)))
            sign = -1 if a == edge[0] else 1
            events[edge].append((tx.index, sign, tx.amount))
    return events


def _side_deficits(events: list[tuple[int, int, float]], accepted) -> tuple[float, float]:
    """Minimal initial balances (edge[0] side, edge[1] side) for a replay."""
    net = 0.0
    lo = hi = 0.0
    for idx, sign, x in events:
        if accepted[idx]:
            net += sign * x
            lo = min(lo, net)
            hi = max(hi, net)
    return max(0.0, -lo), max(0.0, hi)


def min_capacity_given_decisions(
    top: Topology, seq: TransactionSequence, decisions: list[Verdict]
) -> dict[tuple[int, int], ChannelState]:
    """Per channel, the maximum running deficit of each side over the
    accepted-transaction replay; the cheapest initial balances that work."""
    if top.kind is TopologyKind.ARBITRARY:
        raise OracleGuardError("arbitrary multi-path topologies are not supported; use the LP lift")
    accepted = [v is Verdict.ACCEPT for v in decisions]
    out = {}
    for edge, events in sorted(_channel_events(top, seq).items()):
        d0, d1 = _side_deficits(events, accepted)
        out[edge] = ChannelState(edge[0], edge[1], d0, d1)
    return out


def ac_all_accept(top: Topology, seq: TransactionSequence) -> float:
    """Minimal all-accept capacity cost on the given topology.

    Unique-path topologies and the complete graph replay on their fixed
    routes; arbitrary graphs fall back to the capacity LP restricted to
    their edge set.
    """
    if top.kind is TopologyKind.ARBITRARY:
        return simplex.solve(lp_mod.build_graph_lp(seq, top)).objective
    decisions = [Verdict.ACCEPT] * len(seq)
    states = min_capacity_given_decisions(top, seq, decisions)
    return sum(st.total for st in states.values())


def optimal_decisions(top: Topology, seq: TransactionSequence, costs: CostParams) -> OracleResult:
    """Exhaustive optimum over all 2^n decision vectors.

    Ties go to more acceptances, then to the lexicographically smallest
    verdict vector (Accept before Reject).
    """
    n = len(seq)
    if n > MAX_ORACLE_N:
        raise OracleGuardError(f"n={n} exceeds the 2^n guard ({MAX_ORACLE_N})")
    events = _channel_events(top, seq)
    edges = sorted(events)
    path_edges = [
        [
            tuple(sorted((a, b)))
            for a, b in zip(
                path_in_topology(top, tx.source, tx.target),
                path_in_topology(top, tx.source, tx.target)[1:],
            )
        ]
        for tx in seq
    ]
    creation = costs.k * len(top.edges)

    accepted = [True] * n
    per_edge = {e: _side_deficits(events[e], accepted) for e in edges}
    capacity = sum(a + b for a, b in per_edge.values())
    rejection = 0.0

    def snapshot(mask: int):
        verdicts = tuple((mask >> i) & 1 for i in range(n))
        return verdicts

    best_cost = creation + capacity + rejection
    best_mask = 0
    best_accepts = n
    best_verdicts = snapshot(0)
    explored = 1

    mask = 0
    for step in range(1, 1 << n):
        bit = (step & -step).bit_length() - 1
        mask ^= 1 << bit
        rejected_now = (mask >> bit) & 1
        accepted[bit] = not rejected_now
        if rejected_now:
            rejection += rejection_cost(seq.items[bit].amount, costs)
        else:
            rejection -= rejection_cost(seq.items[bit].amount, costs)
        for e in set(path_edges[bit]):
            old = per_edge[e]
            new = _side_deficits(events[e], accepted)
            capacity += (new[0] + new[1]) - (old[0] + old[1])
            per_edge[e] = new
        explored += 1
        cost = creation + capacity + rejection
        if cost < best_cost - 1e-9:
            better = True
        elif cost <= best_cost + 1e-9:
            accepts = n - bin(mask).count("1")
            better = accepts > best_accepts or (
                accepts == best_accepts and snapshot(mask) < best_verdicts
            )
        else:
            better = False
        if better:
            best_cost = cost
            best_mask = mask
            best_accepts = n - bin(mask).count("1")
            best_verdicts = snapshot(mask)

    decisions = [Verdict.REJECT if (best_mask >> i) & 1 else Verdict.ACCEPT for i in range(n)]
    states = min_capacity_given_decisions(top, seq, decisions)
    cost = CostBreakdown(
        creation=creation,
        capacity=sum(st.total for st in states.values()),
        rejection=sum(
            rejection_cost(tx.amount, costs)
            for tx, v in zip(seq, decisions)
            if v is Verdict.REJECT
        ),
    )
    return OracleResult(decisions, states, cost, explored)


def enumerate_connected_graphs(p: int) -> list[Topology]:
    """All connected labeled graphs on p nodes (1, 1, 4, 38 for p=1..4)."""
    if p > MAX_ENUM_P:
        raise OracleGuardError(f"p={p} exceeds the enumeration guard ({MAX_ENUM_P})")
    all_edges = [(u, v) for u in range(p) for v in range(u + 1, p)]
    out = []
    for r in range(len(all_edges) + 1):
        for subset in combinations(all_edges, r):
            try:
                out.append(Topology.arbitrary(p, subset))
            except ValueError:
                continue
    return out
