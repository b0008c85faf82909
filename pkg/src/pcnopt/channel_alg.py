"""The modified channel algorithm: integral decisions on a star.

Each unordered leaf pair runs an independent reserve game against the
fractional plan. A pair holds a reserve pool of sqrt(3)*M split across both
of its channels, where M is the smaller of the two channel capacities; the
pool absorbs the gap between the integral decision and the plan's fractional
acceptance. Transactions the plan accepts strongly but the reserve cannot
afford are accepted tentatively into a pending pool and flipped to Reject,
largest first, whenever the reserve goes negative.

Fully accepted transactions (y = x) move no reserve and are never pooled, so
they can never be flipped; that keeps the plan-fidelity guarantee exact.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .model import (
    EPS,
    ChannelState,
    PcnError,
    Topology,
    TopologyKind,
    Transaction,
    TransactionSequence,
    Verdict,
)
from .lp import FractionalPlan

SQRT3 = math.sqrt(3.0)
# plans at or above this acceptance ratio count as strongly accepted
STRONG_RATIO = SQRT3 / (SQRT3 + 1.0)
RESERVE_START = SQRT3 / 2.0
THRESHOLD = (SQRT3 - 1.0) / 2.0


class TxClass(Enum):
    FULLY_ACCEPTED = "fully_accepted"
    STRONG = "strong"
    WEAK = "weak"
    FULLY_REJECTED = "fully_rejected"


def classify(x: float, y: float) -> TxClass:
    if not x > 0:
        raise ValueError("amount must be positive")
    if y < -EPS or y > x + EPS:
        raise ValueError("fraction outside [0, x]")
    if y >= x - EPS:
        return TxClass.FULLY_ACCEPTED
    if y <= EPS:
        return TxClass.FULLY_REJECTED
    if y / x >= STRONG_RATIO - 1e-12:
        return TxClass.STRONG
    return TxClass.WEAK


@dataclass
class PairReserves:
    """Reserve state of one leaf pair; the pool R_u + R_v = sqrt(3) * M is
    conserved throughout a run."""

    u: int
    v: int
    M: float
    R_u: float
    R_v: float

    @staticmethod
    def fresh(u: int, v: int, m_value: float) -> "PairReserves":
        return PairReserves(u, v, m_value, RESERVE_START * m_value, RESERVE_START * m_value)

    def reserve_of(self, node: int) -> float:
        if node == self.u:
            return self.R_u
        if node == self.v:
            return self.R_v
        raise KeyError(node)

    def move(self, sender: int, amount: float) -> None:
        """Shift `amount` of reserve away from the sender's side."""
        if sender == self.u:
            self.R_u -= amount
            self.R_v += amount
        else:
            self.R_v -= amount
            self.R_u += amount


@dataclass
class TraceEntry:
    index: int
    verdict: Verdict
    R_u: float
    R_v: float

    def to_json(self) -> str:
        return json.dumps(
            {"i": self.index, "verdict": self.verdict.value, "R_u": self.R_u, "R_v": self.R_v}
        )


@dataclass
class PairRun:
    reserves: PairReserves
    verdicts: dict[int, Verdict] = field(default_factory=dict)
    trace: list[TraceEntry] = field(default_factory=list)


def pair_capacity(plan: FractionalPlan, node: int) -> float:
    for key, ch in plan.channels.items():
        if ch.owner == node:
            return ch.total
    raise PcnError(f"plan has no channel for node {node}")


def run_pairwise(
    pair: tuple[int, int],
    txs: list[Transaction],
    plan: FractionalPlan,
) -> PairRun:
    """Run the reserve game for one leaf pair over its own transactions."""
    u, v = pair
    m_value = min(pair_capacity(plan, u), pair_capacity(plan, v))
    state = PairReserves.fresh(u, v, m_value)
    thr = THRESHOLD * m_value
    run = PairRun(state)
    # pending pools of tentatively accepted strong transactions, one per
    # direction; heapified on -x so the largest flips first
    pending: dict[int, list[tuple[float, int]]] = {u: [], v: []}

    for tx in txs:
        if {tx.source, tx.target} != {u, v}:
            raise PcnError(f"transaction {tx.index} does not belong to pair {pair}")
        x = tx.amount
        y = plan.y[tx.index]
        if y is None:
            raise PcnError(f"plan is missing transaction {tx.index}")
        sender = tx.source
        r_send = state.reserve_of(sender)
        cls = classify(x, y)

        if cls is TxClass.FULLY_ACCEPTED:
            # moves no reserve; guaranteed acceptance
            run.verdicts[tx.index] = Verdict.ACCEPT
        elif r_send - (x - y) >= thr - EPS:
            run.verdicts[tx.index] = Verdict.ACCEPT
            state.move(sender, x - y)
        elif cls in (TxClass.WEAK, TxClass.FULLY_REJECTED):
            run.verdicts[tx.index] = Verdict.REJECT
            state.move(sender, -y)
        else:
            run.verdicts[tx.index] = Verdict.ACCEPT
            state.move(sender, x - y)
            heapq.heappush(pending[sender], (-x, tx.index))
            if state.reserve_of(sender) < -EPS:
                while state.reserve_of(sender) < thr - EPS:
                    if not pending[sender]:
                        raise PcnError(
                            f"pending pool exhausted below threshold for pair {pair}"
                        )
                    neg_x, j = heapq.heappop(pending[sender])
                    run.verdicts[j] = Verdict.REJECT
                    state.move(sender, neg_x)  # reject refunds the full x_j

        for side in (u, v):
            if state.reserve_of(side) >= thr - EPS:
                pending[side].clear()

        run.trace.append(TraceEntry(tx.index, run.verdicts[tx.index], state.R_u, state.R_v))
    return run


def _pairs_with_traffic(seq: TransactionSequence, center: int) -> dict[tuple[int, int], list[Transaction]]:
    pairs: dict[tuple[int, int], list[Transaction]] = {}
    for tx in seq:
        if tx.source == center or tx.target == center:
            raise PcnError("transactions incident to the star center are not supported")
        key = tuple(sorted((tx.source, tx.target)))
        pairs.setdefault(key, []).append(tx)
    return pairs


def run_star(
    seq: TransactionSequence, star: Topology, plan: FractionalPlan
) -> list[Verdict]:
    """Decide the whole sequence by running every leaf pair independently."""
    decisions, _ = run_star_with_traces(seq, star, plan)
    return decisions


def run_star_with_traces(
    seq: TransactionSequence, star: Topology, plan: FractionalPlan
) -> tuple[list[Verdict], dict[tuple[int, int], PairRun]]:
    if star.kind is not TopologyKind.STAR:
        raise PcnError("run_star requires a star topology")
    runs = {
        pair: run_pairwise(pair, txs, plan)
        for pair, txs in sorted(_pairs_with_traffic(seq, star.center).items())
    }
    decisions: list[Verdict] = [Verdict.REJECT] * len(seq)
    seen = 0
    for run in runs.values():
        for idx, verdict in run.verdicts.items():
            decisions[idx] = verdict
            seen += 1
    if seen != len(seq):
        raise PcnError("pairwise runs did not cover the sequence exactly once")
    return decisions, runs


def pair_m_values(seq: TransactionSequence, plan: FractionalPlan, center: int) -> dict[tuple[int, int], float]:
    return {
        pair: min(pair_capacity(plan, pair[0]), pair_capacity(plan, pair[1]))
        for pair in sorted(_pairs_with_traffic(seq, center))
    }


def capacity_requirement(
    star: Topology, seq: TransactionSequence, plan: FractionalPlan
) -> dict[tuple[int, int], ChannelState]:
    """Channel capacities that make the emitted decisions replayable: the
    plan's own balances plus the full reserve pool of every active pair,
    mirrored on both of the pair's channels."""
    if star.kind is not TopologyKind.STAR:
        raise PcnError("capacity_requirement requires a star topology")
    center = star.center
    m_values = pair_m_values(seq, plan, center)
    extra: dict[int, float] = {}
    for (a, b), m_value in m_values.items():
        extra[a] = extra.get(a, 0.0) + m_value
        extra[b] = extra.get(b, 0.0) + m_value
    out: dict[tuple[int, int], ChannelState] = {}
    for key, ch in sorted(plan.channels.items()):
        leaf = ch.owner
        pool = extra.get(leaf, 0.0)
        edge = tuple(sorted((leaf, center)))
        out[edge] = ChannelState(
            edge[0],
            edge[1],
            *(
                (ch.init_owner + RESERVE_START * pool, ch.init_hub + RESERVE_START * pool)
                if edge[0] == leaf
                else (ch.init_hub + RESERVE_START * pool, ch.init_owner + RESERVE_START * pool)
            ),
        )
    return out


def star_cost_bounds(p: int) -> tuple[float, float]:
    """(capacity, rejection) approximation factors proved for the algorithm."""
    return 1.0 + (p - 1) * SQRT3, SQRT3 + 1.0
