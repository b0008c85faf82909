"""LP formulations for capacity planning and fractional transaction selection.

Three programs are built here: the all-accept capacity LP over a given edge
set (complete graph by default), the star LP that trades channel capacity
against fractional rejections, and its double-star variant where
between-cluster traffic additionally loads the middle channels. All balance
update rows are emitted verbatim, one per touched (channel, step) pair; the
solver's presolve collapses the chains.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .model import (
    EPS,
    ChannelState,
    CostParams,
    PcnError,
    Topology,
    TransactionSequence,
    path_in_topology,
)
from .simplex import LinearProgram, LPSolution, Relation
from .simplex import solve  # noqa: F401  (re-exported: the module-level LP oracle)
from . import simplex


def delta(v: int, s: int, t: int) -> int:
    """Difference function: +1 at the target, -1 at the source, else 0."""
    if v == t and v != s:
        return 1
    if v == s and v != t:
        return -1
    return 0


@dataclass(frozen=True)
class PlanChannel:
    """One channel of a fractional plan; `owner` is the leaf (or the middle
    node for middle channels), `hub` the star hub it attaches to."""

    owner: int
    hub: int
    total: float
    init_owner: float
    init_hub: float


@dataclass
class FractionalPlan:
    """An LP solution: per-transaction accepted fractions plus channel
    capacities with initial balance splits.

    `events[key]` lists (tx index, sign) pairs for the owner side of the
    channel: -1 when the owner sends, +1 when it receives. Balance
    trajectories are derived from the initial split and the current `y`.
    """

    kind: str  # "star" | "double_star"
    y: list[float]
    amounts: tuple[float, ...]
    costs: CostParams
    channels: dict[tuple[int, int], PlanChannel]
    events: dict[tuple[int, int], list[tuple[int, int]]]

    @property
    def capacity_cost(self) -> float:
        return sum(ch.total for ch in self.channels.values())

    @property
    def rejection_cost(self) -> float:
        out = 0.0
        for x, y in zip(self.amounts, self.y):
            gap = max(0.0, x - y)
            out += self.costs.f * gap + self.costs.m * gap / x
        return out

    @property
    def total_cost(self) -> float:
        return self.capacity_cost + self.rejection_cost

    def owner_trace(self, key: tuple[int, int]) -> list[float]:
        """Owner-side balance before and after each of the channel's events."""
        ch = self.channels[key]
        out = [ch.init_owner]
        bal = ch.init_owner
        for i, sign in self.events[key]:
            bal += sign * self.y[i]
            out.append(bal)
        return out

    def hub_trace(self, key: tuple[int, int]) -> list[float]:
        ch = self.channels[key]
        return [ch.total - b for b in self.owner_trace(key)]

    def validate(self, tol: float = 1e-7) -> None:
        for x, y in zip(self.amounts, self.y):
            if y < -tol or y > x + tol:
                raise PcnError(f"plan fraction outside [0, x]: y={y}, x={x}")
        for key in self.channels:
            for bal in self.owner_trace(key):
                if bal < -tol:
                    raise PcnError(f"negative owner balance on channel {key}")
            for bal in self.hub_trace(key):
                if bal < -tol:
                    raise PcnError(f"negative hub balance on channel {key}")

    def copy(self) -> "FractionalPlan":
        return FractionalPlan(
            kind=self.kind,
            y=list(self.y),
            amounts=self.amounts,
            costs=self.costs,
            channels=dict(self.channels),
            events={k: list(v) for k, v in self.events.items()},
        )

    def to_json(self) -> str:
        payload = {
            "y": [round(v, 12) for v in self.y],
            "capacities": {f"{a}-{b}": ch.total for (a, b), ch in sorted(self.channels.items())},
            "initial": {
                f"{a}-{b}": [ch.init_owner, ch.init_hub]
                for (a, b), ch in sorted(self.channels.items())
            },
            "capacity_cost": self.capacity_cost,
            "rejection_cost": self.rejection_cost,
        }
        return json.dumps(payload, sort_keys=True)


@dataclass
class CompleteCapacityPlan:
    """All-accept capacity plan over an explicit edge set: channel totals plus
    the full per-step balance trajectories chosen by the LP."""

    party_count: int
    capacities: dict[tuple[int, int], float]
    # balances[i][(u, v)] = (side of u, side of v) after processing step i
    balances: list[dict[tuple[int, int], tuple[float, float]]]

    @property
    def capacity_cost(self) -> float:
        return sum(self.capacities.values())


# --- builders -------------------------------------------------------------


def _rejection_objective(lp: LinearProgram, seq: TransactionSequence, costs: CostParams) -> list[int]:
    """Add the y variables with the rejection part of the objective."""
    y_idx = []
    for tx in seq:
        lp.objective_const += costs.f * tx.amount + costs.m
        y_idx.append(
            lp.add_var(f"y{tx.index}", obj=-(costs.f + costs.m / tx.amount), upper=tx.amount)
        )
    return y_idx


@dataclass
class _StarHandles:
    y: list[int]
    cap: dict[int, int] = field(default_factory=dict)       # leaf -> C_v
    init_own: dict[int, int] = field(default_factory=dict)  # leaf -> C_{v,0}
    init_hub: dict[int, int] = field(default_factory=dict)  # leaf -> C'_{v,0}


def _add_channel_chain(
    lp: LinearProgram,
    tag: str,
    node: int,
    incident: list[tuple[int, int, int]],  # (tx index, y var, sign for owner side)
    forced: float,
) -> tuple[int, int, int]:
    """Emit the capacity variable, initial split and per-step update rows for
    one channel; returns (C, C0_owner, C0_hub) variable indices."""
    cap = lp.add_var(f"{tag}{node}", obj=1.0)
    own = lp.add_var(f"{tag}{node},0")
    hub = lp.add_var(f"{tag}'{node},0")
    lp.add_constraint({own: 1.0, hub: 1.0, cap: -1.0}, Relation.EQ, 0.0)
    if forced > 0:
        lp.add_constraint({cap: 1.0}, Relation.GE, forced)
    prev_own, prev_hub = own, hub
    for i, y, sign in incident:
        nxt_own = lp.add_var(f"{tag}{node},{i + 1}")
        nxt_hub = lp.add_var(f"{tag}'{node},{i + 1}")
        # owner side moves by sign*y, hub side by -sign*y
        lp.add_constraint({nxt_own: 1.0, prev_own: -1.0, y: -float(sign)}, Relation.EQ, 0.0)
        lp.add_constraint({nxt_hub: 1.0, prev_hub: -1.0, y: float(sign)}, Relation.EQ, 0.0)
        prev_own, prev_hub = nxt_own, nxt_hub
    return cap, own, hub


def _star_structure(seq: TransactionSequence, center: int):
    incident: dict[int, list] = {}
    forced: dict[int, float] = {}
    for tx in seq:
        if tx.source == center or tx.target == center:
            raise ValueError("transactions incident to the star center are not supported")
        incident.setdefault(tx.source, []).append((tx.index, tx.index, -1))
        incident.setdefault(tx.target, []).append((tx.index, tx.index, +1))
        forced[tx.source] = max(forced.get(tx.source, 0.0), tx.amount)
        forced[tx.target] = max(forced.get(tx.target, 0.0), tx.amount)
    return incident, forced


def _build_star(seq: TransactionSequence, center: int, costs: CostParams):
    lp = LinearProgram()
    h = _StarHandles(y=_rejection_objective(lp, seq, costs))
    incident, forced = _star_structure(seq, center)
    for leaf in sorted(incident):
        events = [(i, h.y[yi], sign) for i, yi, sign in incident[leaf]]
        cap, own, hub = _add_channel_chain(lp, "C", leaf, events, forced[leaf])
        h.cap[leaf], h.init_own[leaf], h.init_hub[leaf] = cap, own, hub
    return lp, h


def build_star_lp(seq: TransactionSequence, center: int, costs: CostParams) -> LinearProgram:
    """Star LP: minimise total capacity plus fractional rejection fees."""
    return _build_star(seq, center, costs)[0]


def solve_star_plan(seq: TransactionSequence, center: int, costs: CostParams) -> FractionalPlan:
    lp, h = _build_star(seq, center, costs)
    sol = simplex.solve(lp)
    channels = {}
    events: dict[tuple[int, int], list[tuple[int, int]]] = {}
    incident, _ = _star_structure(seq, center)
    for leaf in sorted(incident):
        key = (leaf, center)
        channels[key] = PlanChannel(
            owner=leaf,
            hub=center,
            total=sol.value(h.cap[leaf]),
            init_owner=sol.value(h.init_own[leaf]),
            init_hub=sol.value(h.init_hub[leaf]),
        )
        events[key] = [(i, sign) for i, _, sign in incident[leaf]]
    plan = FractionalPlan(
        kind="star",
        y=[min(max(sol.value(v), 0.0), tx.amount) for v, tx in zip(h.y, seq)],
        amounts=tuple(tx.amount for tx in seq),
        costs=costs,
        channels=channels,
        events=events,
    )
    plan.validate()
    return plan


def _double_star_structure(seq: TransactionSequence, clustering):
    leaf_incident: dict[int, list] = {}
    leaf_forced: dict[int, float] = {}
    mid_incident: dict[int, list] = {}
    mid_forced: dict[int, float] = {}
    for tx in seq:
        ms, mt = clustering.middle_of(tx.source), clustering.middle_of(tx.target)
        leaf_incident.setdefault(tx.source, []).append((tx.index, tx.index, -1))
        leaf_incident.setdefault(tx.target, []).append((tx.index, tx.index, +1))
        leaf_forced[tx.source] = max(leaf_forced.get(tx.source, 0.0), tx.amount)
        leaf_forced[tx.target] = max(leaf_forced.get(tx.target, 0.0), tx.amount)
        if ms != mt:  # between clusters: the middle channels move too
            mid_incident.setdefault(ms, []).append((tx.index, tx.index, -1))
            mid_incident.setdefault(mt, []).append((tx.index, tx.index, +1))
            mid_forced[ms] = max(mid_forced.get(ms, 0.0), tx.amount)
            mid_forced[mt] = max(mid_forced.get(mt, 0.0), tx.amount)
    return leaf_incident, leaf_forced, mid_incident, mid_forced


def _build_double_star(seq: TransactionSequence, clustering, costs: CostParams):
    lp = LinearProgram()
    y = _rejection_objective(lp, seq, costs)
    leaf_incident, leaf_forced, mid_incident, mid_forced = _double_star_structure(seq, clustering)
    handles = {}
    for leaf in sorted(leaf_incident):
        events = [(i, y[yi], sign) for i, yi, sign in leaf_incident[leaf]]
        handles[("C", leaf)] = _add_channel_chain(lp, "C", leaf, events, leaf_forced[leaf])
    for mid in sorted(mid_incident):
        events = [(i, y[yi], sign) for i, yi, sign in mid_incident[mid]]
        handles[("M", mid)] = _add_channel_chain(lp, "M", mid, events, mid_forced[mid])
    return lp, y, handles


def build_double_star_lp(seq: TransactionSequence, clustering, costs: CostParams) -> LinearProgram:
    """Double-star LP: star rows for every leaf channel plus middle-channel
    rows for between-cluster transactions."""
    return _build_double_star(seq, clustering, costs)[0]


def solve_double_star_plan(seq: TransactionSequence, clustering, costs: CostParams) -> FractionalPlan:
    lp, y_idx, handles = _build_double_star(seq, clustering, costs)
    sol = simplex.solve(lp)
    leaf_incident, _, mid_incident, _ = _double_star_structure(seq, clustering)
    channels = {}
    events: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for leaf in sorted(leaf_incident):
        cap, own, hub = handles[("C", leaf)]
        key = (leaf, clustering.middle_of(leaf))
        channels[key] = PlanChannel(leaf, key[1], sol.value(cap), sol.value(own), sol.value(hub))
        events[key] = [(i, sign) for i, _, sign in leaf_incident[leaf]]
    for mid in sorted(mid_incident):
        cap, own, hub = handles[("M", mid)]
        key = (mid, clustering.center)
        channels[key] = PlanChannel(mid, clustering.center, sol.value(cap), sol.value(own), sol.value(hub))
        events[key] = [(i, sign) for i, _, sign in mid_incident[mid]]
    plan = FractionalPlan(
        kind="double_star",
        y=[min(max(sol.value(v), 0.0), tx.amount) for v, tx in zip(y_idx, seq)],
        amounts=tuple(tx.amount for tx in seq),
        costs=costs,
        channels=channels,
        events=events,
    )
    plan.validate()
    return plan


def _build_allaccept(seq: TransactionSequence, p: int, edges: list[tuple[int, int]]):
    lp = LinearProgram()
    n = len(seq)
    w = {e: lp.add_var(f"w{e[0]},{e[1]}", obj=1.0) for e in edges}
    adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(p)}
    for e in edges:
        adj[e[0]].append(e)
        adj[e[1]].append(e)
    b: list[dict] = []
    s_vars: list[dict] = []
    prev_s: dict[int, int] = {}
    for i in range(n + 1):
        bi = {}
        for u, v in edges:
            bi[(u, v)] = lp.add_var(f"b{i}[{u},{v}]")
            bi[(v, u)] = lp.add_var(f"b{i}[{v},{u}]")
        si = {v: lp.add_var(f"S{i}[{v}]") for v in range(p)}
        b.append(bi)
        s_vars.append(si)
        for u, v in edges:
            lp.add_constraint({w[(u, v)]: 1.0, bi[(u, v)]: -1.0, bi[(v, u)]: -1.0}, Relation.EQ, 0.0)
        for v in range(p):
            row = {si[v]: 1.0}
            for e in adj[v]:
                other = e[1] if e[0] == v else e[0]
                row[bi[(v, other)]] = -1.0
            lp.add_constraint(row, Relation.EQ, 0.0)
        if i >= 1:
            tx = seq.items[i - 1]
            for v in range(p):
                lp.add_constraint(
                    {si[v]: 1.0, prev_s[v]: -1.0},
                    Relation.EQ,
                    delta(v, tx.source, tx.target) * tx.amount,
                )
        prev_s = si
    return lp, w, b


def build_complete_lp(seq: TransactionSequence, p: Optional[int] = None) -> LinearProgram:
    """All-accept capacity LP over the complete graph on p parties."""
    if p is None:
        p = seq.party_count
    edges = [(u, v) for u in range(p) for v in range(u + 1, p)]
    return _build_allaccept(seq, p, edges)[0]


def build_graph_lp(seq: TransactionSequence, top: Topology) -> LinearProgram:
    """The same capacity LP restricted to an explicit topology's edges."""
    return _build_allaccept(seq, top.node_count, sorted(top.edges))[0]


def solve_allaccept_plan(seq: TransactionSequence, p: int, edges: Iterable[tuple[int, int]]) -> CompleteCapacityPlan:
    edges = sorted(tuple(sorted(e)) for e in edges)
    lp, w, b = _build_allaccept(seq, p, edges)
    sol = simplex.solve(lp)
    capacities = {e: sol.value(w[e]) for e in edges}
    balances = []
    for i in range(len(seq) + 1):
        balances.append(
            {e: (sol.value(b[i][e]), sol.value(b[i][(e[1], e[0])])) for e in edges}
        )
    return CompleteCapacityPlan(p, capacities, balances)


def solve_complete_plan(seq: TransactionSequence, p: Optional[int] = None) -> CompleteCapacityPlan:
    if p is None:
        p = seq.party_count
    return solve_allaccept_plan(seq, p, [(u, v) for u in range(p) for v in range(u + 1, p)])


def star_capacity_lower_bound(seq: TransactionSequence, v: int, center: int) -> float:
    """Largest absolute windowed net flow through v, the minimum feasible
    capacity of channel (v, center) on a star accepting everything."""
    if v == center:
        raise ValueError("v must be a leaf")
    prefix = 0.0
    lo = hi = 0.0
    for tx in seq:
        prefix += delta(v, tx.source, tx.target) * tx.amount
        lo = min(lo, prefix)
        hi = max(hi, prefix)
    return hi - lo


# --- lifting a complete-graph solution onto a sparser topology -------------


@dataclass(frozen=True)
class LiftedBucket:
    pair: tuple[int, int]
    path: tuple[int, ...]
    capacity: float
    init_near: float  # balance on the pair[0]-near side of every path edge
    init_far: float


@dataclass
class LiftedCapacity:
    edges: dict[tuple[int, int], ChannelState]
    buckets: list[LiftedBucket]

    @property
    def total(self) -> float:
        return sum(st.total for st in self.edges.values())


def lift_solution(target: Topology, plan: CompleteCapacityPlan) -> LiftedCapacity:
    """Spread each pair's capacity along its shortest path in the target,
    keeping a dedicated bucket per pair with the original balance split."""
    if not target.is_connected():
        raise PcnError("target topology must be connected")
    edge_states: dict[tuple[int, int], ChannelState] = {}
    buckets = []
    for (u, v), cap in sorted(plan.capacities.items()):
        if cap <= EPS:
            continue
        near, far = plan.balances[0][(u, v)]
        path = tuple(path_in_topology(target, u, v))
        buckets.append(LiftedBucket((u, v), path, cap, near, far))
        for a, b in zip(path, path[1:]):
            edge = tuple(sorted((a, b)))
            st = edge_states.get(edge)
            if st is None:
                st = ChannelState(edge[0], edge[1], 0.0, 0.0)
                edge_states[edge] = st
            # the side nearer to u holds the u-side balance of the pair
            if a == edge[0]:
                st.balance_a += near
                st.balance_b += far
            else:
                st.balance_b += near
                st.balance_a += far
    return LiftedCapacity(edge_states, buckets)


def lifted_replay_feasible(plan: CompleteCapacityPlan, lifted: LiftedCapacity) -> bool:
    """Drive every bucket through the plan's per-step balance deltas; the
    bucket on each path edge mirrors the pair's complete-graph balance, so no
    bucket may go negative if the plan was feasible."""
    for bucket in lifted.buckets:
        u, v = bucket.pair
        for step in plan.balances:
            near, far = step[(u, v)]
            if near < -1e-7 or far < -1e-7:
                return False
            if abs(near + far - bucket.capacity) > 1e-6:
                return False
    return True
