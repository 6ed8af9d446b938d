"""Deterministic simulator of the distributed coverage protocol.

Robots take turns holding a token. The holder first tries a move inside its
own partition (type 1). Failing that, it broadcasts the improvement each of
its partition vertices would bring as a new robot site (``rho``), and the
proposal spreads through the neighbor graph as a spanning-tree echo. A robot
accepts when it can vacate its position to backfill the chain at a net gain
of at least ``eps0``; the origin then acknowledges the best acceptance and
the chain of robots shifts one position each (type 2).

All per-robot computations read only the robot's own partition, its
neighbors' positions and partitions, and received messages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import MetricGraph, subdivide_edges
from .partition import (DEFAULT_RADIUS_FACTOR, PartitionAssignment, as_config, assign_partitions,
                        coverage_cost, neighbor_sets)
from .solvers import SolveResult, default_epsilon0, single_swap_gains

MOVE_TYPES = ("type1-move", "type2-single-hop", "type2-multi-hop")


class ProtocolError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# local quantities


def _members(partition: PartitionAssignment, robots) -> np.ndarray:
    robots = np.fromiter(robots, dtype=np.int64)
    return np.flatnonzero(np.isin(partition.owner, robots))


def _check_member(partition, i, v):
    if partition.owner[v] != i:
        raise ValueError(f"vertex {v} is not in the partition of robot {i}")


def deltas(graph: MetricGraph, config, partition, neighbors, i: int, candidates) -> np.ndarray:
    """Vectorized ``compute_delta`` over candidate vertices."""
    q = as_config(graph, config)
    nb = sorted(neighbors[i])
    pool = _members(partition, [i, *nb])
    cands = np.asarray(candidates, dtype=np.int64)
    w, c = graph.weights[pool], graph.cost
    before = c[pool, q[partition.owner[pool]]]
    if nb:
        rest = c[np.ix_(pool, q[nb])].min(axis=1)
    else:
        rest = np.full(pool.size, np.inf)
    after = np.minimum(rest[:, None], c[np.ix_(pool, cands)])
    return w @ (after - before[:, None])


def compute_delta(graph, config, partition, neighbors, i: int, v: int) -> float:
    """Change of the local cost (own + neighbor partitions) when robot ``i`` moves to ``v``."""
    _check_member(partition, i, v)
    return float(deltas(graph, config, partition, neighbors, i, [v])[0])


def rhos(graph, config, partition, neighbors, i: int, candidates, include_self: bool = True) -> np.ndarray:
    q = as_config(graph, config)
    group = sorted(neighbors[i] | {i}) if include_self else sorted(neighbors[i])
    pool = _members(partition, group)
    cands = np.asarray(candidates, dtype=np.int64)
    current = graph.cost[pool, q[partition.owner[pool]]]
    diff = graph.cost[np.ix_(pool, cands)] - current[:, None]
    return graph.weights[pool] @ np.minimum(diff, 0.0)


def compute_rho(graph, config, partition, neighbors, i: int, v: int, include_self: bool = True) -> float:
    """Gain from an extra robot at ``v``, summed over the partitions of i's neighbors (and i)."""
    _check_member(partition, i, v)
    return float(rhos(graph, config, partition, neighbors, i, [v], include_self)[0])


def ell_vs(graph, config, partition, neighbors, k: int, origin: int, candidates) -> np.ndarray:
    q = as_config(graph, config)
    if origin not in neighbors[k]:
        raise ValueError(f"robot {origin} is not a neighbor of robot {k}")
    members = partition.members(k)
    cands = np.asarray(candidates, dtype=np.int64)
    c = graph.cost
    own = c[members, q[k]]
    rest = c[np.ix_(members, q[sorted(neighbors[k])])].min(axis=1)
    to_v = c[np.ix_(members, cands)]
    keep = own[:, None] <= to_v  # complement of R_k(v)
    change = np.minimum(rest[:, None], to_v) - own[:, None]
    return graph.weights[members] @ np.where(keep, change, 0.0)


def compute_ell_v(graph, config, partition, neighbors, k: int, origin: int, v: int) -> float:
    """Cost increase on k's partition (minus vertices v captures) when k backfills ``origin``."""
    return float(ell_vs(graph, config, partition, neighbors, k, origin, [v])[0])


def compute_ell(graph, config, partition, neighbors, k: int) -> float:
    """Cost increase on k's partition when it is re-served by its neighbors only."""
    if not neighbors[k]:
        raise ValueError(f"robot {k} has no neighbors; cannot hand over its partition")
    q = as_config(graph, config)
    members = partition.members(k)
    c = graph.cost
    rest = c[np.ix_(members, q[sorted(neighbors[k])])].min(axis=1)
    return float(graph.weights[members] @ (rest - c[members, q[k]]))


def verify_no_improving_swap(graph: MetricGraph, config, eps0: float):
    """Return ``(True, None)`` or ``(False, (robot, vertex, gain))`` for the first improving single swap."""
    gains = single_swap_gains(graph, config)
    for r in range(gains.shape[0]):
        hits = np.flatnonzero(gains[r] <= -eps0)
        if hits.size:
            v = int(hits[0])
            return False, (r, v, float(gains[r, v]))
    return True, None


# ---------------------------------------------------------------------------
# messages and trace


@dataclass(frozen=True)
class Message:
    kind: str  # proposal | acceptance | rejection | acknowledgment | completion
    sender: int
    receiver: int
    wave_id: int | None = None
    origin: int | None = None
    gamma: tuple[tuple[int, float], ...] | None = None
    counter: int | None = None
    vertex: int | None = None
    total_change: float | None = None
    accepter: int | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "from": self.sender, "to": self.receiver}
        for key in ("wave_id", "origin", "counter", "vertex", "total_change", "accepter"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        return d


@dataclass
class ProtocolTrace:
    initial_config: tuple[int, ...] = ()
    initial_cost: float = 0.0
    events: list[tuple[int, dict]] = field(default_factory=list)
    cost_curve: list[float] = field(default_factory=list)
    message_counts: dict[int, dict[str, int]] = field(default_factory=dict)
    record_messages: bool = True

    def log(self, event: dict):
        self.events.append((len(self.events), event))

    def moves(self) -> list[dict]:
        return [e for _, e in self.events if e["type"] in MOVE_TYPES]

    def errors(self) -> list[dict]:
        return [e for _, e in self.events if e["type"] == "protocol-error"]

    def move_counts(self) -> dict[str, int]:
        counts = {t: 0 for t in MOVE_TYPES}
        for e in self.moves():
            counts[e["type"]] += 1
        return counts

    def summary(self) -> dict:
        counts = self.move_counts()
        total = sum(counts.values())
        shares = {t: (counts[t] / total if total else 0.0) for t in MOVE_TYPES}
        waves = self.message_counts.values()
        return {
            "moves": counts,
            "shares": shares,
            "waves": len(self.message_counts),
            "proposals": sum(w["proposal"] for w in waves),
            "responses": sum(w["response"] for w in waves),
            "acknowledgments": sum(w["acknowledgment"] for w in waves),
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps({"step": s, **e}, sort_keys=True) for s, e in self.events]
        return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# simulator


def protocol_graph(graph: MetricGraph, subdivide: bool | None = None) -> tuple[MetricGraph, np.ndarray]:
    """Graph the robots reason over, and the mask of vertices they may occupy.

    Instances given by an edge list get a zero-weight midpoint on every edge
    so that partitions of robots sharing an edge reach each other; robots
    still only stand on original vertices. ``subdivide=None`` means "when an
    edge list is available".
    """
    if subdivide is None:
        subdivide = graph.edges is not None
    if not subdivide:
        return graph, np.ones(graph.vertex_count, dtype=bool)
    sub = subdivide_edges(graph)
    movable = np.zeros(sub.vertex_count, dtype=bool)
    movable[:graph.vertex_count] = True
    return sub, movable


class World:
    """Shared simulation state: robot positions plus the trace under construction.

    ``graph`` is the graph robots reason over (see ``protocol_graph``);
    ``movable`` marks the vertices they may move to.
    """

    def __init__(self, graph: MetricGraph, init: Sequence[int], eps0: float,
                 radius_factor: float = DEFAULT_RADIUS_FACTOR, include_self_in_rho: bool = True,
                 record_messages: bool = True, movable: np.ndarray | None = None):
        self.graph = graph
        self.movable = np.ones(graph.vertex_count, dtype=bool) if movable is None else np.asarray(movable, bool)
        self.positions = as_config(graph, init).copy()
        if not self.movable[self.positions].all():
            raise ValueError("robots must start on movable vertices")
        self.m = self.positions.size
        self.eps0 = float(eps0)
        self.radius_factor = radius_factor
        self.include_self_in_rho = include_self_in_rho
        self.active = [True] * self.m
        self.cost = coverage_cost(graph, self.positions)
        self.trace = ProtocolTrace(tuple(int(x) for x in self.positions), self.cost,
                                   record_messages=record_messages)
        self._wave_id = 0
        self._refresh()

    def _refresh(self):
        self.partition = assign_partitions(self.graph, self.positions)
        self.neighbors = neighbor_sets(self.graph, self.positions, self.partition, self.radius_factor)

    def local_args(self):
        return self.graph, self.positions, self.partition, self.neighbors

    def send(self, msg: Message, counts: dict | None = None):
        if counts is not None:
            key = "response" if msg.kind in ("acceptance", "rejection") else msg.kind
            counts[key] = counts.get(key, 0) + 1
        if self.trace.record_messages:
            self.trace.log({"type": "message-sent", **msg.to_dict()})

    def apply_move(self, kind: str, new_positions: np.ndarray, claimed: float, **info):
        old = self.cost
        self.positions = new_positions
        self.cost = coverage_cost(self.graph, self.positions)
        self.trace.cost_curve.append(self.cost)
        self.trace.log({"type": kind, "claimed_change": claimed, "cost_before": old, "cost_after": self.cost,
                        "config": [int(x) for x in self.positions], **info})
        self._refresh()
        self.active = [True] * self.m

    def next_wave_id(self) -> int:
        self._wave_id += 1
        return self._wave_id


@dataclass
class _WaveState:
    parent: int | None = None
    pending: set = field(default_factory=set)
    best: Message | None = None
    best_child: int | None = None


def _better(a: Message | None, b: Message) -> bool:
    if a is None:
        return True
    return (b.total_change, b.accepter) < (a.total_change, a.accepter)


def resolve_wave(world: World, proposal: Message, extra_messages: Sequence[Message] = ()) -> dict:
    """Run one proposal wave to completion and execute the selected chain, if any.

    ``proposal`` is the origin's template message (receiver ignored).
    ``extra_messages`` are delivered in the first round alongside the
    origin's proposals (stray or malformed traffic ends up as protocol-error
    events rather than exceptions). Delivery
    is in synchronous rounds, so every robot first hears the proposal along a
    shortest hop path; it adopts the sender with the smallest counter (then
    smallest UID) as parent and rejects every other copy.
    """
    graph, q, part, nbrs = world.local_args()
    origin, wave = proposal.origin, proposal.wave_id
    gamma_v = np.array([v for v, _ in proposal.gamma], dtype=np.int64)
    gamma_rho = np.array([r for _, r in proposal.gamma])
    counts = {"proposal": 0, "response": 0, "acknowledgment": 0}
    world.trace.message_counts[wave] = counts
    state: dict[int, _WaveState] = {origin: _WaveState()}

    outbox: list[Message] = []
    state[origin].pending = set(nbrs[origin])
    for j in sorted(nbrs[origin]):
        outbox.append(Message("proposal", origin, j, wave, origin, proposal.gamma, 1))
    outbox.extend(extra_messages)
    decided: Message | None = None
    finished = not outbox

    while outbox:
        for msg in outbox:
            world.send(msg, counts)
        inbox = sorted(outbox, key=lambda m: (m.receiver, m.kind != "proposal", m.counter or 0, m.sender))
        outbox = []
        for msg in inbox:
            if msg.wave_id != wave:
                world.trace.log({"type": "protocol-error", "reason": "unknown wave", **msg.to_dict()})
                continue
            k = msg.receiver
            if msg.kind == "proposal":
                if k in state:
                    outbox.append(Message("rejection", k, msg.sender, wave))
                    continue
                st = state[k] = _WaveState(parent=msg.sender)
                if msg.counter == 1:
                    totals = gamma_rho + ell_vs(graph, q, part, nbrs, k, origin, gamma_v)
                else:
                    totals = gamma_rho + compute_ell(graph, q, part, nbrs, k)
                best = int(np.argmin(totals))
                if totals[best] <= -world.eps0:
                    outbox.append(Message("acceptance", k, msg.sender, wave, origin, vertex=int(gamma_v[best]),
                                          total_change=float(totals[best]), accepter=k, counter=msg.counter))
                    continue
                targets = sorted(nbrs[k] - {msg.sender})
                if not targets:
                    outbox.append(Message("rejection", k, msg.sender, wave))
                    continue
                st.pending = set(targets)
                for j in targets:
                    outbox.append(Message("proposal", k, j, wave, origin, proposal.gamma, msg.counter + 1))
            elif msg.kind in ("acceptance", "rejection"):
                st = state.get(k)
                if st is None or msg.sender not in st.pending:
                    world.trace.log({"type": "protocol-error", "reason": "unexpected response", **msg.to_dict()})
                    continue
                st.pending.discard(msg.sender)
                if msg.kind == "acceptance" and _better(st.best, msg):
                    st.best, st.best_child = msg, msg.sender
                if st.pending:
                    continue
                if k == origin:
                    decided = st.best
                    finished = True
                elif st.best is not None:
                    b = st.best
                    outbox.append(Message("acceptance", k, st.parent, wave, origin, vertex=b.vertex,
                                          total_change=b.total_change, accepter=b.accepter, counter=b.counter))
                else:
                    outbox.append(Message("rejection", k, st.parent, wave))

    if not finished:
        raise ProtocolError(f"wave {wave} ended with unanswered proposals")
    if decided is None:
        world.trace.log({"type": "wave-rejected", "wave_id": wave, "origin": origin})
        return {"outcome": "wave-rejected", "wave_id": wave}

    # acknowledgment travels down the selected branch; each robot then shifts to its parent's spot
    chain = [origin]
    while chain[-1] != decided.accepter:
        nxt = state[chain[-1]].best_child
        world.send(Message("acknowledgment", chain[-1], nxt, wave, origin, vertex=decided.vertex), counts)
        chain.append(nxt)
    new = q.copy()
    new[origin] = decided.vertex
    for parent, child in zip(chain, chain[1:]):
        new[child] = q[parent]
    kind = "type2-single-hop" if len(chain) == 2 else "type2-multi-hop"
    world.apply_move(kind, new, decided.total_change, origin=origin, accepter=decided.accepter,
                     chain=chain, vertex=decided.vertex, wave_id=wave)
    return {"outcome": kind, "wave_id": wave, "chain": chain, "vertex": decided.vertex,
            "total_change": decided.total_change}


def local_move_step(world: World, i: int) -> dict:
    """One LocalMove iteration for robot ``i``: a type-1 move, a resolved wave, or nothing."""
    graph, q, part, nbrs = world.local_args()
    members = part.members(i)
    members = members[world.movable[members]]
    if members.size == 0:
        return {"outcome": "no-move"}
    d = deltas(graph, q, part, nbrs, i, members)
    best = int(np.argmin(d))
    if d[best] <= -world.eps0:
        v = int(members[best])
        new = q.copy()
        new[i] = v
        world.apply_move("type1-move", new, float(d[best]), robot=i, source=int(q[i]), vertex=v)
        return {"outcome": "type1-move", "vertex": v, "delta": float(d[best])}
    if not nbrs[i]:
        return {"outcome": "no-move"}
    r = rhos(graph, q, part, nbrs, i, members, world.include_self_in_rho)
    gamma = tuple((int(v), float(x)) for v, x in zip(members, r))
    proposal = Message("proposal", i, -1, world.next_wave_id(), i, gamma, 1)
    return resolve_wave(world, proposal)


def run_distributed(graph: MetricGraph, init: Sequence[int], eps0: float | None = None,
                    radius_factor: float = DEFAULT_RADIUS_FACTOR, seed: int = 0,
                    include_self_in_rho: bool = True, record_messages: bool = True,
                    subdivide: bool | None = None,
                    max_moves: int = 1_000_000) -> tuple[SolveResult, ProtocolTrace]:
    """Token-scheduled execution until every robot is inactive.

    The token starts at UID ``seed % m`` and travels round-robin. Any accepted
    move reactivates all robots. Edge-list instances are subdivided for
    partition reasoning (see ``protocol_graph``); costs and the returned
    configuration refer to the original vertices.
    """
    q0 = as_config(graph, init)
    m = q0.size
    if eps0 is None:
        eps0 = default_epsilon0(graph, m)
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    work, movable = protocol_graph(graph, subdivide)
    world = World(work, q0, eps0, radius_factor, include_self_in_rho, record_messages, movable)
    graph = work
    result = SolveResult(world.trace.initial_config, world.cost, initial_cost=world.cost)
    token = seed % m
    while any(world.active) and result.iterations < max_moves:
        if not world.active[token]:
            token = (token + 1) % m
            continue
        while result.iterations < max_moves:
            own = world.partition.members(token)
            if not np.any(graph.cost[own, world.positions[token]] > 0):
                break
            out = local_move_step(world, token)
            if out["outcome"] not in MOVE_TYPES:
                break
            result.iterations += 1
            result.history.append((tuple(int(x) for x in world.positions), world.cost))
        world.active[token] = False
        world.trace.log({"type": "completion", "robot": token})
        for j in range(m):
            if j != token:
                world.send(Message("completion", token, j, origin=token))
        token = (token + 1) % m
    result.config = tuple(int(x) for x in world.positions)
    result.cost = world.cost
    return result, world.trace
