"""Embedding engines: map an experiment network onto the resource pool.

Two engines share one feasibility definition.  The greedy engine orders
nodes by descending requirement count and never backtracks; the complete
engine is a backtracking search with forward checking whose negative
verdict is a completeness claim (within budget).  Node assignment must
satisfy property matching and tenant capacity; each experiment link maps
to the shortest feasible resource path (at most ``max_hops`` segments,
one implicit WAN hop between site gateways allowed), where feasibility
means the composed path properties satisfy the link's constraints and
every segment has residual bandwidth for the link's demand.

Path properties compose as: bandwidth = min of segment capacities,
latency = sum, loss = 1e6 * (1 - prod(1 - l_i/1e6)) rounded half up, and
any other property appears only if all segments agree on it.  A link's
bandwidth demand is the bound of a gt/ge/eq bandwidth constraint
(ceilings expressed with lt/le demand nothing).
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from .discovery import node_candidates
from .errors import BudgetExhaustedError, UnrealizableError, ValidationError
from .model import Constraint, Network, _structural_eq, iter_requirements, match_props
from .store import Store, Transaction
from .substrate import RSV_LINK_PREFIX, RSV_NODE_PREFIX, ResourceView

import json

DEFAULT_MAX_HOPS = 4

STATUS_COMPUTED = "computed"
STATUS_RESERVED = "reserved"


@dataclass(frozen=True)
class Realization:
    experiment: str
    node_map: dict  # experiment node id -> resource uuid
    link_map: dict  # experiment link id -> tuple of resource link uuids
    watermark: int
    status: str = STATUS_COMPUTED

    def to_obj(self) -> dict:
        return {
            "experiment": self.experiment,
            "node_map": dict(self.node_map),
            "link_map": {lid: list(path) for lid, path in self.link_map.items()},
            "watermark": self.watermark,
            "status": self.status,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Realization":
        return cls(
            experiment=obj["experiment"],
            node_map=dict(obj["node_map"]),
            link_map={lid: tuple(path) for lid, path in obj["link_map"].items()},
            watermark=obj["watermark"],
            status=obj["status"],
        )


# ---------------------------------------------------------------------------
# Path semantics


def compose_path_props(view: ResourceView, path: tuple) -> dict:
    """Offered property map of a multi-segment path (empty path: loopback)."""
    if not path:
        return {"latency": 0, "loss": 0}
    segs = [view.links[u] for u in path]
    offered: dict = {
        "bandwidth": min(s.capacity_bps for s in segs),
        "latency": sum(_int_prop(s.props, "latency") for s in segs),
        "loss": _compose_loss([_int_prop(s.props, "loss") for s in segs]),
    }
    for key in segs[0].props:
        if key in ("bandwidth", "latency", "loss"):
            continue
        first = segs[0].props[key]
        if all(key in s.props and _structural_eq(s.props[key], first) for s in segs[1:]):
            offered[key] = first
    return offered


def _int_prop(props: dict, key: str) -> int:
    v = props.get(key, 0)
    return v if isinstance(v, int) and not isinstance(v, bool) else 0


def _compose_loss(ppms: list) -> int:
    passthrough = Fraction(1)
    for ppm in ppms:
        passthrough *= 1 - Fraction(ppm, 10**6)
    total = 10**6 * (1 - passthrough)
    return int(total + Fraction(1, 2)) if total >= 0 else 0


def link_demand_bps(props: dict) -> int:
    """Bandwidth this link consumes from every segment it is mapped onto."""
    leaf = props.get("bandwidth")
    if isinstance(leaf, Constraint):
        if leaf.op in ("gt", "ge", "eq") and isinstance(leaf.value, int):
            return leaf.value
        return 0
    if isinstance(leaf, int) and not isinstance(leaf, bool):
        return leaf
    return 0


def path_feasible(view, path, props, demand, pending_bps, exclude=None) -> bool:
    for seg in path:
        if view.residual_bps(seg, exclude) - pending_bps.get(seg, 0) < demand:
            return False
    return match_props(props, compose_path_props(view, path))


def find_path(
    view: ResourceView,
    src: str,
    dst: str,
    props: dict,
    demand: int,
    pending_bps: dict,
    max_hops: int = DEFAULT_MAX_HOPS,
    exclude: str | None = None,
) -> tuple | None:
    """Shortest feasible path, deterministic: length first then segment order.

    Paths are simple; a single implicit WAN hop may join two site
    gateways and contributes no segment.
    """
    for length in range(0, max_hops + 1):
        hit = _first_path_of_length(
            view, src, dst, length, props, demand, pending_bps, exclude
        )
        if hit is not None:
            return hit
    return None


def _first_path_of_length(view, src, dst, length, props, demand, pending_bps, exclude):
    def dfs(node, path, visited, wan_used):
        if len(path) == length:
            if node == dst and path_feasible(view, path, props, demand, pending_bps, exclude):
                return path
            if (
                node != dst
                and not wan_used
                and view.is_gateway(node)
                and view.is_gateway(dst)
                and view.nodes[node].site != view.nodes[dst].site
                and path_feasible(view, path, props, demand, pending_bps, exclude)
            ):
                return path
            return None
        for seg in view.adjacency.get(node, ()):
            if seg in path:
                continue
            a, b = view.links[seg].endpoints
            nxt = b if node == a else a
            if nxt in visited:
                continue
            hit = dfs(nxt, path + (seg,), visited | {nxt}, wan_used)
            if hit is not None:
                return hit
        if not wan_used and view.is_gateway(node):
            for g in view.other_site_gateways(view.nodes[node].site):
                if g in visited:
                    continue
                hit = dfs(g, path, visited | {g}, True)
                if hit is not None:
                    return hit
        return None

    if length == 0 and src == dst:
        return () if path_feasible(view, (), props, demand, pending_bps, exclude) else None
    return dfs(src, (), {src}, False)


def walk_path(view: ResourceView, src: str, dst: str, path: tuple) -> bool:
    """Whether the segment sequence connects src to dst (one WAN hop allowed)."""
    cur, wan_used = src, False
    for seg in path:
        if seg not in view.links:
            return False
        a, b = view.links[seg].endpoints
        if cur == a:
            cur = b
        elif cur == b:
            cur = a
        else:
            if wan_used or not view.is_gateway(cur):
                return False
            for g in view.other_site_gateways(view.nodes[cur].site):
                if g == a:
                    cur, wan_used = b, True
                    break
                if g == b:
                    cur, wan_used = a, True
                    break
            else:
                return False
    if cur == dst:
        return True
    return (
        not wan_used
        and view.is_gateway(cur)
        and dst in view.nodes
        and view.is_gateway(dst)
        and view.nodes[cur].site != view.nodes[dst].site
    )


# ---------------------------------------------------------------------------
# Validation


def validate_realization(view: ResourceView, x: Network, r: Realization) -> list:
    """All violations of an embedding; empty list means valid."""
    violations: list[str] = []
    exclude = r.experiment

    for n in x.nodes:
        if n.id not in r.node_map:
            violations.append(f"node {n.id}: unmapped")
            continue
        uuid = r.node_map[n.id]
        if uuid not in view.nodes:
            raise ValidationError(f"node {n.id}: dangling resource {uuid}")
        if not match_props(n.props, view.nodes[uuid].props):
            violations.append(f"node {n.id}: properties unsatisfied by {uuid}")

    placed = Counter(r.node_map.get(n.id) for n in x.nodes if n.id in r.node_map)
    for uuid, count in placed.items():
        rn = view.nodes[uuid]
        used = view.tenant_slots_used(uuid, exclude=exclude) + count
        if rn.alloc == "exclusive" and used > 1:
            violations.append(f"node capacity: exclusive {uuid} has {used} tenants")
        elif used > rn.slots:
            violations.append(f"node capacity: {uuid} over {rn.slots} slots")

    seg_demand: Counter = Counter()
    for l in x.links:
        if l.id not in r.link_map:
            violations.append(f"link {l.id}: unmapped")
            continue
        path = r.link_map[l.id]
        for seg in path:
            if seg not in view.links:
                raise ValidationError(f"link {l.id}: dangling segment {seg}")
        src, dst = (r.node_map.get(e) for e in l.endpoints)
        if src is None or dst is None:
            continue
        if not walk_path(view, src, dst, path):
            violations.append(f"link {l.id}: path does not connect its endpoints")
        if not match_props(l.props, compose_path_props(view, path)):
            violations.append(f"link {l.id}: path properties unsatisfied")
        demand = link_demand_bps(l.props)
        for seg in path:
            seg_demand[seg] += demand

    for seg, demand in seg_demand.items():
        if view.reserved_bps(seg, exclude=exclude) + demand > view.links[seg].capacity_bps:
            violations.append(f"link capacity: segment {seg} oversubscribed")

    return violations


# ---------------------------------------------------------------------------
# Greedy engine


def _requirement_count(props: dict) -> int:
    return sum(1 for _ in iter_requirements(props))


def _assign_links(view, x, node_map, max_hops):
    """Canonical per-link path assignment; shared by both engines."""
    link_map = {}
    pending: dict = {}
    for l in sorted(x.links, key=lambda l: l.id):
        demand = link_demand_bps(l.props)
        src, dst = node_map[l.endpoints[0]], node_map[l.endpoints[1]]
        path = find_path(view, src, dst, l.props, demand, pending, max_hops)
        if path is None:
            return None, l.id
        link_map[l.id] = path
        for seg in path:
            pending[seg] = pending.get(seg, 0) + demand
    return link_map, None


def realize_greedy(
    view: ResourceView,
    x: Network,
    experiment: str,
    seed: int = 0,
    max_hops: int = DEFAULT_MAX_HOPS,
) -> Realization:
    """One-pass embedding: most-constrained nodes first, no backtracking.

    ``seed`` is reserved for randomized placement strategies; the stock
    policy is fully deterministic.
    """
    del seed
    candidates = {n.id: node_candidates(view, n.props) for n in x.nodes}
    order = sorted(x.nodes, key=lambda n: (-_requirement_count(n.props), n.id))
    node_map: dict = {}
    slots_pending: Counter = Counter()

    for n in order:
        best, best_residual = None, None
        for uuid in candidates[n.id]:
            residual = view.residual_slots(uuid) - slots_pending[uuid]
            if residual < 1:
                continue
            if best is None or residual > best_residual:
                best, best_residual = uuid, residual
        if best is None:
            raise UnrealizableError(
                f"no available candidate for node {n.id}",
                data={
                    "kind": "node",
                    "node": n.id,
                    "candidates": {nid: len(c) for nid, c in candidates.items()},
                },
            )
        node_map[n.id] = best
        slots_pending[best] += 1

    link_map, failed = _assign_links(view, x, node_map, max_hops)
    if link_map is None:
        raise UnrealizableError(
            f"no feasible path for link {failed}", data={"kind": "link", "link": failed}
        )
    return Realization(experiment, node_map, link_map, view.watermark)


# ---------------------------------------------------------------------------
# Complete engine


def realize_complete(
    view: ResourceView,
    x: Network,
    experiment: str,
    max_nodes_expanded: int = 500_000,
    max_ms: int = 30_000,
    max_hops: int = DEFAULT_MAX_HOPS,
) -> Realization:
    """Backtracking search with forward checking; exhaustive within budget.

    Raises UnrealizableError with data {"proven": True} only after the
    full assignment space has been ruled out.
    """
    domains = {n.id: node_candidates(view, n.props) for n in x.nodes}
    for nid, dom in domains.items():
        if not dom:
            raise UnrealizableError(
                f"no candidate for node {nid}",
                data={"kind": "node", "node": nid, "proven": True},
            )
    props_by_id = {n.id: n.props for n in x.nodes}
    neighbors: dict = {n.id: [] for n in x.nodes}
    for l in x.links:
        a, b = l.endpoints
        neighbors[a].append(b)
        neighbors[b].append(a)

    deadline = time.monotonic() + max_ms / 1000.0
    expanded = 0
    reach_cache: dict = {}

    def reachable(u: str, v: str) -> bool:
        if u == v:
            return True
        key = (u, v) if u <= v else (v, u)
        if key not in reach_cache:
            reach_cache[key] = (
                find_path(view, u, v, {}, 0, {}, max_hops) is not None
            )
        return reach_cache[key]

    node_map: dict = {}
    slots_pending: Counter = Counter()
    result: list = []

    def search(unassigned: list) -> bool:
        nonlocal expanded
        if not unassigned:
            link_map, _ = _assign_links(view, x, node_map, max_hops)
            if link_map is None:
                return False
            result.append(Realization(experiment, node_map.copy(), link_map, view.watermark))
            return True
        if time.monotonic() > deadline:
            raise BudgetExhaustedError("complete solver exceeded its time budget")
        nid = min(unassigned, key=lambda i: (len(domains[i]), i))
        rest = [i for i in unassigned if i != nid]
        for uuid in domains[nid]:
            expanded += 1
            if expanded > max_nodes_expanded:
                raise BudgetExhaustedError("complete solver exceeded its node budget")
            if view.residual_slots(uuid) - slots_pending[uuid] < 1:
                continue
            if not all(
                reachable(uuid, node_map[other])
                for other in neighbors[nid]
                if other in node_map
            ):
                continue
            node_map[nid] = uuid
            slots_pending[uuid] += 1
            # Forward check: drop candidates a neighbor can no longer use.
            pruned: list = []
            dead_end = False
            if view.residual_slots(uuid) - slots_pending[uuid] < 1:
                for other in rest:
                    if uuid in domains[other]:
                        domains[other] = [c for c in domains[other] if c != uuid]
                        pruned.append((other, uuid, "slots"))
            for other in neighbors[nid]:
                if other in node_map or other not in rest:
                    continue
                keep = [c for c in domains[other] if reachable(uuid, c)]
                if len(keep) != len(domains[other]):
                    for c in domains[other]:
                        if c not in keep:
                            pruned.append((other, c, "reach"))
                    domains[other] = keep
                if not keep:
                    dead_end = True
            if not dead_end and search(rest):
                return True
            for other, c, _ in pruned:
                domains[other].append(c)
            for other in {p[0] for p in pruned}:
                domains[other].sort()
            slots_pending[uuid] -= 1
            del node_map[nid]
        return False

    if search(sorted(domains)):
        return result[0]
    raise UnrealizableError(
        "no embedding exists for this experiment",
        data={"kind": "exhausted", "proven": True},
    )


# ---------------------------------------------------------------------------
# Reservation transactions


def reservation_demands(x: Network, r: Realization) -> tuple:
    """(node tenant counts by uuid, bandwidth by segment uuid, touched segments)."""
    tenants = Counter(r.node_map.values())
    seg_bps: Counter = Counter()
    touched_links = set()
    for l in x.links:
        demand = link_demand_bps(l.props)
        for seg in r.link_map.get(l.id, ()):
            touched_links.add(seg)
            seg_bps[seg] += demand
    return tenants, seg_bps, touched_links


def build_reserve_txn(store: Store, x: Network, r: Realization) -> Transaction:
    """Reservation writes guarded by the versions observed at r.watermark.

    Existence of every touched resource is guarded through its uuid index
    cell, so decommissioning anything we map conflicts this commit.
    """
    at = r.watermark
    tenants, seg_bps, touched_links = reservation_demands(x, r)
    txn = Transaction()
    for uuid in sorted(set(tenants) | touched_links):
        idx_version = store.version_of(f"uuid/{uuid}", at=at)
        if idx_version == 0:
            raise ValidationError(f"resource {uuid} is not commissioned")
        txn.read(f"uuid/{uuid}", idx_version)
    for uuid, count in sorted(tenants.items()):
        key = RSV_NODE_PREFIX + uuid
        cell = store.get(key, at=at)
        current = json.loads(cell.value)["tenants"] if cell else {}
        txn.read(key, cell.version if cell else 0)
        merged = dict(current)
        merged[r.experiment] = merged.get(r.experiment, 0) + count
        txn.put(key, _dumps({"tenants": merged}))
    for uuid in sorted(touched_links):
        key = RSV_LINK_PREFIX + uuid
        cell = store.get(key, at=at)
        txn.read(key, cell.version if cell else 0)
        demand = seg_bps.get(uuid, 0)
        if demand > 0:
            current = json.loads(cell.value)["reserved"] if cell else {}
            merged = dict(current)
            merged[r.experiment] = merged.get(r.experiment, 0) + demand
            txn.put(key, _dumps({"reserved": merged}))
    return txn


def build_release_txn(store: Store, experiment: str) -> Transaction:
    """Revert every reservation cell this experiment appears in."""
    txn = Transaction()
    for prefix, field in ((RSV_NODE_PREFIX, "tenants"), (RSV_LINK_PREFIX, "reserved")):
        for cell in store.scan(prefix):
            table = json.loads(cell.value)[field]
            if experiment not in table:
                continue
            txn.read(cell.key, cell.version)
            kept = {k: v for k, v in table.items() if k != experiment}
            if kept:
                txn.put(cell.key, _dumps({field: kept}))
            else:
                txn.delete(cell.key)
    return txn


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
