"""Snapshot view of the commissioned resource pool plus live reservations.

Discovery and the embedding engines are pure functions over one of these
views, so concurrent callers never coordinate: a view is loaded at a store
watermark and optimistic reservation commits detect staleness later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .model import Network, network_from_obj
from .store import Store

SITE_PREFIX = "site/"
RSV_NODE_PREFIX = "rsv/node/"
RSV_LINK_PREFIX = "rsv/link/"

UNBOUNDED = 1 << 62


@dataclass(frozen=True)
class ResNode:
    uuid: str
    id: str
    site: str
    alloc: str
    props: dict
    slots: int  # tenant capacity; exclusive nodes always 1


@dataclass(frozen=True)
class ResLink:
    uuid: str
    id: str
    site: str
    endpoints: tuple  # (node uuid, node uuid)
    props: dict
    capacity_bps: int


@dataclass
class ResourceView:
    watermark: int
    nodes: dict = field(default_factory=dict)  # uuid -> ResNode
    links: dict = field(default_factory=dict)  # uuid -> ResLink
    adjacency: dict = field(default_factory=dict)  # node uuid -> [link uuid]
    node_tenants: dict = field(default_factory=dict)  # uuid -> {exp: slots}
    link_reserved: dict = field(default_factory=dict)  # uuid -> {exp: bps}
    gateways: dict = field(default_factory=dict)  # site -> [node uuid]
    sites: dict = field(default_factory=dict)  # site -> {"model_version": v}

    @classmethod
    def load(cls, store: Store, at: int | None = None) -> "ResourceView":
        at = store.snapshot() if at is None else at
        view = cls(watermark=at)
        for cell in store.scan(SITE_PREFIX, at=at):
            site_id = cell.key[len(SITE_PREFIX):]
            record = json.loads(cell.value)
            model = network_from_obj(record["model"])
            view.sites[site_id] = {"model_version": cell.version}
            view._index_model(site_id, model)
        for cell in store.scan(RSV_NODE_PREFIX, at=at):
            view.node_tenants[cell.key[len(RSV_NODE_PREFIX):]] = json.loads(cell.value)["tenants"]
        for cell in store.scan(RSV_LINK_PREFIX, at=at):
            view.link_reserved[cell.key[len(RSV_LINK_PREFIX):]] = json.loads(cell.value)["reserved"]
        for uuid in view.adjacency:
            view.adjacency[uuid].sort()
        for site in view.gateways:
            view.gateways[site].sort()
        return view

    def _index_model(self, site_id: str, model: Network) -> None:
        by_id = {}
        for n in model.nodes:
            slots = 1
            if n.alloc == "shared":
                raw = n.props.get("slots")
                slots = raw if isinstance(raw, int) and not isinstance(raw, bool) else UNBOUNDED
            rn = ResNode(n.uuid, n.id, site_id, n.alloc, n.props, slots)
            self.nodes[n.uuid] = rn
            by_id[n.id] = n.uuid
            self.adjacency.setdefault(n.uuid, [])
            if n.props.get("gateway") is True:
                self.gateways.setdefault(site_id, []).append(n.uuid)
        for l in model.links:
            eps = (by_id[l.endpoints[0]], by_id[l.endpoints[1]])
            self.links[l.uuid] = ResLink(l.uuid, l.id, site_id, eps, l.props, l.capacity_bps)
            self.adjacency[eps[0]].append(l.uuid)
            self.adjacency[eps[1]].append(l.uuid)

    # -- residuals ---------------------------------------------------------------

    def tenant_slots_used(self, uuid: str, exclude: str | None = None) -> int:
        tenants = self.node_tenants.get(uuid, {})
        return sum(v for k, v in tenants.items() if k != exclude)

    def residual_slots(self, uuid: str, exclude: str | None = None) -> int:
        return self.nodes[uuid].slots - self.tenant_slots_used(uuid, exclude)

    def reserved_bps(self, uuid: str, exclude: str | None = None) -> int:
        reserved = self.link_reserved.get(uuid, {})
        return sum(v for k, v in reserved.items() if k != exclude)

    def residual_bps(self, uuid: str, exclude: str | None = None) -> int:
        return self.links[uuid].capacity_bps - self.reserved_bps(uuid, exclude)

    def available(self, uuid: str) -> bool:
        return self.residual_slots(uuid) >= 1

    def is_gateway(self, uuid: str) -> bool:
        return uuid in self.gateways.get(self.nodes[uuid].site, ())

    def other_site_gateways(self, site: str) -> list:
        out = []
        for s in sorted(self.gateways):
            if s != site:
                out.extend(self.gateways[s])
        return out
