"""Adding and removing resource networks from the managed pool.

Commission accepts a stamped resource document from a site's commander,
validates identifier format and deployment-wide uniqueness, and merges it
into the site model in one transaction.  Simple decommission removes
nodes (and their links) only when nothing else is degraded; anything that
would change surviving resources must go through fragmented mode, where
the administrator supplies the corrected replacement model wholesale and
the core checks structure only, never capacity arithmetic.
"""

from __future__ import annotations

import hashlib
import json
import re
import uuid as uuidlib
from dataclasses import dataclass

from .errors import InUseError, ImpactError, NotFoundError, ValidationError
from .model import Network, canonical_dumps, network_from_obj, network_to_obj
from .store import Store, Transaction, retry_txn
from .substrate import RSV_LINK_PREFIX, RSV_NODE_PREFIX, SITE_PREFIX

UUID_PREFIX = "uuid/"
UUID_SEQ_KEY = "meta/uuidseq"

UUID_V4_RE = re.compile(
    r"^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$"
)


class UuidFactory:
    """Deterministic pseudorandom 128-bit identifiers.

    Derived from a deployment seed and a store-persisted sequence number,
    so a journal-restored deployment keeps minting the same stream.
    """

    def __init__(self, store: Store, seed: int = 1):
        self.store = store
        self.seed = seed

    def take(self, n: int) -> list:
        if n <= 0:
            return []

        def build():
            cell = self.store.get(UUID_SEQ_KEY)
            start = int(cell.value) if cell else 0
            txn = Transaction().read(UUID_SEQ_KEY, cell.version if cell else 0)
            txn.put(UUID_SEQ_KEY, str(start + n).encode())
            build.start = start
            return txn

        retry_txn(build, self.store)
        return [self._derive(i) for i in range(build.start, build.start + n)]

    def _derive(self, index: int) -> str:
        digest = hashlib.sha256(f"{self.seed}:{index}".encode()).digest()[:16]
        return str(uuidlib.UUID(bytes=digest, version=4))


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    endpoint: str
    mechanisms: tuple
    model: Network

    def to_cell(self) -> bytes:
        return canonical_dumps(
            {
                "endpoint": self.endpoint,
                "mechanisms": list(self.mechanisms),
                "model": network_to_obj(self.model),
            }
        ).encode()

    @classmethod
    def from_cell(cls, site_id: str, value: bytes) -> "SiteRecord":
        obj = json.loads(value)
        return cls(
            site_id=site_id,
            endpoint=obj["endpoint"],
            mechanisms=tuple(obj["mechanisms"]),
            model=network_from_obj(obj["model"]),
        )


def load_site(store: Store, site_id: str, at=None) -> SiteRecord:
    cell = store.get(SITE_PREFIX + site_id, at)
    if cell is None:
        raise NotFoundError(f"unknown site {site_id!r}")
    return SiteRecord.from_cell(site_id, cell.value)


class Commissioner:
    def __init__(self, store: Store):
        self.store = store

    # -- commission ---------------------------------------------------------

    def accept(self, site_id: str, doc: dict, endpoint: str, mechanisms: tuple) -> list:
        """Validate a stamped resource document and merge it into the site.

        Returns assigned uuids (nodes then links, document order).  UUID
        collisions are rejected with the colliding values listed so the
        commander can regenerate and resubmit.
        """
        net = network_from_obj(doc)
        if net.role != "resource":
            raise ValidationError("commissioning requires a resource network")
        incoming = [(n.uuid, "node") for n in net.nodes] + [
            (l.uuid, "link") for l in net.links
        ]
        bad = [u for u, _ in incoming if not UUID_V4_RE.match(u)]
        if bad:
            raise ValidationError("malformed uuids", data={"malformed": bad})
        seen: set = set()
        colliding = [u for u, _ in incoming if u in seen or seen.add(u)]
        for u, _ in incoming:
            if self.store.get(UUID_PREFIX + u) is not None:
                colliding.append(u)
        if colliding:
            raise ValidationError("uuid collision", data={"colliding": sorted(set(colliding))})
        for n in net.nodes:
            if n.site != site_id:
                raise ValidationError(f"node {n.id} stamped for foreign site {n.site}")

        def build():
            cell = self.store.get(SITE_PREFIX + site_id)
            txn = Transaction().read(SITE_PREFIX + site_id, cell.version if cell else 0)
            if cell is None:
                merged = net
                record = SiteRecord(site_id, endpoint, tuple(mechanisms), _sorted_model(merged))
            else:
                current = SiteRecord.from_cell(site_id, cell.value)
                overlap_n = {n.id for n in current.model.nodes} & {n.id for n in net.nodes}
                overlap_l = {l.id for l in current.model.links} & {l.id for l in net.links}
                if overlap_n or overlap_l:
                    raise ValidationError(
                        f"ids already commissioned at {site_id}: "
                        f"{sorted(overlap_n | overlap_l)}"
                    )
                merged = Network(
                    "resource",
                    current.model.nodes + net.nodes,
                    current.model.links + net.links,
                )
                record = SiteRecord(
                    site_id, current.endpoint, current.mechanisms, _sorted_model(merged)
                )
            txn.put(SITE_PREFIX + site_id, record.to_cell())
            for el_uuid, kind in incoming:
                txn.read(UUID_PREFIX + el_uuid, 0)
                txn.put(
                    UUID_PREFIX + el_uuid,
                    canonical_dumps({"site": site_id, "kind": kind}).encode(),
                )
            return txn

        retry_txn(build, self.store)
        return [u for u, _ in incoming]

    # -- decommission -----------------------------------------------------------

    def decommission_simple(self, site_id: str, node_ids: list, force_hook=None, force=False):
        record = load_site(self.store, site_id)
        model = record.model
        known = {n.id for n in model.nodes}
        unknown = [i for i in node_ids if i not in known]
        if unknown:
            raise NotFoundError(f"unknown nodes at {site_id}: {unknown}")
        removed = set(node_ids)
        incident = [l for l in model.links if removed & set(l.endpoints)]

        # A removed node with two or more surviving neighbors may carry
        # transit between survivors; the core cannot reason about that
        # capacity, so it forces fragmented mode.
        adjacency: dict = {}
        for l in model.links:
            a, b = l.endpoints
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
        for nid in removed:
            surviving = adjacency.get(nid, set()) - removed
            if len(surviving) >= 2:
                raise ImpactError(
                    f"removing {nid} would degrade paths between surviving nodes; "
                    "use fragmented mode",
                    data={"node": nid},
                )

        self._check_in_use(model, removed, incident, force_hook, force)

        def build():
            cell = self.store.get(SITE_PREFIX + site_id)
            txn = Transaction().read(SITE_PREFIX + site_id, cell.version)
            current = SiteRecord.from_cell(site_id, cell.value)
            kept_nodes = tuple(n for n in current.model.nodes if n.id not in removed)
            kept_links = tuple(l for l in current.model.links if not (removed & set(l.endpoints)))
            new_model = Network("resource", kept_nodes, kept_links)
            txn.put(
                SITE_PREFIX + site_id,
                SiteRecord(site_id, current.endpoint, current.mechanisms, new_model).to_cell(),
            )
            for n in current.model.nodes:
                if n.id in removed:
                    txn.read(UUID_PREFIX + n.uuid, self.store.version_of(UUID_PREFIX + n.uuid))
                    txn.delete(UUID_PREFIX + n.uuid)
            for l in current.model.links:
                if removed & set(l.endpoints):
                    txn.read(UUID_PREFIX + l.uuid, self.store.version_of(UUID_PREFIX + l.uuid))
                    txn.delete(UUID_PREFIX + l.uuid)
            return txn

        retry_txn(build, self.store)

    def decommission_fragmented(
        self, site_id: str, node_ids: list, replacement: dict, stamp, force_hook=None, force=False
    ):
        record = load_site(self.store, site_id)
        model = record.model
        known = {n.id for n in model.nodes}
        unknown = [i for i in node_ids if i not in known]
        if unknown:
            raise NotFoundError(f"unknown nodes at {site_id}: {unknown}")
        removed = set(node_ids)

        stamped = stamp(replacement) if stamp else replacement
        new_model = network_from_obj(stamped)
        if new_model.role != "resource":
            raise ValidationError("replacement must be a resource network")
        expected = known - removed
        got = {n.id for n in new_model.nodes}
        if got != expected:
            raise ValidationError(
                "replacement node set must equal the current model minus the removals",
                data={
                    "missing": sorted(expected - got),
                    "unexpected": sorted(got - expected),
                },
            )
        # Surviving elements keep their uuids; brand-new links got stamped.
        current_node_uuids = {n.id: n.uuid for n in model.nodes}
        current_link_uuids = {l.id: l.uuid for l in model.links}
        fixed_nodes = []
        for n in new_model.nodes:
            expected_uuid = current_node_uuids[n.id]
            if n.uuid != expected_uuid:
                n = type(n)(n.id, n.props, uuid=expected_uuid, site=site_id, alloc=n.alloc)
            fixed_nodes.append(n)
        fixed_links = []
        for l in new_model.links:
            if l.id in current_link_uuids and l.uuid != current_link_uuids[l.id]:
                l = type(l)(l.id, l.endpoints, l.props, uuid=current_link_uuids[l.id], capacity_bps=l.capacity_bps)
            fixed_links.append(l)
        new_model = Network("resource", tuple(fixed_nodes), tuple(fixed_links))

        vanished_links = [l for l in model.links if l.id not in {x.id for x in new_model.links}]
        self._check_in_use(model, removed, vanished_links, force_hook, force)

        new_uuids = {n.uuid for n in new_model.nodes} | {l.uuid for l in new_model.links}
        old_uuids = {n.uuid for n in model.nodes} | {l.uuid for l in model.links}

        def build():
            cell = self.store.get(SITE_PREFIX + site_id)
            txn = Transaction().read(SITE_PREFIX + site_id, cell.version)
            current = SiteRecord.from_cell(site_id, cell.value)
            txn.put(
                SITE_PREFIX + site_id,
                SiteRecord(
                    site_id, current.endpoint, current.mechanisms, _sorted_model(new_model)
                ).to_cell(),
            )
            for gone in sorted(old_uuids - new_uuids):
                txn.read(UUID_PREFIX + gone, self.store.version_of(UUID_PREFIX + gone))
                txn.delete(UUID_PREFIX + gone)
            for fresh in sorted(new_uuids - old_uuids):
                kind = "link" if fresh in {l.uuid for l in new_model.links} else "node"
                txn.read(UUID_PREFIX + fresh, 0)
                txn.put(
                    UUID_PREFIX + fresh,
                    canonical_dumps({"site": site_id, "kind": kind}).encode(),
                )
            return txn

        retry_txn(build, self.store)

    def _check_in_use(self, model: Network, removed: set, dropped_links, force_hook, force):
        touched = [n.uuid for n in model.nodes if n.id in removed]
        touched += [l.uuid for l in dropped_links]
        blocking: set = set()
        for uuid in touched:
            cell = self.store.get(RSV_NODE_PREFIX + uuid)
            if cell:
                blocking.update(json.loads(cell.value)["tenants"])
            cell = self.store.get(RSV_LINK_PREFIX + uuid)
            if cell:
                blocking.update(json.loads(cell.value)["reserved"])
        for cell in self.store.scan("sb/"):
            entry = json.loads(cell.value)
            if entry.get("uuid") in touched:
                blocking.add(entry["experiment"])
        if not blocking:
            return
        if force and force_hook is not None:
            force_hook(sorted(blocking))
            return self._check_in_use(model, removed, dropped_links, None, False)
        raise InUseError(
            "resources are reserved or materializing",
            data={"experiments": sorted(blocking)},
        )


def _sorted_model(model: Network) -> Network:
    return Network(
        "resource",
        tuple(sorted(model.nodes, key=lambda n: n.id)),
        tuple(sorted(model.links, key=lambda l: l.id)),
    )
