"""Isolation-translating network edge, simulated end to end.

Each experiment link gets a WAN virtual-network identifier (VNI) plus one
site-local tag per site it touches (VLAN id, zigbee CID, or CDMA channel).
A site's edge node translates local frames to WAN frames and back; the
simulated WAN is an in-process bus between sites.  Allocation state lives
in the store so it is transactional and survives restarts; site-side
tables are pushed over the commander's hb.bind/hb.unbind methods.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable

from .errors import ConflictError, SpaceExhaustedError, ValidationError
from .model import canonical_dumps
from .store import Store, Transaction, retry_txn

VNI_MIN, VNI_MAX = 4096, 16777215

TAG_RANGES = {
    "vlan": (2, 4094),
    "zigbee-cid": (0, 65535),
    "cdma-channel": (0, 255),
}

VNI_KEY = "isol/vni"


def tag_key(site: str, mechanism: str) -> str:
    return f"isol/tag/{site}/{mechanism}"


@dataclass(frozen=True)
class Binding:
    site: str
    experiment: str
    link: str
    vni: int
    mechanism: str
    tag: int
    members: frozenset = frozenset()


@dataclass(frozen=True)
class Frame:
    """Simulated layer-2 unit; encap is ("local", mechanism, tag) or ("wan", vni)."""

    src: str
    dst: str
    encap: tuple
    payload: bytes

    @property
    def is_wan(self) -> bool:
        return self.encap[0] == "wan"


class IsolationNode:
    """Per-site translation tables between local tags and WAN VNIs."""

    def __init__(self, site_id: str, mechanisms: tuple = ("vlan",)):
        self.site_id = site_id
        self.mechanisms = tuple(mechanisms)
        self._by_tag: dict[tuple, Binding] = {}
        self._by_vni: dict[int, Binding] = {}
        self.drops: Counter = Counter()

    def bind(self, binding: Binding) -> None:
        key = (binding.mechanism, binding.tag)
        if key in self._by_tag or binding.vni in self._by_vni:
            raise ConflictError(f"binding collision at {self.site_id}: {key}")
        self._by_tag[key] = binding
        self._by_vni[binding.vni] = binding

    def unbind(self, vni: int) -> None:
        binding = self._by_vni.pop(vni, None)
        if binding is not None:
            self._by_tag.pop((binding.mechanism, binding.tag), None)

    def unbind_experiment(self, experiment: str) -> None:
        for vni in [v for v, b in self._by_vni.items() if b.experiment == experiment]:
            self.unbind(vni)

    def binding_count(self) -> int:
        return len(self._by_vni)

    def table_obj(self) -> dict:
        return {
            str(vni): {
                "experiment": b.experiment,
                "link": b.link,
                "mechanism": b.mechanism,
                "tag": b.tag,
                "members": sorted(b.members),
            }
            for vni, b in self._by_vni.items()
        }

    def egress(self, frame: Frame) -> Frame | None:
        """Local frame leaving the site: swap the tag for the bound VNI."""
        kind, mechanism, tag = frame.encap
        if kind != "local":
            self.drops["not-local"] += 1
            return None
        binding = self._by_tag.get((mechanism, tag))
        if binding is None:
            self.drops["unbound"] += 1
            return None
        return replace(frame, encap=("wan", binding.vni))

    def ingress(self, frame: Frame) -> Frame | None:
        """WAN frame entering the site: swap the VNI for the local tag."""
        kind, vni = frame.encap
        if kind != "wan":
            self.drops["not-wan"] += 1
            return None
        binding = self._by_vni.get(vni)
        if binding is None:
            self.drops["no-binding"] += 1
            return None
        return replace(frame, encap=("local", binding.mechanism, binding.tag))

    def deliver(self, frame: Frame) -> Binding | None:
        """Hand a local frame to its destination segment, if it belongs."""
        _, mechanism, tag = frame.encap
        binding = self._by_tag.get((mechanism, tag))
        if binding is None:
            self.drops["unbound"] += 1
            return None
        if frame.dst not in binding.members:
            self.drops["not-member"] += 1
            return None
        return binding


class WanBus:
    """In-process WAN: routes a WAN frame to its destination site's edge."""

    def __init__(self, locator: Callable[[str], str | None]):
        self._locator = locator
        self._nodes: dict[str, IsolationNode] = {}
        self.delivered: list[tuple] = []
        self.drops: Counter = Counter()

    def attach(self, node: IsolationNode) -> None:
        self._nodes[node.site_id] = node

    def send(self, frame: Frame) -> tuple:
        """Returns ("delivered", site, experiment) or ("dropped", reason)."""
        if not frame.is_wan:
            self.drops["not-wan"] += 1
            return ("dropped", "not-wan")
        site = self._locator(frame.dst)
        node = self._nodes.get(site) if site else None
        if node is None:
            self.drops["no-route"] += 1
            return ("dropped", "no-route")
        local = node.ingress(frame)
        if local is None:
            return ("dropped", "no-binding")
        binding = node.deliver(local)
        if binding is None:
            return ("dropped", "not-member")
        self.delivered.append((site, binding.experiment, frame.dst, frame.payload))
        return ("delivered", site, binding.experiment)


class IsolationAllocator:
    """Store-backed VNI and local-tag allocation, lowest free first."""

    def __init__(self, store: Store):
        self.store = store

    # -- vni ---------------------------------------------------------------

    def _vni_table(self, at=None) -> tuple[dict, int]:
        cell = self.store.get(VNI_KEY, at)
        table = {} if cell is None else json.loads(cell.value)
        return table, (cell.version if cell else 0)

    def allocate_vni(self, experiment: str, link: str) -> int:
        key = f"{experiment}/{link}"

        def build():
            table, version = self._vni_table()
            if key in table:
                raise ConflictError(f"vni already allocated for {key}")
            used = set(table.values())
            vni = VNI_MIN
            while vni in used:
                vni += 1
            if vni > VNI_MAX:
                raise SpaceExhaustedError("vni space exhausted")
            table[key] = vni
            txn = Transaction().read(VNI_KEY, version)
            txn.put(VNI_KEY, canonical_dumps(table).encode())
            build.vni = vni
            return txn

        retry_txn(build, self.store)
        return build.vni

    def vni_for(self, experiment: str, link: str) -> int | None:
        table, _ = self._vni_table()
        return table.get(f"{experiment}/{link}")

    def vni_count(self) -> int:
        return len(self._vni_table()[0])

    # -- local tags -----------------------------------------------------------

    def _tag_table(self, site: str, mechanism: str, at=None) -> tuple[dict, int]:
        cell = self.store.get(tag_key(site, mechanism), at)
        table = {} if cell is None else json.loads(cell.value)
        return table, (cell.version if cell else 0)

    def bind_local(self, site: str, vni: int, mechanism: str, experiment: str, link: str) -> int:
        if mechanism not in TAG_RANGES:
            raise ValidationError(f"unsupported isolation mechanism {mechanism!r}")
        lo, hi = TAG_RANGES[mechanism]
        key = tag_key(site, mechanism)

        def build():
            table, version = self._tag_table(site, mechanism)
            used = {int(t) for t in table}
            tag = lo
            while tag in used:
                tag += 1
            if tag > hi:
                raise SpaceExhaustedError(f"{mechanism} tag space exhausted at {site}")
            table[str(tag)] = {"vni": vni, "experiment": experiment, "link": link}
            txn = Transaction().read(key, version)
            txn.put(key, canonical_dumps(table).encode())
            build.tag = tag
            return txn

        retry_txn(build, self.store)
        return build.tag

    def tag_count(self, site: str, mechanism: str) -> int:
        return len(self._tag_table(site, mechanism)[0])

    # -- release -----------------------------------------------------------------

    def release_into(self, txn: Transaction, experiment: str) -> list[tuple]:
        """Add the frees for one experiment to a transaction.

        Returns (site, mechanism, vni) triples so callers can push
        hb.unbind to the affected commanders.
        """
        unbound = []
        table, version = self._vni_table()
        kept = {k: v for k, v in table.items() if not k.startswith(f"{experiment}/")}
        if kept != table:
            txn.read(VNI_KEY, version)
            txn.put(VNI_KEY, canonical_dumps(kept).encode())
        for cell in self.store.scan("isol/tag/"):
            table = json.loads(cell.value)
            kept = {t: b for t, b in table.items() if b.get("experiment") != experiment}
            if kept == table:
                continue
            txn.read(cell.key, cell.version)
            if kept:
                txn.put(cell.key, canonical_dumps(kept).encode())
            else:
                txn.delete(cell.key)
            _, _, site, mechanism = cell.key.split("/", 3)
            for t, b in table.items():
                if b.get("experiment") == experiment:
                    unbound.append((site, mechanism, b["vni"]))
        return unbound

    def table_dump(self) -> str:
        """Canonical JSON audit dump of all allocation tables."""
        out: dict = {"vni": self._vni_table()[0], "tags": {}}
        for cell in self.store.scan("isol/tag/"):
            _, _, site, mechanism = cell.key.split("/", 3)
            out["tags"].setdefault(site, {})[mechanism] = json.loads(cell.value)
        return canonical_dumps(out)
