"""Per-site commander and the simulated driver framework.

The commander routes provisioning commands to drivers by resource UUID
(serialized per UUID), stamps identifiers during local commissioning,
manages the site's isolation edge, and answers the dematerialization
protocol.  Drivers implement the common four-state machine; simulated
device types differ only in how they validate setup/configure payloads,
and a fault profile injects transient failures and latency for chaos
tests.
"""

from __future__ import annotations

import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable

from .errors import NotFoundError, ValidationError
from .isolation import Binding, IsolationNode
from .model import ALLOC_EXCLUSIVE, canonical_dumps

STATE_OFF = "off"
STATE_ON = "on"
STATE_SETUP = "setup"
STATE_CONFIGURED = "configured"
DRIVER_STATES = (STATE_OFF, STATE_ON, STATE_SETUP, STATE_CONFIGURED)

VERB_POWER_ON = "power_on"
VERB_POWER_OFF = "power_off"
VERB_SETUP = "setup"
VERB_CONFIGURE = "configure"
VERB_QUERY = "query_state"

_EDGES = {
    (STATE_OFF, VERB_POWER_ON): STATE_ON,
    (STATE_ON, VERB_SETUP): STATE_SETUP,
    (STATE_SETUP, VERB_CONFIGURE): STATE_CONFIGURED,
}


def driver_transition(current: str, verb: str) -> str | None:
    """Next state for (current, verb), or None when the edge is illegal.

    power_off is legal from every state; the forward edges are
    off -> on -> setup -> configured.
    """
    if current not in DRIVER_STATES:
        return None
    if verb == VERB_POWER_OFF:
        return STATE_OFF
    return _EDGES.get((current, verb))


@dataclass
class FaultProfile:
    """Transient-failure and latency injection for simulated devices.

    ``fail_prob`` is a scalar or per-verb map of probabilities; latency is
    a fixed value or a (lo, hi) uniform range in microseconds.  A device
    stuck in ``stuck_state`` fails every command that would leave it.
    """

    fail_prob: float | dict = 0.0
    latency_us: int | tuple = 0
    stuck_state: str | None = None

    def prob_for(self, verb: str) -> float:
        if isinstance(self.fail_prob, dict):
            return float(self.fail_prob.get(verb, 0.0))
        return float(self.fail_prob)

    def latency_for(self, verb: str, rng: random.Random) -> int:
        lat = self.latency_us
        if isinstance(lat, dict):
            lat = lat.get(verb, 0)
        if isinstance(lat, tuple):
            return rng.randint(lat[0], lat[1])
        return int(lat)


class Driver:
    """Base simulated driver: the state machine plus a command log."""

    device_type = "generic"

    def __init__(self, driver_id: str, faults: FaultProfile | None = None, seed: int = 0):
        self.driver_id = driver_id
        self.faults = faults or FaultProfile()
        self.rng = random.Random(seed)
        self.states: dict[str, str] = {}
        self.props: dict[str, dict] = {}
        self.log: list[tuple] = []

    def register(self, uuid: str, props: dict | None = None) -> None:
        self.states.setdefault(uuid, STATE_OFF)
        self.props[uuid] = props or {}

    def serves(self, uuid: str) -> bool:
        return uuid in self.states

    def handle(self, uuid: str, verb: str, payload: dict) -> dict:
        state = self.states[uuid]
        self.log.append(("begin", uuid, verb, payload))
        try:
            if verb == VERB_QUERY:
                return {"ok": True, "state": state}
            lat = self.faults.latency_for(verb, self.rng)
            if lat:
                time.sleep(lat / 1e6)
            if self.faults.stuck_state == state and verb != VERB_QUERY:
                return {"ok": False, "reason": "stuck", "state": state}
            if self.rng.random() < self.faults.prob_for(verb):
                return {"ok": False, "reason": "transient-fault", "state": state}
            nxt = driver_transition(state, verb)
            if nxt is None:
                return {"ok": False, "reason": "illegal-transition", "state": state}
            reject = self._check(uuid, verb, payload)
            if reject:
                return {"ok": False, "reason": reject, "state": state}
            self.states[uuid] = nxt
            return {"ok": True, "state": nxt}
        finally:
            self.log.append(("end", uuid, verb))

    def _check(self, uuid: str, verb: str, payload: dict) -> str | None:
        """Device-specific payload validation; None accepts."""
        return None


class BareMetalDriver(Driver):
    """Compute node: setup loads an image the node actually offers."""

    device_type = "bare-metal"

    def _check(self, uuid, verb, payload):
        if verb != VERB_SETUP or "image" not in payload:
            return None
        offered = self.props.get(uuid, {}).get("image")
        name = payload["image"]
        if isinstance(offered, frozenset) and name in offered:
            return None
        if isinstance(offered, str) and name == offered:
            return None
        return "image-unavailable"


class IotEmbeddedDriver(Driver):
    """Embedded controller: setup names a firmware blob."""

    device_type = "iot-embedded"

    def _check(self, uuid, verb, payload):
        if verb == VERB_SETUP and "firmware" in payload:
            if not isinstance(payload["firmware"], str) or not payload["firmware"]:
                return "bad-firmware"
        return None


class NetPortDriver(Driver):
    """Network element: configure binds an isolation tag to the port."""

    device_type = "net-port"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.port_config: dict[str, dict] = {}

    def _check(self, uuid, verb, payload):
        if verb == VERB_CONFIGURE and payload:
            self.port_config[uuid] = dict(payload)
        return None


_DRIVER_TYPES = {
    d.device_type: d for d in (BareMetalDriver, IotEmbeddedDriver, NetPortDriver)
}


class Commander:
    """Routes commands to drivers, keeps the site's isolation edge.

    ``handle`` is the single dispatch surface shared by the wire server
    and in-process channels.  Commands for one UUID run strictly in
    arrival order.
    """

    def __init__(
        self,
        site_id: str,
        uuid_source: Callable[[int], list] | None = None,
        core_submit: Callable | None = None,
        mechanisms: tuple = ("vlan",),
    ):
        self.site_id = site_id
        self.uuid_source = uuid_source
        self.core_submit = core_submit
        self.isolation = IsolationNode(site_id, mechanisms)
        self.drivers: dict[str, Driver] = {}
        self._by_uuid: dict[str, Driver] = {}
        self._uuid_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._experiment_uuids: dict[str, set] = defaultdict(set)

    # -- driver management ----------------------------------------------------

    def register_driver(self, driver: Driver) -> None:
        self.drivers[driver.driver_id] = driver

    def attach(self, driver_id: str, uuid: str, props: dict | None = None) -> None:
        if uuid in self._by_uuid:
            raise ValidationError(f"uuid {uuid} already served at site {self.site_id}")
        driver = self.drivers[driver_id]
        driver.register(uuid, props)
        self._by_uuid[uuid] = driver

    def register_resources(self, nodes: list, links: list) -> None:
        """Attach commissioned resources to type-appropriate drivers.

        nodes/links are (uuid, props) pairs; node device type comes from a
        ``device`` prop (bare-metal by default), links go to net-port.
        """
        for uuid, props in nodes:
            if uuid in self._by_uuid:
                continue
            dtype = props.get("device", "bare-metal")
            if dtype not in _DRIVER_TYPES:
                dtype = "bare-metal"
            self._ensure_driver(dtype)
            self.attach(f"{dtype}-0", uuid, props)
        for uuid, props in links:
            if uuid in self._by_uuid:
                continue
            self._ensure_driver("net-port")
            self.attach("net-port-0", uuid, props)

    def _ensure_driver(self, dtype: str) -> None:
        driver_id = f"{dtype}-0"
        if driver_id not in self.drivers:
            self.register_driver(_DRIVER_TYPES[dtype](driver_id))

    def set_faults(self, faults: FaultProfile, seed: int = 0) -> None:
        for i, driver in enumerate(self.drivers.values()):
            driver.faults = faults
            driver.rng = random.Random(seed + i)

    # -- dispatch ---------------------------------------------------------------

    def handle(self, method: str, params: dict):
        if method == "resource.command":
            return self._resource_command(params)
        if method == "demat":
            return self._demat(params)
        if method == "commission.local":
            return self._commission_local(params)
        if method == "hb.bind":
            return self._hb_bind(params)
        if method == "hb.unbind":
            return self._hb_unbind(params)
        if method == "driver.register":
            return self._driver_register(params)
        raise NotFoundError(f"unknown method {method!r}")

    def _resource_command(self, params: dict) -> dict:
        uuid, verb = params.get("uuid"), params.get("verb")
        payload = params.get("payload") or {}
        driver = self._by_uuid.get(uuid)
        if driver is None:
            raise NotFoundError(f"unknown uuid {uuid}")
        experiment = params.get("experiment")
        if experiment:
            self._experiment_uuids[experiment].add(uuid)
        with self._uuid_locks[uuid]:
            return driver.handle(uuid, verb, payload)

    def _demat(self, params: dict) -> dict:
        experiment = params.get("experiment")
        for uuid in sorted(self._experiment_uuids.pop(experiment, ())):
            driver = self._by_uuid.get(uuid)
            if driver is not None:
                with self._uuid_locks[uuid]:
                    driver.handle(uuid, VERB_POWER_OFF, {})
        self.isolation.unbind_experiment(experiment)
        return {"ok": True}

    def _commission_local(self, params: dict) -> dict:
        network = params.get("network")
        if not isinstance(network, dict):
            raise ValidationError("commission.local requires a network document")
        stamped = self.stamp(network)
        if self.core_submit is None:
            return {"network": stamped}
        # The core validates stamped UUIDs; regenerate any it rejects.
        for _ in range(5):
            try:
                uuids = self.core_submit(self.site_id, stamped, params)
                return {"uuids": uuids}
            except ValidationError as e:
                colliding = (e.data or {}).get("colliding") if isinstance(e.data, dict) else None
                if not colliding:
                    raise
                stamped = self._restamp(stamped, set(colliding))
        raise ValidationError("uuid generation kept colliding")

    def stamp(self, network: dict) -> dict:
        """Fill uuid/site/alloc fields on a raw resource document."""
        if self.uuid_source is None:
            raise ValidationError(f"site {self.site_id} cannot mint uuids")
        doc = {"role": network.get("role"), "nodes": [], "links": []}
        need = sum(
            1
            for coll in ("nodes", "links")
            for el in network.get(coll, ())
            if isinstance(el, dict) and not el.get("uuid")
        )
        fresh = iter(self.uuid_source(need))
        for el in network.get("nodes", ()):
            el = dict(el)
            el.setdefault("alloc", ALLOC_EXCLUSIVE)
            el["site"] = self.site_id
            if not el.get("uuid"):
                el["uuid"] = next(fresh)
            doc["nodes"].append(el)
        for el in network.get("links", ()):
            el = dict(el)
            if not el.get("uuid"):
                el["uuid"] = next(fresh)
            doc["links"].append(el)
        return doc

    def _restamp(self, network: dict, colliding: set) -> dict:
        doc = dict(network)
        for coll in ("nodes", "links"):
            fixed = []
            for el in doc.get(coll, ()):
                if el.get("uuid") in colliding:
                    el = dict(el)
                    el["uuid"] = self.uuid_source(1)[0]
                fixed.append(el)
            doc[coll] = fixed
        return doc

    def _hb_bind(self, params: dict) -> dict:
        binding = Binding(
            site=self.site_id,
            experiment=params["experiment"],
            link=params["link"],
            vni=int(params["vni"]),
            mechanism=params["mechanism"],
            tag=int(params["tag"]),
            members=frozenset(params.get("members") or ()),
        )
        self.isolation.bind(binding)
        return {"ok": True}

    def _hb_unbind(self, params: dict) -> dict:
        self.isolation.unbind(int(params["vni"]))
        return {"ok": True}

    def _driver_register(self, params: dict) -> dict:
        dtype = params.get("device_type", "generic")
        cls = _DRIVER_TYPES.get(dtype, Driver)
        driver = cls(params["driver_id"])
        self.register_driver(driver)
        for uuid in params.get("uuids", ()):
            self.attach(driver.driver_id, uuid)
        return {"ok": True}

    # -- inspection ---------------------------------------------------------------

    def device_state(self, uuid: str) -> str:
        driver = self._by_uuid.get(uuid)
        if driver is None:
            raise NotFoundError(f"unknown uuid {uuid}")
        return driver.states[uuid]

    def binding_table_json(self) -> str:
        return canonical_dumps(self.isolation.table_obj())


class InprocChannel:
    """Channel adapter giving in-process commanders the wire call shape."""

    def __init__(self, commander: Commander):
        self.commander = commander

    def call(self, method: str, params: dict):
        return self.commander.handle(method, params)
