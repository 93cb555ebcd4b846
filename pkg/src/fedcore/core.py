"""The core service: one dispatch surface over all subsystems.

Every method is stateless between calls; all state lives in the store, so
a service restarted over the same journal answers a replayed transcript
identically.  Simulated sites run in-process by default (endpoint
``inproc``); a site whose record carries a ``host:port`` endpoint is
reached over the line protocol instead.
"""

from __future__ import annotations

import json
import threading
import time

from .clock import now_us
from .commissioning import Commissioner, SiteRecord, UuidFactory, load_site
from .discovery import discover, explain
from .errors import ConflictError, NotFoundError, ValidationError
from .isolation import IsolationAllocator, WanBus
from .materialization import Materializer, StateboardEntry, SB_PREFIX
from .model import Network, canonical_dumps, network_from_obj
from .realization import (
    Realization,
    build_reserve_txn,
    realize_complete,
    realize_greedy,
)
from .site import Commander, InprocChannel
from .store import Store, Transaction, TxnConflict
from .substrate import SITE_PREFIX, ResourceView
from .wire import RpcClient

EXP_PREFIX = "exp/"

PHASE_COMPUTED = "computed"
PHASE_RESERVED = "reserved"
PHASE_MATERIALIZING = "materializing"
PHASE_DEMATERIALIZING = "dematerializing"
PHASE_DEMATERIALIZED = "dematerialized"


class SiteRegistry:
    """Runtime handles for commissioned sites (commanders and channels)."""

    def __init__(self, store: Store, uuid_factory: UuidFactory, core_submit):
        self.store = store
        self.uuid_factory = uuid_factory
        self.core_submit = core_submit
        self._commanders: dict[str, Commander] = {}
        self._clients: dict[str, RpcClient] = {}
        self._lock = threading.Lock()

    def ensure_runtime(self, site_id: str, endpoint: str, mechanisms: tuple) -> None:
        if endpoint != "inproc":
            return
        with self._lock:
            if site_id not in self._commanders:
                self._commanders[site_id] = Commander(
                    site_id,
                    uuid_source=self.uuid_factory.take,
                    core_submit=self.core_submit,
                    mechanisms=mechanisms,
                )

    def commander(self, site_id: str) -> Commander:
        return self._commanders[site_id]

    def site_record(self, site_id: str) -> SiteRecord:
        return load_site(self.store, site_id)

    def channel(self, site_id: str):
        with self._lock:
            if site_id in self._commanders:
                return InprocChannel(self._commanders[site_id])
        record = self.site_record(site_id)
        if record.endpoint == "inproc":
            self.ensure_runtime(site_id, record.endpoint, record.mechanisms)
            self.sync_site(site_id)
            return InprocChannel(self._commanders[site_id])
        with self._lock:
            if site_id not in self._clients:
                self._clients[site_id] = RpcClient(record.endpoint)
            return self._clients[site_id]

    def sync_site(self, site_id: str) -> None:
        """Attach any newly commissioned resources to the site's drivers."""
        commander = self._commanders.get(site_id)
        if commander is None:
            return
        try:
            record = self.site_record(site_id)
        except NotFoundError:
            return
        nodes = [(n.uuid, n.props) for n in record.model.nodes]
        links = [(l.uuid, l.props) for l in record.model.links]
        commander.register_resources(nodes, links)

    def restore_all(self) -> None:
        for cell in self.store.scan(SITE_PREFIX):
            site_id = cell.key[len(SITE_PREFIX):]
            record = SiteRecord.from_cell(site_id, cell.value)
            self.ensure_runtime(site_id, record.endpoint, record.mechanisms)
            self.sync_site(site_id)

    def locate(self, uuid: str) -> str | None:
        cell = self.store.get(f"uuid/{uuid}")
        return json.loads(cell.value)["site"] if cell else None


class CoreService:
    def __init__(self, config=None, clock=now_us):
        from .config import Config

        self.config = config or Config()
        self.clock = clock
        self.store = Store(journal_path=self.config.journal)
        self.uuid_factory = UuidFactory(self.store, seed=self.config.seed)
        self.commissioner = Commissioner(self.store)
        self.registry = SiteRegistry(self.store, self.uuid_factory, self._accept_commission)
        self.allocator = IsolationAllocator(self.store)
        self.materializer = Materializer(
            self.store,
            self.registry,
            self.allocator,
            clock=clock,
            lease_ttl_us=int(self.config.lease_ttl_s * 1e6),
            retry_cap=self.config.retry_cap,
            backoff_base_us=self.config.backoff_base_ms * 1000,
        )
        self.wan = WanBus(self.registry.locate)
        self._agent_threads: list = []
        self._agents_stop = threading.Event()
        self.registry.restore_all()
        self._attach_wan()

        self._methods = {
            "discover": self._discover,
            "explain": self._explain,
            "realize": self._realize,
            "reserve": self._reserve,
            "materialize": self._materialize,
            "dematerialize": self._dematerialize,
            "status": self._status,
            "commission": self._commission,
            "decommission": self._decommission,
            "sites.list": self._sites_list,
            "experiments.list": self._experiments_list,
            "agents.run": self._agents_run,
        }

    # -- dispatch -----------------------------------------------------------

    def call(self, method: str, params: dict) -> dict:
        handler = self._methods.get(method)
        if handler is None:
            raise NotFoundError(f"unknown method {method!r}")
        return handler(params or {})

    def close(self) -> None:
        self.stop_agents()
        self.store.close()

    # -- experiment records -----------------------------------------------------

    def _exp_record(self, experiment: str):
        cell = self.store.get(EXP_PREFIX + experiment)
        if cell is None:
            return None, 0
        return json.loads(cell.value), cell.version

    def _require_record(self, experiment: str):
        record, version = self._exp_record(experiment)
        if record is None:
            raise NotFoundError(f"unknown experiment {experiment!r}")
        return record, version

    # -- methods ---------------------------------------------------------------

    def _experiment_param(self, params: dict) -> Network:
        doc = params.get("experiment")
        if not isinstance(doc, dict):
            raise ValidationError("params.experiment must be a network document")
        net = network_from_obj(doc)
        if net.role != "experiment":
            raise ValidationError("document must have the experiment role")
        return net

    def _discover(self, params: dict) -> dict:
        net = self._experiment_param(params)
        view = ResourceView.load(self.store)
        return discover(view, net).to_obj()

    def _explain(self, params: dict) -> dict:
        net = self._experiment_param(params)
        view = ResourceView.load(self.store)
        rows = explain(view, net, params.get("node"), params.get("uuid"))
        return {"rows": rows, "ok": all(r["ok"] for r in rows)}

    def _realize(self, params: dict) -> dict:
        experiment = params.get("id")
        if not experiment or not isinstance(experiment, str):
            raise ValidationError("params.id must name the experiment")
        net = self._experiment_param(params)
        engine = params.get("engine") or self.config.engine_default
        record, version = self._exp_record(experiment)
        if record is not None and record["phase"] not in (PHASE_COMPUTED, PHASE_DEMATERIALIZED):
            raise ConflictError(
                f"experiment {experiment} is {record['phase']}; dematerialize it first"
            )
        view = ResourceView.load(self.store)
        if engine == "greedy":
            r = realize_greedy(
                view, net, experiment,
                seed=int(params.get("seed", 0)),
                max_hops=self.config.max_path_hops,
            )
        elif engine == "complete":
            r = realize_complete(
                view, net, experiment,
                max_nodes_expanded=int(params.get("max_nodes_expanded", 500_000)),
                max_ms=int(params.get("max_ms", 30_000)),
                max_hops=self.config.max_path_hops,
            )
        else:
            raise ValidationError(f"unknown engine {engine!r}")
        new_record = {
            "phase": PHASE_COMPUTED,
            "experiment": params["experiment"],
            "realization": r.to_obj(),
        }
        txn = Transaction().read(EXP_PREFIX + experiment, version)
        txn.put(EXP_PREFIX + experiment, canonical_dumps(new_record).encode())
        try:
            self.store.commit(txn)
        except TxnConflict:
            raise ConflictError("experiment record changed underfoot; retry realize")
        return r.to_obj()

    def _reserve(self, params: dict) -> dict:
        experiment = params.get("id")
        record, version = self._require_record(experiment)
        if record["phase"] != PHASE_COMPUTED:
            raise ConflictError(f"experiment {experiment} is {record['phase']}, not computed")
        r = Realization.from_obj(record["realization"])
        net = network_from_obj(record["experiment"])
        txn = build_reserve_txn(self.store, net, r)
        reserved = Realization(r.experiment, r.node_map, r.link_map, r.watermark, "reserved")
        record = dict(record, phase=PHASE_RESERVED, realization=reserved.to_obj())
        txn.read(EXP_PREFIX + experiment, version)
        txn.put(EXP_PREFIX + experiment, canonical_dumps(record).encode())
        try:
            self.store.commit(txn)
        except TxnConflict as e:
            raise ConflictError(
                "reservation lost an optimistic race; re-realize against a fresh snapshot",
                data={"key": e.key},
            )
        return {"id": experiment, "status": "reserved"}

    def _materialize(self, params: dict) -> dict:
        experiment = params.get("id")
        record, version = self._require_record(experiment)
        if record["phase"] != PHASE_RESERVED:
            if record["phase"] == PHASE_MATERIALIZING:
                raise ConflictError(f"experiment {experiment} is already materializing")
            raise ConflictError(f"experiment {experiment} is {record['phase']}, not reserved")
        r = Realization.from_obj(record["realization"])
        net = network_from_obj(record["experiment"])
        view = ResourceView.load(self.store)
        self.materializer.setup_isolation(net, r, view)
        entries = self.materializer.build_entries(net, r, view)
        txn = Transaction()
        record = dict(record, phase=PHASE_MATERIALIZING)
        txn.read(EXP_PREFIX + experiment, version)
        txn.put(EXP_PREFIX + experiment, canonical_dumps(record).encode())
        for entry in entries:
            txn.read(entry.key, 0)
            txn.put(entry.key, entry.to_cell())
        try:
            self.store.commit(txn)
        except TxnConflict:
            self._rollback_isolation(experiment)
            raise ConflictError(f"experiment {experiment} was materialized concurrently")
        return {"entries": len(entries)}

    def _rollback_isolation(self, experiment: str) -> None:
        txn = Transaction()
        unbound = self.allocator.release_into(txn, experiment)
        if txn.writes:
            try:
                self.store.commit(txn)
            except TxnConflict:
                return
        for site_id, _, vni in unbound:
            try:
                self.registry.channel(site_id).call("hb.unbind", {"vni": vni})
            except Exception:
                pass

    def _dematerialize(self, params: dict) -> dict:
        experiment = params.get("id")
        record, version = self._require_record(experiment)
        phase = record["phase"]
        if phase in (PHASE_DEMATERIALIZED, PHASE_DEMATERIALIZING):
            return {"id": experiment, "status": phase}
        if phase != PHASE_MATERIALIZING:
            raise ConflictError(f"experiment {experiment} is {phase}, not materializing")
        record = dict(record, phase=PHASE_DEMATERIALIZING)
        cells = self.store.scan(f"{SB_PREFIX}{experiment}/")
        txn = Transaction().read(EXP_PREFIX + experiment, version)
        txn.put(EXP_PREFIX + experiment, canonical_dumps(record).encode())
        for cell in cells:
            entry = StateboardEntry.from_cell(cell.value)
            txn.read(cell.key, cell.version)
            from dataclasses import replace

            txn.put(cell.key, replace(entry, target="off", attempts=0, backoff_until=0).to_cell())
        try:
            self.store.commit(txn)
        except TxnConflict:
            raise ConflictError("dematerialize raced another transition; retry")
        if not cells:
            self._finalize_empty(experiment)
            return {"id": experiment, "status": PHASE_DEMATERIALIZED}
        return {"id": experiment, "status": PHASE_DEMATERIALIZING}

    def _finalize_empty(self, experiment: str) -> None:
        from .realization import build_release_txn

        record, version = self._require_record(experiment)
        txn = build_release_txn(self.store, experiment)
        self.allocator.release_into(txn, experiment)
        record = dict(record, phase=PHASE_DEMATERIALIZED, realization=None)
        txn.read(EXP_PREFIX + experiment, version)
        txn.put(EXP_PREFIX + experiment, canonical_dumps(record).encode())
        try:
            self.store.commit(txn)
        except TxnConflict:
            pass

    def _status(self, params: dict) -> dict:
        experiment = params.get("id")
        record, _ = self._require_record(experiment)
        phase = record["phase"]
        if phase == PHASE_COMPUTED:
            out = {"state": "realized"}
        elif phase == PHASE_RESERVED:
            out = {"state": "reserved"}
        elif phase == PHASE_MATERIALIZING:
            summary = self.materializer.board_summary(experiment)
            if summary["stuck"]:
                out = {"state": "degraded", "errors": summary["stuck"]}
            elif summary["configured"] == summary["total"]:
                out = {"state": "materialized"}
            else:
                out = {"state": "materializing"}
            out["progress"] = {"configured": summary["configured"], "total": summary["total"]}
        elif phase == PHASE_DEMATERIALIZING:
            out = {"state": "dematerializing"}
        else:
            out = {"state": "dematerialized"}
            if record.get("forced"):
                out["forced"] = True
        return out

    def _commission(self, params: dict) -> dict:
        site = params.get("site")
        if not site or not isinstance(site, str):
            raise ValidationError("params.site is required")
        network = params.get("network")
        if not isinstance(network, dict):
            raise ValidationError("params.network must be a resource document")
        endpoint = params.get("endpoint") or "inproc"
        mechanisms = tuple(params.get("mechanisms") or ("vlan",))
        try:
            record = self.registry.site_record(site)
            endpoint, mechanisms = record.endpoint, record.mechanisms
        except NotFoundError:
            pass
        self.registry.ensure_runtime(site, endpoint, mechanisms)
        result = self.registry.channel(site).call(
            "commission.local",
            {"network": network, "endpoint": endpoint, "mechanisms": list(mechanisms)},
        )
        self.registry.sync_site(site)
        self._attach_wan()
        return {"uuids": result["uuids"]}

    def _accept_commission(self, site_id: str, stamped: dict, params: dict) -> list:
        endpoint = params.get("endpoint") or "inproc"
        mechanisms = tuple(params.get("mechanisms") or ("vlan",))
        uuids = self.commissioner.accept(site_id, stamped, endpoint, mechanisms)
        self.registry.sync_site(site_id)
        return uuids

    def _decommission(self, params: dict) -> dict:
        site = params.get("site")
        mode = params.get("mode", "simple")
        nodes = params.get("nodes") or []
        force = bool(params.get("force"))
        if mode == "simple":
            self.commissioner.decommission_simple(
                site, nodes, force_hook=self._force_teardown, force=force
            )
        elif mode == "fragmented":
            replacement = params.get("replacement")
            if not isinstance(replacement, dict):
                raise ValidationError("fragmented mode requires params.replacement")
            commander = None
            try:
                record = self.registry.site_record(site)
                if record.endpoint == "inproc":
                    self.registry.ensure_runtime(site, record.endpoint, record.mechanisms)
                    commander = self.registry.commander(site)
            except NotFoundError:
                pass
            stamp = commander.stamp if commander else None
            self.commissioner.decommission_fragmented(
                site, nodes, replacement, stamp,
                force_hook=self._force_teardown, force=force,
            )
        else:
            raise ValidationError(f"unknown decommission mode {mode!r}")
        self.registry.sync_site(site)
        return {"ok": True}

    def _force_teardown(self, experiments: list) -> None:
        """Highly discouraged path: rip live experiments out from under users."""
        for experiment in experiments:
            record, version = self._exp_record(experiment)
            if record is None:
                continue
            if record["phase"] == PHASE_MATERIALIZING:
                self._dematerialize({"id": experiment})
                self._converge(max_steps=10_000)
            elif record["phase"] in (PHASE_RESERVED, PHASE_COMPUTED):
                self._finalize_empty(experiment)
            record, version = self._exp_record(experiment)
            if record is not None and record["phase"] == PHASE_DEMATERIALIZED:
                record = dict(record, forced=True)
                txn = Transaction().read(EXP_PREFIX + experiment, version)
                txn.put(EXP_PREFIX + experiment, canonical_dumps(record).encode())
                try:
                    self.store.commit(txn)
                except TxnConflict:
                    pass

    def _sites_list(self, params: dict) -> dict:
        sites = []
        for cell in self.store.scan(SITE_PREFIX):
            site_id = cell.key[len(SITE_PREFIX):]
            record = SiteRecord.from_cell(site_id, cell.value)
            sites.append(
                {
                    "id": site_id,
                    "endpoint": record.endpoint,
                    "mechanisms": list(record.mechanisms),
                    "nodes": len(record.model.nodes),
                    "links": len(record.model.links),
                }
            )
        return {"sites": sites}

    def _experiments_list(self, params: dict) -> dict:
        experiments = []
        for cell in self.store.scan(EXP_PREFIX):
            record = json.loads(cell.value)
            experiments.append(
                {"id": cell.key[len(EXP_PREFIX):], "phase": record["phase"]}
            )
        return {"experiments": experiments}

    def _agents_run(self, params: dict) -> dict:
        worked = self._converge(max_steps=int(params.get("max_steps", 10_000)))
        return {"steps": worked}

    def _converge(self, max_steps: int) -> int:
        """Synchronously run one agent until the board has nothing claimable."""
        worked = 0
        idle_waits = 0
        for _ in range(max_steps):
            key = self.materializer.agent_step("runner-0")
            if key is not None:
                worked += 1
                idle_waits = 0
                continue
            if not self._work_pending():
                break
            idle_waits += 1
            if idle_waits > 1000:
                break
            time.sleep(0.002)  # leases or backoff still cooling off
        return worked

    def _work_pending(self) -> bool:
        for cell in self.store.scan(SB_PREFIX):
            entry = StateboardEntry.from_cell(cell.value)
            if entry.current != entry.target and entry.attempts < self.materializer.retry_cap:
                return True
        return False

    # -- background agents ----------------------------------------------------------

    def start_agents(self, count: int | None = None) -> None:
        count = self.config.agents if count is None else count
        self._agents_stop.clear()
        for i in range(count):
            t = threading.Thread(target=self._agent_loop, args=(f"agent-{i}",), daemon=True)
            t.start()
            self._agent_threads.append(t)

    def stop_agents(self) -> None:
        self._agents_stop.set()
        for t in self._agent_threads:
            t.join(timeout=2)
        self._agent_threads.clear()

    def _agent_loop(self, agent_id: str) -> None:
        while not self._agents_stop.is_set():
            try:
                key = self.materializer.agent_step(agent_id)
            except Exception:
                key = None
            if key is None:
                self._agents_stop.wait(self.config.agent_poll_s)

    # -- wan simulation ---------------------------------------------------------------

    def _attach_wan(self) -> None:
        for site_id, commander in self.registry._commanders.items():
            self.wan.attach(commander.isolation)
