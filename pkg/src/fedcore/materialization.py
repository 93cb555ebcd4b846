"""State convergence: drive every reserved resource to its target state.

Materializing an experiment writes one stateboard entry per mapped
resource (current ``zero``, target ``configured``) in a single
transaction.  Interchangeable agents then scan the board, claim one entry
at a time with a leased compare-and-swap, issue exactly one provisioning
command to the resource's site commander, and advance or record the
failure.  Convergence never depends on which agent does which step;
correctness rests entirely on the store's transactional leases.

Forward plan: zero -> off -> on -> setup -> configured (the first hop
power-cycles so fresh state is enforced rather than trusted).  Teardown
sets target ``off``; once every entry of an experiment is off, the
finishing agent runs the dematerialization protocol with each involved
commander, frees reservations and isolation allocations, and deletes the
entries, all in one transaction.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace

from .clock import now_us
from .errors import ValidationError
from .isolation import IsolationAllocator
from .model import Constraint, Network, canonical_dumps, satisfies
from .realization import Realization, build_release_txn
from .store import Store, Transaction, TxnConflict
from .substrate import ResourceView

SB_PREFIX = "sb/"

MAT_ZERO = "zero"
MAT_OFF = "off"
MAT_ON = "on"
MAT_SETUP = "setup"
MAT_CONFIGURED = "configured"

FORWARD_PLAN = (MAT_ZERO, MAT_OFF, MAT_ON, MAT_SETUP, MAT_CONFIGURED)

_EDGE_VERBS = {
    (MAT_ZERO, MAT_OFF): "power_off",
    (MAT_OFF, MAT_ON): "power_on",
    (MAT_ON, MAT_SETUP): "setup",
    (MAT_SETUP, MAT_CONFIGURED): "configure",
}


def next_step(current: str, target: str) -> tuple | None:
    """(verb, next state) for one convergence step, or None when done."""
    if current == target:
        return None
    if target == MAT_CONFIGURED:
        nxt = FORWARD_PLAN[FORWARD_PLAN.index(current) + 1]
        return _EDGE_VERBS[(current, nxt)], nxt
    if target == MAT_OFF:
        return "power_off", MAT_OFF
    raise ValidationError(f"unsupported target state {target!r}")


def legal_edge(before: str, after: str) -> bool:
    return (before, after) in _EDGE_VERBS or after == MAT_OFF


@dataclass(frozen=True)
class StateboardEntry:
    experiment: str
    uuid: str
    kind: str  # node | link
    site: str
    current: str = MAT_ZERO
    target: str = MAT_CONFIGURED
    lease: dict | None = None
    attempts: int = 0
    last_error: str | None = None
    backoff_until: int = 0
    setup: dict = field(default_factory=dict)
    configure: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        return f"{SB_PREFIX}{self.experiment}/{self.uuid}"

    def to_cell(self) -> bytes:
        return canonical_dumps(
            {
                "experiment": self.experiment,
                "uuid": self.uuid,
                "kind": self.kind,
                "site": self.site,
                "current": self.current,
                "target": self.target,
                "lease": self.lease,
                "attempts": self.attempts,
                "last_error": self.last_error,
                "backoff_until": self.backoff_until,
                "setup": self.setup,
                "configure": self.configure,
            }
        ).encode()

    @classmethod
    def from_cell(cls, value: bytes) -> "StateboardEntry":
        return cls(**json.loads(value))


def resolve_selection(required, offered):
    """Concrete choice implied by a select/choice/eq leaf, given the offer."""
    if required is None:
        return None
    if isinstance(required, str):
        return required
    if isinstance(required, Constraint):
        if required.op in ("select", "eq") and isinstance(required.value, str):
            return required.value
        if required.op == "choice":
            for alt in required.value:
                if offered is not None and satisfies(alt, offered):
                    return resolve_selection(alt, offered)
            return resolve_selection(required.value[0], None)
    return None


def build_payloads(node_props: dict, res_props: dict) -> tuple:
    """Opaque setup/configure blobs for a compute resource."""
    device = res_props.get("device", "bare-metal")
    setup: dict = {}
    if device == "iot-embedded":
        fw = resolve_selection(node_props.get("firmware"), res_props.get("firmware"))
        if fw:
            setup["firmware"] = fw
    else:
        img = resolve_selection(node_props.get("image"), res_props.get("image"))
        if img:
            setup["image"] = img
    return setup, {}


class Materializer:
    """Stateboard writer plus the agent step and teardown protocol."""

    def __init__(
        self,
        store: Store,
        registry,
        allocator: IsolationAllocator,
        clock=now_us,
        lease_ttl_us: int = 10_000_000,
        retry_cap: int = 25,
        backoff_base_us: int = 250_000,
    ):
        self.store = store
        self.registry = registry
        self.allocator = allocator
        self.clock = clock
        self.lease_ttl_us = lease_ttl_us
        self.retry_cap = retry_cap
        self.backoff_base_us = backoff_base_us

    # -- materialize ---------------------------------------------------------

    def build_entries(self, x: Network, r: Realization, view: ResourceView) -> list:
        entries = []
        for n in x.nodes:
            uuid = r.node_map[n.id]
            rn = view.nodes[uuid]
            setup, configure = build_payloads(n.props, rn.props)
            entries.append(
                StateboardEntry(
                    experiment=r.experiment,
                    uuid=uuid,
                    kind="node",
                    site=rn.site,
                    setup=setup,
                    configure=configure,
                )
            )
        seen: set = set()
        for l in sorted(x.links, key=lambda l: l.id):
            vni = self.allocator.vni_for(r.experiment, l.id)
            for seg in r.link_map.get(l.id, ()):
                if seg in seen:
                    continue
                seen.add(seg)
                rl = view.links[seg]
                configure = {"link": l.id}
                if vni is not None:
                    configure["vni"] = vni
                entries.append(
                    StateboardEntry(
                        experiment=r.experiment,
                        uuid=seg,
                        kind="link",
                        site=rl.site,
                        setup={},
                        configure=configure,
                    )
                )
        return entries

    def setup_isolation(self, x: Network, r: Realization, view: ResourceView) -> None:
        """Allocate one VNI per experiment link and bind a tag per touched site."""
        for l in sorted(x.links, key=lambda l: l.id):
            vni = self.allocator.allocate_vni(r.experiment, l.id)
            sites: dict[str, set] = {}
            for end in l.endpoints:
                uuid = r.node_map[end]
                sites.setdefault(view.nodes[uuid].site, set()).add(uuid)
            for seg in r.link_map.get(l.id, ()):
                sites.setdefault(view.links[seg].site, set())
            for site_id in sorted(sites):
                record = self.registry.site_record(site_id)
                mechanism = record.mechanisms[0]
                tag = self.allocator.bind_local(site_id, vni, mechanism, r.experiment, l.id)
                self.registry.channel(site_id).call(
                    "hb.bind",
                    {
                        "experiment": r.experiment,
                        "link": l.id,
                        "vni": vni,
                        "mechanism": mechanism,
                        "tag": tag,
                        "members": sorted(sites[site_id]),
                    },
                )

    # -- agents -----------------------------------------------------------------

    def agent_step(self, agent_id: str) -> str | None:
        """Claim one convergent entry, issue one command, record the outcome.

        Returns the entry key worked on, or None when nothing was
        claimable (idle).  Every claimable entry is attempted in key
        order, so losing a claim race just moves an agent to the next
        entry instead of stalling it.
        """
        now = self.clock()
        for cell in self.store.scan(SB_PREFIX):
            entry = StateboardEntry.from_cell(cell.value)
            if entry.current == entry.target:
                continue
            if entry.attempts >= self.retry_cap:
                continue
            if entry.lease and entry.lease["expires_at"] > now:
                continue
            if entry.backoff_until > now:
                continue
            claimed = replace(
                entry,
                lease={
                    "agent": agent_id,
                    "claimed_at": now,
                    "expires_at": now + self.lease_ttl_us,
                },
            )
            txn = Transaction().read(cell.key, cell.version).put(cell.key, claimed.to_cell())
            try:
                versions = self.store.commit(txn)
            except TxnConflict:
                continue
            self._execute(cell.key, versions[cell.key], claimed)
            return cell.key
        return None

    def _execute(self, key: str, version: int, entry: StateboardEntry) -> None:
        verb, nxt = next_step(entry.current, entry.target)
        payload = {}
        if verb == "setup":
            payload = entry.setup
        elif verb == "configure":
            payload = entry.configure
        # Renew the lease at TTL/3 while the command is in flight so a slow
        # driver does not look abandoned to the other agents.
        holder = {"version": version, "lease": entry.lease, "lost": False}
        stop = threading.Event()
        renewer = threading.Thread(
            target=self._renew_loop, args=(key, entry, holder, stop), daemon=True
        )
        renewer.start()
        try:
            result = self.registry.channel(entry.site).call(
                "resource.command",
                {
                    "uuid": entry.uuid,
                    "verb": verb,
                    "payload": payload,
                    "experiment": entry.experiment,
                },
            )
        except Exception as e:
            result = {"ok": False, "reason": f"commander unreachable: {e}", "state": entry.current}
        finally:
            stop.set()
            renewer.join()
        if holder["lost"]:
            return  # the lease expired mid-command and was claimed elsewhere
        now = self.clock()
        if result.get("ok"):
            outcome = replace(entry, current=result.get("state", nxt), lease=None, backoff_until=0)
        else:
            attempts = entry.attempts + 1
            outcome = replace(
                entry,
                lease=None,
                attempts=attempts,
                last_error=result.get("reason", "unknown failure"),
                backoff_until=now + self.backoff_base_us * min(attempts, 8),
            )
        txn = Transaction().read(key, holder["version"]).put(key, outcome.to_cell())
        try:
            self.store.commit(txn)
        except TxnConflict:
            return  # lease expired and someone else took over; their step wins
        if outcome.current == outcome.target == MAT_OFF:
            self.finalize_teardown(entry.experiment)

    def _renew_loop(self, key: str, entry: StateboardEntry, holder: dict, stop) -> None:
        period_s = self.lease_ttl_us / 3 / 1e6
        while not stop.wait(period_s):
            cell = self.store.get(key)
            if cell is None or cell.version != holder["version"]:
                holder["lost"] = True
                return
            renewed = replace(
                entry,
                lease=dict(holder["lease"], expires_at=self.clock() + self.lease_ttl_us),
            )
            txn = Transaction().read(key, holder["version"]).put(key, renewed.to_cell())
            try:
                versions = self.store.commit(txn)
            except TxnConflict:
                holder["lost"] = True
                return
            holder["version"] = versions[key]
            holder["lease"] = renewed.lease

    # -- teardown -----------------------------------------------------------------

    def start_teardown(self, experiment: str) -> int:
        """Set every entry's target to off in one transaction; returns count."""
        cells = self.store.scan(f"{SB_PREFIX}{experiment}/")
        txn = Transaction()
        for cell in cells:
            entry = StateboardEntry.from_cell(cell.value)
            txn.read(cell.key, cell.version)
            txn.put(cell.key, replace(entry, target=MAT_OFF, attempts=0, backoff_until=0).to_cell())
        self.store.commit(txn)
        return len(cells)

    def finalize_teardown(self, experiment: str) -> bool:
        """If every entry is off, free the experiment everywhere at once."""
        cells = self.store.scan(f"{SB_PREFIX}{experiment}/")
        if not cells:
            return False
        sites = set()
        for cell in cells:
            entry = StateboardEntry.from_cell(cell.value)
            if not (entry.current == MAT_OFF and entry.target == MAT_OFF):
                return False
            sites.add(entry.site)
        for site_id in sorted(sites):
            try:
                self.registry.channel(site_id).call("demat", {"experiment": experiment})
            except Exception:
                pass  # commander cleanup is idempotent; retried on next pass
        txn = build_release_txn(self.store, experiment)
        for cell in cells:
            txn.read(cell.key, cell.version)
            txn.delete(cell.key)
        self.allocator.release_into(txn, experiment)
        exp_key = f"exp/{experiment}"
        exp_cell = self.store.get(exp_key)
        if exp_cell is not None:
            record = json.loads(exp_cell.value)
            record["phase"] = "dematerialized"
            record["realization"] = None
            txn.read(exp_key, exp_cell.version)
            txn.put(exp_key, canonical_dumps(record).encode())
        try:
            self.store.commit(txn)
        except TxnConflict:
            return False  # a concurrent finalizer won; nothing left to do
        return True

    # -- status ---------------------------------------------------------------------

    def board_summary(self, experiment: str) -> dict:
        entries = [
            StateboardEntry.from_cell(c.value)
            for c in self.store.scan(f"{SB_PREFIX}{experiment}/")
        ]
        configured = sum(1 for e in entries if e.current == e.target == MAT_CONFIGURED)
        stuck = [
            {"uuid": e.uuid, "attempts": e.attempts, "last_error": e.last_error}
            for e in entries
            if e.attempts >= self.retry_cap and e.current != e.target
        ]
        return {
            "total": len(entries),
            "configured": configured,
            "converged": all(e.current == e.target for e in entries),
            "stuck": stuck,
        }
