import json

import pytest

from fedcore.commissioning import UUID_V4_RE, UuidFactory, load_site
from fedcore.errors import ImpactError, InUseError, NotFoundError, ValidationError
from fedcore.model import serialize_network
from fedcore.store import Store

from .fixtures import experiment_net, exp_node


def leaf_spine_pool(spines=2, leaves=12):
    """One uplink per leaf, so leaves are simple to remove."""
    nodes = [
        {"id": f"spine{i}", "props": {"tier": "spine"}, "alloc": "shared"}
        for i in range(spines)
    ]
    nodes += [
        {"id": f"leaf{i}", "props": {"tier": "leaf", "cores": 4}, "alloc": "exclusive"}
        for i in range(leaves)
    ]
    links = [
        {
            "id": f"up{i}",
            "endpoints": [f"leaf{i}", f"spine{i % spines}"],
            "props": {},
            "capacity_bps": 10**9,
        }
        for i in range(leaves)
    ]
    return {"role": "resource", "nodes": nodes, "links": links}


def test_commission_fig_style_network_into_empty_site(core):
    pool = leaf_spine_pool(spines=2, leaves=12)  # 14 nodes
    result = core.call("commission", {"site": "lab", "network": pool})
    assert len(result["uuids"]) == 14 + 12
    assert all(UUID_V4_RE.match(u) for u in result["uuids"])
    # immediately discoverable
    cmap = core.call("discover", {"experiment": experiment_net([exp_node("any")])})
    assert len(cmap["entries"]["any"]) == 14


def test_commission_empty_network_is_noop(core):
    result = core.call("commission", {"site": "lab", "network": {"role": "resource", "nodes": [], "links": []}})
    assert result["uuids"] == []


def test_commission_reused_node_id_rejected_and_model_unchanged(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool()})
    before = serialize_network(load_site(core.store, "lab").model)
    with pytest.raises(ValidationError, match="already commissioned"):
        core.call(
            "commission",
            {"site": "lab", "network": {"role": "resource", "nodes": [{"id": "leaf0", "props": {}, "alloc": "exclusive"}], "links": []}},
        )
    assert serialize_network(load_site(core.store, "lab").model) == before


def test_commission_into_two_sites_keeps_uuids_distinct(core):
    a = core.call("commission", {"site": "a", "network": leaf_spine_pool(1, 3)})
    b = core.call("commission", {"site": "b", "network": leaf_spine_pool(1, 3)})
    assert not set(a["uuids"]) & set(b["uuids"])


def test_uuid_factory_format_and_uniqueness_at_scale():
    factory = UuidFactory(Store(), seed=99)
    uuids = factory.take(100_000)
    assert len(set(uuids)) == 100_000
    assert all(UUID_V4_RE.match(u) for u in uuids)


def test_uuid_factory_is_deterministic_per_seed_and_sequence():
    a = UuidFactory(Store(), seed=5).take(10)
    b = UuidFactory(Store(), seed=5).take(10)
    c = UuidFactory(Store(), seed=6).take(10)
    assert a == b != c


def test_uuid_collision_is_rejected_then_regenerated(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool(1, 1)})
    existing = core.store.scan("uuid/")[0].key[len("uuid/"):]
    commander = core.registry.commander("lab")
    real_source = commander.uuid_source
    calls = {"n": 0}

    def colliding_source(n):
        calls["n"] += 1
        if calls["n"] == 1:
            return [existing] + real_source(n - 1) if n > 1 else [existing]
        return real_source(n)

    commander.uuid_source = colliding_source
    try:
        result = core.call(
            "commission",
            {"site": "lab", "network": {"role": "resource", "nodes": [{"id": "extra", "props": {}, "alloc": "exclusive"}], "links": []}},
        )
    finally:
        commander.uuid_source = real_source
    assert result["uuids"][0] != existing
    assert calls["n"] >= 2


# -- simple decommission ------------------------------------------------------------


def test_simple_decommission_of_four_leaves(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool(2, 12)})
    doomed = ["leaf0", "leaf1", "leaf2", "leaf3"]
    core.call("decommission", {"site": "lab", "mode": "simple", "nodes": doomed})
    model = load_site(core.store, "lab").model
    assert {n.id for n in model.nodes} == {"spine0", "spine1"} | {f"leaf{i}" for i in range(4, 12)}
    assert {l.id for l in model.links} == {f"up{i}" for i in range(4, 12)}
    # uuid index cleaned up
    assert len(core.store.scan("uuid/")) == 10 + 8


def test_simple_decommission_unknown_node(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool()})
    with pytest.raises(NotFoundError):
        core.call("decommission", {"site": "lab", "nodes": ["ghost"]})


def test_removing_reserved_node_is_in_use(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool()})
    x = experiment_net([exp_node("box", {"cores": {"op": "ge", "value": 1}})])
    core.call("realize", {"id": "e1", "experiment": x})
    core.call("reserve", {"id": "e1"})
    reserved_uuid = json.loads(core.store.get("exp/e1").value)["realization"]["node_map"]["box"]
    leaf_id = next(
        n.id for n in load_site(core.store, "lab").model.nodes if n.uuid == reserved_uuid
    )
    with pytest.raises(InUseError) as e:
        core.call("decommission", {"site": "lab", "nodes": [leaf_id]})
    assert e.value.data["experiments"] == ["e1"]


def test_removing_spine_is_impact_detected(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool()})
    with pytest.raises(ImpactError):
        core.call("decommission", {"site": "lab", "nodes": ["spine0"]})


def test_commission_then_decommission_is_identity(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool(2, 4)})
    before = serialize_network(load_site(core.store, "lab").model)
    extra = {
        "role": "resource",
        "nodes": [{"id": "newbie", "props": {}, "alloc": "exclusive"}],
        "links": [],
    }
    core.call("commission", {"site": "lab", "network": extra})
    assert serialize_network(load_site(core.store, "lab").model) != before
    core.call("decommission", {"site": "lab", "nodes": ["newbie"]})
    assert serialize_network(load_site(core.store, "lab").model) == before


def test_force_decommission_tears_down_blocking_experiment(core):
    core.call("commission", {"site": "lab", "network": leaf_spine_pool(1, 2)})
    x = experiment_net([exp_node("box", {"cores": {"op": "ge", "value": 1}})])
    core.call("realize", {"id": "e1", "experiment": x})
    core.call("reserve", {"id": "e1"})
    core.call("materialize", {"id": "e1"})
    core.call("agents.run", {})
    assert core.call("status", {"id": "e1"})["state"] == "materialized"
    reserved_uuid = json.loads(core.store.get("exp/e1").value)["realization"]["node_map"]["box"]
    leaf_id = next(n.id for n in load_site(core.store, "lab").model.nodes if n.uuid == reserved_uuid)
    core.call("decommission", {"site": "lab", "nodes": [leaf_id], "force": True})
    status = core.call("status", {"id": "e1"})
    assert status == {"state": "dematerialized", "forced": True}
    assert leaf_id not in {n.id for n in load_site(core.store, "lab").model.nodes}


# -- fragmented decommission ----------------------------------------------------------


def clos_pool():
    nodes = [
        {"id": s, "props": {"tier": "spine"}, "alloc": "shared"} for s in ("s0", "s1")
    ] + [
        {"id": f"f{i}", "props": {"tier": "leaf", "cores": 2}, "alloc": "exclusive"}
        for i in range(4)
    ]
    links = []
    for i in range(4):
        for j, s in enumerate(("s0", "s1")):
            links.append(
                {
                    "id": f"f{i}-{s}",
                    "endpoints": [f"f{i}", s],
                    "props": {},
                    "capacity_bps": 10_000_000,
                }
            )
    links.append({"id": "s0-s1", "endpoints": ["s0", "s1"], "props": {}, "capacity_bps": 40_000_000})
    return {"role": "resource", "nodes": nodes, "links": links}


def halved_replacement(model, removed):
    """Replacement doc: drop the removed nodes, halve the spine trunk."""
    nodes = [
        {"id": n.id, "props": dict(n.props), "uuid": n.uuid, "site": n.site, "alloc": n.alloc}
        for n in model.nodes
        if n.id not in removed
    ]
    links = []
    for l in model.links:
        if set(l.endpoints) & removed:
            continue
        cap = l.capacity_bps // 2 if l.id == "s0-s1" else l.capacity_bps
        links.append(
            {
                "id": l.id,
                "endpoints": list(l.endpoints),
                "props": dict(l.props),
                "uuid": l.uuid,
                "capacity_bps": cap,
            }
        )
    return {"role": "resource", "nodes": nodes, "links": links}


def test_fragmented_replacement_halves_backplane(core):
    core.call("commission", {"site": "lab", "network": clos_pool()})
    model = load_site(core.store, "lab").model
    replacement = halved_replacement(model, {"f3"})
    core.call(
        "decommission",
        {"site": "lab", "mode": "fragmented", "nodes": ["f3"], "replacement": replacement},
    )
    after = load_site(core.store, "lab").model
    assert {n.id for n in after.nodes} == {"s0", "s1", "f0", "f1", "f2"}
    assert after.link("s0-s1").capacity_bps == 20_000_000
    # surviving uuids preserved
    assert after.link("s0-s1").uuid == model.link("s0-s1").uuid
    assert after.node("f0").uuid == model.node("f0").uuid


def test_fragmented_node_set_mismatch_rejected(core):
    core.call("commission", {"site": "lab", "network": clos_pool()})
    model = load_site(core.store, "lab").model
    replacement = halved_replacement(model, {"f3", "f2"})  # silently drops f2 too
    with pytest.raises(ValidationError, match="node set"):
        core.call(
            "decommission",
            {"site": "lab", "mode": "fragmented", "nodes": ["f3"], "replacement": replacement},
        )


def test_fragmented_capacity_raise_is_accepted(core):
    core.call("commission", {"site": "lab", "network": clos_pool()})
    model = load_site(core.store, "lab").model
    replacement = halved_replacement(model, {"f3"})
    for l in replacement["links"]:
        if l["id"] == "s0-s1":
            l["capacity_bps"] = 400_000_000  # the core does not police capacity math
    core.call(
        "decommission",
        {"site": "lab", "mode": "fragmented", "nodes": ["f3"], "replacement": replacement},
    )
    assert load_site(core.store, "lab").model.link("s0-s1").capacity_bps == 400_000_000
