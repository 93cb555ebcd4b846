import pytest

from fedcore.discovery import discover, explain, node_candidates
from fedcore.errors import NotFoundError, ValidationError
from fedcore.model import match_props, network_from_obj

from .conftest import IOT_POOL
from .fixtures import IOT_PAIR, experiment_net, exp_node
from .instgen import gen_instance
from .test_realization import build_view, uuid_of


MEM_REQ = {"memory": {"capacity": {"op": "gt", "value": 268435456}}}


def two_node_pool():
    return {
        "role": "resource",
        "nodes": [
            {"id": "A", "props": {"memory": {"capacity": 536870912}}, "alloc": "exclusive"},
            {"id": "B", "props": {"memory": {"capacity": 134217728}}, "alloc": "exclusive"},
        ],
        "links": [],
    }


def test_memory_filter_matches_brute_force():
    view = build_view(two_node_pool())
    x = network_from_obj(experiment_net([exp_node("box", MEM_REQ)], []))
    cmap = discover(view, x)
    # independent oracle: exhaustive filter of the pool
    required = x.node("box").props
    expected = sorted(
        u for u, rn in view.nodes.items() if match_props(required, rn.props)
    )
    assert list(cmap.entries["box"]) == expected == [uuid_of(view, "A")]


def test_empty_experiment_gives_empty_map():
    view = build_view(two_node_pool())
    cmap = discover(view, network_from_obj(experiment_net([], [])))
    assert cmap.entries == {}
    assert cmap.watermark == view.watermark


def test_entries_cover_every_node_even_with_no_candidates():
    view = build_view(two_node_pool())
    x = network_from_obj(
        experiment_net([exp_node("a", MEM_REQ), exp_node("b", {"cores": {"op": "ge", "value": 64}})], [])
    )
    cmap = discover(view, x)
    assert set(cmap.entries) == {"a", "b"}
    assert cmap.entries["b"] == ()


def test_unique_image_pins_single_candidate():
    view = build_view(IOT_POOL)
    cmap = discover(view, network_from_obj(IOT_PAIR))
    assert cmap.entries["breaker"] == (uuid_of(view, "n0"),)
    assert len(cmap.entries["xbeehub"]) == 3


def test_discover_rejects_resource_networks():
    view = build_view(two_node_pool())
    with pytest.raises(ValidationError):
        discover(view, network_from_obj({"role": "resource", "nodes": [], "links": []}))


def test_brute_force_equivalence_on_random_pools():
    for seed in range(60):
        sub, exp = gen_instance(seed, max_exp=4, max_res=50)
        view = build_view(sub, seed=seed)
        x = network_from_obj(exp)
        cmap = discover(view, x)
        for n in x.nodes:
            expected = sorted(
                u
                for u, rn in view.nodes.items()
                if view.residual_slots(u) >= 1 and match_props(n.props, rn.props)
            )
            assert list(cmap.entries[n.id]) == expected, f"seed {seed} node {n.id}"


def test_adding_a_constraint_never_grows_candidates():
    for seed in range(40):
        sub, _ = gen_instance(seed, max_res=30)
        view = build_view(sub, seed=seed)
        base = node_candidates(view, {})
        tightened = node_candidates(view, {"cores": {"op": "ge", "value": 4}})
        assert set(tightened) <= set(base)


def test_two_discovers_with_no_commits_are_identical():
    view_store_core = build_view(IOT_POOL)
    x = network_from_obj(IOT_PAIR)
    a = discover(view_store_core, x)
    b = discover(view_store_core, x)
    assert a == b


def test_reserved_resources_are_excluded(core):
    core.call("commission", {"site": "s0", "network": two_node_pool()})
    x_doc = experiment_net([exp_node("box", MEM_REQ)], [])
    before = core.call("discover", {"experiment": x_doc})
    assert len(before["entries"]["box"]) == 1
    core.call("realize", {"id": "e1", "experiment": x_doc})
    core.call("reserve", {"id": "e1"})
    after = core.call("discover", {"experiment": x_doc})
    assert after["entries"]["box"] == []


def test_shared_node_with_free_slots_stays_discoverable(core):
    pool = {
        "role": "resource",
        "nodes": [{"id": "S", "props": {"slots": 2}, "alloc": "shared"}],
        "links": [],
    }
    core.call("commission", {"site": "s0", "network": pool})
    x_doc = experiment_net([exp_node("box")], [])
    core.call("realize", {"id": "e1", "experiment": x_doc})
    core.call("reserve", {"id": "e1"})
    after = core.call("discover", {"experiment": x_doc})
    assert len(after["entries"]["box"]) == 1  # one slot left


# -- explain ---------------------------------------------------------------


def test_explain_satisfied_pair_all_true():
    view = build_view(IOT_POOL)
    x = network_from_obj(IOT_PAIR)
    rows = explain(view, x, "breaker", uuid_of(view, "n0"))
    assert rows and all(r["ok"] for r in rows)
    assert {r["path"] for r in rows} == {"image", "memory.capacity"}


def test_explain_reports_failing_leaf():
    view = build_view(two_node_pool())
    x = network_from_obj(experiment_net([exp_node("box", MEM_REQ)], []))
    rows = explain(view, x, "box", uuid_of(view, "B"))
    assert rows == [
        {
            "path": "memory.capacity",
            "constraint": {"op": "gt", "value": 268435456},
            "offered": 134217728,
            "absent": False,
            "ok": False,
        }
    ]


def test_explain_flags_absent_path():
    view = build_view(two_node_pool())
    x = network_from_obj(experiment_net([exp_node("box", {"gpu": {"op": "eq", "value": True}})], []))
    rows = explain(view, x, "box", uuid_of(view, "A"))
    assert rows[0]["absent"] is True and rows[0]["ok"] is False


def test_explain_unknown_resource_errors():
    view = build_view(two_node_pool())
    x = network_from_obj(experiment_net([exp_node("box")], []))
    with pytest.raises(NotFoundError):
        explain(view, x, "box", "no-such-uuid")
