import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcore.errors import ValidationError
from fedcore.model import (
    Constraint,
    Network,
    canonical_dumps,
    match_props,
    network_from_obj,
    normalize_unit,
    parse_network,
    satisfies,
    serialize_network,
)

from .fixtures import IOT_PAIR_TEXT


# -- parsing ----------------------------------------------------------------


def test_parse_iot_pair_document():
    net = parse_network(IOT_PAIR_TEXT)
    assert net.role == "experiment"
    assert len(net.nodes) == 2 and len(net.links) == 1
    breaker = net.node("breaker")
    assert breaker.props["image"] == Constraint("select", "riot")
    assert breaker.props["memory"]["capacity"] == Constraint("gt", 268435456)
    hub = net.node("xbeehub")
    assert hub.props["image"].op == "choice"
    assert [c.value for c in hub.props["image"].value] == ["debian-9", "ubuntu-snap"]
    link = net.links[0]
    assert link.endpoints == ("breaker", "xbeehub")
    assert link.props["bandwidth"] == Constraint("lt", 100000)
    assert link.props["loss"] == Constraint("gt", 50000)
    assert link.props["stack"] == Constraint("eq", "zigbee")


def test_parse_empty_network():
    net = parse_network('{"role":"experiment","nodes":[],"links":[]}')
    assert net == Network("experiment")


def test_serialize_empty_network_is_canonical():
    assert serialize_network(Network("experiment")) == (
        '{"links":[],"nodes":[],"role":"experiment"}'
    )


def test_constraint_in_resource_network_is_role_violation():
    doc = {
        "role": "resource",
        "nodes": [
            {
                "id": "a",
                "props": {"cores": {"op": "gt", "value": 2}},
                "uuid": "u-1",
                "site": "s",
                "alloc": "exclusive",
            }
        ],
        "links": [],
    }
    with pytest.raises(ValidationError, match="resource network"):
        network_from_obj(doc)


def test_dangling_endpoint_rejected():
    doc = {
        "role": "experiment",
        "nodes": [{"id": "a", "props": {}}, {"id": "b", "props": {}}],
        "links": [{"id": "l", "endpoints": ["a", "zz"], "props": {}}],
    }
    with pytest.raises(ValidationError, match="endpoint"):
        network_from_obj(doc)


def test_duplicate_node_id_rejected():
    doc = {
        "role": "experiment",
        "nodes": [{"id": "a", "props": {}}, {"id": "a", "props": {}}],
        "links": [],
    }
    with pytest.raises(ValidationError, match="duplicate"):
        network_from_obj(doc)


def test_self_loop_rejected():
    doc = {
        "role": "experiment",
        "nodes": [{"id": "a", "props": {}}],
        "links": [{"id": "l", "endpoints": ["a", "a"], "props": {}}],
    }
    with pytest.raises(ValidationError, match="self-loop"):
        network_from_obj(doc)


def test_syntax_error_reports_position():
    with pytest.raises(ValidationError, match="position"):
        parse_network('{"role": "experiment", nodes: []}')


def test_floats_rejected():
    doc = {
        "role": "experiment",
        "nodes": [{"id": "a", "props": {"x": 1.5}}],
        "links": [],
    }
    with pytest.raises(ValidationError, match="non-integer"):
        network_from_obj(doc)


def test_unsorted_source_keys_come_out_sorted():
    text = '{"role":"experiment","links":[],"nodes":[{"props":{"b":1,"a":2},"id":"n"}]}'
    out = serialize_network(parse_network(text))
    assert out.index('"a":2') < out.index('"b":1')
    assert out.startswith('{"links"')


# -- round-trip properties ---------------------------------------------------

_names = st.text(alphabet="abcdefgh0123", min_size=1, max_size=6)
_scalars = st.one_of(
    st.integers(min_value=-(2**40), max_value=2**40),
    st.booleans(),
    st.text(alphabet="abcxyz-", max_size=8),
    st.lists(_names, min_size=1, max_size=4, unique=True),
)
_props = st.recursive(
    st.dictionaries(_names, _scalars, max_size=3),
    lambda inner: st.dictionaries(_names, st.one_of(_scalars, inner), max_size=3),
    max_leaves=6,
)


@st.composite
def experiment_docs(draw):
    node_ids = draw(st.lists(_names, min_size=0, max_size=5, unique=True))
    nodes = [{"id": nid, "props": draw(_props)} for nid in node_ids]
    links = []
    if len(node_ids) >= 2:
        n_links = draw(st.integers(min_value=0, max_value=3))
        for i in range(n_links):
            a, b = draw(st.permutations(node_ids))[:2]
            links.append({"id": f"l{i}", "endpoints": [a, b], "props": draw(_props)})
    return {"role": "experiment", "nodes": nodes, "links": links}


@settings(max_examples=150, deadline=None)
@given(experiment_docs())
def test_round_trip_and_idempotent_serialization(doc):
    net = network_from_obj(doc)
    text = serialize_network(net)
    again = parse_network(text)
    assert again == net
    assert serialize_network(again) == text
    assert "\n" not in text


# -- units --------------------------------------------------------------------


@pytest.mark.parametrize(
    "kind,mag,unit,expected",
    [
        ("memory", 256, "mB", 268435456),
        ("memory", 1, "gB", 1073741824),
        ("bandwidth", 100, "kbps", 100000),
        ("bandwidth", 2, "gbps", 2000000000),
        ("loss", 5, "percent", 50000),
        ("loss", 0.5, "percent", 5000),
        ("latency", 10, "ms", 10000),
        ("latency", 7, "us", 7),
    ],
)
def test_normalize_unit_values(kind, mag, unit, expected):
    assert normalize_unit(kind, mag, unit) == expected


def test_normalize_unit_errors():
    with pytest.raises(ValidationError, match="unknown"):
        normalize_unit("memory", 1, "acres")
    with pytest.raises(ValidationError, match="unknown quantity"):
        normalize_unit("voltage", 1, "V")
    with pytest.raises(ValidationError, match="non-negative"):
        normalize_unit("loss", -1, "percent")
    with pytest.raises(ValidationError, match="whole number"):
        normalize_unit("bandwidth", 0.0001, "kbps")


@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=0, max_value=10**6))
def test_normalize_unit_injective_per_unit(a, b):
    if a != b:
        assert normalize_unit("loss", a, "percent") != normalize_unit("loss", b, "percent")


# -- satisfaction ---------------------------------------------------------------


def test_satisfies_basics():
    assert satisfies(Constraint("gt", 268435456), 536870912)
    assert not satisfies(Constraint("eq", "zigbee"), "ethernet")
    assert satisfies(Constraint("eq", "zigbee"), "zigbee")
    choice = Constraint(
        "choice", (Constraint("select", "debian-9"), Constraint("select", "ubuntu-snap"))
    )
    assert satisfies(choice, frozenset({"debian-9", "riot"}))
    assert not satisfies(choice, frozenset({"riot"}))


def test_satisfies_select_string_and_set():
    sel = Constraint("select", "riot")
    assert satisfies(sel, "riot")
    assert satisfies(sel, frozenset({"riot", "debian-9"}))
    assert not satisfies(sel, frozenset({"debian-9"}))
    assert not satisfies(sel, 7)


def test_satisfies_type_mismatches_are_false():
    assert not satisfies(Constraint("eq", 1), True)
    assert not satisfies(Constraint("eq", True), 1)
    assert not satisfies(Constraint("lt", 5), "4")
    assert not satisfies(Constraint("lt", 5), True)
    assert not satisfies(Constraint("eq", {"a": 1}), {"a": 2})
    assert satisfies(Constraint("eq", {"a": 1}), {"a": 1})
    assert not satisfies(Constraint("eq", {"a": 1}), {"a": 1, "b": 2})


@given(st.integers(min_value=-(2**32), max_value=2**32), st.integers(min_value=-(2**32), max_value=2**32))
def test_lt_is_complement_of_ge(k, v):
    assert satisfies(Constraint("lt", k), v) != satisfies(Constraint("ge", k), v)
    assert satisfies(Constraint("gt", k), v) != satisfies(Constraint("le", k), v)


def test_constraint_invariants_enforced():
    with pytest.raises(ValidationError):
        Constraint("lt", "fast")
    with pytest.raises(ValidationError):
        Constraint("choice", ())
    with pytest.raises(ValidationError):
        Constraint("choice", (Constraint("choice", (Constraint("eq", 1),)),))
    with pytest.raises(ValidationError):
        Constraint("between", 4)


# -- property-map matching -------------------------------------------------------


def test_match_props_examples():
    required = {"memory": {"capacity": Constraint("gt", 268435456)}}
    offered = {"memory": {"capacity": 536870912}, "cores": 8}
    assert match_props(required, offered)

    assert not match_props(
        {"image": Constraint("select", "riot")}, {"image": frozenset({"debian-9"})}
    )
    assert match_props({}, {"anything": 1})


def test_match_props_missing_path_fails():
    assert not match_props({"memory": {"capacity": Constraint("gt", 1)}}, {"cores": 8})


def test_match_props_concrete_leaf_is_eq():
    assert match_props({"stack": "zigbee"}, {"stack": "zigbee"})
    assert not match_props({"stack": "zigbee"}, {"stack": "ethernet"})


_leaf_req = st.one_of(
    _scalars.map(lambda s: frozenset(s) if isinstance(s, list) else s),
    st.integers(-100, 100).map(lambda k: Constraint("gt", k)),
    st.text(alphabet="abc", min_size=1, max_size=3).map(lambda s: Constraint("select", s)),
)


@settings(max_examples=120, deadline=None)
@given(
    st.dictionaries(_names, _leaf_req, min_size=1, max_size=5),
    st.dictionaries(_names, st.one_of(st.integers(-100, 100), st.text(alphabet="abc", max_size=3)), max_size=5),
)
def test_match_props_monotone_under_leaf_removal(required, offered):
    # Removing any required leaf never turns a match into a non-match.
    before = match_props(required, offered)
    for key in list(required):
        reduced = {k: v for k, v in required.items() if k != key}
        if before:
            assert match_props(reduced, offered)


def test_canonical_dumps_is_ascii_single_line():
    text = canonical_dumps({"z": 1, "a": [3, 2], "u": "☃"})
    assert "\n" not in text
    assert text == '{"a":[3,2],"u":"\\u2603","z":1}'
