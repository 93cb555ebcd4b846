"""Shared document fixtures and tiny builders used across the test suite."""

from __future__ import annotations

from fedcore.model import canonical_dumps

# A two-node IoT experiment: an embedded breaker that must run the riot
# image with >256 MiB memory, a hub that can take either of two images,
# joined by a zigbee interconnect capped below 100 kbps with >5% loss.
IOT_PAIR = {
    "role": "experiment",
    "nodes": [
        {
            "id": "breaker",
            "props": {
                "image": {"op": "select", "value": "riot"},
                "memory": {"capacity": {"op": "gt", "value": 268435456}},
            },
        },
        {
            "id": "xbeehub",
            "props": {
                "image": {
                    "op": "choice",
                    "value": [
                        {"op": "select", "value": "debian-9"},
                        {"op": "select", "value": "ubuntu-snap"},
                    ],
                },
            },
        },
    ],
    "links": [
        {
            "id": "breaker~xbeehub",
            "endpoints": ["breaker", "xbeehub"],
            "props": {
                "stack": {"op": "eq", "value": "zigbee"},
                "bandwidth": {"op": "lt", "value": 100000},
                "loss": {"op": "gt", "value": 50000},
            },
        }
    ],
}

IOT_PAIR_TEXT = canonical_dumps(IOT_PAIR)


def res_node(node_id, site, props=None, alloc="exclusive", uuid=None):
    return {
        "id": node_id,
        "props": props or {},
        "uuid": uuid or f"00000000-0000-4000-8000-{hash(node_id) & 0xFFFFFFFFFFFF:012x}",
        "site": site,
        "alloc": alloc,
    }


def res_link(link_id, a, b, capacity_bps, props=None, uuid=None):
    return {
        "id": link_id,
        "endpoints": [a, b],
        "props": props or {},
        "uuid": uuid or f"00000000-0000-4000-8000-{hash(link_id) & 0xFFFFFFFFFFFF:012x}",
        "capacity_bps": capacity_bps,
    }


def resource_net(nodes, links=()):
    return {"role": "resource", "nodes": list(nodes), "links": list(links)}


def exp_node(node_id, props=None):
    return {"id": node_id, "props": props or {}}


def exp_link(link_id, a, b, props=None):
    return {"id": link_id, "endpoints": [a, b], "props": props or {}}


def experiment_net(nodes, links=()):
    return {"role": "experiment", "nodes": list(nodes), "links": list(links)}
