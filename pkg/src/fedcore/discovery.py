"""Candidate discovery: which available resources satisfy each node.

A pure filter over a pool snapshot.  Node properties only; link
feasibility is the embedding engines' concern.  Resources with no free
tenant capacity at the watermark are excluded.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NotFoundError, ValidationError
from .model import (
    Constraint,
    Network,
    _MISSING,
    iter_requirements,
    leaf_satisfies,
    lookup_path,
    match_props,
)
from .substrate import ResourceView


@dataclass(frozen=True)
class CandidateMap:
    watermark: int
    entries: dict  # experiment node id -> tuple of resource uuids, sorted

    def to_obj(self) -> dict:
        return {
            "watermark": self.watermark,
            "entries": {nid: list(uuids) for nid, uuids in self.entries.items()},
        }


def node_candidates(view: ResourceView, props: dict) -> list:
    return sorted(
        uuid
        for uuid, rn in view.nodes.items()
        if view.available(uuid) and match_props(props, rn.props)
    )


def discover(view: ResourceView, experiment: Network) -> CandidateMap:
    if experiment.role != "experiment":
        raise ValidationError("discover requires an experiment network")
    entries = {n.id: tuple(node_candidates(view, n.props)) for n in experiment.nodes}
    return CandidateMap(view.watermark, entries)


def explain(view: ResourceView, experiment: Network, node_id: str, uuid: str) -> list:
    """Per-leaf satisfaction report for one (node, resource) pairing."""
    node = experiment.node(node_id)
    rn = view.nodes.get(uuid)
    if rn is None:
        raise NotFoundError(f"unknown resource {uuid}")
    rows = []
    for path, leaf in iter_requirements(node.props):
        offered = lookup_path(rn.props, path)
        constraint = leaf if isinstance(leaf, Constraint) else Constraint("eq", leaf)
        rows.append(
            {
                "path": ".".join(path),
                "constraint": {"op": constraint.op, "value": _plain(constraint.value)},
                "offered": None if offered is _MISSING else _plain(offered),
                "absent": offered is _MISSING,
                "ok": leaf_satisfies(leaf, offered),
            }
        )
    return rows


def _plain(value):
    if isinstance(value, frozenset):
        return sorted(value)
    if isinstance(value, tuple):
        return [{"op": c.op, "value": _plain(c.value)} for c in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value
