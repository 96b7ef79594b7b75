"""Causal DAGs over unit-and-time indexed variables.

Nodes carry an optional unit index and an optional time index. On top of the
usual graph queries (descendants, d-separation, back-door paths) this module
validates *structural time-invariance*: the existence of a causal arrow
between two variable series must not depend on the time period. That
invariance is what licenses the lagged-outcome placebo test, so the module
also provides the graph-level placebo-set rule and the control/placebo
blocking-equivalence check used by the simulation lab.

Connection variables (network ties formed from latent unit traits) are
flagged ``always_conditioned``: every separation query silently adds them to
the conditioning set, reflecting that any diffusion analysis implicitly
compares observations with similar network positions.
"""

from __future__ import annotations

import itertools
import json
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

__all__ = [
    "BiasClass",
    "CausalDag",
    "DagError",
    "DagTemplate",
    "EdgeRule",
    "Node",
    "NodeId",
    "SliceVar",
    "StationarityReport",
    "Violation",
    "parse_label",
    "placebo_blocking_counterexamples",
    "derive_placebo_nodes",
    "unroll_template",
]


class DagError(ValueError):
    """Structurally invalid graph, template, or query."""


@dataclass(frozen=True)
class NodeId:
    """Identity of a graph node: a variable name plus optional indices."""

    name: str
    unit: Optional[int] = None
    time: Optional[int] = None

    def label(self) -> str:
        if self.unit is not None and self.time is not None:
            return f"{self.name}({self.unit},{self.time})"
        if self.unit is not None:
            return f"{self.name}({self.unit})"
        if self.time is not None:
            return f"{self.name}(t={self.time})"
        return self.name

    def shifted(self, offset: int) -> "NodeId":
        if self.time is None:
            raise DagError(f"cannot time-shift {self.label()}: no time index")
        return NodeId(self.name, self.unit, self.time + offset)

    @property
    def series(self) -> tuple:
        """Key identifying the variable series this node belongs to."""
        return (self.name, self.unit)

    def sort_key(self) -> tuple:
        return (
            self.name,
            self.unit is not None,
            self.unit if self.unit is not None else 0,
            self.time is not None,
            self.time if self.time is not None else 0,
        )

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.label()


_LABEL_RE = re.compile(
    r"^(?P<name>[A-Za-z_][\w.-]*)"
    r"(?:\((?:(?P<unit>-?\d+)(?:,(?P<time>-?\d+))?|t=(?P<tonly>-?\d+))\))?$"
)


def parse_label(label: str) -> NodeId:
    """Inverse of :meth:`NodeId.label`."""
    m = _LABEL_RE.match(label.strip())
    if m is None:
        raise DagError(f"unparseable node label {label!r}")
    unit = m.group("unit")
    time = m.group("time")
    tonly = m.group("tonly")
    return NodeId(
        m.group("name"),
        int(unit) if unit is not None else None,
        int(time) if time is not None else (int(tonly) if tonly is not None else None),
    )


@dataclass(frozen=True)
class Node:
    """A node together with its metadata."""

    id: NodeId
    time_dependent: bool = False
    always_conditioned: bool = False

    @staticmethod
    def of(node_id: NodeId, **kwargs) -> "Node":
        if "time_dependent" not in kwargs:
            kwargs["time_dependent"] = node_id.time is not None
        return Node(node_id, **kwargs)


class BiasClass(Enum):
    """Trichotomy for a candidate control set.

    ``NO_BIAS``: the set blocks every back-door path. ``PROPER_BIAS``: at
    least one back-door path stays open under every subset of the control
    set augmented with one-period lags, one-period forward-lags, and the
    lagged treatment; no re-lagging of observed controls can fix it.
    ``IMPROPER_BIAS``: paths are open but each one is blockable by some
    such re-lagging.
    """

    NO_BIAS = "no_bias"
    PROPER_BIAS = "proper_bias"
    IMPROPER_BIAS = "improper_bias"


@dataclass(frozen=True)
class Violation:
    condition: str
    node: NodeId
    time: Optional[int]
    message: str


@dataclass(frozen=True)
class StationarityReport:
    ok: bool
    violations: tuple[Violation, ...]

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class Path:
    """A simple path with precomputed blocking structure."""

    nodes: tuple[NodeId, ...]
    arrows: tuple[str, ...]  # "->" or "<-" between consecutive nodes
    noncolliders: frozenset
    colliders: tuple[tuple[NodeId, frozenset], ...]  # (collider, {collider} | Des)

    def __str__(self) -> str:
        parts = [self.nodes[0].label()]
        for arrow, node in zip(self.arrows, self.nodes[1:]):
            parts.append(f" {arrow} {node.label()}")
        return "".join(parts)

    def is_open(self, conditioning: frozenset) -> bool:
        """Standard path blocking given an already-augmented conditioning set."""
        if self.noncolliders & conditioning:
            return False
        for _, opener in self.colliders:
            if not (opener & conditioning):
                return False
        return True


class CausalDag:
    """Immutable directed acyclic graph with unit/time node metadata.

    Parameters
    ----------
    nodes:
        Iterable of :class:`Node` or bare :class:`NodeId` (metadata defaults
        are inferred; a node with a time index is taken to be time-dependent).
    edges:
        Iterable of ``(parent, child)`` :class:`NodeId` pairs.

    Construction validates acyclicity, label uniqueness, time metadata on
    time-dependent nodes, and that no edge between two time-indexed nodes
    points strictly backward in time.
    """

    def __init__(self, nodes: Iterable, edges: Iterable[tuple]) -> None:
        node_objs = []
        for n in nodes:
            node_objs.append(n if isinstance(n, Node) else Node.of(n))
        ids = [n.id for n in node_objs]
        if len(set(ids)) != len(ids):
            dupes = sorted(
                {i.label() for i in ids if ids.count(i) > 1}
            )
            raise DagError(f"duplicate node labels: {dupes}")
        self._nodes: dict = {n.id: n for n in node_objs}
        for n in node_objs:
            if n.time_dependent and n.id.time is None:
                raise DagError(
                    f"time-dependent node {n.id.label()} has no time index"
                )
        self._parents: dict = {i: set() for i in ids}
        self._children: dict = {i: set() for i in ids}
        for parent, child in edges:
            if parent not in self._nodes or child not in self._nodes:
                missing = parent if parent not in self._nodes else child
                raise DagError(f"edge references unknown node {missing.label()}")
            if parent == child:
                raise DagError(f"self-loop on {parent.label()}")
            if (
                parent.time is not None
                and child.time is not None
                and parent.time > child.time
            ):
                raise DagError(
                    f"edge {parent.label()} -> {child.label()} points backward in time"
                )
            self._children[parent].add(child)
            self._parents[child].add(parent)
        self._order = self._topological_order()
        self._always = frozenset(
            i for i, n in self._nodes.items() if n.always_conditioned
        )
        self._desc_cache: dict = {}

    # -- basic structure ---------------------------------------------------

    @property
    def node_ids(self) -> tuple:
        return tuple(sorted(self._nodes, key=NodeId.sort_key))

    @property
    def nodes(self) -> tuple:
        return tuple(self._nodes[i] for i in self.node_ids)

    @property
    def edges(self) -> tuple:
        out = []
        for p in self.node_ids:
            for c in sorted(self._children[p], key=NodeId.sort_key):
                out.append((p, c))
        return tuple(out)

    @property
    def always_conditioned(self) -> frozenset:
        return self._always

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._nodes

    def node(self, node_id: NodeId) -> Node:
        self._require(node_id)
        return self._nodes[node_id]

    def parents(self, node_id: NodeId) -> frozenset:
        self._require(node_id)
        return frozenset(self._parents[node_id])

    def children(self, node_id: NodeId) -> frozenset:
        self._require(node_id)
        return frozenset(self._children[node_id])

    def _require(self, node_id: NodeId) -> None:
        if node_id not in self._nodes:
            raise DagError(f"unknown node {node_id.label()}")

    def _topological_order(self) -> tuple:
        indeg = {i: len(self._parents[i]) for i in self._nodes}
        ready = deque(sorted((i for i, d in indeg.items() if d == 0), key=NodeId.sort_key))
        order = []
        while ready:
            i = ready.popleft()
            order.append(i)
            for c in sorted(self._children[i], key=NodeId.sort_key):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self._nodes):
            cyclic = sorted(
                (i.label() for i, d in indeg.items() if d > 0)
            )
            raise DagError(f"graph has a cycle through {cyclic}")
        return tuple(order)

    @property
    def topological_order(self) -> tuple:
        return self._order

    def descendants(self, node_id: NodeId) -> frozenset:
        """Transitive closure of children, excluding the node itself."""
        self._require(node_id)
        if node_id in self._desc_cache:
            return self._desc_cache[node_id]
        seen = set()
        stack = list(self._children[node_id])
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self._children[n])
        result = frozenset(seen)
        self._desc_cache[node_id] = result
        return result

    def ancestors(self, node_id: NodeId) -> frozenset:
        self._require(node_id)
        seen = set()
        stack = list(self._parents[node_id])
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self._parents[n])
        return frozenset(seen)

    # -- separation queries ------------------------------------------------

    def _augment(self, z: Iterable, exclude: Iterable = ()) -> frozenset:
        z = frozenset(z)
        for n in z:
            self._require(n)
        return (z | self._always) - frozenset(exclude)

    def d_separated(self, x: NodeId, y: NodeId, z: Iterable = ()) -> bool:
        """Whether ``x`` and ``y`` are d-separated given ``z``.

        Colliders block unless they or a descendant are conditioned on;
        other nodes block when conditioned on. Always-conditioned nodes are
        added to ``z`` automatically (unless they are an endpoint).
        Implemented as linear-time reachability; an exhaustive path
        enumerator with the same semantics lives in the test suite as the
        independent oracle.
        """
        self._require(x)
        self._require(y)
        if x == y:
            raise DagError("d-separation query needs two distinct nodes")
        zset = frozenset(z)
        if x in zset or y in zset:
            raise DagError("conditioning set must exclude the queried pair")
        zaug = self._augment(zset, exclude=(x, y))
        an_z = set(zaug)
        for n in zaug:
            an_z |= self.ancestors(n)
        # (node, direction) traversal; "up" means the trail arrived at the
        # node from one of its children, "down" from one of its parents.
        visited = set()
        frontier = [(x, "up")]
        while frontier:
            node, direction = frontier.pop()
            if (node, direction) in visited:
                continue
            visited.add((node, direction))
            if node == y:
                return False
            if direction == "up":
                if node not in zaug:
                    frontier.extend((p, "up") for p in self._parents[node])
                    frontier.extend((c, "down") for c in self._children[node])
            else:
                if node not in zaug:
                    frontier.extend((c, "down") for c in self._children[node])
                if node in an_z:
                    frontier.extend((p, "up") for p in self._parents[node])
        return True

    def remove_outgoing(self, sources: Iterable) -> "CausalDag":
        """Copy of the graph with every edge out of ``sources`` deleted."""
        srcs = frozenset(sources)
        for s in srcs:
            self._require(s)
        edges = [(p, c) for p, c in self.edges if p not in srcs]
        return CausalDag(self.nodes, edges)

    def simple_paths(self, x: NodeId, y: NodeId) -> tuple:
        """All simple paths between ``x`` and ``y`` over the skeleton."""
        self._require(x)
        self._require(y)
        paths = []

        def neighbors(n):
            return sorted(self._parents[n] | self._children[n], key=NodeId.sort_key)

        stack = [(x, [x], {x})]
        while stack:
            node, trail, seen = stack.pop()
            for nxt in neighbors(node):
                if nxt in seen:
                    continue
                if nxt == y:
                    paths.append(tuple(trail) + (y,))
                else:
                    stack.append((nxt, trail + [nxt], seen | {nxt}))
        paths.sort(key=lambda p: (len(p), tuple(n.sort_key() for n in p)))
        return tuple(self._annotate_path(p) for p in paths)

    def _annotate_path(self, nodes: tuple) -> Path:
        arrows = []
        noncolliders = set()
        colliders = []
        for k in range(len(nodes) - 1):
            a, b = nodes[k], nodes[k + 1]
            arrows.append("->" if b in self._children[a] else "<-")
        for k in range(1, len(nodes) - 1):
            into_left = arrows[k - 1] == "->"
            into_right = arrows[k] == "<-"
            v = nodes[k]
            if into_left and into_right:
                colliders.append((v, frozenset({v}) | self.descendants(v)))
            else:
                noncolliders.add(v)
        return Path(nodes, tuple(arrows), frozenset(noncolliders), tuple(colliders))

    def backdoor_paths(self, treatment: Iterable, outcome: NodeId) -> tuple:
        """All simple paths from a treatment node to the outcome in the graph
        with every treatment node's outgoing edges removed (so each path
        necessarily begins with an arrow into its treatment node)."""
        treatment = tuple(sorted(frozenset(treatment), key=NodeId.sort_key))
        if outcome in treatment:
            raise DagError("outcome cannot be part of the treatment set")
        mutilated = self.remove_outgoing(treatment)
        out = []
        for tr in treatment:
            out.extend(mutilated.simple_paths(tr, outcome))
        return tuple(out)

    def unblocked_backdoor_paths(
        self, treatment: Iterable, outcome: NodeId, z: Iterable = ()
    ) -> tuple:
        """Back-door paths left open by ``z`` (plus always-conditioned nodes).

        Empty output is equivalent to ``z`` satisfying the back-door
        criterion for ``(treatment, outcome)``.
        """
        treatment = frozenset(treatment)
        zaug = self._augment(z, exclude=treatment | {outcome})
        return tuple(
            p for p in self.backdoor_paths(treatment, outcome) if p.is_open(zaug)
        )

    def backdoor_blocked(
        self, treatment: Iterable, outcome: NodeId, z: Iterable = ()
    ) -> bool:
        return not self.unblocked_backdoor_paths(treatment, outcome, z)

    # -- control-set properness ---------------------------------------------

    def lag_augmented_family(
        self, control: Iterable, treatment: Iterable
    ) -> frozenset:
        """Control set plus one-period lags, forward-lags, and the lagged
        treatment; members absent from the graph (or clashing with the
        treatment) are dropped."""
        treatment = frozenset(treatment)
        fam = set()
        for c in control:
            self._require(c)
            fam.add(c)
            if self._nodes[c].time_dependent:
                for off in (-1, 1):
                    cand = c.shifted(off)
                    if cand in self._nodes:
                        fam.add(cand)
        for tr in treatment:
            if tr.time is not None:
                cand = tr.shifted(-1)
                if cand in self._nodes:
                    fam.add(cand)
        return frozenset(fam) - treatment

    def is_proper_control(
        self, control: Iterable, treatment: Iterable, outcome: NodeId
    ) -> BiasClass:
        """Classify a pre-treatment control set for ``(treatment, outcome)``.

        A path witnesses proper bias exactly when it is open under the
        always-conditioned nodes alone and none of its non-colliders can be
        reached by re-lagging: quantifying over every subset of the
        lag-augmented family reduces to that two-part certificate, since
        extra conditioning can only block via a non-collider from the family
        (colliders opened by the empty subset stay open under supersets).
        """
        control = frozenset(control)
        treatment = frozenset(treatment)
        if outcome in control or (control & treatment):
            raise DagError("control set must exclude the treatment and outcome")
        post = set()
        for tr in treatment:
            post |= self.descendants(tr)
        bad = control & post
        if bad:
            raise DagError(
                "control set contains post-treatment nodes: "
                + ", ".join(sorted(n.label() for n in bad))
            )
        paths = self.backdoor_paths(treatment, outcome)
        zaug = self._augment(control, exclude=treatment | {outcome})
        if not any(p.is_open(zaug) for p in paths):
            return BiasClass.NO_BIAS
        family = self.lag_augmented_family(control, treatment) - {outcome}
        base = self._augment((), exclude=treatment | {outcome})
        for p in paths:
            if p.is_open(base) and not (p.noncolliders & family):
                return BiasClass.PROPER_BIAS
        return BiasClass.IMPROPER_BIAS

    # -- stationarity --------------------------------------------------------

    def _eligible_series(self) -> set:
        """Series containing at least one node with more than one child or
        with at least one parent. Isolated exogenous series (a single child,
        no parents) are exempt from the time-invariance conditions."""
        eligible = set()
        for i in self._nodes:
            if len(self._parents[i]) >= 1 or len(self._children[i]) > 1:
                eligible.add(i.series)
        return eligible

    def is_stationary(self) -> StationarityReport:
        """Check the three structural time-invariance conditions.

        (1) every eligible time-dependent series is driven by its own lag at
        each consecutive observed period; (2) a parent-child rule between two
        time-dependent series observed at one lag must hold at every period
        where both nodes exist; (3) a time-independent parent of a
        time-dependent series must be its parent at every observed period.
        """
        violations: list[Violation] = []
        eligible = self._eligible_series()
        series: dict = {}
        for i, n in self._nodes.items():
            if n.time_dependent:
                series.setdefault(i.series, {})[i.time] = i

        # condition 1: self-lag at each consecutive period
        for key, times in sorted(series.items()):
            if key not in eligible:
                continue
            ts = sorted(times)
            for t in range(ts[0], ts[-1]):
                cur, nxt = times.get(t), times.get(t + 1)
                if cur is None or nxt is None:
                    missing_t = t if cur is None else t + 1
                    violations.append(
                        Violation(
                            "2.1",
                            NodeId(key[0], key[1], missing_t),
                            missing_t,
                            f"series {key[0]} is missing period {missing_t}",
                        )
                    )
                    continue
                if nxt not in self._children[cur]:
                    violations.append(
                        Violation(
                            "2.1",
                            cur,
                            t,
                            f"missing self-lag edge {cur.label()} -> {nxt.label()}",
                        )
                    )

        # collect observed cross-series rules
        dep_rules = set()
        indep_rules = set()
        for p in self._nodes:
            for c in self._children[p]:
                pn, cn = self._nodes[p], self._nodes[c]
                if pn.time_dependent and cn.time_dependent:
                    k = c.time - p.time
                    if p.series == c.series and k == 1:
                        continue  # covered by condition 1
                    dep_rules.add((p.series, c.series, k))
                elif (not pn.time_dependent) and cn.time_dependent:
                    indep_rules.add((p, c.series))

        # condition 2: time-dependent rules instantiated at every period
        for src, tgt, k in sorted(dep_rules):
            if src not in eligible or tgt not in eligible:
                continue
            src_times = series.get(src, {})
            tgt_times = series.get(tgt, {})
            for t, src_node in sorted(src_times.items()):
                tgt_node = tgt_times.get(t + k)
                if tgt_node is None:
                    continue
                if tgt_node not in self._children[src_node]:
                    violations.append(
                        Violation(
                            "2.2",
                            src_node,
                            t,
                            f"missing edge {src_node.label()} -> {tgt_node.label()} "
                            f"(rule {src[0]} -> {tgt[0]} at lag {k})",
                        )
                    )

        # condition 3: time-independent parents present at every period
        for znode, tgt in sorted(indep_rules, key=lambda r: (r[0].sort_key(), r[1])):
            if znode.series not in eligible or tgt not in eligible:
                continue
            for t, tgt_node in sorted(series.get(tgt, {}).items()):
                if znode not in self._parents[tgt_node]:
                    violations.append(
                        Violation(
                            "2.3",
                            tgt_node,
                            t,
                            f"missing edge {znode.label()} -> {tgt_node.label()}",
                        )
                    )
        return StationarityReport(not violations, tuple(violations))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "label": n.id.label(),
                    "time_dependent": n.time_dependent,
                    "always_conditioned": n.always_conditioned,
                }
                for n in self.nodes
            ],
            "edges": [[p.label(), c.label()] for p, c in self.edges],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "CausalDag":
        nodes = []
        for spec in payload["nodes"]:
            nid = parse_label(spec["label"])
            nodes.append(
                Node(
                    nid,
                    time_dependent=spec.get("time_dependent", nid.time is not None),
                    always_conditioned=spec.get("always_conditioned", False),
                )
            )
        edges = [(parse_label(a), parse_label(b)) for a, b in payload["edges"]]
        return cls(nodes, edges)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CausalDag":
        return cls.from_dict(json.loads(text))


# -- templates ----------------------------------------------------------------


@dataclass(frozen=True)
class SliceVar:
    """A variable declared once per time slice (or once overall)."""

    name: str
    time_dependent: bool = True
    per_unit: bool = True
    always_conditioned: bool = False


@dataclass(frozen=True)
class EdgeRule:
    """Edge rule instantiated at every valid period when unrolled.

    ``lag`` is the time shift from source to target (ignored when the target
    is time-independent). ``cross_unit`` applies to rules between two
    per-unit variables: ``False`` links each unit to itself, ``True`` links
    every ordered pair of distinct units.
    """

    source: str
    target: str
    lag: int = 0
    cross_unit: bool = False


@dataclass(frozen=True)
class DagTemplate:
    variables: tuple
    rules: tuple
    n_units: int = 2

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "rules", tuple(self.rules))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DagError("duplicate template variable names")

    def var(self, name: str) -> SliceVar:
        for v in self.variables:
            if v.name == name:
                return v
        raise DagError(f"rule references undeclared variable {name!r}")

    def to_dict(self) -> dict:
        return {
            "n_units": self.n_units,
            "variables": [
                {
                    "name": v.name,
                    "time_dependent": v.time_dependent,
                    "per_unit": v.per_unit,
                    "always_conditioned": v.always_conditioned,
                }
                for v in self.variables
            ],
            "rules": [
                {
                    "from": r.source,
                    "to": r.target,
                    "lag": r.lag,
                    "cross_unit": r.cross_unit,
                }
                for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "DagTemplate":
        return cls(
            variables=tuple(
                SliceVar(
                    v["name"],
                    time_dependent=v.get("time_dependent", True),
                    per_unit=v.get("per_unit", True),
                    always_conditioned=v.get("always_conditioned", False),
                )
                for v in payload["variables"]
            ),
            rules=tuple(
                EdgeRule(
                    r["from"],
                    r["to"],
                    lag=r.get("lag", 0),
                    cross_unit=r.get("cross_unit", False),
                )
                for r in payload.get("rules", ())
            ),
            n_units=payload.get("n_units", 2),
        )


def unroll_template(template: DagTemplate, horizon: int) -> CausalDag:
    """Instantiate a template over periods ``0..horizon``.

    Every time-dependent variable automatically receives its self-lag chain;
    each rule is instantiated at every period where both endpoints exist.
    Raises when a rule references an undeclared variable or a lag exceeds
    the horizon.
    """
    if horizon < 1:
        raise DagError("horizon must be at least 1")
    units = range(1, template.n_units + 1)
    nodes: list[Node] = []

    def ids_for(v: SliceVar, t: Optional[int]) -> list:
        if v.per_unit:
            return [NodeId(v.name, u, t) for u in units]
        return [NodeId(v.name, None, t)]

    for v in template.variables:
        if v.time_dependent:
            for t in range(horizon + 1):
                for nid in ids_for(v, t):
                    nodes.append(Node(nid, time_dependent=True))
        else:
            for nid in ids_for(v, None):
                nodes.append(
                    Node(nid, time_dependent=False, always_conditioned=v.always_conditioned)
                )

    edges = set()
    for v in template.variables:
        if v.time_dependent:
            for t in range(horizon):
                for u in units if v.per_unit else [None]:
                    edges.add((NodeId(v.name, u, t), NodeId(v.name, u, t + 1)))

    for rule in template.rules:
        src = template.var(rule.source)
        tgt = template.var(rule.target)
        if rule.lag < 0:
            raise DagError(f"rule {rule.source} -> {rule.target} has negative lag")
        if tgt.time_dependent and rule.lag > horizon:
            raise DagError(
                f"rule {rule.source} -> {rule.target} lag {rule.lag} exceeds horizon {horizon}"
            )
        if src.time_dependent and not tgt.time_dependent:
            raise DagError(
                f"rule {rule.source} -> {rule.target}: time-dependent variables "
                "cannot cause time-independent ones"
            )

        def unit_pairs():
            if src.per_unit and tgt.per_unit:
                if rule.cross_unit:
                    return [(a, b) for a in units for b in units if a != b]
                return [(u, u) for u in units]
            if src.per_unit:
                return [(u, None) for u in units]
            if tgt.per_unit:
                return [(None, u) for u in units]
            return [(None, None)]

        for su, tu in unit_pairs():
            if src.time_dependent and tgt.time_dependent:
                for t in range(horizon + 1 - rule.lag):
                    edges.add(
                        (NodeId(src.name, su, t), NodeId(tgt.name, tu, t + rule.lag))
                    )
            elif not src.time_dependent and tgt.time_dependent:
                for t in range(horizon + 1):
                    edges.add((NodeId(src.name, su, None), NodeId(tgt.name, tu, t)))
            else:
                edges.add((NodeId(src.name, su, None), NodeId(tgt.name, tu, None)))

    return CausalDag(nodes, sorted(edges, key=lambda e: (e[0].sort_key(), e[1].sort_key())))


# -- graph-level placebo machinery ---------------------------------------------


def derive_placebo_nodes(
    dag: CausalDag,
    control: Iterable,
    treatment: Iterable,
    placebo_outcome: NodeId,
) -> frozenset:
    """Graph-level placebo-set rule.

    Take the control set, add one-period lags of its time-dependent members
    and of each treatment node, then remove the placebo outcome and
    everything it affects. Lags that fall off the graph are dropped.
    """
    out = set()
    for c in control:
        out.add(c)
        if dag.node(c).time_dependent:
            lagged = c.shifted(-1)
            if lagged in dag:
                out.add(lagged)
    for tr in treatment:
        if tr.time is not None:
            lagged = tr.shifted(-1)
            if lagged in dag:
                out.add(lagged)
    removal = dag.descendants(placebo_outcome) | {placebo_outcome}
    return frozenset(out) - removal


@dataclass(frozen=True)
class BlockingCounterexample:
    control: frozenset
    placebo_set: frozenset
    control_blocks: bool
    placebo_blocks: bool
    bias_class: BiasClass


def placebo_blocking_counterexamples(
    dag: CausalDag,
    treatment: Iterable,
    outcome: NodeId,
    placebo_outcome: NodeId,
    candidates: Sequence = None,
    max_size: Optional[int] = None,
) -> tuple:
    """Exhaustively test the control/placebo blocking equivalence.

    For every subset of ``candidates`` that forms a pre-treatment control
    set whose bias (if any) is proper, the derived placebo set must block
    all back-door paths to the placebo outcome exactly when the control set
    blocks all back-door paths to the outcome. Returns the violating cases
    (empty tuple means the equivalence holds on this graph).
    """
    treatment = frozenset(treatment)
    t_time = max(tr.time for tr in treatment if tr.time is not None)
    post = set()
    for tr in treatment:
        post |= dag.descendants(tr)
    if candidates is None:
        candidates = [
            n
            for n in dag.node_ids
            if n not in treatment
            and n != outcome
            and n not in post
            and n not in dag.always_conditioned
            and (n.time is None or n.time <= t_time)
        ]
    candidates = sorted(candidates, key=NodeId.sort_key)

    main_paths = dag.backdoor_paths(treatment, outcome)
    placebo_paths = dag.backdoor_paths(treatment, placebo_outcome)
    base = dag._augment((), exclude=treatment | {outcome, placebo_outcome})

    def blocks(paths, z):
        zaug = frozenset(z) | base
        return not any(p.is_open(zaug) for p in paths)

    def proper(control):
        family = dag.lag_augmented_family(control, treatment) - {outcome}
        return any(
            p.is_open(base) and not (p.noncolliders & family) for p in main_paths
        )

    failures = []
    max_size = len(candidates) if max_size is None else max_size
    for r in range(0, max_size + 1):
        for combo in itertools.combinations(candidates, r):
            control = frozenset(combo)
            c_blocks = blocks(main_paths, control)
            if not c_blocks and not proper(control):
                continue  # improper bias: outside the equivalence guarantee
            placebo_set = derive_placebo_nodes(dag, control, treatment, placebo_outcome)
            p_blocks = blocks(placebo_paths, placebo_set)
            if c_blocks != p_blocks:
                failures.append(
                    BlockingCounterexample(
                        control,
                        placebo_set,
                        c_blocks,
                        p_blocks,
                        BiasClass.NO_BIAS if c_blocks else BiasClass.PROPER_BIAS,
                    )
                )
    return tuple(failures)
