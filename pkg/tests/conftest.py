"""Shared fixtures: canonical two-unit graphs and independent graph oracles."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from causaldiff.dag import (
    CausalDag,
    DagTemplate,
    EdgeRule,
    Node,
    NodeId,
    SliceVar,
    unroll_template,
)


def y(u, t):
    return NodeId("Y", u, t)


def g(t):
    return NodeId("G", None, t)


def u_(i):
    return NodeId("U", i, None)


W = NodeId("W", None, None)


def diffusion_template(n_units=2):
    return DagTemplate(
        variables=(SliceVar("Y"),),
        rules=(EdgeRule("Y", "Y", lag=1, cross_unit=True),),
        n_units=n_units,
    )


def contextual_template(n_units=2):
    return DagTemplate(
        variables=(SliceVar("Y"), SliceVar("G", per_unit=False)),
        rules=(
            EdgeRule("Y", "Y", lag=1, cross_unit=True),
            EdgeRule("G", "Y", lag=0),
        ),
        n_units=n_units,
    )


def homophily_template(n_units=2):
    return DagTemplate(
        variables=(
            SliceVar("Y"),
            SliceVar("U", time_dependent=False),
            SliceVar("W", time_dependent=False, per_unit=False, always_conditioned=True),
        ),
        rules=(
            EdgeRule("Y", "Y", lag=1, cross_unit=True),
            EdgeRule("U", "Y"),
            EdgeRule("U", "W"),
        ),
        n_units=n_units,
    )


def combined_template(n_units=2):
    return DagTemplate(
        variables=(
            SliceVar("Y"),
            SliceVar("G", per_unit=False),
            SliceVar("U", time_dependent=False),
            SliceVar("W", time_dependent=False, per_unit=False, always_conditioned=True),
        ),
        rules=(
            EdgeRule("Y", "Y", lag=1, cross_unit=True),
            EdgeRule("G", "Y", lag=0),
            EdgeRule("U", "Y"),
            EdgeRule("U", "W"),
        ),
        n_units=n_units,
    )


@pytest.fixture
def diffusion_dag():
    return unroll_template(diffusion_template(), horizon=2)


@pytest.fixture
def contextual_dag():
    return unroll_template(contextual_template(), horizon=2)


@pytest.fixture
def homophily_dag():
    return unroll_template(homophily_template(), horizon=2)


@pytest.fixture
def combined_dag():
    return unroll_template(combined_template(), horizon=2)


# -- independent oracles -------------------------------------------------------


def oracle_d_connected(dag: CausalDag, x, y_node, z) -> bool:
    """Brute-force d-connection: enumerate every simple path and apply the
    blocking rules literally. Conditioning set taken as-is (the caller adds
    any implicit members)."""
    z = frozenset(z)
    for path in dag.simple_paths(x, y_node):
        open_path = True
        for k in range(1, len(path.nodes) - 1):
            v = path.nodes[k]
            into_left = path.arrows[k - 1] == "->"
            into_right = path.arrows[k] == "<-"
            if into_left and into_right:
                if v not in z and not (dag.descendants(v) & z):
                    open_path = False
                    break
            else:
                if v in z:
                    open_path = False
                    break
        if open_path:
            return True
    return False


def oracle_proper_bias(dag: CausalDag, control, treatment, outcome) -> bool:
    """Literal properness check: some back-door path stays open under every
    subset of the lag-augmented family."""
    treatment = frozenset(treatment)
    family = sorted(
        dag.lag_augmented_family(control, treatment) - {outcome},
        key=NodeId.sort_key,
    )
    always = dag.always_conditioned - treatment - {outcome}
    paths = dag.backdoor_paths(treatment, outcome)
    for path in paths:
        killed = False
        for r in range(len(family) + 1):
            for combo in itertools.combinations(family, r):
                if not path.is_open(frozenset(combo) | always):
                    killed = True
                    break
            if killed:
                break
        if not killed:
            return True
    return False


def random_dag(rng: np.random.Generator, max_nodes=10, p_edge=None):
    """Random DAG over plain (index-free) nodes, for oracle comparisons."""
    n = int(rng.integers(4, max_nodes + 1))
    p = float(rng.uniform(0.15, 0.5)) if p_edge is None else p_edge
    ids = [NodeId(f"V{k}") for k in range(n)]
    order = rng.permutation(n)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((ids[order[i]], ids[order[j]]))
    return CausalDag([Node(i) for i in ids], edges)
