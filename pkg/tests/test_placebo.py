"""Symbolic placebo-set derivation and control-set decomposition."""

import pytest
from hypothesis import given, strategies as st

from causaldiff.placebo import (
    ControlSpec,
    SpecError,
    VariableMeta,
    decompose_control_set,
    derive_placebo_set,
)


def var(name, lag=0, td=True, post=False):
    return VariableMeta(name, time_dependent=td, post_outcome=post, lag=lag if td else None)


def keys(spec):
    return [v.key for v in spec.variables]


def test_unemployment_example_exogenous():
    control = ControlSpec(
        variables=(var("unemployment"), var("east", td=False)),
        treatment="neighbor_attacks",
        outcome="attack",
    )
    placebo = derive_placebo_set(control)
    assert keys(placebo) == [
        ("unemployment", 0),
        ("unemployment", -1),
        ("east", None),
        ("neighbor_attacks", -1),
    ]


def test_unemployment_example_outcome_responsive():
    control = ControlSpec(
        variables=(var("unemployment", post=True), var("east", td=False)),
        treatment="neighbor_attacks",
        outcome="attack",
    )
    placebo = derive_placebo_set(control)
    assert keys(placebo) == [
        ("unemployment", -1),
        ("east", None),
        ("neighbor_attacks", -1),
    ]


def test_empty_control_set_keeps_lagged_treatment_only():
    placebo = derive_placebo_set(ControlSpec(variables=()))
    assert keys(placebo) == [("D", -1)]


def test_lagged_outcome_pair():
    # ladder rung with the dependent variable at two lags
    control = ControlSpec(variables=(var("Y", 0), var("Y", -1)))
    placebo = derive_placebo_set(control)
    assert keys(placebo) == [("Y", -1), ("Y", -2), ("D", -1)]


def test_derivation_is_deterministic():
    control = ControlSpec(
        variables=(var("a"), var("b", -1), var("c", td=False), var("x", post=True))
    )
    first = derive_placebo_set(control)
    second = derive_placebo_set(control)
    assert first == second


def test_lagging_clears_response_flag():
    lagged = var("x", 0, post=True).lagged()
    assert lagged.lag == -1
    assert not lagged.post_outcome


def test_deep_lags_stack():
    v = var("a", -1).lagged().lagged()
    assert v.key == ("a", -3)


def test_display_forms():
    assert var("a").display() == "a[t]"
    assert var("a", -2).display() == "a[t-2]"
    assert var("a", 1).display() == "a[t+1]"
    assert var("z", td=False).display() == "z"


def test_outcome_and_treatment_membership_rules():
    with pytest.raises(SpecError, match="outcome at t\\+1"):
        ControlSpec(variables=(var("Y", 1),))
    with pytest.raises(SpecError, match="treatment at t"):
        ControlSpec(variables=(var("D", 0),))
    # the lagged dependent variable is normalized to an outcome-responsive role
    spec = ControlSpec(variables=(var("Y", 0),))
    assert spec.variables[0].post_outcome


def test_variable_meta_validation():
    with pytest.raises(SpecError, match="lag offset"):
        VariableMeta("x", time_dependent=True, lag=None)
    with pytest.raises(SpecError, match="cannot be lagged"):
        VariableMeta("z", time_dependent=False, lag=-1)
    with pytest.raises(SpecError, match="post-outcome"):
        VariableMeta("z", time_dependent=False, lag=None, post_outcome=True)
    with pytest.raises(SpecError, match="beyond the outcome"):
        VariableMeta("x", lag=2)


# -- decomposition ----------------------------------------------------------------


def test_decompose_outcome_responsive_variable():
    control = ControlSpec(variables=(var("unemployment", post=True), var("east", td=False)))
    dec = decompose_control_set(control)
    assert [v.key for v in dec.post] == [("unemployment", 0)]
    assert dec.stable == ()
    assert [v.key for v in dec.fixed] == [("east", None)]
    assert [v.key for v in dec.bias_controls] == [("east", None), ("D", -1)]


def test_decompose_all_time_independent():
    control = ControlSpec(variables=(var("a", td=False), var("b", td=False)))
    dec = decompose_control_set(control)
    assert dec.post == () and dec.stable == ()
    assert [v.key for v in dec.bias_controls] == [
        ("a", None),
        ("b", None),
        ("D", -1),
    ]


def test_decompose_empty():
    dec = decompose_control_set(ControlSpec(variables=()))
    assert dec.post == dec.stable == dec.fixed == ()
    assert [v.key for v in dec.bias_controls] == [("D", -1)]


def test_decompose_partitions_and_excludes_post():
    control = ControlSpec(
        variables=(var("Y", 0), var("v", 0), var("x", 0, post=True), var("z", td=False))
    )
    dec = decompose_control_set(control)
    all_keys = {v.key for v in dec.post + dec.stable + dec.fixed}
    assert all_keys == {v.key for v in control.variables}
    post_names = {v.name for v in dec.post}
    assert post_names == {"Y", "x"}
    assert not (post_names & {v.name for v in dec.bias_controls})


@st.composite
def control_specs(draw):
    n = draw(st.integers(0, 5))
    variables = []
    for k in range(n):
        td = draw(st.booleans())
        if td:
            variables.append(
                var(
                    f"v{k}",
                    lag=draw(st.integers(-2, 0)),
                    post=draw(st.booleans()),
                )
            )
        else:
            variables.append(var(f"v{k}", td=False))
    return ControlSpec(variables=tuple(variables))


@given(control_specs())
def test_bias_controls_inside_placebo_set_plus_stable(control):
    dec = decompose_control_set(control)
    placebo_keys = {v.key for v in derive_placebo_set(control).variables}
    allowed = placebo_keys | {v.key for v in dec.stable}
    assert {v.key for v in dec.bias_controls} <= allowed


@given(control_specs())
def test_placebo_members_never_outcome_responsive(control):
    for v in derive_placebo_set(control).variables:
        assert not v.post_outcome
