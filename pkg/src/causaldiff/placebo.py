"""Deterministic placebo-set derivation from control sets.

A control set for the regression of the outcome at ``t+1`` on the treatment
at ``t`` is described symbolically: each member is a variable name with a
time offset relative to ``t`` plus two role flags (time-dependent or not,
affected by the current outcome or not). The placebo set replays the same
adjustment one period earlier: add one-period lags of every time-dependent
member and of the treatment, then drop everything the placebo outcome
affects. Offsets are tracked symbolically; the data layer materializes them
as shifted columns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

__all__ = [
    "ControlDecomposition",
    "ControlSpec",
    "PlaceboSpec",
    "SpecError",
    "VariableMeta",
    "decompose_control_set",
    "derive_placebo_set",
]


class SpecError(ValueError):
    """Malformed control-set or variable metadata."""


@dataclass(frozen=True)
class VariableMeta:
    """One control variable at one time offset.

    ``lag`` is relative to the treatment period ``t`` (0 means measured at
    ``t``, -1 one period earlier, +1 together with the outcome); it must be
    ``None`` exactly when the variable is time-independent. ``post_outcome``
    marks a variable that, at its stated offset, is affected by the outcome
    at ``t`` -- the usual post-treatment-adjustment knowledge. Lagging such a
    variable clears the flag: one period earlier it can only respond to the
    previous outcome.
    """

    name: str
    time_dependent: bool = True
    post_outcome: bool = False
    lag: Optional[int] = 0

    def __post_init__(self):
        if self.time_dependent:
            if self.lag is None:
                raise SpecError(f"time-dependent variable {self.name!r} needs a lag offset")
            if self.lag > 1:
                raise SpecError(
                    f"{self.name!r}: offsets beyond the outcome period are not allowed"
                )
        else:
            if self.lag not in (None, 0):
                raise SpecError(f"time-independent variable {self.name!r} cannot be lagged")
            object.__setattr__(self, "lag", None)
            if self.post_outcome:
                raise SpecError(
                    f"time-independent variable {self.name!r} cannot be post-outcome"
                )

    @property
    def key(self) -> tuple:
        return (self.name, self.lag)

    def lagged(self) -> "VariableMeta":
        if not self.time_dependent:
            raise SpecError(f"cannot lag time-independent variable {self.name!r}")
        return replace(self, lag=self.lag - 1, post_outcome=False)

    def display(self) -> str:
        if not self.time_dependent:
            return self.name
        if self.lag == 0:
            return f"{self.name}[t]"
        if self.lag > 0:
            return f"{self.name}[t+{self.lag}]"
        return f"{self.name}[t{self.lag}]"


def _dedupe(variables: Iterable[VariableMeta]) -> tuple:
    seen = set()
    out = []
    for v in variables:
        if v.key in seen:
            continue
        seen.add(v.key)
        out.append(v)
    return tuple(out)


@dataclass(frozen=True)
class ControlSpec:
    """An ordered control set plus the treatment and outcome names.

    The outcome at ``t+1`` and the treatment at ``t`` are never legal
    members. The outcome at offset 0 (the lagged dependent variable of the
    main model) is legal and is normalized to ``post_outcome=True``: it *is*
    the placebo outcome, so the derivation must drop it.
    """

    variables: tuple
    treatment: str = "D"
    outcome: str = "Y"
    label: Optional[str] = None

    def __post_init__(self):
        normalized = []
        for v in self.variables:
            if v.name == self.outcome and v.time_dependent and v.lag is not None:
                if v.lag >= 1:
                    raise SpecError("control set cannot contain the outcome at t+1")
                if v.lag == 0 and not v.post_outcome:
                    v = replace(v, post_outcome=True)
            if v.name == self.treatment and v.lag == 0:
                raise SpecError("control set cannot contain the treatment at t")
            normalized.append(v)
        object.__setattr__(self, "variables", _dedupe(normalized))

    def names(self) -> tuple:
        return tuple(v.display() for v in self.variables)


@dataclass(frozen=True)
class PlaceboSpec:
    """Derived conditioning set for the placebo regression of the outcome
    at ``t`` on the treatment at ``t``."""

    variables: tuple
    treatment: str
    outcome: str
    label: Optional[str] = None

    def names(self) -> tuple:
        return tuple(v.display() for v in self.variables)


def derive_placebo_set(control: ControlSpec) -> PlaceboSpec:
    """Apply the placebo-set rule to a control set.

    Keep every member that is not affected by the current outcome, add the
    one-period lag of each time-dependent member, and append the lagged
    treatment. Duplicates collapse; the result is deterministic in the
    input order.
    """
    members = []
    for v in control.variables:
        candidates = [v, v.lagged()] if v.time_dependent else [v]
        for cand in candidates:
            if cand.post_outcome:
                continue
            members.append(cand)
    members.append(
        VariableMeta(control.treatment, time_dependent=True, post_outcome=False, lag=-1)
    )
    return PlaceboSpec(
        variables=_dedupe(members),
        treatment=control.treatment,
        outcome=control.outcome,
        label=control.label,
    )


@dataclass(frozen=True)
class ControlDecomposition:
    """Split of a control set by role, for bias-corrected estimation.

    ``post`` holds the time-dependent members affected by the outcome at
    ``t`` (including the lagged dependent variable itself); ``stable`` the
    time-dependent members that are not; ``fixed`` the time-independent
    ones. ``bias_controls`` is the conditioning block shared by the paired
    main and placebo models: the stable members, their one-period lags, the
    fixed members, and the lagged treatment. The post members never enter
    it; they are swapped between their stated offset (main model) and one
    lag earlier (placebo model).
    """

    post: tuple
    stable: tuple
    fixed: tuple
    bias_controls: tuple
    treatment: str
    outcome: str


def decompose_control_set(control: ControlSpec) -> ControlDecomposition:
    post, stable, fixed = [], [], []
    for v in control.variables:
        if not v.time_dependent:
            fixed.append(v)
        elif v.post_outcome:
            post.append(v)
        else:
            stable.append(v)
    bias_controls = []
    for v in stable:
        bias_controls.append(v)
        bias_controls.append(v.lagged())
    bias_controls.extend(fixed)
    bias_controls.append(
        VariableMeta(control.treatment, time_dependent=True, post_outcome=False, lag=-1)
    )
    return ControlDecomposition(
        post=tuple(post),
        stable=tuple(stable),
        fixed=tuple(fixed),
        bias_controls=_dedupe(bias_controls),
        treatment=control.treatment,
        outcome=control.outcome,
    )
