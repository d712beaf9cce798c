"""Discrete variables, factors, CPTs, Bayesian networks and Markov random fields.

Everything in this module is immutable after construction and all operations
are pure functions, so models can be shared freely across worker processes.
Factor tables are dense numpy arrays; the scope of every operation *result*
is canonical (variable ids sorted ascending) so tables compare bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

VarId = int

#: Tolerance for normalization / equality checks on probability tables.
#: Double precision over at most a few thousand summed terms.
TOL = 1e-9


class ModelError(ValueError):
    """Invalid model construction or misuse of a table operation."""


class Role(str, Enum):
    TARGET = "target"
    PRIVATE = "private"
    PUBLIC = "public"


class Representation(str, Enum):
    LINEAR = "linear"
    LOG = "log"


@dataclass(frozen=True)
class DiscreteVariable:
    """A named discrete variable with a fixed, labelled state space."""

    id: VarId
    name: str
    cardinality: int
    state_labels: tuple[str, ...]
    role: Role = Role.PUBLIC

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_labels", tuple(self.state_labels))
        object.__setattr__(self, "role", Role(self.role))
        if self.cardinality < 2:
            raise ModelError(f"variable {self.name!r}: cardinality must be >= 2")
        if len(self.state_labels) != self.cardinality:
            raise ModelError(
                f"variable {self.name!r}: {len(self.state_labels)} labels for "
                f"cardinality {self.cardinality}"
            )
        if len(set(self.state_labels)) != self.cardinality:
            raise ModelError(f"variable {self.name!r}: duplicate state labels")


@dataclass(frozen=True)
class Assignment:
    """An immutable partial assignment: variable id -> state index."""

    bindings: Mapping[VarId, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bindings", MappingProxyType(dict(self.bindings)))

    def __getitem__(self, var: VarId) -> int:
        return self.bindings[var]

    def __contains__(self, var: VarId) -> bool:
        return var in self.bindings

    def __len__(self) -> int:
        return len(self.bindings)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Assignment):
            return NotImplemented
        return dict(self.bindings) == dict(other.bindings)

    def __reduce__(self):
        # mappingproxy does not pickle; rebuild from a plain dict
        return (Assignment, (dict(self.bindings),))

    def get(self, var: VarId, default: int | None = None) -> int | None:
        return self.bindings.get(var, default)

    def items(self):
        return self.bindings.items()

    def variables(self) -> frozenset[VarId]:
        return frozenset(self.bindings)

    def restricted_to(self, vars: Iterable[VarId]) -> "Assignment":
        keep = set(vars)
        return Assignment({v: s for v, s in self.bindings.items() if v in keep})

    def merged(self, other: "Assignment") -> "Assignment":
        """Union of two assignments; overlapping bindings must agree."""
        merged = dict(self.bindings)
        for v, s in other.items():
            if merged.get(v, s) != s:
                raise ModelError(f"conflicting bindings for variable {v}")
            merged[v] = s
        return Assignment(merged)


@dataclass(frozen=True)
class Factor:
    """A dense non-negative table over an ordered scope of discrete variables.

    ``values`` has one axis per scope variable (axis order == scope order);
    a factor over the empty scope is a 0-d scalar table.  ``rep`` selects
    linear or log storage; log tables may contain ``-inf`` for zero mass.
    """

    scope: tuple[VarId, ...]
    values: np.ndarray
    rep: Representation = Representation.LINEAR

    def __post_init__(self) -> None:
        object.__setattr__(self, "scope", tuple(self.scope))
        vals = np.asarray(self.values, dtype=np.float64)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "rep", Representation(self.rep))
        if len(set(self.scope)) != len(self.scope):
            raise ModelError(f"duplicate variable in factor scope {self.scope}")
        if vals.ndim != len(self.scope):
            raise ModelError(
                f"table rank {vals.ndim} does not match scope size {len(self.scope)}"
            )
        if np.isnan(vals).any():
            raise ModelError("factor table contains NaN")
        if self.rep is Representation.LINEAR and vals.size and vals.min() < 0.0:
            raise ModelError("linear factor table contains negative entries")

    @property
    def cards(self) -> tuple[int, ...]:
        return self.values.shape

    def card_of(self, var: VarId) -> int:
        return self.values.shape[self.scope.index(var)]

    def to_log(self) -> "Factor":
        if self.rep is Representation.LOG:
            return self
        with np.errstate(divide="ignore"):
            return Factor(self.scope, np.log(self.values), Representation.LOG)

    def to_linear(self) -> "Factor":
        if self.rep is Representation.LINEAR:
            return self
        return Factor(self.scope, np.exp(self.values), Representation.LINEAR)

    def canonical(self) -> "Factor":
        """Equivalent factor with scope sorted ascending by variable id."""
        if list(self.scope) == sorted(self.scope):
            return self
        order = sorted(range(len(self.scope)), key=lambda i: self.scope[i])
        return Factor(
            tuple(self.scope[i] for i in order),
            np.ascontiguousarray(np.transpose(self.values, order)),
            self.rep,
        )

    def value_at(self, assignment: Assignment) -> float:
        idx = []
        for v in self.scope:
            s = assignment.get(v)
            if s is None:
                raise ModelError(f"assignment does not bind scope variable {v}")
            idx.append(s)
        return float(self.values[tuple(idx)])


def _aligned(factor: Factor, union: tuple[VarId, ...]) -> np.ndarray:
    """View of the factor's table broadcastable over the union scope."""
    pos = {v: i for i, v in enumerate(union)}
    order = sorted(range(len(factor.scope)), key=lambda i: pos[factor.scope[i]])
    arr = np.transpose(factor.values, order)
    present = {factor.scope[i] for i in order}
    shape = tuple(
        factor.values.shape[factor.scope.index(v)] if v in present else 1
        for v in union
    )
    return arr.reshape(shape)


def factor_product(a: Factor, b: Factor) -> Factor:
    """Pointwise product of two factors over the union of their scopes.

    In log representation aligned entries are added instead of multiplied.
    The result scope is canonical.
    """
    if a.rep is not b.rep:
        raise ModelError(f"representation mismatch: {a.rep.value} * {b.rep.value}")
    for v in set(a.scope) & set(b.scope):
        if a.card_of(v) != b.card_of(v):
            raise ModelError(
                f"variable {v} has cardinality {a.card_of(v)} in one factor "
                f"and {b.card_of(v)} in the other"
            )
    union = tuple(sorted(set(a.scope) | set(b.scope)))
    av = _aligned(a, union)
    bv = _aligned(b, union)
    if a.rep is Representation.LOG:
        values = av + bv
    else:
        values = av * bv
    return Factor(union, values, a.rep)


def factor_reduce(f: Factor, var: VarId, mode: str) -> Factor:
    """Collapse one scope variable by sum, max or min.

    Sum in log representation uses log-sum-exp so zero mass (-inf) is exact.
    """
    if var not in f.scope:
        raise ModelError(f"variable {var} not in factor scope {f.scope}")
    axis = f.scope.index(var)
    if mode == "sum":
        if f.rep is Representation.LOG:
            values = np.logaddexp.reduce(f.values, axis=axis)
        else:
            values = np.sum(f.values, axis=axis)
    elif mode == "max":
        values = np.max(f.values, axis=axis)
    elif mode == "min":
        values = np.min(f.values, axis=axis)
    else:
        raise ModelError(f"unknown reduce mode {mode!r}")
    scope = tuple(v for v in f.scope if v != var)
    return Factor(scope, values, f.rep).canonical()


def factor_restrict(f: Factor, evidence: Assignment) -> Factor:
    """Slice the table on every evidence variable present in the scope.

    Evidence on variables outside the scope is ignored.
    """
    hit = [v for v in f.scope if v in evidence]
    if not hit:
        return f.canonical()
    indexer = []
    for v in f.scope:
        if v in evidence:
            s = evidence[v]
            if not 0 <= s < f.card_of(v):
                raise ModelError(
                    f"evidence state {s} out of range for variable {v} "
                    f"(cardinality {f.card_of(v)})"
                )
            indexer.append(s)
        else:
            indexer.append(slice(None))
    scope = tuple(v for v in f.scope if v not in evidence)
    return Factor(scope, f.values[tuple(indexer)], f.rep).canonical()


@dataclass(frozen=True)
class CPT:
    """Conditional probability table for ``child`` given ``parents``.

    The backing factor's scope is ``(child, *parents)`` in that order and
    every column (fixed parent configuration) sums to one.
    """

    child: VarId
    parents: tuple[VarId, ...]
    factor: Factor

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.factor.rep is not Representation.LINEAR:
            raise ModelError("CPT factors must use linear representation")
        if self.factor.scope != (self.child, *self.parents):
            raise ModelError(
                f"CPT factor scope {self.factor.scope} != "
                f"{(self.child, *self.parents)}"
            )
        sums = self.factor.values.sum(axis=0)
        if not np.allclose(sums, 1.0, rtol=0.0, atol=TOL):
            worst = float(np.abs(sums - 1.0).max())
            raise ModelError(
                f"CPT for variable {self.child} not normalized "
                f"(max deviation {worst:.3e})"
            )

    @property
    def child_cardinality(self) -> int:
        return self.factor.values.shape[0]


def uniform_cpt(var: DiscreteVariable) -> CPT:
    table = np.full(var.cardinality, 1.0 / var.cardinality)
    return CPT(var.id, (), Factor((var.id,), table))


@dataclass(frozen=True)
class BayesianNetwork:
    """An acyclic directed model: one CPT per variable."""

    variables: tuple[DiscreteVariable, ...]
    cpts: tuple[CPT, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "cpts", tuple(self.cpts))
        by_id = {v.id: v for v in self.variables}
        if len(by_id) != len(self.variables):
            raise ModelError("duplicate variable ids")
        children = {c.child for c in self.cpts}
        if children != set(by_id) or len(self.cpts) != len(self.variables):
            raise ModelError("exactly one CPT per variable is required")
        targets = [v for v in self.variables if v.role is Role.TARGET]
        if len(targets) > 1:
            raise ModelError("more than one target variable in the model")
        for cpt in self.cpts:
            missing = [p for p in cpt.parents if p not in by_id]
            if missing:
                raise ModelError(f"CPT of {cpt.child} references unknown {missing}")
            expect = (by_id[cpt.child].cardinality,) + tuple(
                by_id[p].cardinality for p in cpt.parents
            )
            if cpt.factor.cards != expect:
                raise ModelError(
                    f"CPT of {cpt.child}: table shape {cpt.factor.cards} != {expect}"
                )
        self.topological_order()  # raises on directed loops

    @cached_property
    def _by_id(self) -> dict[VarId, DiscreteVariable]:
        return {v.id: v for v in self.variables}

    @cached_property
    def _cpt_of(self) -> dict[VarId, CPT]:
        return {c.child: c for c in self.cpts}

    def variable(self, var: VarId) -> DiscreteVariable:
        try:
            return self._by_id[var]
        except KeyError:
            raise ModelError(f"unknown variable id {var}") from None

    def cpt(self, var: VarId) -> CPT:
        return self._cpt_of[var]

    def parents(self, var: VarId) -> tuple[VarId, ...]:
        return self._cpt_of[var].parents

    @cached_property
    def _children(self) -> dict[VarId, tuple[VarId, ...]]:
        kids: dict[VarId, list[VarId]] = {v.id: [] for v in self.variables}
        for c in self.cpts:
            for p in c.parents:
                kids[p].append(c.child)
        return {v: tuple(sorted(ks)) for v, ks in kids.items()}

    def children(self, var: VarId) -> tuple[VarId, ...]:
        return self._children[var]

    def target(self) -> DiscreteVariable:
        for v in self.variables:
            if v.role is Role.TARGET:
                return v
        raise ModelError("model has no target variable")

    def topological_order(self) -> tuple[VarId, ...]:
        indeg = {c.child: len(c.parents) for c in self.cpts}
        kids: dict[VarId, list[VarId]] = {c.child: [] for c in self.cpts}
        for c in self.cpts:
            for p in c.parents:
                kids[p].append(c.child)
        ready = sorted(v for v, d in indeg.items() if d == 0)
        order: list[VarId] = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for k in sorted(kids[v]):
                indeg[k] -= 1
                if indeg[k] == 0:
                    ready.append(k)
            ready.sort()
        if len(order) != len(self.cpts):
            raise ModelError("parent lists contain a directed loop")
        return tuple(order)

    @cached_property
    def log_factors(self) -> tuple[Factor, ...]:
        """CPT tables as log-space potentials (the field view of the network)."""
        return tuple(c.factor.to_log() for c in self.cpts)

    def as_mrf(self) -> "MarkovRandomField":
        """The CPT-as-potential view: one linear potential per CPT."""
        return MarkovRandomField(self.variables, tuple(c.factor for c in self.cpts))


def bn_joint_probability(bn: BayesianNetwork, full: Assignment) -> float:
    """Probability of one complete assignment: the product of the consistent
    CPT entries, accumulated in log space and exponentiated."""
    total = 0.0
    for cpt in bn.cpts:
        for v in (cpt.child, *cpt.parents):
            if v not in full:
                raise ModelError(f"assignment does not bind variable {v}")
        entry = cpt.factor.values[
            (full[cpt.child],) + tuple(full[p] for p in cpt.parents)
        ]
        if entry == 0.0:
            return 0.0
        total += math.log(entry)
    return math.exp(total)


@dataclass(frozen=True)
class MarkovRandomField:
    """A bag of non-negative potentials whose product defines a joint PMF
    up to normalization.  Every model variable must appear in at least one
    potential's scope and all potentials share one representation."""

    variables: tuple[DiscreteVariable, ...]
    potentials: tuple[Factor, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "potentials", tuple(self.potentials))
        by_id = {v.id: v for v in self.variables}
        if len(by_id) != len(self.variables):
            raise ModelError("duplicate variable ids")
        targets = [v for v in self.variables if v.role is Role.TARGET]
        if len(targets) > 1:
            raise ModelError("more than one target variable in the model")
        reps = {p.rep for p in self.potentials}
        if len(reps) > 1:
            raise ModelError("potentials mix linear and log representations")
        covered: set[VarId] = set()
        for pot in self.potentials:
            for v in pot.scope:
                if v not in by_id:
                    raise ModelError(f"potential scope references unknown variable {v}")
                if pot.card_of(v) != by_id[v].cardinality:
                    raise ModelError(
                        f"potential table cardinality mismatch for variable {v}"
                    )
            covered.update(pot.scope)
        missing = set(by_id) - covered
        if missing:
            raise ModelError(
                f"variables {sorted(missing)} appear in no potential scope"
            )

    @cached_property
    def _by_id(self) -> dict[VarId, DiscreteVariable]:
        return {v.id: v for v in self.variables}

    def variable(self, var: VarId) -> DiscreteVariable:
        try:
            return self._by_id[var]
        except KeyError:
            raise ModelError(f"unknown variable id {var}") from None

    def var_ids(self) -> frozenset[VarId]:
        return frozenset(v.id for v in self.variables)
