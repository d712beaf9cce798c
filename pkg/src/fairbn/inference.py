"""Exact inference by variable elimination: posterior updating and MPE.

All elimination arithmetic runs in log space; products of many small
probabilities would underflow in linear space.  Zero entries become -inf and
propagate correctly under max; min-product is realized as max-product over
negated log potentials, so one traceback routine serves both modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Assignment,
    BayesianNetwork,
    Factor,
    MarkovRandomField,
    Representation,
    VarId,
    factor_product,
    factor_reduce,
    factor_restrict,
)


class InferenceError(ValueError):
    """Invalid inference query."""


class ZeroEvidenceError(InferenceError):
    """The evidence has probability zero: the instance is impossible."""


@dataclass(frozen=True)
class EliminationOrder:
    order: tuple[VarId, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", tuple(self.order))
        if len(set(self.order)) != len(self.order):
            raise InferenceError("elimination order repeats a variable")


@dataclass(frozen=True)
class MpeResult:
    """Optimizing assignment of the free variables plus the log-domain
    objective value (sum of restricted log potentials at the assignment)."""

    assignment: Assignment
    score: float


def _min_fill(scopes: list[tuple[VarId, ...]], targets: set[VarId]) -> list[VarId]:
    """Greedy min-fill order over `targets` in the interaction graph induced
    by the scopes.  Ties break on the lowest variable id."""
    adj: dict[VarId, set[VarId]] = {}
    for scope in scopes:
        for v in scope:
            adj.setdefault(v, set())
        for i, v in enumerate(scope):
            for w in scope[i + 1 :]:
                adj[v].add(w)
                adj[w].add(v)
    for t in targets:
        adj.setdefault(t, set())

    remaining = set(targets)
    order: list[VarId] = []
    while remaining:
        best: tuple[int, VarId] | None = None
        for v in sorted(remaining):
            nbrs = [u for u in adj[v] if u != v]
            fill = 0
            for i, a in enumerate(nbrs):
                for b in nbrs[i + 1 :]:
                    if b not in adj[a]:
                        fill += 1
            if best is None or fill < best[0]:
                best = (fill, v)
        v = best[1]
        order.append(v)
        nbrs = list(adj[v])
        for a in nbrs:
            adj[a].discard(v)
            for b in nbrs:
                if a != b:
                    adj[a].add(b)
        del adj[v]
        remaining.discard(v)
    return order


def min_fill_order(mrf: MarkovRandomField, targets: set[VarId]) -> EliminationOrder:
    """Elimination order over `targets` minimizing fill-in edges greedily."""
    known = mrf.var_ids()
    unknown = set(targets) - known
    if unknown:
        raise InferenceError(f"unknown variables in targets: {sorted(unknown)}")
    scopes = [p.scope for p in mrf.potentials]
    return EliminationOrder(tuple(_min_fill(scopes, set(targets))))


def induced_width(scopes: list[tuple[VarId, ...]], order: list[VarId]) -> int:
    """Largest neighbor count at elimination time when following `order` in
    the interaction graph of `scopes` (the usual induced-width measure)."""
    adj: dict[VarId, set[VarId]] = {}
    for scope in scopes:
        for v in scope:
            adj.setdefault(v, set())
        for i, v in enumerate(scope):
            for w in scope[i + 1 :]:
                adj[v].add(w)
                adj[w].add(v)
    width = 0
    for v in order:
        nbrs = list(adj.get(v, ()))
        width = max(width, len(nbrs))
        for a in nbrs:
            adj[a].discard(v)
            for b in nbrs:
                if a != b:
                    adj[a].add(b)
        adj.pop(v, None)
    return width


def _eliminate_sum(factors: list[Factor], order: list[VarId]) -> list[Factor]:
    for v in order:
        touching = [f for f in factors if v in f.scope]
        rest = [f for f in factors if v not in f.scope]
        if not touching:
            continue
        prod = touching[0]
        for f in touching[1:]:
            prod = factor_product(prod, f)
        rest.append(factor_reduce(prod, v, "sum"))
        factors = rest
    return factors


def _resolve_order(
    order: EliminationOrder | None,
    scopes: list[tuple[VarId, ...]],
    to_eliminate: set[VarId],
) -> list[VarId]:
    if order is None:
        return _min_fill(scopes, to_eliminate)
    if set(order.order) != to_eliminate:
        raise InferenceError(
            "elimination order is not a permutation of the variables to eliminate"
        )
    return list(order.order)


def posterior(
    bn: BayesianNetwork,
    query: VarId,
    evidence: Assignment,
    order: EliminationOrder | None = None,
) -> np.ndarray:
    """Normalized posterior distribution of `query` given `evidence`,
    computed by sum-product variable elimination in log space.

    The elimination order defaults to greedy min-fill; any permutation of
    the hidden variables yields the same distribution.
    """
    qvar = bn.variable(query)
    if query in evidence:
        raise InferenceError(f"query variable {query} is bound in the evidence")
    for v, s in evidence.items():
        var = bn.variable(v)
        if not 0 <= s < var.cardinality:
            raise InferenceError(
                f"evidence state {s} out of range for variable {var.name!r}"
            )
    factors = [factor_restrict(f, evidence) for f in bn.log_factors]
    hidden = set(v.id for v in bn.variables) - set(evidence.variables()) - {query}
    resolved = _resolve_order(order, [f.scope for f in factors], hidden)
    factors = _eliminate_sum(factors, resolved)

    log_post = np.zeros(qvar.cardinality)
    for f in factors:
        if f.scope == (query,):
            log_post = log_post + f.values
        elif f.scope == ():
            log_post = log_post + float(f.values)
        else:  # pragma: no cover - elimination removes everything else
            raise InferenceError(f"unexpected residual scope {f.scope}")
    total = np.logaddexp.reduce(log_post)
    if total == -np.inf:
        raise ZeroEvidenceError("evidence has probability zero")
    return np.exp(log_post - total)


def mpe(
    mrf: MarkovRandomField,
    free: set[VarId],
    evidence: Assignment,
    mode: str = "max",
    order: EliminationOrder | None = None,
) -> MpeResult:
    """Assignment of `free` optimizing the product of evidence-restricted
    potentials.  `mode` is "max" or "min"; ties break toward the lowest
    state index at each traceback step.

    An empty free set is not an error: the result carries an empty
    assignment and the score of the fully restricted product.  The score
    is order-invariant; the assignment can differ between orders only on
    exact ties.
    """
    if mode not in ("max", "min"):
        raise InferenceError(f"unknown mpe mode {mode!r}")
    free = set(free)
    ev_vars = set(evidence.variables())
    model_vars = mrf.var_ids()
    if free & ev_vars:
        raise InferenceError(
            f"free and evidence overlap: {sorted(free & ev_vars)}"
        )
    uncovered = model_vars - free - ev_vars
    if uncovered:
        raise InferenceError(
            f"variables neither free nor observed: {sorted(uncovered)}"
        )
    if free - model_vars:
        raise InferenceError(f"unknown free variables: {sorted(free - model_vars)}")

    sign = -1.0 if mode == "min" else 1.0
    tables: list[Factor] = []
    for pot in mrf.potentials:
        f = factor_restrict(pot.to_log(), evidence)
        if sign < 0:
            f = Factor(f.scope, -f.values, Representation.LOG)
        tables.append(f)

    resolved = _resolve_order(order, [f.scope for f in tables], free)
    trace: list[tuple[VarId, tuple[VarId, ...], np.ndarray]] = []
    for v in resolved:
        touching = [f for f in tables if v in f.scope]
        rest = [f for f in tables if v not in f.scope]
        prod = touching[0]
        for f in touching[1:]:
            prod = factor_product(prod, f)
        axis = prod.scope.index(v)
        argmax = np.argmax(prod.values, axis=axis)
        residual = tuple(u for u in prod.scope if u != v)
        trace.append((v, residual, argmax))
        rest.append(factor_reduce(prod, v, "max"))
        tables = rest

    total = 0.0
    for f in tables:
        if f.scope != ():
            raise InferenceError(f"unexpected residual scope {f.scope}")
        total += float(f.values)

    bindings: dict[VarId, int] = {}
    for v, residual, argmax in reversed(trace):
        idx = tuple(bindings[u] for u in residual)
        bindings[v] = int(argmax[idx])
    return MpeResult(Assignment(bindings), sign * total)


def mpe_objective(
    mrf: MarkovRandomField, full: Assignment
) -> float:
    """Log-domain product of the potentials at one complete assignment;
    used to cross-check MpeResult scores."""
    total = 0.0
    for pot in mrf.potentials:
        total += pot.to_log().value_at(full)
    return total
