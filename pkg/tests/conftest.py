"""Shared generators and brute-force oracles for the test suite.

The oracles enumerate joint state spaces directly and never call the
variable-elimination code they are used to check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from fairbn.ingest import Dataset, stratified_folds
from fairbn.model import (
    CPT,
    Assignment,
    BayesianNetwork,
    DiscreteVariable,
    Factor,
    MarkovRandomField,
    Representation,
    Role,
    VarId,
)

# ---------------------------------------------------------------------------
# random model generators


def random_cpt_table(rng: np.random.Generator, card: int, pcards: tuple[int, ...]):
    """Strictly positive conditional table, normalized over the child axis;
    mimics the effect of smoothing."""
    raw = rng.random((card, *pcards)) + 0.05
    return raw / raw.sum(axis=0, keepdims=True)


def random_bn(
    rng: np.random.Generator,
    n_vars: int = 6,
    max_card: int = 3,
    edge_prob: float = 0.4,
    n_private: int = 1,
) -> BayesianNetwork:
    """Random smoothed network.  Variable 0 is a binary target; a random
    subset of the others is private."""
    cards = [2] + [int(rng.integers(2, max_card + 1)) for _ in range(n_vars - 1)]
    order = rng.permutation(n_vars)
    parents: dict[int, list[int]] = {v: [] for v in range(n_vars)}
    for i in range(n_vars):
        for j in range(i + 1, n_vars):
            if rng.random() < edge_prob:
                parents[int(order[j])].append(int(order[i]))
    private = set(rng.choice(np.arange(1, n_vars), size=min(n_private, n_vars - 1),
                             replace=False).tolist())
    variables = []
    for v in range(n_vars):
        role = Role.TARGET if v == 0 else (
            Role.PRIVATE if v in private else Role.PUBLIC)
        variables.append(
            DiscreteVariable(
                v, f"v{v}", cards[v],
                tuple(f"v{v}s{s}" for s in range(cards[v])), role,
            )
        )
    cpts = []
    for v in range(n_vars):
        ps = tuple(sorted(parents[v]))
        table = random_cpt_table(rng, cards[v], tuple(cards[p] for p in ps))
        cpts.append(CPT(v, ps, Factor((v, *ps), table)))
    return BayesianNetwork(tuple(variables), tuple(cpts))


def random_mrf(
    rng: np.random.Generator,
    n_vars: int = 5,
    max_card: int = 3,
    n_potentials: int = 6,
    zero_prob: float = 0.0,
) -> MarkovRandomField:
    """Random field with positive tables (optionally sprinkled with exact
    zeros); every variable is covered by construction."""
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n_vars)]
    variables = tuple(
        DiscreteVariable(v, f"m{v}", cards[v],
                         tuple(f"m{v}s{s}" for s in range(cards[v])))
        for v in range(n_vars)
    )
    potentials = []
    uncovered = set(range(n_vars))
    for i in range(n_potentials):
        size = int(rng.integers(1, min(3, n_vars) + 1))
        if uncovered and n_potentials - i <= len(uncovered):
            scope = [uncovered.pop()]
            others = [v for v in range(n_vars) if v != scope[0]]
            scope += rng.choice(others, size=size - 1, replace=False).tolist() \
                if size > 1 else []
        else:
            scope = rng.choice(n_vars, size=size, replace=False).tolist()
        scope = tuple(sorted(int(v) for v in scope))
        uncovered -= set(scope)
        table = rng.random(tuple(cards[v] for v in scope)) + 0.05
        if zero_prob > 0.0:
            table[rng.random(table.shape) < zero_prob] = 0.0
        potentials.append(Factor(scope, table))
    return MarkovRandomField(variables, tuple(potentials))


# ---------------------------------------------------------------------------
# enumeration oracles


def all_assignments(variables) -> itertools.product:
    ids = [v.id for v in variables]
    spaces = [range(v.cardinality) for v in variables]
    return (Assignment(dict(zip(ids, states)))
            for states in itertools.product(*spaces))


def joint_by_enumeration(bn: BayesianNetwork, full: Assignment) -> float:
    """Joint probability via direct CPT-cell lookups (no log space)."""
    prob = 1.0
    for cpt in bn.cpts:
        idx = (full[cpt.child],) + tuple(full[p] for p in cpt.parents)
        prob *= float(cpt.factor.values[idx])
    return prob


def posterior_by_enumeration(
    bn: BayesianNetwork, query: VarId, evidence: Assignment
) -> np.ndarray:
    card = bn.variable(query).cardinality
    acc = np.zeros(card)
    for a in all_assignments(bn.variables):
        if any(a[v] != s for v, s in evidence.items()):
            continue
        acc[a[query]] += joint_by_enumeration(bn, a)
    return acc / acc.sum()


def mpe_by_enumeration(
    mrf: MarkovRandomField, free: set[VarId], evidence: Assignment, mode: str
):
    """Returns (list of optimal free assignments, optimal log score)."""
    free_sorted = sorted(free)
    spaces = [range(mrf.variable(v).cardinality) for v in free_sorted]
    best_score = None
    best: list[Assignment] = []
    for states in itertools.product(*spaces):
        x = Assignment(dict(zip(free_sorted, states)))
        full = x.merged(evidence)
        score = 0.0
        for pot in mrf.potentials:
            raw = pot.value_at(full)
            if pot.rep is Representation.LOG:
                score += raw
            else:
                score += math.log(raw) if raw > 0 else -math.inf
        if best_score is None:
            best_score, best = score, [x]
        elif score == best_score or abs(score - best_score) <= 1e-12:
            best.append(x)
        elif (mode == "max" and score > best_score) or (
            mode == "min" and score < best_score
        ):
            best_score, best = score, [x]
    return best, best_score


# ---------------------------------------------------------------------------
# dataset helpers


def dataset_from_rows(
    rows: np.ndarray,
    roles: list[Role],
    n_folds: int,
    seed: int = 0,
    names: list[str] | None = None,
) -> Dataset:
    rows = np.asarray(rows, dtype=np.int64)
    n_cols = rows.shape[1]
    names = names or [f"c{j}" for j in range(n_cols)]
    variables = []
    for j in range(n_cols):
        card = max(int(rows[:, j].max()) + 1, 2)
        variables.append(
            DiscreteVariable(
                j, names[j], card,
                tuple(f"{names[j]}s{s}" for s in range(card)), roles[j],
            )
        )
    target_col = roles.index(Role.TARGET)
    folds = stratified_folds(rows[:, target_col], n_folds, seed)
    return Dataset(tuple(variables), rows, folds, n_folds, {}, seed)


#: Per-feature P(feature=1 | y) for the planted-bias generator: one strong
#: binary private feature and six public features of mixed strength.
BIAS_PRIVATE = (0.80, 0.20)
BIAS_PUBLICS = ((0.85, 0.15), (0.80, 0.20), (0.75, 0.25),
                (0.70, 0.30), (0.65, 0.35), (0.60, 0.40))


def sample_planted_bias(
    n_rows: int, seed: int, n_folds: int = 10
) -> Dataset:
    """Rows drawn from a known network with one strongly biased private
    feature: target first, then the private column, then the publics."""
    rng = np.random.Generator(np.random.PCG64(seed))
    y = (rng.random(n_rows) < 0.5).astype(np.int64)
    cols = [y]
    p1, p0 = BIAS_PRIVATE
    cols.append((rng.random(n_rows) < np.where(y == 1, p1, p0)).astype(np.int64))
    for q1, q0 in BIAS_PUBLICS:
        cols.append((rng.random(n_rows) < np.where(y == 1, q1, q0)).astype(np.int64))
    rows = np.column_stack(cols)
    roles = [Role.TARGET, Role.PRIVATE] + [Role.PUBLIC] * len(BIAS_PUBLICS)
    names = ["outcome", "group"] + [f"z{j}" for j in range(len(BIAS_PUBLICS))]
    return dataset_from_rows(rows, roles, n_folds, seed=seed, names=names)


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""

    def ranks(vals):
        order = sorted(range(len(vals)), key=lambda i: vals[i])
        r = [0.0] * len(vals)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and vals[order[j + 1]] == vals[order[i]]:
                j += 1
            avg = (i + j) / 2 + 1
            for k in range(i, j + 1):
                r[order[k]] = avg
            i = j + 1
        return r

    rx, ry = ranks(list(xs)), ranks(list(ys))
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den if den else 0.0
