"""Parameter and structure learning for discrete Bayesian networks.

Parameters use Laplace smoothing with an equivalent sample size, so every
learned CPT entry is strictly positive.  Structures come from a greedy hill
climb over arc add/delete/reverse moves scored by decomposable BIC, with a
tabu list over the most recent moves and deterministic lexicographic
tie-breaking.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import Dataset
from .model import (
    CPT,
    BayesianNetwork,
    DiscreteVariable,
    Factor,
    Role,
    VarId,
    uniform_cpt,
)

BN_FORMAT = "fairbn-network/1"


class LearningError(ValueError):
    """Invalid learning configuration or unlearnable input."""


@dataclass(frozen=True)
class CountTable:
    """Raw co-occurrence counts over (child, parents) configurations."""

    child: VarId
    parents: tuple[VarId, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "parents", tuple(self.parents))
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1 + len(self.parents):
            raise LearningError("count table rank does not match the parent list")
        if counts.size and counts.min() < 0:
            raise LearningError("negative count")


@dataclass(frozen=True)
class StructureSearchConfig:
    """Knobs for the tabu-augmented hill climb.  The score is BIC."""

    tabu_list_size: int = 10
    max_iterations: int = 100
    equivalent_sample_size: float = 1.0
    forced_arcs: tuple[tuple[VarId, VarId], ...] = ()
    forbidden_arcs: tuple[tuple[VarId, VarId], ...] = ()
    max_parents: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "forced_arcs", tuple((int(p), int(c)) for p, c in self.forced_arcs)
        )
        object.__setattr__(
            self,
            "forbidden_arcs",
            tuple((int(p), int(c)) for p, c in self.forbidden_arcs),
        )
        if self.equivalent_sample_size <= 0:
            raise LearningError("the equivalent sample size must be positive")
        if set(self.forced_arcs) & set(self.forbidden_arcs):
            raise LearningError("forced and forbidden arc sets overlap")


def count_table(
    dataset: Dataset,
    child: VarId,
    parents: Sequence[VarId],
    train_rows: Sequence[int],
) -> CountTable:
    """Count training rows per (child, parents) configuration."""
    parents = tuple(parents)
    if child in parents:
        raise LearningError("a variable cannot be its own parent")
    cols = [dataset.column_index(v) for v in (child, *parents)]
    cards = [dataset.variables[c].cardinality for c in cols]
    rows = np.asarray(train_rows, dtype=np.int64)
    data = dataset.rows[rows][:, cols]
    if data.shape[0] == 0:
        counts = np.zeros(cards, dtype=np.int64)
    else:
        flat = np.ravel_multi_index(tuple(data.T), cards)
        counts = np.bincount(flat, minlength=int(np.prod(cards))).reshape(cards)
    return CountTable(child, parents, counts)


def estimate_cpt(counts: CountTable, s: float) -> CPT:
    """Laplace-smoothed conditional probabilities:
    P(v|pa) = (n(v,pa) + s/|Omega_V|) / (sum_v n(v,pa) + s)."""
    if s <= 0:
        raise LearningError("the equivalent sample size must be positive")
    card = counts.counts.shape[0]
    table = (counts.counts + s / card) / (counts.counts.sum(axis=0) + s)
    scope = (counts.child, *counts.parents)
    return CPT(counts.child, counts.parents, Factor(scope, table))


def _family_bic(counts: np.ndarray, n_rows: int) -> float:
    """BIC contribution of one family: max log-likelihood minus the
    parameter penalty."""
    totals = counts.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.where(counts > 0, counts * (np.log(counts) - np.log(totals)), 0.0)
    card = counts.shape[0]
    n_param = (card - 1) * int(np.prod(counts.shape[1:], dtype=np.int64))
    penalty = 0.5 * math.log(n_rows) * n_param if n_rows > 0 else 0.0
    return float(ll.sum()) - penalty


@dataclass
class _Searcher:
    dataset: Dataset
    train_rows: np.ndarray
    config: StructureSearchConfig

    def __post_init__(self) -> None:
        self.ids = [v.id for v in self.dataset.variables]
        self.parents: dict[VarId, set[VarId]] = {v: set() for v in self.ids}
        self.children: dict[VarId, set[VarId]] = {v: set() for v in self.ids}
        self.cache: dict[tuple[VarId, frozenset[VarId]], float] = {}
        self.forbidden = set(self.config.forbidden_arcs)
        self.forced = set(self.config.forced_arcs)

    def family_score(self, child: VarId, parents: frozenset[VarId]) -> float:
        key = (child, parents)
        if key not in self.cache:
            ct = count_table(self.dataset, child, sorted(parents), self.train_rows)
            self.cache[key] = _family_bic(ct.counts, len(self.train_rows))
        return self.cache[key]

    def total_score(self) -> float:
        return sum(
            self.family_score(v, frozenset(self.parents[v])) for v in self.ids
        )

    def has_path(self, src: VarId, dst: VarId) -> bool:
        """Directed path src -> ... -> dst in the current graph."""
        stack = [src]
        seen = {src}
        while stack:
            v = stack.pop()
            if v == dst:
                return True
            for c in self.children[v]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return False

    def apply(self, kind: int, p: VarId, c: VarId) -> None:
        if kind == 0:
            self.parents[c].add(p)
            self.children[p].add(c)
        elif kind == 1:
            self.parents[c].discard(p)
            self.children[p].discard(c)
        else:
            self.parents[c].discard(p)
            self.children[p].discard(c)
            self.parents[p].add(c)
            self.children[c].add(p)

    def candidate_moves(self) -> Iterable[tuple[int, VarId, VarId]]:
        max_pa = self.config.max_parents
        for p in self.ids:
            for c in self.ids:
                if p == c:
                    continue
                if p in self.parents[c]:
                    if (p, c) not in self.forced:
                        yield (1, p, c)
                        if (c, p) not in self.forbidden and (
                            max_pa is None or len(self.parents[p]) < max_pa
                        ):
                            yield (2, p, c)
                else:
                    if (p, c) not in self.forbidden and (
                        max_pa is None or len(self.parents[c]) < max_pa
                    ):
                        yield (0, p, c)

    def move_delta(self, kind: int, p: VarId, c: VarId) -> float:
        old_c = frozenset(self.parents[c])
        if kind == 0:
            return self.family_score(c, old_c | {p}) - self.family_score(c, old_c)
        if kind == 1:
            return self.family_score(c, old_c - {p}) - self.family_score(c, old_c)
        old_p = frozenset(self.parents[p])
        return (
            self.family_score(c, old_c - {p})
            - self.family_score(c, old_c)
            + self.family_score(p, old_p | {c})
            - self.family_score(p, old_p)
        )

    def creates_cycle(self, kind: int, p: VarId, c: VarId) -> bool:
        if kind == 0:
            return self.has_path(c, p)
        if kind == 1:
            return False
        # reversing p->c: a second directed path p -> ... -> c would close a loop
        self.children[p].discard(c)
        self.parents[c].discard(p)
        cyclic = self.has_path(p, c)
        self.children[p].add(c)
        self.parents[c].add(p)
        return cyclic


def _inverse_move(move: tuple[int, VarId, VarId]) -> tuple[int, VarId, VarId]:
    kind, p, c = move
    if kind == 0:
        return (1, p, c)
    if kind == 1:
        return (0, p, c)
    return (2, c, p)


def learn_structure(
    dataset: Dataset,
    config: StructureSearchConfig,
    train_rows: Sequence[int],
) -> BayesianNetwork:
    """Greedy BIC hill climb from the empty graph (plus forced arcs).

    Moves are arc additions, deletions and reversals; a move is taken only
    if it improves the score and is neither tabu nor cycle-inducing.  Equal
    deltas resolve to the lowest (parent id, child id, move kind).  The
    returned network carries Laplace-smoothed CPTs fitted on `train_rows`.
    """
    train_rows = np.asarray(train_rows, dtype=np.int64)
    if train_rows.size == 0:
        raise LearningError("no training rows")
    searcher = _Searcher(dataset, train_rows, config)

    ids = set(searcher.ids)
    for p, c in config.forced_arcs:
        if p not in ids or c not in ids or p == c:
            raise LearningError(f"forced arc ({p}, {c}) references invalid variables")
        searcher.apply(0, p, c)
    try:
        _toposort(searcher.parents)
    except LearningError:
        raise LearningError("the forced arcs form a directed cycle") from None

    tabu: deque[tuple[int, VarId, VarId]] = deque(maxlen=config.tabu_list_size)
    for _ in range(config.max_iterations):
        best: tuple[float, VarId, VarId, int] | None = None
        for kind, p, c in searcher.candidate_moves():
            move = (kind, p, c)
            if move in tabu or _inverse_move(move) in tabu:
                continue
            if searcher.creates_cycle(kind, p, c):
                continue
            delta = searcher.move_delta(kind, p, c)
            if delta <= 0.0:
                continue
            key = (-delta, p, c, kind)
            if best is None or key < best:
                best = key
        if best is None:
            break
        _, p, c, kind = best
        searcher.apply(kind, p, c)
        tabu.append((kind, p, c))

    s = config.equivalent_sample_size
    cpts = tuple(
        estimate_cpt(
            count_table(dataset, v, sorted(searcher.parents[v]), train_rows), s
        )
        for v in searcher.ids
    )
    return BayesianNetwork(dataset.variables, cpts)


def _toposort(parents: dict[VarId, set[VarId]]) -> list[VarId]:
    indeg = {v: len(ps) for v, ps in parents.items()}
    children: dict[VarId, list[VarId]] = {v: [] for v in parents}
    for v, ps in parents.items():
        for p in ps:
            children[p].append(v)
    ready = sorted(v for v, d in indeg.items() if d == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort()
    if len(order) != len(parents):
        raise LearningError("directed cycle")
    return order


def bic_score(
    dataset: Dataset,
    parent_map: dict[VarId, Iterable[VarId]],
    train_rows: Sequence[int],
) -> float:
    """Total BIC of an explicit graph; used to compare candidate structures."""
    rows = np.asarray(train_rows, dtype=np.int64)
    total = 0.0
    for var in dataset.variables:
        ct = count_table(dataset, var.id, sorted(parent_map.get(var.id, ())), rows)
        total += _family_bic(ct.counts, rows.size)
    return total


def markov_blanket(bn: BayesianNetwork, w: VarId) -> frozenset[VarId]:
    """The variable itself, its parents, its children, and the children's
    other parents."""
    bn.variable(w)
    blanket = {w}
    blanket.update(bn.parents(w))
    for c in bn.children(w):
        blanket.add(c)
        blanket.update(bn.cpt(c).parents)
    return frozenset(blanket)


def blanket_subnetwork(bn: BayesianNetwork, w: VarId) -> BayesianNetwork:
    """Blanket-restricted network: CPTs of `w` and its children are kept
    verbatim, every other blanket variable becomes a parentless uniform
    root."""
    blanket = markov_blanket(bn, w)
    keep = {w, *bn.children(w)}
    variables = tuple(v for v in bn.variables if v.id in blanket)
    cpts = tuple(
        bn.cpt(v.id) if v.id in keep else uniform_cpt(v) for v in variables
    )
    return BayesianNetwork(variables, cpts)


def with_roles(bn: BayesianNetwork, private: Iterable[VarId]) -> BayesianNetwork:
    """Copy of the network with the private/public feature split replaced;
    the target role is untouched."""
    private = set(private)
    variables = []
    for v in bn.variables:
        if v.role is Role.TARGET:
            variables.append(v)
            continue
        role = Role.PRIVATE if v.id in private else Role.PUBLIC
        variables.append(
            DiscreteVariable(v.id, v.name, v.cardinality, v.state_labels, role)
        )
    return BayesianNetwork(tuple(variables), bn.cpts)


def network_to_dict(bn: BayesianNetwork) -> dict:
    """Stable text-serializable form: variables with names, labels and
    roles, parent lists, and CPT tables flattened in canonical scope order."""
    cpts = []
    for var in bn.variables:
        cpt = bn.cpt(var.id)
        canonical = cpt.factor.canonical()
        cpts.append(
            {
                "child": cpt.child,
                "parents": list(cpt.parents),
                "scope": list(canonical.scope),
                "table": [float(x) for x in canonical.values.reshape(-1)],
            }
        )
    return {
        "format": BN_FORMAT,
        "variables": [
            {
                "id": v.id,
                "name": v.name,
                "cardinality": v.cardinality,
                "state_labels": list(v.state_labels),
                "role": v.role.value,
            }
            for v in bn.variables
        ],
        "cpts": cpts,
    }


def network_from_dict(data: dict) -> BayesianNetwork:
    if data.get("format") != BN_FORMAT:
        raise LearningError(f"unrecognised network format {data.get('format')!r}")
    variables = tuple(
        DiscreteVariable(
            int(v["id"]),
            v["name"],
            int(v["cardinality"]),
            tuple(v["state_labels"]),
            Role(v["role"]),
        )
        for v in data["variables"]
    )
    card = {v.id: v.cardinality for v in variables}
    cpts = []
    for entry in data["cpts"]:
        child = int(entry["child"])
        parents = tuple(int(p) for p in entry["parents"])
        scope = tuple(int(v) for v in entry["scope"])
        shape = tuple(card[v] for v in scope)
        table = np.asarray(entry["table"], dtype=np.float64).reshape(shape)
        target_scope = (child, *parents)
        perm = [scope.index(v) for v in target_scope]
        cpts.append(
            CPT(child, parents, Factor(target_scope, np.transpose(table, perm)))
        )
    return BayesianNetwork(variables, tuple(cpts))


def save_network(
    bn: BayesianNetwork, path: str | Path, header_lines: Iterable[str] = ()
) -> None:
    """Write the stable text form; optional '#' comment lines go on top
    and are stripped again by :func:`load_network`."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line.rstrip("\n") + "\n")
        json.dump(network_to_dict(bn), fh, indent=1)
        fh.write("\n")


def load_network(path: str | Path) -> BayesianNetwork:
    with open(path, encoding="utf-8") as fh:
        text = "".join(
            line for line in fh if not line.startswith("#")
        )
    return network_from_dict(json.loads(text))
