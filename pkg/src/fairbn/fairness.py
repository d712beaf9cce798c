"""Robustness of a network classifier to perturbation of private features.

Each instance's fairness robustness level (FRL) is the largest Manhattan
shift of the target posterior achievable by re-assigning the private
features while the public features stay fixed.  Two interchangeable
solution paths are provided: an exact reduction to max/min MPE in an
auxiliary field of likelihood-ratio potentials, and a brute-force sweep of
the private state space used as an oracle and timing baseline.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .inference import mpe, posterior
from .learning import blanket_subnetwork, markov_blanket
from .model import (
    Assignment,
    BayesianNetwork,
    Factor,
    MarkovRandomField,
    Representation,
    Role,
    VarId,
)

#: Largest private joint state space the brute-force path will sweep.
DEFAULT_BRUTE_FORCE_CAP = 2**20


class FairnessError(ValueError):
    """Invalid fairness query or model."""


class NonBinaryTargetError(FairnessError):
    """The robustness analysis is defined for a two-state target only."""


class ZeroRatioError(FairnessError):
    """A ratio potential would divide by an exact zero; the source network
    was not estimated with smoothing."""


@dataclass(frozen=True)
class FairnessModel:
    """Everything needed to score instances: the blanket-restricted
    classifier, the private/public split inside the blanket, and the
    ratio-potential field whose MPE solves the posterior bounds."""

    blanket_bn: BayesianNetwork
    y: VarId
    private_in_blanket: frozenset[VarId]
    public_in_blanket: frozenset[VarId]
    ratio_mrf: MarkovRandomField
    fair_by_design: bool
    private_all: frozenset[VarId] = frozenset()

    def __post_init__(self) -> None:
        if self.blanket_bn.variable(self.y).cardinality != 2:
            raise NonBinaryTargetError("the target variable must be binary")
        if self.fair_by_design != (len(self.private_in_blanket) == 0):
            raise FairnessError(
                "fair_by_design must hold exactly when no private feature "
                "is in the target's blanket"
            )
        expected = 1 + len(self.blanket_bn.children(self.y))
        if len(self.ratio_mrf.potentials) != expected:
            raise FairnessError(
                f"ratio field has {len(self.ratio_mrf.potentials)} potentials, "
                f"expected {expected}"
            )

    @property
    def blanket_features(self) -> frozenset[VarId]:
        return self.private_in_blanket | self.public_in_blanket


class ConservativeBounds(NamedTuple):
    """Private assignments attaining the extreme posteriors of state 0,
    with the posteriors recomputed by exact updating."""

    x_max: Assignment
    x_min: Assignment
    p_max: float
    p_min: float


@dataclass(frozen=True)
class FRLRecord:
    """Per-instance result of the robustness analysis."""

    instance_id: int
    true_class: int | None
    predicted_class: int
    posterior_y0: float
    brier: float | None
    frl: float
    x_star: Assignment
    x_max: Assignment
    x_min: Assignment
    time_bn_ns: int | None = None
    time_mrf_ns: int | None = None


def build_ratio_mrf(blanket_bn: BayesianNetwork, y: VarId) -> MarkovRandomField:
    """Likelihood-ratio potentials over the blanket features.

    One potential maps each parent configuration of the target to
    P(y1|parents)/P(y0|parents); one more per child C of the target maps
    (c, other parents of C) to P(c|..., y1)/P(c|..., y0).  All potentials
    are stored in log space.
    """
    yvar = blanket_bn.variable(y)
    if yvar.cardinality != 2:
        raise NonBinaryTargetError("the target variable must be binary")

    def log_ratio(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
        if (den == 0).any():
            raise ZeroRatioError(
                f"{what} contains an exact zero in the denominator slice; "
                "estimate the network with smoothing"
            )
        with np.errstate(divide="ignore"):
            return np.log(num) - np.log(den)

    potentials: list[Factor] = []
    ycpt = blanket_bn.cpt(y)
    table = log_ratio(ycpt.factor.values[1], ycpt.factor.values[0], "the target CPT")
    potentials.append(Factor(ycpt.parents, table, Representation.LOG).canonical())

    for child in blanket_bn.children(y):
        cpt = blanket_bn.cpt(child)
        y_axis = 1 + cpt.parents.index(y)
        num = np.take(cpt.factor.values, 1, axis=y_axis)
        den = np.take(cpt.factor.values, 0, axis=y_axis)
        scope = (child, *(p for p in cpt.parents if p != y))
        table = log_ratio(num, den, f"the CPT of variable {child}")
        potentials.append(Factor(scope, table, Representation.LOG).canonical())

    variables = tuple(v for v in blanket_bn.variables if v.id != y)
    return MarkovRandomField(variables, tuple(potentials))


def build_fairness_model(bn: BayesianNetwork) -> FairnessModel:
    """Restrict the network to the target's blanket and precompute the
    ratio field."""
    target = bn.target()
    if target.cardinality != 2:
        raise NonBinaryTargetError(
            f"target {target.name!r} has {target.cardinality} states; "
            "only binary targets are supported"
        )
    blanket = markov_blanket(bn, target.id)
    blanket_bn = blanket_subnetwork(bn, target.id)
    private = frozenset(
        v.id for v in blanket_bn.variables if v.role is Role.PRIVATE
    )
    public = frozenset(v.id for v in blanket_bn.variables if v.role is Role.PUBLIC)
    assert private | public == blanket - {target.id}
    return FairnessModel(
        blanket_bn=blanket_bn,
        y=target.id,
        private_in_blanket=private,
        public_in_blanket=public,
        ratio_mrf=build_ratio_mrf(blanket_bn, target.id),
        fair_by_design=not private,
        private_all=frozenset(v.id for v in bn.variables if v.role is Role.PRIVATE),
    )


def _check_features_bound(model: FairnessModel, instance: Assignment) -> None:
    unbound = [v for v in sorted(model.blanket_features) if v not in instance]
    if unbound:
        names = [model.blanket_bn.variable(v).name for v in unbound]
        raise FairnessError(f"instance does not bind blanket features {names}")


def classify(
    model: FairnessModel, instance: Assignment
) -> tuple[int, np.ndarray]:
    """Most probable target state given all blanket features; an exact
    posterior tie resolves to state 0."""
    _check_features_bound(model, instance)
    evidence = instance.restricted_to(model.blanket_features)
    dist = posterior(model.blanket_bn, model.y, evidence)
    predicted = 1 if dist[1] > dist[0] else 0
    return predicted, dist


def manhattan(p: np.ndarray, q: np.ndarray) -> float:
    """Manhattan distance between two binary distributions, which collapses
    to the absolute difference of the state-0 masses."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (2,) or q.shape != (2,):
        raise FairnessError("manhattan distance expects two binary distributions")
    return 0.5 * (abs(float(p[0] - q[0])) + abs(float(p[1] - q[1])))


def conservative_bounds(
    model: FairnessModel, instance: Assignment
) -> ConservativeBounds:
    """Private assignments minimizing / maximizing the posterior of target
    state 0 with the public features clamped to the instance.

    The minimizer is the max-mode MPE of the ratio field, the maximizer the
    min-mode MPE; both posteriors are then recomputed by exact updating so
    the reported bounds do not inherit error from the reduction.
    """
    _check_features_bound(model, instance)
    z_hat = instance.restricted_to(model.public_in_blanket)
    if model.fair_by_design:
        x_hat = instance.restricted_to(model.private_in_blanket)
        p_hat = float(posterior(model.blanket_bn, model.y, z_hat)[0])
        return ConservativeBounds(x_hat, x_hat, p_hat, p_hat)

    lowest = mpe(model.ratio_mrf, set(model.private_in_blanket), z_hat, "max")
    highest = mpe(model.ratio_mrf, set(model.private_in_blanket), z_hat, "min")
    p_min = float(
        posterior(model.blanket_bn, model.y, lowest.assignment.merged(z_hat))[0]
    )
    p_max = float(
        posterior(model.blanket_bn, model.y, highest.assignment.merged(z_hat))[0]
    )
    return ConservativeBounds(highest.assignment, lowest.assignment, p_max, p_min)


def _extend_to_all_private(
    model: FairnessModel, instance: Assignment, x_blanket: Assignment
) -> Assignment:
    # private features outside the blanket cannot move the posterior; they
    # keep the instance's states so records stay complete
    out = dict(x_blanket.items())
    for v in model.private_all - model.private_in_blanket:
        if v in instance:
            out[v] = instance[v]
    return Assignment(out)


def _finish_record(
    model: FairnessModel,
    instance: Assignment,
    instance_id: int,
    predicted: int,
    dist: np.ndarray,
    rho: float,
    x_star: Assignment,
    x_max: Assignment,
    x_min: Assignment,
) -> FRLRecord:
    true_class = instance.get(model.y)
    brier = None if true_class is None else float((1.0 - dist[true_class]) ** 2)
    return FRLRecord(
        instance_id=instance_id,
        true_class=true_class,
        predicted_class=predicted,
        posterior_y0=float(dist[0]),
        brier=brier,
        frl=rho,
        x_star=_extend_to_all_private(model, instance, x_star),
        x_max=_extend_to_all_private(model, instance, x_max),
        x_min=_extend_to_all_private(model, instance, x_min),
    )


def frl(
    model: FairnessModel, instance: Assignment, instance_id: int = -1
) -> FRLRecord:
    """FRL of one instance via the ratio-field MPE reduction.

    The witnessing private assignment is the posterior maximizer when the
    instance posterior lies below the midpoint of the two bounds and the
    minimizer otherwise (including the exact-midpoint tie).
    """
    t0 = time.perf_counter_ns()
    predicted, dist = classify(model, instance)
    p_hat = float(dist[0])
    if model.fair_by_design:
        x_hat = instance.restricted_to(model.private_in_blanket)
        rho, x_star, x_max, x_min = 0.0, x_hat, x_hat, x_hat
    else:
        bounds = conservative_bounds(model, instance)
        midpoint = 0.5 * (bounds.p_max + bounds.p_min)
        x_star = bounds.x_max if p_hat < midpoint else bounds.x_min
        rho = max(bounds.p_max - p_hat, p_hat - bounds.p_min, 0.0)
        x_max, x_min = bounds.x_max, bounds.x_min
    elapsed = time.perf_counter_ns() - t0
    record = _finish_record(
        model, instance, instance_id, predicted, dist, rho, x_star, x_max, x_min
    )
    return replace(record, time_mrf_ns=elapsed)


def frl_bruteforce(
    model: FairnessModel,
    instance: Assignment,
    instance_id: int = -1,
    cap: int = DEFAULT_BRUTE_FORCE_CAP,
) -> FRLRecord:
    """FRL of one instance by sweeping every private joint state and
    updating the network exactly for each; the oracle path.

    Ties resolve to the first optimum in row-major state order, matching
    the MPE tie rule of lowest state index.
    """
    _check_features_bound(model, instance)
    private = sorted(model.private_in_blanket)
    cards = [model.blanket_bn.variable(v).cardinality for v in private]
    space = int(np.prod(cards)) if cards else 1
    if space > cap:
        raise FairnessError(
            f"private state space of size {space} exceeds the cap {cap}"
        )

    t0 = time.perf_counter_ns()
    predicted, dist = classify(model, instance)
    p_hat = float(dist[0])
    z_hat = instance.restricted_to(model.public_in_blanket)

    # the sweep always yields at least the empty private assignment, so the
    # placeholders below are overwritten on the first iteration
    best_dev = -1.0
    p_max, p_min = -np.inf, np.inf
    x_star = x_max = x_min = Assignment({})
    for states in itertools.product(*(range(c) for c in cards)):
        x = Assignment(dict(zip(private, states)))
        p = float(posterior(model.blanket_bn, model.y, x.merged(z_hat))[0])
        dev = abs(p - p_hat)
        if dev > best_dev:
            best_dev, x_star = dev, x
        if p > p_max:
            p_max, x_max = p, x
        if p < p_min:
            p_min, x_min = p, x
    rho = max(best_dev, 0.0)
    elapsed = time.perf_counter_ns() - t0

    record = _finish_record(
        model, instance, instance_id, predicted, dist, rho, x_star, x_max, x_min
    )
    return replace(record, time_bn_ns=elapsed)
