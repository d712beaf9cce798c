"""Classification, ratio potentials, conservative bounds and the FRL."""

import itertools

import numpy as np
import pytest

from conftest import all_assignments, joint_by_enumeration, random_bn
from fairbn.fairness import (
    FairnessError,
    NonBinaryTargetError,
    ZeroRatioError,
    build_fairness_model,
    build_ratio_mrf,
    classify,
    conservative_bounds,
    frl,
    frl_bruteforce,
    manhattan,
)
from fairbn.inference import posterior
from fairbn.model import (
    CPT,
    Assignment,
    BayesianNetwork,
    DiscreteVariable,
    Factor,
    Role,
)

TOL = 1e-9


def two_parent_model(p_y0=(0.8, 0.3, 0.6, 0.45)):
    """Target with one private parent and one public parent, no children.
    p_y0 lists P(y0 | x, z) for (x0,z0), (x1,z0), (x0,z1), (x1,z1)."""
    x = DiscreteVariable(0, "x", 2, ("x0", "x1"), Role.PRIVATE)
    y = DiscreteVariable(1, "y", 2, ("y0", "y1"), Role.TARGET)
    z = DiscreteVariable(2, "z", 2, ("z0", "z1"), Role.PUBLIC)
    table = np.empty((2, 2, 2))
    table[0, 0, 0], table[0, 1, 0], table[0, 0, 1], table[0, 1, 1] = p_y0
    table[1] = 1.0 - table[0]
    cpts = (
        CPT(0, (), Factor((0,), np.array([0.5, 0.5]))),
        CPT(1, (0, 2), Factor((1, 0, 2), table)),
        CPT(2, (), Factor((2,), np.array([0.5, 0.5]))),
    )
    return build_fairness_model(BayesianNetwork((x, y, z), cpts))


def child_model(seed=0, n_children=1, private_children=(0,)):
    """Root binary target with feature children and no co-parents."""
    rng = np.random.default_rng(seed)
    variables = [DiscreteVariable(0, "y", 2, ("y0", "y1"), Role.TARGET)]
    cpts = [CPT(0, (), Factor((0,), np.array([0.45, 0.55])))]
    for i in range(1, n_children + 1):
        role = Role.PRIVATE if i - 1 in private_children else Role.PUBLIC
        variables.append(DiscreteVariable(i, f"f{i}", 2, ("a", "b"), role))
        raw = rng.random((2, 2)) + 0.1
        cpts.append(CPT(i, (0,), Factor((i, 0), raw / raw.sum(0, keepdims=True))))
    return build_fairness_model(BayesianNetwork(tuple(variables), tuple(cpts)))


class TestClassify:
    def test_argmax(self):
        model = two_parent_model()
        pred, dist = classify(model, Assignment({0: 0, 2: 0}))
        assert pred == 0
        np.testing.assert_allclose(dist, [0.8, 0.2], atol=TOL)

    def test_tie_goes_to_state_zero(self):
        model = two_parent_model(p_y0=(0.5, 0.3, 0.6, 0.45))
        pred, dist = classify(model, Assignment({0: 0, 2: 0}))
        assert dist[0] == pytest.approx(0.5, abs=TOL)
        assert pred == 0

    def test_unbound_feature_rejected(self):
        model = two_parent_model()
        with pytest.raises(FairnessError, match="bind"):
            classify(model, Assignment({0: 0}))

    def test_matches_enumeration_argmax(self):
        rng = np.random.default_rng(14)
        for _ in range(15):
            bn = random_bn(rng, n_vars=6, max_card=3, edge_prob=0.4, n_private=2)
            model = build_fairness_model(bn)
            instance = Assignment(
                {
                    v.id: int(rng.integers(0, v.cardinality))
                    for v in bn.variables
                }
            )
            pred, dist = classify(model, instance)
            # oracle: full-joint enumeration on the source network with all
            # features (blanket and not) observed
            evidence = instance.restricted_to(
                set(v.id for v in bn.variables) - {model.y}
            )
            acc = np.zeros(2)
            for a in all_assignments(bn.variables):
                if any(a[v] != s for v, s in evidence.items()):
                    continue
                acc[a[model.y]] += joint_by_enumeration(bn, a)
            want = acc / acc.sum()
            np.testing.assert_allclose(dist, want, atol=TOL)
            assert pred == (1 if want[1] > want[0] else 0)


class TestManhattan:
    def test_identity(self):
        assert manhattan(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0

    def test_extreme(self):
        assert manhattan(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_direct_value(self):
        assert manhattan(np.array([0.7, 0.3]), np.array([0.4, 0.6])) == pytest.approx(
            0.3, abs=TOL
        )

    def test_dimension_mismatch(self):
        with pytest.raises(FairnessError):
            manhattan(np.array([0.5, 0.25, 0.25]), np.array([0.5, 0.5]))


class TestRatioMrf:
    def test_two_parent_values(self):
        model = two_parent_model()
        mrf = model.ratio_mrf
        assert len(mrf.potentials) == 1
        phi = mrf.potentials[0]
        assert phi.scope == (0, 2)
        assert np.exp(phi.values[0, 0]) == pytest.approx(0.25, abs=TOL)
        assert np.exp(phi.values[1, 0]) == pytest.approx(7 / 3, abs=TOL)

    def test_potential_count_with_children(self):
        model = child_model(n_children=1)
        assert len(model.ratio_mrf.potentials) == 2  # scalar target + 1 child
        model = child_model(n_children=4, private_children=(0, 2))
        assert len(model.ratio_mrf.potentials) == 5

    def test_product_equals_joint_ratio(self):
        # the potential product at (x, z) must equal
        # P(y1, x, z) / P(y0, x, z) in the blanket network, for every x
        rng = np.random.default_rng(33)
        for _ in range(20):
            bn = random_bn(rng, n_vars=6, max_card=3, edge_prob=0.45, n_private=2)
            model = build_fairness_model(bn)
            blanket = model.blanket_bn
            features = sorted(model.blanket_features)
            spaces = [range(blanket.variable(v).cardinality) for v in features]
            for states in itertools.product(*spaces):
                a = Assignment(dict(zip(features, states)))
                log_prod = sum(
                    p.value_at(a) for p in model.ratio_mrf.potentials
                )
                num = joint_by_enumeration(blanket, a.merged(Assignment({model.y: 1})))
                den = joint_by_enumeration(blanket, a.merged(Assignment({model.y: 0})))
                assert np.exp(log_prod) == pytest.approx(num / den, rel=1e-9)

    def test_zero_denominator_rejected(self):
        x = DiscreteVariable(0, "x", 2, ("a", "b"), Role.PRIVATE)
        y = DiscreteVariable(1, "y", 2, ("a", "b"), Role.TARGET)
        table = np.array([[0.0, 0.3], [1.0, 0.7]])  # P(y0|x0) = 0: ratio divides by zero
        bn = BayesianNetwork(
            (x, y),
            (
                CPT(0, (), Factor((0,), np.array([0.5, 0.5]))),
                CPT(1, (0,), Factor((1, 0), table)),
            ),
        )
        with pytest.raises(ZeroRatioError):
            build_ratio_mrf(bn, 1)

    def test_non_binary_target_rejected(self):
        y = DiscreteVariable(0, "y", 3, ("a", "b", "c"), Role.TARGET)
        bn = BayesianNetwork(
            (y,), (CPT(0, (), Factor((0,), np.array([0.2, 0.3, 0.5]))),)
        )
        with pytest.raises(NonBinaryTargetError):
            build_fairness_model(bn)


class TestConservativeBounds:
    def test_two_parent_example(self):
        model = two_parent_model()
        b = conservative_bounds(model, Assignment({0: 0, 2: 0}))
        assert b.x_min[0] == 1  # P(y0|x1,z0) = 0.3 is the minimum
        assert b.x_max[0] == 0
        assert b.p_max == pytest.approx(0.8, abs=TOL)
        assert b.p_min == pytest.approx(0.3, abs=TOL)

    def test_fair_by_design_returns_instance(self):
        model = child_model(n_children=2, private_children=())
        assert model.fair_by_design
        inst = Assignment({0: 1, 1: 0, 2: 1})
        b = conservative_bounds(model, inst)
        assert b.p_max == b.p_min
        assert len(b.x_max) == 0 and len(b.x_min) == 0

    def test_achieves_true_extremes(self):
        rng = np.random.default_rng(44)
        for _ in range(40):
            bn = random_bn(
                rng, n_vars=int(rng.integers(4, 8)), max_card=3,
                edge_prob=0.5, n_private=int(rng.integers(1, 4)),
            )
            model = build_fairness_model(bn)
            if model.fair_by_design:
                continue
            instance = Assignment(
                {v.id: int(rng.integers(0, v.cardinality)) for v in bn.variables}
            )
            b = conservative_bounds(model, instance)
            # oracle: sweep the private blanket space by exact updating
            z_hat = instance.restricted_to(model.public_in_blanket)
            private = sorted(model.private_in_blanket)
            best_hi, best_lo = -1.0, 2.0
            for states in itertools.product(
                *(range(model.blanket_bn.variable(v).cardinality) for v in private)
            ):
                x = Assignment(dict(zip(private, states)))
                p = float(posterior(model.blanket_bn, model.y, x.merged(z_hat))[0])
                best_hi = max(best_hi, p)
                best_lo = min(best_lo, p)
            assert b.p_max == pytest.approx(best_hi, abs=TOL)
            assert b.p_min == pytest.approx(best_lo, abs=TOL)


class TestFrl:
    def test_two_parent_example(self):
        model = two_parent_model()
        record = frl(model, Assignment({0: 0, 2: 0, 1: 0}), instance_id=3)
        assert record.posterior_y0 == pytest.approx(0.8, abs=TOL)
        # midpoint is 0.55 and 0.8 >= 0.55, so the witness is the minimizer
        assert record.x_star[0] == 1
        assert record.frl == pytest.approx(0.5, abs=TOL)
        assert record.true_class == 0
        assert record.brier == pytest.approx((1 - 0.8) ** 2, abs=TOL)
        assert record.time_mrf_ns is not None and record.time_mrf_ns > 0

    def test_fair_by_design_zero(self):
        model = child_model(n_children=3, private_children=())
        inst = Assignment({0: 0, 1: 1, 2: 0, 3: 1})
        record = frl(model, inst)
        assert record.frl == 0.0
        brute = frl_bruteforce(model, inst)
        assert brute.frl == 0.0

    def test_constant_posterior_gives_zero(self):
        # the private child carries no signal about the target
        y = DiscreteVariable(0, "y", 2, ("y0", "y1"), Role.TARGET)
        x = DiscreteVariable(1, "x", 2, ("a", "b"), Role.PRIVATE)
        cpts = (
            CPT(0, (), Factor((0,), np.array([0.3, 0.7]))),
            CPT(1, (0,), Factor((1, 0), np.array([[0.6, 0.6], [0.4, 0.4]]))),
        )
        model = build_fairness_model(BayesianNetwork((y, x), cpts))
        record = frl(model, Assignment({0: 0, 1: 1}))
        assert record.frl == 0.0
        assert record.x_star[1] in (0, 1)

    def test_agrees_with_bruteforce(self):
        rng = np.random.default_rng(55)
        for _ in range(40):
            bn = random_bn(
                rng, n_vars=int(rng.integers(4, 8)), max_card=3,
                edge_prob=0.5, n_private=int(rng.integers(1, 4)),
            )
            model = build_fairness_model(bn)
            instance = Assignment(
                {v.id: int(rng.integers(0, v.cardinality)) for v in bn.variables}
            )
            fast = frl(model, instance, instance_id=1)
            slow = frl_bruteforce(model, instance, instance_id=1)
            assert fast.frl == pytest.approx(slow.frl, abs=TOL)
            assert fast.predicted_class == slow.predicted_class
            assert fast.posterior_y0 == pytest.approx(slow.posterior_y0, abs=TOL)

    def test_symmetric_in_target_state(self):
        # measuring deviations on y1 instead of y0 changes nothing
        rng = np.random.default_rng(66)
        for _ in range(20):
            bn = random_bn(rng, n_vars=5, max_card=3, edge_prob=0.5, n_private=2)
            model = build_fairness_model(bn)
            if model.fair_by_design:
                continue
            instance = Assignment(
                {v.id: int(rng.integers(0, v.cardinality)) for v in bn.variables}
            )
            record = frl(model, instance)
            z_hat = instance.restricted_to(model.public_in_blanket)
            private = sorted(model.private_in_blanket)
            p1_hat = 1.0 - record.posterior_y0
            best = 0.0
            for states in itertools.product(
                *(range(model.blanket_bn.variable(v).cardinality) for v in private)
            ):
                x = Assignment(dict(zip(private, states)))
                p1 = float(posterior(model.blanket_bn, model.y, x.merged(z_hat))[1])
                best = max(best, abs(p1 - p1_hat))
            assert record.frl == pytest.approx(best, abs=TOL)

    def test_monotone_transform_argmin_identity(self):
        # the joint-ratio maximizer over x equals the posterior minimizer
        rng = np.random.default_rng(67)
        for _ in range(20):
            bn = random_bn(rng, n_vars=5, max_card=3, edge_prob=0.5, n_private=2)
            model = build_fairness_model(bn)
            if model.fair_by_design:
                continue
            instance = Assignment(
                {v.id: int(rng.integers(0, v.cardinality)) for v in bn.variables}
            )
            z_hat = instance.restricted_to(model.public_in_blanket)
            private = sorted(model.private_in_blanket)
            ratios, posteriors = [], []
            for states in itertools.product(
                *(range(model.blanket_bn.variable(v).cardinality) for v in private)
            ):
                x = Assignment(dict(zip(private, states)))
                a = x.merged(z_hat)
                num = joint_by_enumeration(
                    model.blanket_bn, a.merged(Assignment({model.y: 1}))
                )
                den = joint_by_enumeration(
                    model.blanket_bn, a.merged(Assignment({model.y: 0}))
                )
                ratios.append(num / den)
                posteriors.append(
                    float(posterior(model.blanket_bn, model.y, a)[0])
                )
            assert int(np.argmax(ratios)) == int(np.argmin(posteriors))

    def test_public_determined_frl_with_binary_private(self):
        # with one binary private feature, records sharing the public part
        # get the identical level
        rng = np.random.default_rng(68)
        for _ in range(20):
            bn = random_bn(rng, n_vars=6, max_card=3, edge_prob=0.5, n_private=1)
            model = build_fairness_model(bn)
            priv = sorted(model.private_in_blanket)
            if len(priv) != 1 or bn.variable(priv[0]).cardinality != 2:
                continue
            base = {
                v.id: int(rng.integers(0, v.cardinality)) for v in bn.variables
            }
            a = dict(base)
            b = dict(base)
            a[priv[0]], b[priv[0]] = 0, 1
            rho_a = frl(model, Assignment(a)).frl
            rho_b = frl(model, Assignment(b)).frl
            assert abs(rho_a - rho_b) < TOL

    def test_bound_respected(self):
        rng = np.random.default_rng(69)
        for _ in range(30):
            bn = random_bn(rng, n_vars=6, max_card=4, edge_prob=0.5, n_private=3)
            model = build_fairness_model(bn)
            instance = Assignment(
                {v.id: int(rng.integers(0, v.cardinality)) for v in bn.variables}
            )
            record = frl(model, instance)
            p = record.posterior_y0
            assert record.frl <= max(p, 1.0 - p) + 1e-12

    def test_bruteforce_cap(self):
        model = child_model(n_children=3, private_children=(0, 1, 2))
        inst = Assignment({0: 0, 1: 0, 2: 0, 3: 0})
        with pytest.raises(FairnessError, match="cap"):
            frl_bruteforce(model, inst, cap=4)

    def test_no_private_in_blanket_sweep_is_empty(self):
        model = child_model(n_children=2, private_children=())
        inst = Assignment({0: 1, 1: 0, 2: 1})
        record = frl_bruteforce(model, inst)
        assert record.frl == 0.0
        assert record.time_bn_ns is not None


class TestOutOfBlanketPrivates:
    def test_states_copied_from_instance(self):
        # private feature disconnected from everything: outside the blanket
        y = DiscreteVariable(0, "y", 2, ("y0", "y1"), Role.TARGET)
        x_in = DiscreteVariable(1, "xin", 2, ("a", "b"), Role.PRIVATE)
        x_out = DiscreteVariable(2, "xout", 2, ("a", "b"), Role.PRIVATE)
        rng = np.random.default_rng(4)
        raw = rng.random((2, 2)) + 0.1
        cpts = (
            CPT(0, (), Factor((0,), np.array([0.4, 0.6]))),
            CPT(1, (0,), Factor((1, 0), raw / raw.sum(0, keepdims=True))),
            CPT(2, (), Factor((2,), np.array([0.5, 0.5]))),
        )
        model = build_fairness_model(BayesianNetwork((y, x_in, x_out), cpts))
        assert model.private_in_blanket == frozenset({1})
        record = frl(model, Assignment({0: 0, 1: 0, 2: 1}))
        assert record.x_star[2] == 1  # copied, not optimized
        assert 1 in record.x_star
