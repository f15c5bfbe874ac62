import math

import numpy as np
import pytest

from figures import INNER_GRAFT, INNER_GRAFT_BELOW, INNER_GRAFT_FOREST, LEAF_GRAFT
from mgw.laws import LawError, MarkedLaw, MarkFunction, OffspringLaw, binary_law
from mgw.limit_laws import (
    GraftQuery,
    alpha,
    condensation_graft_prob,
    graft_constant_C,
    graft_constant_D,
    kesten_ball_limit,
    kesten_graft_prob,
    log_tree_prob,
    mgw_forest_prob,
    mgw_tree_prob,
    size_biased,
)
from mgw.trees import MarkedTree, TreeError, enumerate_marked_trees

ROOT0 = MarkedTree.leaf(0)
ROOT1 = MarkedTree.leaf(1)


def powerlaw():
    return MarkedLaw(OffspringLaw.power_law(3, 0.5), MarkFunction.constant(0.3))


def test_alpha():
    law = binary_law(0.6, 0.25)
    assert alpha(2, 1, law) == 0.25
    assert alpha(2, 0, law) == 0.75
    assert alpha(math.inf, 1, law) == 0.25
    assert alpha(1, 1, law) == 0.0


def test_tree_probability_by_hand():
    law = binary_law(0.6, 0.5)
    t = MarkedTree.from_nested((1, [(0, []), (1, [(0, []), (0, [])])]))
    want = (0.4 * 0.5) ** 2 * (0.6 * 0.5) ** 3
    assert mgw_tree_prob(t, law) == pytest.approx(want)
    assert log_tree_prob(t, law) == pytest.approx(math.log(want))
    unary = MarkedTree((1, 0), (0, 0))
    assert log_tree_prob(unary, law) == -math.inf
    assert mgw_tree_prob(unary, law) == 0.0
    assert mgw_forest_prob([t, ROOT0], law) == pytest.approx(want * 0.3)


def test_tree_probabilities_sum_to_total_progeny_law():
    law = binary_law(0.6, 0.5)
    total = math.fsum(mgw_tree_prob(t, law) for t in enumerate_marked_trees(7, [0, 2]))
    # P(|tree| <= 7) for binary 0.6/0.4: sizes 1, 3, 5, 7
    want = 0.6 + 0.4 * 0.36 + 2 * 0.4**2 * 0.6**3 + 5 * 0.4**3 * 0.6**4
    assert total == pytest.approx(want, abs=1e-14)


def test_graft_query_properties():
    q = GraftQuery(INNER_GRAFT, (2, 1, 1), 3)
    assert (q.m, q.l, q.eta) == (8, 2, 1)
    with pytest.raises(TreeError):
        GraftQuery(INNER_GRAFT, (5,))
    with pytest.raises(ValueError):
        GraftQuery(INNER_GRAFT, (), -1)


def test_graft_constants():
    law = binary_law(0.5, 0.5)
    assert graft_constant_D(GraftQuery(ROOT0), law) == pytest.approx(1.0)
    q = GraftQuery(INNER_GRAFT, (2, 1, 1))
    D = mgw_tree_prob(INNER_GRAFT_BELOW, law) / 0.25
    assert graft_constant_D(q, law) == pytest.approx(D)
    assert graft_constant_C(q, law) == pytest.approx(D * mgw_forest_prob(INNER_GRAFT_FOREST, law))
    leaf = GraftQuery(LEAF_GRAFT, (1, 3))
    assert graft_constant_C(leaf, law) == graft_constant_D(leaf, law)


def test_kesten_root_probabilities():
    law = binary_law(0.5, 0.5)
    p0 = kesten_graft_prob(GraftQuery(ROOT0), law)
    p1 = kesten_graft_prob(GraftQuery(ROOT1), law)
    assert p0 == pytest.approx(0.5)
    assert p0 + p1 == pytest.approx(1.0)


def test_kesten_needs_critical_law_and_leaf():
    with pytest.raises(LawError):
        kesten_graft_prob(GraftQuery(ROOT0), binary_law(0.6, 0.5))
    t = MarkedTree.from_nested((0, [(0, []), (0, [])]))
    with pytest.raises(TreeError):
        kesten_graft_prob(GraftQuery(t, ()), binary_law(0.5, 0.5))


def test_kesten_leaf_query_at_depth_one():
    law = binary_law(0.5, 0.5)
    base = MarkedTree.from_nested((1, [(0, []), (0, [])]))
    # the spine goes through the second child, which must be unmarked
    got = kesten_graft_prob(GraftQuery(base, (2,)), law)
    # D = P(tree = base with x an unmarked leaf) / (p0 (1 - q0)), times E[X (1 - q(X))]
    want = mgw_tree_prob(base, law) / 0.25 * law.moment(1, part="unmarked")
    assert got == pytest.approx(want)


def test_condensation_root_probabilities_sum_to_one():
    law = powerlaw()
    p0 = condensation_graft_prob(GraftQuery(ROOT0), law)
    p1 = condensation_graft_prob(GraftQuery(ROOT1), law)
    assert p0 + p1 == pytest.approx(1.0, abs=1e-12)
    assert p0 == pytest.approx(0.7, abs=1e-12)


def test_condensation_large_k_leaves_the_infinite_vertex():
    law = powerlaw()
    big = condensation_graft_prob(GraftQuery(ROOT1, (), 10**6), law)
    assert big == pytest.approx((1 - law.mean) * 0.3, rel=1e-6)
    ks = [0, 2, 5, 20, 100]
    vals = [condensation_graft_prob(GraftQuery(ROOT1, (), k), law) for k in ks]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_condensation_needs_subcritical():
    with pytest.raises(LawError):
        condensation_graft_prob(GraftQuery(ROOT0), binary_law(0.5, 0.5))


def test_condensation_two_children_query():
    law = powerlaw()
    base = MarkedTree.from_nested((0, [(1, []), (0, [])]))
    got = condensation_graft_prob(GraftQuery(base, (), 3), law)
    C = graft_constant_C(GraftQuery(base, (), 3), law)
    tail = law.moment(1, part="unmarked", start=3) - 2 * law.moment(0, part="unmarked", start=3)
    assert got == pytest.approx(C * ((1 - law.mean) * 0.7 + tail))
    assert C == pytest.approx(law.prob(0) ** 2 * 0.7 * 0.3)


def test_kesten_ball_limit_matches_root_query():
    law = powerlaw()
    for eta, root in ((0, ROOT0), (1, ROOT1)):
        assert kesten_ball_limit(0, eta, law) == pytest.approx(condensation_graft_prob(GraftQuery(root), law))
    crit = binary_law(0.5, 0.5)
    assert kesten_ball_limit(0, 0, crit) == pytest.approx(0.5)
    assert kesten_ball_limit(2, 0, crit) == pytest.approx(0.0)


def test_size_biased_laws():
    law = binary_law(0.5, 0.5)
    sb = size_biased(law)
    assert sb.p_star(2) == pytest.approx(1.0)
    assert sb.infinite_mass == 0.0
    law = powerlaw()
    sb = size_biased(law)
    ks = np.arange(1, 200_000)
    mass = float(np.sum(sb.p_check(ks)))
    assert mass + sb.p_check(math.inf) == pytest.approx(1.0, abs=1e-9)
    assert float(np.sum(sb.p_star(ks))) == pytest.approx(1.0, abs=1e-9)
