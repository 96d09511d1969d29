import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moeroute import assignment as asg
from moeroute.assignment import RoutingProblem, TransportPlan
from moeroute.errors import InfeasibleMarginals, InvalidK, ShapeMismatch, UnknownRouter
from moeroute.gate_ops import softmax
from moeroute.problem import default_capacity
from oracles import expert_choice_ref, greedy_ref, integral_transport_best, iterative_ref, transport_lp

# six tokens, three experts; the unconstrained transport optimum sends two
# units of token 4 to expert 1
PATHOLOGY = np.array(
    [
        [0.6, 0.3, 0.5],
        [0.5, 0.2, 0.6],
        [0.7, 0.3, 0.4],
        [0.4, 0.3, 0.7],
        [0.1, 0.9, 0.1],
        [0.5, 0.4, 0.3],
    ]
)

# five of six tokens rank expert 0 first
CROWDED = np.array(
    [
        [0.9, 0.5, 0.1],
        [0.8, 0.1, 0.6],
        [0.7, 0.6, 0.2],
        [0.9, 0.2, 0.4],
        [0.6, 0.3, 0.5],
        [0.1, 0.8, 0.6],
    ]
)


def feasible(plan, p):
    return (
        set(np.unique(plan)) <= {0, 1}
        and np.all(plan.sum(axis=1) <= p.demand)
        and np.all(plan.sum(axis=0) <= p.capacity)
    )


def random_problem(rng, n, e, k, cf=1.0):
    return RoutingProblem.uniform(rng.uniform(size=(n, e)), k, cf)


def test_default_capacity():
    assert default_capacity(6, 3, 2, 1.0).tolist() == [4, 4, 4]
    assert default_capacity(6, 3, 2, 1.5).tolist() == [6, 6, 6]
    assert default_capacity(16, 16, 2, 1.0).tolist() == [2] * 16
    assert default_capacity(10, 2, 2, 1.1).tolist() == [11, 11]


# greedy


def test_greedy_drops_one_first_choice():
    p = RoutingProblem.uniform(CROWDED, 2)
    plan = asg.route_greedy_topk(p)
    top1 = np.argmax(CROWDED, axis=1)
    missing_top1 = [i for i in range(6) if plan[i, top1[i]] == 0]
    assert missing_top1 == [4]
    assert top1[4] == 0 and plan[:, 0].sum() == 4


def test_greedy_unconstrained_is_topk():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(8, 4))
    p = RoutingProblem.uniform(a, 2, capacity=[8] * 4)
    ranked = np.argsort(-a, axis=1, kind="stable")[:, :2]
    expected = np.zeros((8, 4), dtype=int)
    np.put_along_axis(expected, ranked, 1, axis=1)
    assert np.array_equal(asg.route_greedy_topk(p), expected)


def test_greedy_matches_simulation():
    rng = np.random.default_rng(0)
    for _ in range(30):
        p = random_problem(rng, 8, 4, 2)
        plan, drops = greedy_ref(p.affinities.tolist(), p.demand.tolist(), p.capacity.tolist())
        got = asg.route_greedy_topk(p)
        assert got.tolist() == plan
        assert p.demand.sum() - got.sum() == drops


def test_greedy_order_dependent_but_mcmf_not():
    # whoever comes first takes expert 0 and the other token is dropped
    a = np.array([[0.9, 0.1], [0.8, 0.7]])
    p = RoutingProblem(a, [1, 1], [1, 1])
    q = RoutingProblem(a[::-1], [1, 1], [1, 1])
    assert asg.score(asg.route_greedy_topk(p), a) != asg.score(asg.route_greedy_topk(q), a[::-1])
    assert asg.score(asg.route_mcmf(p), a) == pytest.approx(asg.score(asg.route_mcmf(q), a[::-1]))


# iterative


def test_iterative_reassigns_dropped_slot():
    p = RoutingProblem.uniform(CROWDED, 2)
    greedy = asg.route_greedy_topk(p)
    plan = asg.route_iterative(p)
    assert greedy.sum() < 12
    assert plan.sum() == 12
    assert np.all(plan >= greedy)


def test_iterative_no_drops_is_greedy():
    rng = np.random.default_rng(1)
    p = RoutingProblem.uniform(rng.uniform(size=(6, 3)), 2, capacity=[6, 6, 6])
    assert np.array_equal(asg.route_iterative(p), asg.route_greedy_topk(p))


def test_iterative_matches_simulation():
    rng = np.random.default_rng(2)
    for _ in range(40):
        n, e = int(rng.integers(2, 10)), int(rng.integers(2, 5))
        p = random_problem(rng, n, e, min(2, e))
        ref = iterative_ref(p.affinities.tolist(), p.demand.tolist(), p.capacity.tolist())
        assert asg.route_iterative(p).tolist() == ref


# expert choice


def test_expert_choice_columns_full():
    rng = np.random.default_rng(3)
    p = random_problem(rng, 8, 4, 2)
    plan = asg.route_expert_choice(p)
    assert np.array_equal(plan.sum(axis=0), p.capacity)
    assert plan.tolist() == expert_choice_ref(p.affinities.tolist(), p.capacity.tolist())


def test_expert_choice_uneven_rows():
    a = np.array([[0.9, 0.9], [0.5, 0.1], [0.2, 0.6], [0.1, 0.2]])
    plan = asg.route_expert_choice(RoutingProblem(a, [1] * 4, [2, 2]))
    assert plan[0].sum() == 2
    assert plan.sum(axis=1).min() == 0


# dropless


def test_dropless():
    rng = np.random.default_rng(4)
    p = random_problem(rng, 10, 4, 2)
    assert np.all(asg.route_dropless(p).sum(axis=1) == 2)
    same = RoutingProblem.uniform(np.tile([0.1, 0.7, 0.2], (9, 1)), 1)
    assert asg.route_dropless(same).sum(axis=0).tolist() == [0, 9, 0]


# sinkhorn


def test_sinkhorn_uniform():
    tp = asg.sinkhorn(RoutingProblem(np.full((6, 3), 0.4), [1] * 6, [2, 2, 2]))
    assert tp.converged
    assert np.allclose(tp.matrix, 1 / 3, atol=1e-9)


def test_sinkhorn_single_token():
    tp = asg.sinkhorn(RoutingProblem(np.array([[0.9, 0.1]]), [1], [1, 1]), epsilon=0.01)
    assert tp.converged
    assert tp.matrix == pytest.approx(np.array([[1.0, 0.0]]), abs=1e-6)


def test_sinkhorn_close_to_lp_bound():
    a = np.array([[0.6, 0.2], [0.3, 0.5], [0.4, 0.45]])
    p = RoutingProblem(a, [1, 1, 1], [2, 1])
    tp = asg.sinkhorn(p, epsilon=0.01)
    assert tp.max_violation < 1e-6
    best = integral_transport_best(a.tolist(), [1, 1, 1], [2, 1])
    assert abs(np.sum(tp.matrix * a) - best) < 1e-3


def test_sinkhorn_errors_and_flags():
    with pytest.raises(InfeasibleMarginals):
        asg.sinkhorn(RoutingProblem(np.ones((3, 2)), [1, 1, 1], [1, 1]))
    with pytest.raises(InfeasibleMarginals):
        asg.sinkhorn(RoutingProblem(np.ones((3, 2)), [0, 0, 0], [1, 1]))
    rng = np.random.default_rng(5)
    p = RoutingProblem.uniform(softmax(4 * rng.normal(size=(30, 6))), 2, 1.0)
    tp = asg.sinkhorn(p, max_iters=1)
    assert tp.not_converged and tp.iterations == 1


def test_sinkhorn_zero_capacity_expert_gets_nothing():
    a = np.array([[0.9, 0.1, 0.5], [0.8, 0.2, 0.4]])
    tp = asg.sinkhorn(RoutingProblem(a, [1, 1], [0, 2, 1]))
    assert tp.converged
    assert np.all(tp.matrix[:, 0] == 0)


def test_plain_and_accelerated_scaling_agree():
    rng = np.random.default_rng(6)
    p = RoutingProblem.uniform(softmax(rng.normal(size=(12, 4))), 2, 1.5)
    fast = asg.sinkhorn(p, epsilon=0.1)
    slow = asg.sinkhorn(p, epsilon=0.1, max_iters=5000, newton=False)
    assert fast.converged and slow.converged
    assert fast.iterations <= slow.iterations
    assert np.allclose(fast.matrix, slow.matrix, atol=1e-5)


@given(st.integers(0, 2**32 - 1))
def test_sinkhorn_marginals_when_converged(seed):
    rng = np.random.default_rng(seed)
    n, e = int(rng.integers(1, 20)), int(rng.integers(1, 6))
    k = int(rng.integers(1, e + 1))
    p = RoutingProblem.uniform(rng.uniform(size=(n, e)), k, 1.5)
    if p.capacity.sum() < p.demand.sum():
        return
    tp = asg.sinkhorn(p)
    assert np.all(tp.matrix >= 0)
    if tp.converged:
        assert np.abs(tp.matrix.sum(axis=1) - p.demand).max() < 1e-6
        assert np.all(tp.matrix.sum(axis=0) <= p.capacity + 1e-6)


# rounding


def test_round_idempotent_on_binary():
    rng = np.random.default_rng(7)
    p = random_problem(rng, 6, 3, 2)
    plan = asg.route_mcmf(p)
    assert np.array_equal(asg.round_transport(plan.astype(float), p), plan)


def test_round_assigns_double_mass_once():
    p = RoutingProblem.uniform(PATHOLOGY, 2)
    frac = np.zeros((6, 3))
    frac[4, 1] = 2.0
    plan = asg.round_transport(TransportPlan(frac, True, 1, 0.0), p)
    assert plan[4, 1] == 1 and plan.max() == 1


def test_round_beats_row_argmax_on_sinkhorn_plans():
    rng = np.random.default_rng(8)
    for _ in range(100):
        p = random_problem(rng, 4, 3, int(rng.integers(1, 3)), 1.5)
        tp = asg.sinkhorn(p)
        ours = asg.round_transport(tp, p)
        assert feasible(ours, p)
        # row-argmax rounding, made feasible by visiting tokens in order
        left = p.capacity.copy()
        other = np.zeros_like(ours)
        for i in range(p.n):
            for j in np.argsort(-tp.matrix[i], kind="stable"):
                if other[i].sum() < p.demand[i] and left[j] > 0:
                    other[i, j] = 1
                    left[j] -= 1
        assert asg.score(ours, p.affinities) >= asg.score(other, p.affinities) - 1e-12


def test_round_shape_mismatch():
    p = RoutingProblem.uniform(PATHOLOGY, 2)
    with pytest.raises(ShapeMismatch):
        asg.round_transport(np.zeros((2, 2)), p)


# the duplicate-match pathology


def test_transport_relaxation_double_matches():
    p = RoutingProblem.uniform(PATHOLOGY, 2)
    relaxed, plan = transport_lp(PATHOLOGY, [2] * 6, [4] * 3)
    capped, _ = transport_lp(PATHOLOGY, [2] * 6, [4] * 3, upper=1)
    # every optimum of the relaxation beats every plan with entries <= 1
    assert relaxed > capped + 1e-6
    assert plan[4, 1] >= 2 - 1e-9
    assert asg.sinkhorn(p).matrix[4, 1] > 1.9
    for routed in (asg.round_transport(asg.sinkhorn(p), p), asg.route_mcmf(p), asg.route_sbase(p)):
        assert routed.max() == 1 and feasible(routed, p)
    assert asg.score(asg.route_mcmf(p), PATHOLOGY) == pytest.approx(capped)


# sbase


def test_sbase_top1_limit():
    rng = np.random.default_rng(9)
    a = rng.uniform(size=(10, 4))
    p = RoutingProblem.uniform(a, 1, capacity=[10] * 4)
    expected = np.zeros((10, 4), dtype=int)
    expected[np.arange(10), a.argmax(axis=1)] = 1
    assert np.array_equal(asg.route_sbase(p), expected)


def test_sbase_uniform_score():
    p = RoutingProblem.uniform(np.full((8, 4), 0.25), 2)
    assert asg.score(asg.route_sbase(p), p.affinities) == pytest.approx(2 * 8 * 0.25)


# maxscore


def test_maxscore_needs_top2():
    with pytest.raises(InvalidK):
        asg.route_maxscore(RoutingProblem.uniform(PATHOLOGY, 1))


def test_maxscore_no_contention_is_top2():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(16, 16))
    x[np.arange(16), rng.permutation(16)] += 6
    p = RoutingProblem.uniform(softmax(x), 2)
    assert p.capacity.tolist() == [2] * 16
    plan = asg.route_maxscore(p)
    top2 = np.argsort(-p.affinities, axis=1, kind="stable")[:, :2]
    expected = np.zeros_like(plan)
    np.put_along_axis(expected, top2, 1, axis=1)
    assert plan.sum() == 32
    # stage 2 serves every token; its choice may differ from the raw top-2
    assert np.all(plan[np.arange(16), top2[:, 0]] == 1)


def test_maxscore_stage_structure():
    rng = np.random.default_rng(11)
    for _ in range(30):
        p = RoutingProblem.uniform(softmax(rng.normal(size=(24, 6)) * 2), 2, 1.0)
        st_ = asg.maxscore_stages(p)
        assert np.array_equal(st_.top1.sum(axis=1), np.ones(24))
        assert np.array_equal(st_.residual_capacity, np.maximum(0, p.capacity - st_.top1.sum(axis=0)))
        assert np.all(st_.second.sum(axis=0) <= st_.residual_capacity)
        assert not np.any(st_.top1 & st_.second)
        # stage two serves as many tokens as a max-flow can
        masked = RoutingProblem(np.where(st_.top1 > 0, 0.0, p.affinities), [1] * 24, st_.residual_capacity)
        allowed = st_.top1 == 0
        best = asg.route_mcmf(masked)
        assert st_.second.sum() >= (best * allowed).sum()


def test_maxscore_below_mcmf_on_small():
    rng = np.random.default_rng(12)
    for _ in range(50):
        p = random_problem(rng, 6, 3, 2)
        ms = asg.route_maxscore(p)
        best = asg.score(asg.route_mcmf(p), p.affinities)
        assert asg.score(asg.restrict_to_feasible(ms, p), p.affinities) <= best + 1e-9


# mcmf and score


def test_mcmf_saturated():
    p = RoutingProblem.uniform(np.random.default_rng(13).uniform(size=(5, 3)), 3, capacity=[5, 5, 5])
    assert np.all(asg.route_mcmf(p) == 1)


def test_score():
    a = np.full((3, 4), 0.3)
    assert asg.score(np.zeros((3, 4)), a) == 0
    assert asg.score(np.ones((3, 4)), a) == pytest.approx(12 * 0.3)
    with pytest.raises(ShapeMismatch):
        asg.score(np.ones((4, 3)), a)


def test_restrict_to_feasible():
    a = np.array([[0.9, 0.8, 0.1], [0.7, 0.2, 0.3], [0.6, 0.5, 0.4]])
    p = RoutingProblem(a, [1, 1, 1], [1, 1, 1])
    trimmed = asg.restrict_to_feasible(np.ones((3, 3), dtype=int), p)
    assert feasible(trimmed, p)
    assert np.array_equal(asg.restrict_to_feasible(asg.route_mcmf(p), p), asg.route_mcmf(p))


def test_registry():
    assert set(asg.ROUTERS) == {"greedy", "iterative", "expert_choice", "dropless", "sbase", "maxscore", "mcmf"}
    with pytest.raises(UnknownRouter):
        asg.get_router("switch")
    with pytest.raises(UnknownRouter):
        asg.route("switch", RoutingProblem.uniform(PATHOLOGY, 2))


# invariants over many problems


@st.composite
def problems(draw, k2=False):
    n = draw(st.integers(1, 12))
    e = draw(st.integers(2 if k2 else 1, 5))
    seed = draw(st.integers(0, 2**32 - 1))
    k = 2 if k2 else draw(st.integers(1, e))
    cf = draw(st.sampled_from([0.5, 1.0, 1.25, 2.0]))
    a = softmax(np.random.default_rng(seed).normal(size=(n, e)) * 2)
    return RoutingProblem.uniform(a, k, cf)


@given(problems())
def test_router_constraints(p):
    for name in ("greedy", "iterative", "mcmf"):
        assert feasible(asg.route(name, p), p)
    if p.capacity.sum() >= p.demand.sum():
        assert feasible(asg.route("sbase", p), p)
    ec = asg.route("expert_choice", p)
    assert np.array_equal(ec.sum(axis=0), np.minimum(p.capacity, p.n))
    dl = asg.route("dropless", p)
    assert np.array_equal(dl.sum(axis=1), p.demand)
    assert asg.route("iterative", p).sum() >= asg.route("greedy", p).sum()


@given(problems())
def test_mcmf_dominates(p):
    # min-cost max-flow serves the most slots, and among plans serving that
    # many it has the best score
    best_plan = asg.route_mcmf(p)
    best = asg.score(best_plan, p.affinities)
    for name in asg.ROUTERS:
        if name == "maxscore" and p.k != 2:
            continue
        plan = asg.restrict_to_feasible(asg.route(name, p), p)
        assert plan.sum() <= best_plan.sum()
        if plan.sum() == best_plan.sum():
            assert asg.score(plan, p.affinities) <= best + 1e-9


def test_serving_fewer_slots_can_score_higher():
    # every full plan here must use some poor cells; leaving one slot open
    # avoids them, so flow-first optimality is not score optimality
    a = np.array(
        [
            [0.957, 0.0001, 0.037, 0.005],
            [0.238, 0.382, 0.0103, 0.370],
            [0.0002, 0.997, 0.002, 0.0006],
            [0.404, 0.186, 0.086, 0.324],
        ]
    )
    p = RoutingProblem(a, [3] * 4, [3] * 4)
    partial = np.array([[1, 0, 1, 1], [1, 1, 0, 1], [0, 1, 1, 0], [1, 1, 0, 1]])
    best = asg.route_mcmf(p)
    assert best.sum() == 12 and partial.sum() == 11
    assert asg.score(partial, a) > asg.score(best, a)
    assert asg.score(best, a) == pytest.approx(3.7977)


@given(problems(k2=True))
def test_maxscore_keeps_argmax(p):
    plan = asg.route_maxscore(p)
    top1 = np.argmax(p.affinities, axis=1)
    assert np.all(plan[np.arange(p.n), top1] == 1)
    assert np.all(plan.sum(axis=1) <= 2)
    stage2 = plan.copy()
    stage2[np.arange(p.n), top1] = 0
    assert np.all(stage2.sum(axis=0) <= np.maximum(0, p.capacity - np.bincount(top1, minlength=p.e)))


@given(problems(), st.integers(0, 2**32 - 1))
def test_mcmf_score_permutation_invariant(p, seed):
    perm = np.random.default_rng(seed).permutation(p.n)
    q = RoutingProblem(p.affinities[perm], p.demand[perm], p.capacity)
    assert asg.score(asg.route_mcmf(p), p.affinities) == pytest.approx(
        asg.score(asg.route_mcmf(q), q.affinities), abs=1e-9
    )


def test_routers_leave_problem_untouched():
    p = RoutingProblem.uniform(PATHOLOGY, 2)
    before = p.affinities.copy()
    for name in asg.ROUTERS:
        asg.route(name, p)
    assert np.array_equal(p.affinities, before)
    assert not p.affinities.flags.writeable
