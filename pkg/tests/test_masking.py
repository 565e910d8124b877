import itertools

import numpy as np
import pytest

from hetmae import masking
from hetmae.hetgraph import MetaPathGraph, MetaPathSpec


def mpg_from_edges(pairs, n):
    adj = np.zeros((n, n), dtype=bool)
    for s, d in pairs:
        adj[s, d] = True
    return MetaPathGraph(MetaPathSpec("mp", ()), n, adj)


def chain_probability(w, seq):
    """Oracle: exact probability of an ordered sample under the sampling chain."""
    p, rem = 1.0, 1.0
    for i in seq:
        p *= w[i] / rem
        rem -= w[i]
    return p


# -- random masking ---------------------------------------------------------


def test_random_mask_count():
    mpg = mpg_from_edges([(i, (i + 1) % 10) for i in range(10)], 10)
    plan = masking.mask_edges_random(mpg, 0.3, np.random.default_rng(0))
    assert len(plan.edge_indices["mp"]) == 3
    assert len(set(plan.edge_indices["mp"])) == 3


def test_random_mask_rate_zero():
    mpg = mpg_from_edges([(0, 1), (1, 2)], 3)
    plan = masking.mask_edges_random(mpg, 0.0, np.random.default_rng(0))
    assert plan.edge_indices["mp"] == ()


def test_random_mask_uniform_frequency():
    mpg = mpg_from_edges([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
    rng = np.random.default_rng(42)
    hits = np.zeros(4)
    trials = 50_000
    for _ in range(trials):
        plan = masking.mask_edges_random(mpg, 0.25, rng)
        hits[plan.edge_indices["mp"][0]] += 1
    np.testing.assert_allclose(hits / trials, 0.25, atol=0.01)


def test_rate_out_of_range():
    mpg = mpg_from_edges([(0, 1)], 2)
    with pytest.raises(ValueError, match="rate"):
        masking.mask_edges_random(mpg, 1.0, np.random.default_rng(0))


# -- degree weights ---------------------------------------------------------


def test_degree_weights_hand_computed():
    # edges in canonical (dst, src) order: (0,1), (0,2), (1,2)
    # out deg: node0=2, node1=1; in deg: node1=1, node2=2
    mpg = mpg_from_edges([(0, 1), (0, 2), (1, 2)], 3)
    raw = np.array([(2 + 1) / 2, (2 + 2) / 2, (1 + 2) / 2])
    np.testing.assert_allclose(masking.edge_degree_weights(mpg), raw / raw.sum())


def test_degree_weights_single_edge():
    mpg = mpg_from_edges([(0, 1)], 2)
    np.testing.assert_allclose(masking.edge_degree_weights(mpg), [1.0])


def test_degree_weights_star_symmetric():
    k = 5
    mpg = mpg_from_edges([(i, 0) for i in range(1, k + 1)], k + 1)
    w = masking.edge_degree_weights(mpg)
    np.testing.assert_allclose(w, 1.0 / k)


def test_degree_weights_empty():
    mpg = mpg_from_edges([], 3)
    with pytest.raises(ValueError, match="at least one edge"):
        masking.edge_degree_weights(mpg)


def test_degree_weights_sum_to_one_property():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 12))
        pairs = [(s, d) for s in range(n) for d in range(n) if s != d and rng.random() < 0.3]
        if not pairs:
            continue
        w = masking.edge_degree_weights(mpg_from_edges(pairs, n))
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w >= 0)


# -- weighted sampling without replacement -----------------------------------


def test_sample_chain_probability_closed_form():
    assert chain_probability([0.5, 0.3, 0.2], [0, 1]) == pytest.approx(0.3)


def test_sample_exhaustion_is_permutation():
    rng = np.random.default_rng(1)
    out = masking.sample_without_replacement(np.array([0.5, 0.3, 0.2]), 3, rng)
    assert sorted(out.tolist()) == [0, 1, 2]


def test_sample_k_too_large():
    with pytest.raises(ValueError, match="support"):
        masking.sample_without_replacement(np.array([1.0, 0.0]), 2, np.random.default_rng(0))


def test_sample_matches_exact_chain_distribution():
    w = np.array([0.5, 0.3, 0.2])
    rng = np.random.default_rng(7)
    trials = 100_000
    freq = {}
    for _ in range(trials):
        seq = tuple(masking.sample_without_replacement(w, 2, rng).tolist())
        freq[seq] = freq.get(seq, 0) + 1
    tv = 0.5 * sum(
        abs(freq.get(seq, 0) / trials - chain_probability(w, seq))
        for seq in itertools.permutations(range(3), 2)
    )
    assert tv < 0.01


def test_degree_mask_prefers_hub_edges_exact():
    # hub node 0 with three spokes, plus a detached low-degree pair
    mpg = mpg_from_edges([(1, 0), (2, 0), (3, 0), (4, 5)], 6)
    w = masking.edge_degree_weights(mpg)
    hub_rows = [i for i, (s, d) in enumerate(mpg.edges) if d == 0]
    pair_rows = [i for i, (s, d) in enumerate(mpg.edges) if d == 5]
    # first-draw probability equals the weight itself
    assert min(w[hub_rows]) > max(w[pair_rows])


def test_degree_mask_count_and_distinct():
    mpg = mpg_from_edges([(i, (i + 3) % 10) for i in range(10)], 10)
    plan = masking.mask_edges_by_degree(mpg, 0.5, np.random.default_rng(0))
    idx = plan.edge_indices["mp"]
    assert len(idx) == 5 and len(set(idx)) == 5


def test_degree_mask_prefers_dense_community():
    # community A: clique of 4 (12 directed edges); community B: one pair
    pairs = [(s, d) for s in range(4) for d in range(4) if s != d] + [(4, 5), (5, 4)]
    mpg = mpg_from_edges(pairs, 6)
    a_rows = {i for i, (s, d) in enumerate(mpg.edges) if d < 4}
    rng = np.random.default_rng(11)
    from_a = total = 0
    for _ in range(1_000):
        plan = masking.mask_edges_by_degree(mpg, 0.2, rng)
        for i in plan.edge_indices["mp"]:
            total += 1
            from_a += i in a_rows
    # A holds 12/14 of the edges and all the degree mass; well above half
    assert from_a / total > 0.5


# -- attention masking -------------------------------------------------------


def test_recover_logits_roundtrip():
    p = np.array([0.5, 0.25, 0.25])
    z = masking.recover_attention_logits(p, 0.0)
    np.testing.assert_allclose(z, np.log(p))
    soft = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(soft, p)


def test_recover_logits_rejects_zero():
    with pytest.raises(ValueError, match="positive"):
        masking.recover_attention_logits(np.array([0.5, 0.0]), 1.0)


def test_attention_constant_invariance():
    rng = np.random.default_rng(5)
    for trial in range(100):
        n = int(rng.integers(4, 10))
        pairs = [(s, d) for s in range(n) for d in range(n) if s != d and rng.random() < 0.4]
        if len(pairs) < 2:
            continue
        mpg = mpg_from_edges(pairs, n)
        att = rng.random(mpg.n_edges) + 0.05
        att /= att.sum()
        seed = 1000 + trial
        plan0 = masking.mask_edges_by_attention(mpg, att, 0.5, np.random.default_rng(seed), C=0.0)
        plan10 = masking.mask_edges_by_attention(mpg, att, 0.5, np.random.default_rng(seed), C=10.0)
        assert plan0.edge_indices == plan10.edge_indices


def test_attention_uniform_matches_random_distribution():
    mpg = mpg_from_edges([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
    att = np.full(4, 0.25)
    rng = np.random.default_rng(9)
    hits = np.zeros(4)
    trials = 50_000
    for _ in range(trials):
        plan = masking.mask_edges_by_attention(mpg, att, 0.25, rng)
        hits[plan.edge_indices["mp"][0]] += 1
    tv = 0.5 * np.abs(hits / trials - 0.25).sum()
    assert tv < 0.02


def test_attention_dominant_edge_usually_masked():
    mpg = mpg_from_edges([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
    att = np.array([0.97, 0.01, 0.01, 0.01])
    rng = np.random.default_rng(13)
    trials = 5_000
    hits = sum(
        plan.edge_indices["mp"][0] == 0
        for plan in (masking.mask_edges_by_attention(mpg, att, 0.25, rng) for _ in range(trials))
    )
    assert hits / trials > 0.9


def test_attention_rate_zero():
    mpg = mpg_from_edges([(0, 1)], 2)
    plan = masking.mask_edges_by_attention(mpg, np.array([1.0]), 0.0, np.random.default_rng(0))
    assert plan.edge_indices["mp"] == ()


def test_attention_requires_coefficients():
    mpg = mpg_from_edges([(0, 1)], 2)
    with pytest.raises(ValueError, match="coefficients"):
        masking.mask_edges_by_attention(mpg, None, 0.5, np.random.default_rng(0))


def test_plan_edge_masks_attention_fallback():
    graphs = {"mp": mpg_from_edges([(0, 1), (1, 0), (1, 2)], 3)}
    plan = masking.plan_edge_masks(graphs, "attention", 0.34, np.random.default_rng(2))
    assert len(plan.edge_indices["mp"]) == 1  # fell back to random, count holds


# -- count + determinism contracts across strategies -------------------------


@pytest.mark.parametrize("strategy", ["random", "degree", "attention"])
def test_count_contract_all_strategies(strategy):
    rng_graph = np.random.default_rng(17)
    pairs = [(s, d) for s in range(8) for d in range(8) if s != d and rng_graph.random() < 0.4]
    mpg = mpg_from_edges(pairs, 8)
    att = {"mp": np.full(mpg.n_edges, 1.0 / mpg.n_edges)}
    for rate in np.arange(0.1, 1.0, 0.1):
        for seed in range(10):
            plan = masking.plan_edge_masks(
                {"mp": mpg}, strategy, float(rate), np.random.default_rng(seed), attention=att
            )
            assert len(plan.edge_indices["mp"]) == int(rate * mpg.n_edges)
            assert len(set(plan.edge_indices["mp"])) == len(plan.edge_indices["mp"])


@pytest.mark.parametrize("strategy", ["random", "degree", "attention"])
def test_mask_determinism(strategy):
    mpg = mpg_from_edges([(s, d) for s in range(6) for d in range(6) if s != d], 6)
    att = {"mp": np.linspace(0.1, 1.0, mpg.n_edges) / np.linspace(0.1, 1.0, mpg.n_edges).sum()}
    plans = [
        masking.plan_edge_masks({"mp": mpg}, strategy, 0.4, np.random.default_rng(123), attention=att)
        for _ in range(2)
    ]
    assert plans[0].edge_indices == plans[1].edge_indices


# -- node / attribute feature masking ----------------------------------------


def test_mask_node_features_counts():
    X = np.arange(16.0).reshape(4, 4)
    token = np.full(4, -7.0)
    masked, node_idx, _ = masking.mask_node_features(X, 0.5, 0.0, token, np.random.default_rng(0))
    assert len(node_idx) == 2
    for i in node_idx:
        np.testing.assert_array_equal(masked[i], token)
    untouched = [i for i in range(4) if i not in node_idx]
    np.testing.assert_array_equal(masked[untouched], X[untouched])


def test_mask_node_features_attr_rate_zero():
    X = np.ones((5, 3))
    masked, node_idx, attr_pairs = masking.mask_node_features(
        X, 0.2, 0.0, np.zeros(3), np.random.default_rng(1)
    )
    assert attr_pairs == ()
    remaining = [i for i in range(5) if i not in node_idx]
    np.testing.assert_array_equal(masked[remaining], X[remaining])


def test_mask_node_features_attr_fraction():
    X = np.ones((100, 50))
    masked, node_idx, attr_pairs = masking.mask_node_features(
        X, 0.0, 0.3, np.zeros(50), np.random.default_rng(2)
    )
    assert node_idx == ()
    frac = len(attr_pairs) / X.size
    assert abs(frac - 0.3) < 0.02
    nodes_with_attr = {n for n, _ in attr_pairs}
    assert nodes_with_attr.isdisjoint(node_idx)


def test_mask_node_features_disjoint_sets():
    X = np.ones((40, 10))
    _, node_idx, attr_pairs = masking.mask_node_features(
        X, 0.3, 0.5, np.zeros(10), np.random.default_rng(3)
    )
    assert {n for n, _ in attr_pairs}.isdisjoint(node_idx)


# -- applying plans ----------------------------------------------------------


def test_apply_mask_all_edges():
    mpg = mpg_from_edges([(0, 1), (1, 2), (2, 0)], 3)
    plan = masking.MaskPlan("random", 0.9, 0, {"mp": (0, 1, 2)}, {"mp": 3})
    out = masking.apply_mask(mpg, plan)
    assert out.n_edges == 0


def test_apply_mask_empty_plan_is_identity():
    mpg = mpg_from_edges([(0, 1), (1, 2)], 3)
    plan = masking.MaskPlan("random", 0.0, 0, {"mp": ()}, {"mp": 2})
    out = masking.apply_mask(mpg, plan)
    np.testing.assert_array_equal(out.adjacency, mpg.adjacency)


def test_apply_mask_updates_degrees():
    mpg = mpg_from_edges([(0, 1), (0, 2), (1, 2)], 3)
    target = next(i for i, (s, d) in enumerate(mpg.edges) if (s, d) == (0, 1))
    plan = masking.MaskPlan("random", 0.33, 0, {"mp": (target,)}, {"mp": 3})
    out = masking.apply_mask(mpg, plan)
    assert out.n_edges == 2
    assert out.out_degree[0] == 1 and out.in_degree[1] == 0


def test_apply_mask_stale_plan():
    mpg = mpg_from_edges([(0, 1), (1, 2)], 3)
    plan = masking.MaskPlan("random", 0.5, 0, {"mp": (0,)}, {"mp": 5})
    with pytest.raises(ValueError, match="stale"):
        masking.apply_mask(mpg, plan)


def test_plan_json_roundtrip():
    plan = masking.MaskPlan(
        "degree", 0.4, 7, {"mp": (1, 3)}, {"mp": 9}, (0, 2), ((1, 4), (3, 0)), 0.1
    )
    back = masking.MaskPlan.from_json(plan.to_json())
    assert back == plan
