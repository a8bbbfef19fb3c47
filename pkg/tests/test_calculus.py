import numpy as np
import pytest

from coupledpd import (CommGraph, MultiplierStack, consensus_distance, consensus_penalty, dual_field,
                       lagrangian, max_disagreement, modified_lagrangian, primal_field)


def test_penalty_on_path():
    g = CommGraph(3, [(0, 1), (1, 2)])
    L = np.array([[1.0, 0.0], [3.0, 1.0], [3.0, 0.0]])
    assert consensus_penalty(g, L) == pytest.approx(2 + 1 + 0 + 1)


def test_penalty_zero_iff_consensus():
    g = CommGraph(3, [(0, 1), (1, 2)])
    assert consensus_penalty(g, MultiplierStack.consensus([2.0, 1.0], 3)) == 0.0


def test_distance_and_disagreement():
    L = np.array([[0.0], [2.0]])
    assert consensus_distance(L) == pytest.approx(np.sqrt(2))
    assert max_disagreement(L) == 2.0


def test_stack_rejects_negative():
    with pytest.raises(ValueError):
        MultiplierStack([[0.0, -1.0]])


def test_sqrtN_phi_dominates_distance():
    rng = np.random.default_rng(0)
    for _ in range(300):
        N = int(rng.integers(2, 8))
        edges = [(i, i + 1) for i in range(N - 1)] + [(int(a), int(b)) for a, b in rng.integers(0, N, (N, 2)) if a != b]
        g = CommGraph(N, edges)
        L = rng.uniform(0, 3, size=(N, int(rng.integers(1, 4))))
        assert np.sqrt(N) * consensus_penalty(g, L) > consensus_distance(L)


def test_lagrangians_agree_at_consensus(two_agent):
    x = np.array([0.3, 1.2])
    lam = np.array([0.7])
    L = MultiplierStack.consensus(lam, 2)
    assert modified_lagrangian(two_agent, x, L, K=5.0) == pytest.approx(lagrangian(two_agent, x, lam))


def test_fields_by_hand(two_agent):
    x = np.array([0.5, 1.0])
    L = np.array([[1.0], [3.0]])
    # f_1' = 2 (0.5 - 2) = -3, g_1' = 1 -> -( -3 + 1 ) = 2
    assert primal_field(two_agent, x, L, 4.0, 0) == pytest.approx([2.0])
    # g_1(0.5) = -1, sign(1 - 3) = -1 -> -1 + 4 = 3
    assert dual_field(two_agent, x, L, 4.0, 0) == pytest.approx([3.0])
    assert dual_field(two_agent, x, L, 4.0, 1) == pytest.approx([0.5 - 4.0])


def test_dual_field_tie_rule(two_agent):
    L = np.array([[2.0], [2.0]])
    assert dual_field(two_agent, np.array([1.0, 1.0]), L, 10.0, 0) == pytest.approx([-0.5])
