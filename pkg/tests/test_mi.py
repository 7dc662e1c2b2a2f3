import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semisup import autodiff as ad
from semisup.gradcheck import check
from semisup.mi import JointMatrix, joint_distribution, mutual_information, pair_mi, single_pair_mi_loss, triplet_mi_loss

from conftest import random_probs


def joint_oracle(Pa, Pb, symmetrize=True):
    B, C = Pa.shape
    P = np.zeros((C, C))
    for b in range(B):
        for i in range(C):
            for j in range(C):
                P[i, j] += Pa[b, i] * Pb[b, j] / B
    return (P + P.T) / 2 if symmetrize else P


def mi_oracle(P):
    pi, pj = P.sum(axis=1), P.sum(axis=0)
    total = 0.0
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            if P[i, j] > 0:
                total += P[i, j] * (math.log(P[i, j]) - math.log(pi[i]) - math.log(pj[j]))
    return total


def as_joint(P):
    return JointMatrix(ad.Tensor(P), ad.Tensor(P.sum(axis=1)), ad.Tensor(P.sum(axis=0)))


def T(a):
    return ad.Tensor(a)


def test_perfect_correlation_is_diagonal():
    C = 4
    eye = np.eye(C)
    np.testing.assert_allclose(joint_distribution(T(eye), T(eye)).P.values, np.eye(C) / C)


def test_independence_is_flat():
    u = np.full((6, 3), 1 / 3)
    np.testing.assert_allclose(joint_distribution(T(u), T(u)).P.values, np.full((3, 3), 1 / 9))


def test_joint_matches_loop_oracle(rng):
    Pa, Pb = random_probs(rng, 5, 3), random_probs(rng, 5, 3)
    for sym in (True, False):
        np.testing.assert_allclose(joint_distribution(T(Pa), T(Pb), sym).P.values, joint_oracle(Pa, Pb, sym), atol=1e-12)


def test_joint_rejects_mismatch():
    with pytest.raises(ValueError):
        joint_distribution(T(np.ones((3, 2)) / 2), T(np.ones((4, 2)) / 2))
    with pytest.raises(ValueError):
        joint_distribution(T(np.zeros((0, 2))), T(np.zeros((0, 2))))


def test_mi_reference_values():
    assert mutual_information(as_joint(np.eye(10) / 10)).item() == pytest.approx(math.log(10), abs=1e-12)
    assert mutual_information(as_joint(np.full((4, 4), 1 / 16))).item() == pytest.approx(0.0, abs=1e-15)


def test_mi_matches_double_sum(rng):
    for _ in range(20):
        P = rng.uniform(size=(3, 3))
        P /= P.sum()
        assert mutual_information(as_joint(P)).item() == pytest.approx(mi_oracle(P), abs=1e-10)


def test_triplet_reference_values():
    eye = np.eye(10)
    assert triplet_mi_loss(T(eye), T(eye), T(eye)).item() == pytest.approx(-math.log(10), abs=1e-12)
    u = np.full((5, 4), 0.25)
    assert triplet_mi_loss(T(u), T(u), T(u)).item() == pytest.approx(0.0, abs=1e-15)


def test_triplet_is_oracle_composition(rng):
    for _ in range(10):
        a, b, c = (random_probs(rng, 4, 3) for _ in range(3))
        expect = -(mi_oracle(joint_oracle(a, b)) + mi_oracle(joint_oracle(a, c)) + mi_oracle(joint_oracle(b, c))) / 3
        assert triplet_mi_loss(T(a), T(b), T(c)).item() == pytest.approx(expect, abs=1e-10)


def test_single_pair_is_negative_mi(rng):
    a, b = random_probs(rng, 6, 4), random_probs(rng, 6, 4)
    assert single_pair_mi_loss(T(a), T(b)).item() == pytest.approx(-mi_oracle(joint_oracle(a, b)), abs=1e-12)


@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 2**31 - 1), st.floats(0.1, 8.0))
def test_mi_bounds_and_symmetry(B, C, seed, sharp):
    r = np.random.default_rng(seed)
    a, b = random_probs(r, B, C, sharp), random_probs(r, B, C, sharp)
    ab = pair_mi(T(a), T(b)).item()
    ba = pair_mi(T(b), T(a)).item()
    assert -1e-9 <= ab <= math.log(C) + 1e-9
    assert abs(ab - ba) <= 1e-12


@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_triplet_permutation_invariant(B, C, seed):
    r = np.random.default_rng(seed)
    views = [random_probs(r, B, C, 3.0) for _ in range(3)]
    ref = triplet_mi_loss(*map(T, views)).item()
    for perm in itertools.permutations(views):
        assert triplet_mi_loss(*map(T, perm)).item() == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("sym", [True, False])
def test_triplet_gradient_wrt_logits(sym):
    r = np.random.default_rng(7)
    for _ in range(10):
        B, C = int(r.integers(1, 9)), int(r.integers(2, 7))
        z = [ad.Tensor(r.normal(size=(B, C)), requires_grad=True) for _ in range(3)]
        err = check(lambda: triplet_mi_loss(*(ad.softmax_rows(t) for t in z), symmetrize=sym), z)
        assert err <= 1e-4
