import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labelprior.model import (F1, HAMMING, DimensionError, LossKind, ModelParams, QboProblem,
                              SignConstraint, accuracy, as_labeling, canonical_from_decode,
                              discriminant, f_loss, hamming_loss, precision_recall,
                              project_prior, sign_labeling)
from oracles import all_labelings, f1_loss_def, hamming_def

labelings = st.integers(1, 32).flatmap(
    lambda V: st.tuples(st.lists(st.sampled_from([-1, 1]), min_size=V, max_size=V),
                        st.lists(st.sampled_from([-1, 1]), min_size=V, max_size=V)))


def _params(W, b, A):
    return ModelParams(np.asarray(W, float), np.asarray(b, float), np.asarray(A, float))


class TestDiscriminant:
    def test_bias_only_cancels(self):
        p = _params(np.zeros((3, 2)), [1, -1], np.zeros((2, 2)))
        assert discriminant(np.ones(3), [1, 1], p) == 0.0

    def test_hand_evaluated(self):
        W = np.array([[2.0, 0.0]])          # W'x = (2, 0) for x = (1,)
        p = _params(W, [0, 0], [[0, 1], [1, 0]])
        assert discriminant([1.0], [1, -1], p) == pytest.approx(4.0, abs=0)

    def test_reduces_to_independent_scores(self, rng):
        W = rng.standard_normal((5, 4))
        x = rng.standard_normal(5)
        p = _params(W, np.zeros(4), np.zeros((4, 4)))
        y = np.array([1, -1, -1, 1])
        assert discriminant(x, y, p) == pytest.approx(y @ W.T @ x, rel=1e-14)

    def test_sparse_row_input(self, rng):
        import scipy.sparse as sp
        W = rng.standard_normal((5, 3))
        x = sp.csr_matrix(np.array([[0, 1.5, 0, -2, 0]]))
        p = _params(W, rng.standard_normal(3), np.zeros((3, 3)))
        assert discriminant(x, [1, 1, -1], p) == pytest.approx(
            discriminant(x.toarray().ravel(), [1, 1, -1], p))

    def test_dimension_mismatch(self):
        p = _params(np.zeros((3, 2)), [0, 0], np.zeros((2, 2)))
        with pytest.raises(DimensionError):
            discriminant(np.ones(4), [1, 1], p)
        with pytest.raises(DimensionError):
            discriminant(np.ones(3), [1, 1, 1], p)


class TestLosses:
    yr = np.array([1, 1, -1, -1])
    y = np.array([1, -1, -1, -1])

    def test_accuracy_examples(self):
        assert accuracy(self.yr, self.yr) == 1.0
        assert accuracy(-self.yr, self.yr) == 0.0
        assert accuracy(self.y, self.yr) == 0.75

    def test_hamming_examples(self):
        assert hamming_loss(self.yr, self.yr) == 0.0
        assert hamming_loss(-self.yr, self.yr) == 1.0
        assert hamming_loss(self.y, self.yr) == 0.25

    def test_precision_recall_examples(self):
        assert precision_recall(self.yr, self.yr) == (1.0, 1.0)
        assert precision_recall(self.y, self.yr) == (1.0, 0.5)
        assert precision_recall(-np.ones(4), self.yr) == (0.0, 0.0)

    def test_f1_examples(self):
        assert f_loss(F1, self.yr, self.yr) == 0.0
        assert f_loss(F1, self.y, self.yr) == pytest.approx(1 / 3, abs=1e-15)
        assert f_loss(F1, -np.ones(4), self.yr) == 1.0
        assert f_loss(F1, -np.ones(4), -np.ones(4)) == 0.0

    def test_fbeta_matches_f1_at_beta_one(self):
        Y = all_labelings(5)
        for y in Y[::3]:
            for yr in Y[::5]:
                assert f_loss(LossKind("fbeta", 1.0), y, yr) == pytest.approx(
                    f_loss(F1, y, yr), abs=1e-12)

    def test_fbeta_from_counts(self):
        y, yr = np.array([1, 1, 1, -1, -1]), np.array([1, -1, -1, 1, -1])
        p, r, b2 = 1 / 3, 1 / 2, 4.0
        assert f_loss(LossKind("fbeta", 2.0), y, yr) == pytest.approx(
            1 - (1 + b2) * p * r / (b2 * p + r), rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            hamming_loss([1, 1], [1, 1, 1])
        with pytest.raises(DimensionError):
            accuracy([1], [1, -1])

    def test_loss_kind_parse(self):
        assert LossKind.parse("F1") == F1
        assert LossKind.parse("hamming") == HAMMING
        assert LossKind.parse("f2") == LossKind("fbeta", 2.0)
        with pytest.raises(ValueError):
            LossKind("fbeta", 0.0)
        with pytest.raises(ValueError):
            LossKind.parse("zero-one")


@settings(max_examples=300, deadline=None)
@given(labelings)
def test_accuracy_plus_hamming_is_one(pair):
    y, yr = map(np.array, pair)
    assert accuracy(y, yr) + hamming_loss(y, yr) == pytest.approx(1.0, abs=1e-15)
    assert hamming_loss(y, yr) == pytest.approx(hamming_def(y, yr), abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(labelings)
def test_losses_in_unit_interval_and_vanish_only_at_truth(pair):
    y, yr = map(np.array, pair)
    for kind in (HAMMING, F1, LossKind("fbeta", 0.5), LossKind("fbeta", 2.0)):
        v = f_loss(kind, y, yr)
        assert -1e-15 <= v <= 1 + 1e-15
        assert (abs(v) < 1e-15) == bool(np.array_equal(y, yr))


@settings(max_examples=300, deadline=None)
@given(labelings)
def test_f1_closed_form_matches_harmonic_mean(pair):
    y, yr = map(np.array, pair)
    assert f_loss(F1, y, yr) == pytest.approx(f1_loss_def(y, yr), abs=1e-12)
    p, r = precision_recall(y, yr)
    if p + r > 0 and (y > 0).any() and (yr > 0).any():
        assert f_loss(F1, y, yr) == pytest.approx(1 - 2 * p * r / (p + r), abs=1e-12)


class TestParams:
    def test_projection(self, rng):
        A = rng.standard_normal((5, 5))
        for sc in SignConstraint:
            P = project_prior(A, sc)
            assert np.array_equal(P, P.T) and not np.any(np.diag(P))
            assert np.array_equal(project_prior(P, sc), P)
        assert (project_prior(A, "nonpos") <= 0).all()
        assert (project_prior(A, "nonneg") >= 0).all()
        assert not project_prior(A, "zero").any()

    def test_params_are_projected_and_finite(self, rng):
        p = ModelParams(rng.standard_normal((3, 4)), np.zeros(4), rng.standard_normal((4, 4)),
                        SignConstraint.NONPOS)
        assert np.array_equal(p.A, p.A.T) and (p.A <= 0).all() and not np.diag(p.A).any()
        with pytest.raises(ValueError):
            ModelParams(np.full((3, 4), np.nan), np.zeros(4), np.zeros((4, 4)))
        with pytest.raises(DimensionError):
            ModelParams(np.zeros((3, 4)), np.zeros(3), np.zeros((4, 4)))

    def test_labeling_validation(self):
        assert as_labeling([1, -1]).dtype == np.int8
        with pytest.raises(ValueError):
            as_labeling([1, 0])
        with pytest.raises(DimensionError):
            as_labeling([1, 1], V=3)
        assert sign_labeling([0.0, -1e-300, 2]).tolist() == [1, -1, 1]


class TestCanonical:
    def test_zero_weights_give_bias(self, rng):
        p = _params(np.zeros((4, 3)), [0.5, -1, 2], rng.standard_normal((3, 3)))
        q = canonical_from_decode(rng.standard_normal(4), p)
        assert np.array_equal(q.b, p.b) and q.constraint is None

    def test_separable_case_is_sign_of_scores(self, rng):
        W = rng.standard_normal((4, 6))
        x = rng.standard_normal(4)
        p = _params(W, rng.standard_normal(6), np.zeros((6, 6)))
        q = canonical_from_decode(x, p)
        Y = all_labelings(6)
        vals = Y @ q.b
        assert np.array_equal(Y[np.argmax(vals)], np.where(q.b >= 0, 1.0, -1.0))

    @pytest.mark.parametrize("seed", range(20))
    def test_argmax_preserved(self, seed):
        rng = np.random.default_rng(seed)
        V, d = int(rng.integers(2, 9)), 5
        p = _params(rng.standard_normal((d, V)), rng.standard_normal(V),
                    rng.standard_normal((V, V)))
        x = rng.standard_normal(d)
        q = canonical_from_decode(x, p)
        Y = all_labelings(V)
        direct = np.array([discriminant(x, y.astype(int), p) for y in Y])
        canon = np.array([q.objective(y) for y in Y])
        assert np.array_equal(Y[np.argmax(direct)], Y[np.argmax(canon)])
        assert np.allclose(direct, canon, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_diagonal_perturbation_does_not_move_argmax(self, seed):
        rng = np.random.default_rng(100 + seed)
        V = int(rng.integers(2, 9))
        A, b = rng.standard_normal((V, V)), rng.standard_normal(V)
        D = np.diag(rng.standard_normal(V) * 5)
        Y = all_labelings(V)
        raw = Y @ b - np.einsum("ij,jk,ik->i", Y, A + D, Y)
        q = QboProblem(A + D, b)
        canon = np.array([q.objective(y) for y in Y])
        assert np.argmax(raw) == np.argmax(canon)
        assert np.allclose(raw - canon, raw[0] - canon[0])


def test_problem_cardinality_detection():
    A = np.zeros((4, 4))
    assert QboProblem.with_cardinality(A, np.ones(4), 3).cardinality == 3
    assert QboProblem(A, np.ones(4), (2 * np.ones(4), 4.0)).cardinality == 3
    assert QboProblem(A, np.ones(4), (np.arange(4.0), 1.0)).cardinality is None
    with pytest.raises(ValueError):
        QboProblem.with_cardinality(A, np.ones(4), 5)
