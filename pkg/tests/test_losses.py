"""Population and sampled losses: values, identities, and the batch sampler."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmspectral import (
    Batch,
    EncoderTable,
    InvalidBatchSize,
    InvalidSpec,
    JointDistribution,
    amf_loss,
    empirical_scl,
    empirical_scl_grad,
    equivalence_constant,
    normalize_cooccurrence,
    sample_batch,
    sce_loss,
    scl_grad,
    scl_loss,
    text_induced,
    uni_scl_grad,
    uni_scl_loss,
)

from oracles import (
    amf_oracle,
    empirical_scl_oracle,
    random_joint,
    sce_oracle,
    scl_oracle,
    uni_scl_oracle,
)

DIAG_HALF = JointDistribution([[0.5, 0.0], [0.0, 0.5]])
UNIFORM_2X2 = JointDistribution([[0.25, 0.25], [0.25, 0.25]])


def random_tables(rng, joint, k):
    nv, nl = joint.matrix.shape
    return rng.standard_normal((nv, k)), rng.standard_normal((nl, k))


class TestSceLoss:
    def test_single_pair_is_zero(self):
        joint = JointDistribution([[1.0]])
        assert sce_loss(np.array([[2.0]]), np.array([[3.0]]), joint) == pytest.approx(0.0, abs=1e-12)

    def test_zero_encoders_give_zero(self):
        fv, fl = np.zeros((2, 3)), np.zeros((2, 3))
        assert sce_loss(fv, fl, UNIFORM_2X2) == pytest.approx(0.0, abs=1e-12)

    def test_decreasing_in_alignment_scale(self):
        values = [
            sce_loss(s * np.eye(2), s * np.eye(2), DIAG_HALF) for s in (0.0, 1.0, 2.0)
        ]
        assert values[0] > values[1] > values[2]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        joint = JointDistribution(random_joint(rng, 6, 6))
        fv, fl = random_tables(rng, joint, 2)
        assert sce_loss(fv, fl, joint) == pytest.approx(sce_oracle(fv, fl, joint.matrix), rel=1e-10)


class TestSclLoss:
    def test_zero_encoders_give_zero(self):
        fv, fl = np.zeros((2, 2)), np.zeros((2, 2))
        assert scl_loss(fv, fl, UNIFORM_2X2) == 0.0

    def test_reciprocal_scaling_invariance(self):
        rng = np.random.default_rng(2)
        joint = JointDistribution(random_joint(rng, 5, 7))
        fv, fl = random_tables(rng, joint, 3)
        base = scl_loss(fv, fl, joint)
        assert scl_loss(4.0 * fv, fl / 4.0, joint) == pytest.approx(base, rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        joint = JointDistribution(random_joint(rng, 6, 6))
        fv, fl = random_tables(rng, joint, 2)
        assert scl_loss(fv, fl, joint) == pytest.approx(scl_oracle(fv, fl, joint.matrix), rel=1e-10)


class TestAmfLossAndConstant:
    def test_exact_factorization_residual_zero(self):
        norm = normalize_cooccurrence(DIAG_HALF)
        assert amf_loss(np.eye(2), np.eye(2), norm) == pytest.approx(0.0, abs=1e-15)

    def test_zero_factors_leave_full_norm(self):
        norm = normalize_cooccurrence(UNIFORM_2X2)
        assert amf_loss(np.zeros((2, 1)), np.zeros((2, 1)), norm) == pytest.approx(
            equivalence_constant(norm), abs=1e-15
        )

    def test_identity_with_first_axis_factors(self):
        factor = np.array([[1.0], [0.0]])
        assert amf_loss(factor, factor, np.eye(2)) == pytest.approx(1.0, abs=1e-15)

    def test_uniform_constant_is_one(self):
        assert equivalence_constant(normalize_cooccurrence(UNIFORM_2X2)) == pytest.approx(1.0, abs=1e-12)

    def test_diag_constant_is_two(self):
        assert equivalence_constant(normalize_cooccurrence(DIAG_HALF)) == pytest.approx(2.0, abs=1e-12)

    def test_constant_equals_sum_of_squared_singular_values(self):
        rng = np.random.default_rng(8)
        norm = normalize_cooccurrence(JointDistribution(random_joint(rng, 7, 9)))
        sigma = np.linalg.svd(norm.matrix, compute_uv=False)
        assert equivalence_constant(norm) == pytest.approx(float(np.sum(sigma**2)), abs=1e-10)


class TestEquivalenceIdentity:
    """amf residual - contrastive loss - squared norm of the target is 0."""

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_identity_holds_for_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        joint = JointDistribution(random_joint(rng, 10, 10))
        norm = normalize_cooccurrence(joint)
        k = int(rng.integers(1, 5))
        fv, fl = random_tables(rng, joint, k)
        factor_v = EncoderTable(fv).factor(norm.marginal_visual)
        factor_l = EncoderTable(fl, side="language").factor(norm.marginal_language)
        lhs = amf_loss(factor_v, factor_l, norm)
        rhs = scl_loss(fv, fl, joint) + equivalence_constant(norm)
        assert abs(lhs - rhs) / (1.0 + abs(rhs)) < 1e-12

    def test_oracle_agreement_on_one_instance(self):
        rng = np.random.default_rng(123)
        joint = JointDistribution(random_joint(rng, 5, 4))
        norm = normalize_cooccurrence(joint)
        fv, fl = random_tables(rng, joint, 2)
        factor_v = fv * np.sqrt(norm.marginal_visual)[:, None]
        factor_l = fl * np.sqrt(norm.marginal_language)[:, None]
        assert amf_oracle(factor_v, factor_l, norm.matrix) == pytest.approx(
            scl_oracle(fv, fl, joint.matrix) + equivalence_constant(norm), rel=1e-10
        )


class TestUniSclLoss:
    def test_zero_encoder_gives_zero(self):
        induced = text_induced(UNIFORM_2X2)
        assert uni_scl_loss(np.zeros((2, 2)), induced) == 0.0

    def test_equals_bimodal_loss_on_symmetric_joint(self):
        rng = np.random.default_rng(4)
        raw = rng.gamma(2.0, size=(5, 5)) + 1e-9
        raw = (raw + raw.T) / 2.0
        sym = JointDistribution(raw / raw.sum())
        f = rng.standard_normal((5, 2))
        assert uni_scl_loss(f, sym.matrix, sym.marginal_visual) == pytest.approx(
            scl_loss(f, f, sym), rel=1e-12
        )

    def test_text_induced_diag_with_identity_features(self):
        induced = text_induced(DIAG_HALF)
        assert uni_scl_loss(np.eye(2), induced) == pytest.approx(-1.5, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        induced = text_induced(JointDistribution(random_joint(rng, 6, 6)))
        f = rng.standard_normal((induced.matrix.shape[0], 2))
        expected = uni_scl_oracle(f, induced.matrix, induced.marginal)
        assert uni_scl_loss(f, induced) == pytest.approx(expected, rel=1e-10)

    def test_symmetric_factorization_identity(self):
        """Loss plus squared norm of the normalized square equals the
        symmetric residual when features carry the sqrt-marginal scaling."""
        rng = np.random.default_rng(21)
        joint = JointDistribution(random_joint(rng, 6, 6))
        norm = normalize_cooccurrence(joint)
        from mmspectral import normalized_uni
        square = normalized_uni(norm)
        induced = text_induced(joint)
        f = rng.standard_normal((induced.matrix.shape[0], 3))
        factor = f * np.sqrt(induced.marginal)[:, None]
        lhs = uni_scl_loss(f, induced) + equivalence_constant(square.matrix)
        rhs = amf_loss(factor, factor, square.matrix)
        assert lhs == pytest.approx(rhs, rel=1e-9)


class TestSampleBatch:
    def test_smallest_batch_has_one_of_each(self):
        batch = sample_batch(UNIFORM_2X2, 3, seed=0)
        assert batch.num_positives == 1
        assert batch.neg_language.size == 1
        assert batch.neg_visual.size == 1

    def test_identical_seeds_identical_batches(self):
        a = sample_batch(UNIFORM_2X2, 12, seed=5)
        b = sample_batch(UNIFORM_2X2, 12, seed=5)
        assert np.array_equal(a.pos_visual, b.pos_visual)
        assert np.array_equal(a.permutation, b.permutation)
        assert np.array_equal(a.neg_visual, b.neg_visual)

    def test_identity_permutation_slices_by_draw_order(self):
        """Triple j takes draws 3j-2, 3j-1, 3j (1-based): positives from
        draws 1 and 4, negative texts from 2 and 5, negative images 3 and 6."""
        joint = JointDistribution([[0.05, 0.2], [0.3, 0.45]])
        n = 6
        rng = np.random.default_rng(17)
        cells = rng.choice(4, size=n, p=joint.matrix.ravel())
        v, l = cells // 2, cells % 2
        batch = sample_batch(joint, n, seed=17, permutation=np.arange(n))
        np.testing.assert_array_equal(batch.pos_visual, v[[0, 3]])
        np.testing.assert_array_equal(batch.pos_language, l[[0, 3]])
        np.testing.assert_array_equal(batch.neg_language, l[[1, 4]])
        np.testing.assert_array_equal(batch.neg_visual, v[[2, 5]])

    def test_rejects_non_multiple_of_three(self):
        with pytest.raises(InvalidBatchSize):
            sample_batch(UNIFORM_2X2, 4, seed=0)

    def test_rejects_bogus_permutation(self):
        with pytest.raises(InvalidSpec):
            sample_batch(UNIFORM_2X2, 3, seed=0, permutation=[0, 0, 2])


class TestEmpiricalScl:
    def test_zero_encoders_give_zero(self):
        batch = sample_batch(UNIFORM_2X2, 9, seed=1)
        assert empirical_scl(np.zeros((2, 2)), np.zeros((2, 2)), batch) == 0.0

    def test_single_aligned_triple_with_orthogonal_negatives(self):
        batch = Batch(pos_visual=[0], pos_language=[0], neg_language=[1],
                      neg_language_anchor=[0], neg_visual=[1], neg_visual_anchor=[0],
                      permutation=np.arange(3), n=3)
        assert empirical_scl(np.eye(2), np.eye(2), batch) == pytest.approx(-2.0, abs=1e-15)

    def test_batch_lists_cannot_outgrow_the_draw(self):
        with pytest.raises(InvalidSpec):
            Batch(pos_visual=[0, 1], pos_language=[0, 1], neg_language=[1],
                  neg_language_anchor=[0], neg_visual=[1], neg_visual_anchor=[0],
                  permutation=np.arange(3), n=3)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        joint = JointDistribution(random_joint(rng, 5, 5))
        fv, fl = random_tables(rng, joint, 2)
        batch = sample_batch(joint, 15, seed=seed)
        assert empirical_scl(fv, fl, batch) == pytest.approx(
            empirical_scl_oracle(fv, fl, batch), rel=1e-10
        )

    def test_mean_over_many_batches_approaches_population_loss(self):
        rng = np.random.default_rng(33)
        joint = JointDistribution(random_joint(rng, 4, 4))
        fv, fl = random_tables(rng, joint, 2)
        population = scl_loss(fv, fl, joint)
        values = [
            empirical_scl(fv, fl, sample_batch(joint, 30, seed=[33, i]))
            for i in range(2000)
        ]
        se = float(np.std(values, ddof=1)) / np.sqrt(len(values))
        assert abs(float(np.mean(values)) - population) <= 3.0 * se


class TestAnalyticGradients:
    @staticmethod
    def _central_difference(fn, args, index, h=1e-6):
        grads = []
        base = [np.array(a, dtype=float) for a in args]
        target = base[index]
        grad = np.zeros_like(target)
        for pos in np.ndindex(*target.shape):
            target[pos] += h
            up = fn(*base)
            target[pos] -= 2 * h
            down = fn(*base)
            target[pos] += h
            grad[pos] = (up - down) / (2 * h)
        return grad

    def test_population_gradients_match_finite_differences(self):
        rng = np.random.default_rng(12)
        joint = JointDistribution(random_joint(rng, 4, 5))
        fv, fl = random_tables(rng, joint, 2)
        _, gv, gl = scl_grad(fv, fl, joint)
        num_v = self._central_difference(lambda a, b: scl_loss(a, b, joint), (fv, fl), 0)
        num_l = self._central_difference(lambda a, b: scl_loss(a, b, joint), (fv, fl), 1)
        np.testing.assert_allclose(gv, num_v, atol=1e-6)
        np.testing.assert_allclose(gl, num_l, atol=1e-6)

    def test_uni_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        induced = text_induced(JointDistribution(random_joint(rng, 5, 5)))
        f = rng.standard_normal((induced.matrix.shape[0], 2))
        _, grad = uni_scl_grad(f, induced)
        numeric = self._central_difference(lambda a: uni_scl_loss(a, induced), (f,), 0)
        np.testing.assert_allclose(grad, numeric, atol=1e-6)

    def test_empirical_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        joint = JointDistribution(random_joint(rng, 4, 4))
        fv, fl = random_tables(rng, joint, 2)
        batch = sample_batch(joint, 12, seed=14)
        _, gv, gl = empirical_scl_grad(fv, fl, batch)
        num_v = self._central_difference(lambda a, b: empirical_scl(a, b, batch), (fv, fl), 0)
        num_l = self._central_difference(lambda a, b: empirical_scl(a, b, batch), (fv, fl), 1)
        np.testing.assert_allclose(gv, num_v, atol=1e-6)
        np.testing.assert_allclose(gl, num_l, atol=1e-6)
