import numpy as np
import pytest

from conftest import make_model

from uniunc import (
    EuMethod,
    InputWithUncertainty,
    ModelSpec,
    classify,
    combine_mc,
    combine_taylor,
    epistemic_passes,
    regress,
    sampling_softmax,
    softmax,
)
from uniunc.linalg import mean_and_variance
from uniunc.network import DenseParams
from uniunc.rng import RngStream
from uniunc.uncertainty import UncertaintyDecomposition


def linear_model(w, task="classification"):
    w = np.asarray(w, dtype=np.float64)
    spec = ModelSpec(layer_widths=(w.shape[1], w.shape[0]), task=task)
    return spec, (DenseParams(weight=w, bias=np.zeros(w.shape[0])),)


class TestInputWithUncertainty:
    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError, match="non-negative"):
            InputWithUncertainty(np.zeros(2), np.array([0.1, -0.1]))

    def test_from_sigma(self):
        inp = InputWithUncertainty.from_sigma(np.array([1.0, 2.0]), 0.5)
        np.testing.assert_array_equal(inp.var, [0.25, 0.25])


class TestEpistemicPasses:
    def test_none_gives_identical_outputs(self, stream):
        spec, params = make_model()
        outs = epistemic_passes(spec, params, np.array([0.2, -0.4]), 5, stream)
        assert outs.shape == (5, 2)
        assert np.all(outs == outs[0])

    def test_ensemble_one_output_per_member(self, stream):
        spec, params = make_model(EuMethod.ensemble(3))
        outs = epistemic_passes(spec, params, np.array([0.2, -0.4]), 3, stream)
        assert outs.shape == (3, 2)
        assert not np.allclose(outs[0], outs[1])
        assert not np.allclose(outs[1], outs[2])

    def test_dropout_outputs_generally_distinct(self, stream):
        spec, params = make_model(EuMethod.mc_dropout(0.2), widths=(2, 32, 32, 32, 2))
        outs = epistemic_passes(spec, params, np.array([0.5, 0.5]), 20, stream)
        assert np.unique(outs[:, 0]).size > 10

    def test_needs_two_passes(self, stream):
        spec, params = make_model()
        with pytest.raises(ValueError, match="at least 2"):
            epistemic_passes(spec, params, np.zeros(2), 1, stream)


class TestCombineTaylor:
    def test_linear_closed_form(self):
        w = np.array([[2.0, 0.5], [-1.0, 3.0]])
        spec, params = linear_model(w)
        var = np.array([0.3, 0.7])
        inp = InputWithUncertainty(np.array([0.1, -0.2]), var)
        decomp = combine_taylor(spec, params, inp, 2, RngStream(0))
        expected = np.diag(w @ np.diag(var) @ w.T)
        np.testing.assert_allclose(decomp.var_epi, expected, rtol=1e-12)
        np.testing.assert_array_equal(decomp.var_inp, np.zeros(2))
        assert decomp.forward_passes == 2

    def test_zero_input_variance(self, stream):
        spec, params = make_model(EuMethod.mc_dropout(0.2))
        inp = InputWithUncertainty(np.array([0.4, 0.1]), np.zeros(2))
        decomp = combine_taylor(spec, params, inp, 10, RngStream(7))
        np.testing.assert_array_equal(decomp.var_epi, np.zeros(2))
        # with zero variance, var_inp is exactly the disagreement of the
        # realized outputs; reuse the same stream to draw the same passes
        outs = epistemic_passes(spec, params, inp.mu, 10, RngStream(7))
        _, disagreement = mean_and_variance(outs)
        np.testing.assert_allclose(decomp.var_inp, disagreement, rtol=1e-12)

    def test_pass_count_per_method(self, stream, any_eu):
        spec, params = make_model(any_eu)
        m = 3 if any_eu.kind == "ensemble" else 6
        inp = InputWithUncertainty.from_sigma(np.array([0.3, 0.3]), 0.5)
        decomp = combine_taylor(spec, params, inp, m, stream)
        assert decomp.forward_passes == m

    def test_regression_aleatoric_head(self):
        spec, params = make_model(task="regression", widths=(1, 8, 8, 8, 2))
        inp = InputWithUncertainty(np.array([1.0]), np.array([0.04]))
        decomp = combine_taylor(spec, params, inp, 2, RngStream(1))
        assert decomp.var_ale is not None and decomp.var_ale.shape == (1,)
        assert decomp.var_ale[0] > 0.0
        assert decomp.mu_o.shape == (1,)

    def test_variances_nonnegative(self, stream, any_eu):
        spec, params = make_model(any_eu)
        for _ in range(5):
            x = stream.standard_normal(2) * 2
            inp = InputWithUncertainty.from_sigma(x, float(stream.random()))
            d = combine_taylor(spec, params, inp, 4, stream.child("t", stream.next_index()))
            assert np.all(d.var_inp >= 0) and np.all(d.var_epi >= 0)


class TestCombineMc:
    def test_linear_matches_taylor_closed_form(self):
        w = np.array([[2.0, 0.5], [-1.0, 3.0]])
        spec, params = linear_model(w)
        var = np.array([0.3, 0.7])
        inp = InputWithUncertainty(np.array([0.1, -0.2]), var)
        decomp = combine_mc(spec, params, inp, 100_000, 2, RngStream(3))
        expected = np.diag(w @ np.diag(var) @ w.T)
        np.testing.assert_allclose(decomp.var_inp, expected, rtol=0.03)
        np.testing.assert_array_equal(decomp.var_epi, np.zeros(2))
        assert decomp.forward_passes == 200_000

    def test_zero_input_variance_collapses(self):
        spec, params = make_model(EuMethod.mc_dropout(0.2))
        inp = InputWithUncertainty(np.array([0.4, 0.1]), np.zeros(2))
        decomp = combine_mc(spec, params, inp, 8, 10, RngStream(7))
        np.testing.assert_array_equal(decomp.var_inp, np.zeros(2))
        # all input samples coincide, so epistemic variance equals the plain
        # per-point disagreement (same realization stream as the Taylor path)
        taylor = combine_taylor(spec, params, inp, 10, RngStream(7))
        np.testing.assert_allclose(decomp.var_epi, taylor.var_inp, rtol=1e-12)

    def test_pass_count(self, stream, any_eu):
        spec, params = make_model(any_eu)
        m = 3 if any_eu.kind == "ensemble" else 5
        inp = InputWithUncertainty.from_sigma(np.array([0.1, 0.2]), 0.3)
        decomp = combine_mc(spec, params, inp, 7, m, stream)
        assert decomp.forward_passes == 7 * m

    def test_matches_per_sample_composition(self):
        # the batched implementation must equal the definitional loop:
        # instantiate the realizations once, then per input sample take
        # mean/variance over them
        spec, params = make_model(EuMethod.mc_dropout(0.3), widths=(2, 16, 16, 16, 2))
        inp = InputWithUncertainty(np.array([0.5, -0.5]), np.array([0.09, 0.04]))
        n, m = 6, 4
        decomp = combine_mc(spec, params, inp, n, m, RngStream(21))

        from uniunc.network import forward, sample_realization
        from uniunc.rng import gaussian

        rng = RngStream(21)
        xs = gaussian(rng.child("inputs"), inp.mu, inp.var, n)
        real_rng = rng.child("realizations")
        reals = [sample_realization(spec, real_rng) for _ in range(m)]
        per_mu, per_var = [], []
        for x in xs:
            outs = np.stack([forward(spec, params, r, x) for r in reals])
            mu_k, var_k = mean_and_variance(outs)
            per_mu.append(mu_k)
            per_var.append(var_k)
        mu_o, var_inp = mean_and_variance(np.stack(per_mu))
        np.testing.assert_allclose(decomp.mu_o, mu_o, rtol=1e-12)
        np.testing.assert_allclose(decomp.var_inp, var_inp, rtol=1e-12)
        np.testing.assert_allclose(decomp.var_epi, np.stack(per_var).mean(axis=0), rtol=1e-12)

    def test_regression_aleatoric_mean(self):
        spec, params = make_model(task="regression", widths=(1, 8, 8, 8, 2))
        inp = InputWithUncertainty(np.array([2.0]), np.array([0.25]))
        decomp = combine_mc(spec, params, inp, 16, 4, RngStream(2))
        assert decomp.var_ale.shape == (1,)
        assert decomp.var_ale[0] > 0

    def test_preconditions(self, stream):
        spec, params = make_model()
        inp = InputWithUncertainty.from_sigma(np.zeros(2), 0.1)
        with pytest.raises(ValueError, match="input samples"):
            combine_mc(spec, params, inp, 1, 4, stream)
        with pytest.raises(ValueError, match="at least 2 passes"):
            combine_mc(spec, params, inp, 4, 1, stream)


class TestSamplingSoftmax:
    def test_zero_variance_bit_equals_softmax(self):
        mu = np.array([1.3, -0.4, 0.2])
        for k in (1, 7, 100):
            out = sampling_softmax(mu, np.zeros(3), k, RngStream(0))
            np.testing.assert_array_equal(out, softmax(mu))

    def test_symmetric_logits_stay_balanced(self):
        out = sampling_softmax(np.zeros(2), np.array([2.0, 2.0]), 20_000, RngStream(4))
        assert abs(out[0] - 0.5) < 0.01
        assert abs(out.sum() - 1.0) < 1e-9

    def test_matches_gauss_hermite_quadrature(self):
        mu = np.array([2.0, 0.0])
        var = np.array([4.0, 4.0])
        nodes, weights = np.polynomial.hermite.hermgauss(80)
        total = 0.0
        for xj, wj in zip(nodes, weights):
            z0 = mu[0] + np.sqrt(2 * var[0]) * xj
            z1 = mu[1] + np.sqrt(2 * var[1]) * nodes
            p0 = 1.0 / (1.0 + np.exp(z1 - z0))
            total += wj * float((weights * p0).sum())
        oracle = total / np.pi
        mc = sampling_softmax(mu, var, 1_000_000, RngStream(9))
        assert mc[0] == pytest.approx(oracle, abs=1e-3)

    def test_on_simplex_for_random_inputs(self, stream):
        for _ in range(20):
            c = int(stream.integers(2, 6))
            mu = stream.standard_normal(c) * 5
            var = stream.random(c) * 10
            p = sampling_softmax(mu, var, 50, stream.child("d", stream.next_index()))
            assert abs(p.sum() - 1.0) < 1e-9
            assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_rejects_bad_inputs(self, stream):
        with pytest.raises(ValueError, match="non-negative"):
            sampling_softmax(np.zeros(2), np.array([-1.0, 1.0]), 10, stream)
        with pytest.raises(ValueError, match="at least 1"):
            sampling_softmax(np.zeros(2), np.ones(2), 0, stream)
        with pytest.raises(ValueError, match="same length"):
            sampling_softmax(np.zeros(2), np.ones(3), 10, stream)


def _decomp(task="classification", **kw):
    defaults = dict(
        mu_o=np.array([2.0, 0.0]),
        var_inp=np.zeros(2),
        var_epi=np.zeros(2),
        var_ale=None,
        forward_passes=2,
    )
    defaults.update(kw)
    return UncertaintyDecomposition(task=task, **defaults)


class TestClassify:
    def test_zero_variances_collapse_to_softmax(self):
        probs = classify(_decomp(), k=50, rng=RngStream(1))
        np.testing.assert_array_equal(probs.p_ale, probs.p_inp)
        np.testing.assert_array_equal(probs.p_ale, probs.p_epi)
        np.testing.assert_array_equal(probs.p_ale, softmax(np.array([2.0, 0.0])))

    def test_outputs_on_simplex(self, stream):
        d = _decomp(var_inp=np.array([0.5, 2.0]), var_epi=np.array([4.0, 1.0]))
        probs = classify(d, k=200, rng=stream)
        for p in (probs.p_ale, probs.p_inp, probs.p_epi):
            assert abs(p.sum() - 1.0) < 1e-9

    def test_entropy_grows_with_epistemic_scale(self):
        def entropy(p):
            return -float((p * np.log(p)).sum())

        base = np.array([1.0, 1.0])
        entropies = []
        for scale in (0.0, 1.0, 4.0, 16.0):
            d = _decomp(var_epi=scale * base)
            probs = classify(d, k=100_000, rng=RngStream(12))
            entropies.append(entropy(probs.p_epi))
        assert all(b >= a for a, b in zip(entropies, entropies[1:]))
        assert entropies[-1] > entropies[0]

    def test_wrong_task_rejected(self):
        d = _decomp(
            task="regression",
            mu_o=np.array([1.0]),
            var_inp=np.zeros(1),
            var_epi=np.zeros(1),
            var_ale=np.zeros(1),
        )
        with pytest.raises(ValueError, match="classification"):
            classify(d)


class TestRegress:
    def test_total_is_sum_of_parts(self):
        d = _decomp(
            task="regression",
            mu_o=np.array([3.0]),
            var_ale=np.array([1.0]),
            var_inp=np.array([2.0]),
            var_epi=np.array([3.0]),
        )
        pred = regress(d)
        assert pred.var_total == 6.0
        assert pred.mean == 3.0

    def test_all_zero_variances(self):
        d = _decomp(
            task="regression",
            mu_o=np.array([0.5]),
            var_ale=np.zeros(1),
            var_inp=np.zeros(1),
            var_epi=np.zeros(1),
        )
        assert regress(d).var_total == 0.0

    def test_wrong_task_rejected(self):
        with pytest.raises(ValueError, match="regression"):
            regress(_decomp())
