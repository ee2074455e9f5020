import math

import numpy as np
import pytest

from dualproto.core import entropy_rows, softmax
from dualproto.errors import DimMismatch
from dualproto.inference import (
    affinity,
    affinity_grad,
    aggregate_views,
    predict,
    proto_logits,
    selection_count,
    view_probs,
)

from conftest import unit_rows


class TestAffinity:
    def test_at_one_equals_alpha(self):
        assert affinity(1.0, 6.0, 5.0) == pytest.approx(6.0, abs=1e-15)

    def test_at_zero_closed_form(self):
        assert affinity(0.0, 6.0, 5.0) == pytest.approx(6.0 * math.exp(-5.0), rel=1e-15)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = float(rng.uniform(0.1, 10.0))
            b = float(rng.uniform(0.1, 10.0))
            assert affinity(0.8, a, b) > affinity(0.5, a, b)

    def test_grad_is_beta_scaled(self):
        x = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(affinity_grad(x, 6.0, 5.0), 5.0 * affinity(x, 6.0, 5.0))


class TestProtoLogits:
    def test_self_similarity(self):
        f = np.array([1.0, 0.0])
        t = np.stack([f, [0.0, 1.0]])
        logits = proto_logits(f, t, t, np.array([True, True]), 6.0, 5.0)
        assert logits[0] == pytest.approx(7.0, abs=1e-12)

    def test_masked_class_is_textual_only(self):
        rng = np.random.default_rng(1)
        f = unit_rows(rng, 1, 8)[0]
        t, v = unit_rows(rng, 4, 8), unit_rows(rng, 4, 8)
        mask = np.array([True, False, True, False])
        logits = proto_logits(f, t, v, mask, 6.0, 5.0)
        textual_only = t @ f
        assert logits[1] == textual_only[1]  # exactly, no affinity term
        assert logits[3] == textual_only[3]
        assert logits[0] > textual_only[0]  # live class has positive affinity

    def test_alpha_zero_reduces_to_textual(self):
        rng = np.random.default_rng(2)
        f = unit_rows(rng, 1, 8)[0]
        t, v = unit_rows(rng, 4, 8), unit_rows(rng, 4, 8)
        logits = proto_logits(f, t, v, np.ones(4, bool), 0.0, 5.0)
        np.testing.assert_allclose(logits, t @ f, atol=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            proto_logits(np.ones(3), np.eye(4), np.eye(4), None, 1.0, 1.0)


class TestPredict:
    def test_equal_logits_uniform(self):
        f = np.array([1.0, 0.0])
        t = np.stack([f, f, f])
        p = predict(f, t, t, np.ones(3, bool), 2.0, 3.0, 0.5)
        np.testing.assert_allclose(p, np.full(3, 1 / 3), atol=1e-15)

    def test_two_class_closed_form(self):
        # logits [7, 1]: both classes at textual similarity 1, affinity
        # A(1) = alpha only on the unmasked first class
        f = np.array([1.0, 0.0])
        t = np.stack([f, f])
        mask = np.array([True, False])
        p = predict(f, t, t, mask, 6.0, 5.0, 1.0)
        expected = math.exp(6.0) / (math.exp(6.0) + 1.0)
        np.testing.assert_allclose(p, [expected, 1.0 - expected], rtol=1e-12)

    def test_argmax_temperature_invariant(self):
        rng = np.random.default_rng(3)
        f = unit_rows(rng, 1, 16)[0]
        t, v = unit_rows(rng, 6, 16), unit_rows(rng, 6, 16)
        mask = np.ones(6, bool)
        picks = {
            int(np.argmax(predict(f, t, v, mask, 6.0, 5.0, temp)))
            for temp in (0.01, 0.1, 1.0, 10.0)
        }
        assert len(picks) == 1

    def test_cold_start_equals_zero_shot(self):
        rng = np.random.default_rng(4)
        f = unit_rows(rng, 1, 16)[0]
        t = unit_rows(rng, 6, 16)
        v = unit_rows(rng, 6, 16)  # arbitrary contents behind an all-empty mask
        p = predict(f, t, v, np.zeros(6, bool), 123.0, 5.0, 0.07)
        np.testing.assert_array_equal(p, softmax(t @ f, 0.07))


class TestViewProbs:
    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        views = unit_rows(rng, 9, 12)
        t, v = unit_rows(rng, 5, 12), unit_rows(rng, 5, 12)
        mask = rng.random(5) < 0.5
        batch = view_probs(views, t, v, mask, 6.0, 5.0, 0.3)
        for i in range(9):
            np.testing.assert_allclose(
                batch[i], predict(views[i], t, v, mask, 6.0, 5.0, 0.3), atol=1e-12
            )


class TestAggregateViews:
    def test_single_view(self):
        p = np.array([[0.2, 0.8]])
        agg = aggregate_views(p, 0.1)
        np.testing.assert_array_equal(agg.mean_probs, p[0])
        assert agg.selected.tolist() == [0]

    def test_sixty_four_views_select_six(self):
        assert selection_count(64, 0.1) == 6
        rng = np.random.default_rng(6)
        p = rng.dirichlet(np.ones(5), size=64)
        assert len(aggregate_views(p, 0.1).selected) == 6

    def test_floor_fuzz(self):
        assert selection_count(10, 0.3) == 3
        assert selection_count(8, 0.4) == 3
        assert selection_count(8, 0.1) == 1

    def test_identical_views_mean_is_view(self):
        p = np.tile(np.array([[0.1, 0.6, 0.3]]), (7, 1))
        agg = aggregate_views(p, 0.5)
        np.testing.assert_allclose(agg.mean_probs, p[0], atol=1e-15)
        assert agg.selected.tolist() == [0, 1, 2]  # ties keep earlier views

    def test_matches_brute_force_selection(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 20))
            c = int(rng.integers(2, 8))
            rho = float(rng.uniform(0.05, 1.0))
            p = rng.dirichlet(np.ones(c) * rng.uniform(0.2, 2.0), size=n)
            agg = aggregate_views(p, rho)
            ent = entropy_rows(p)
            k = max(1, int(np.floor(rho * n + 1e-9)))
            brute = sorted(range(n), key=lambda i: (ent[i], i))[:k]
            assert agg.selected.tolist() == sorted(brute)
            np.testing.assert_allclose(agg.mean_probs, p[sorted(brute)].mean(axis=0))
            assert agg.threshold == pytest.approx(max(ent[i] for i in brute))

    def test_rho_bounds(self):
        with pytest.raises(ValueError):
            aggregate_views(np.array([[0.5, 0.5]]), 0.0)


class TestLogitSmoothness:
    def test_directional_derivatives(self):
        rng = np.random.default_rng(8)
        f = unit_rows(rng, 1, 10)[0]
        t, v = unit_rows(rng, 4, 10), unit_rows(rng, 4, 10)
        mask = np.ones(4, bool)
        h = 1e-6
        for c in range(4):
            u = unit_rows(rng, 1, 10)[0]
            # textual side is linear: derivative is exactly f.u
            tp, tm = t.copy(), t.copy()
            tp[c] += h * u
            tm[c] -= h * u
            fd = (
                proto_logits(f, tp, v, mask, 6.0, 5.0)[c]
                - proto_logits(f, tm, v, mask, 6.0, 5.0)[c]
            ) / (2 * h)
            assert fd == pytest.approx(float(f @ u), rel=1e-6)
            # visual side follows the affinity slope
            vp, vm = v.copy(), v.copy()
            vp[c] += h * u
            vm[c] -= h * u
            fd = (
                proto_logits(f, t, vp, mask, 6.0, 5.0)[c]
                - proto_logits(f, t, vm, mask, 6.0, 5.0)[c]
            ) / (2 * h)
            analytic = float(affinity_grad(f @ v[c], 6.0, 5.0) * (f @ u))
            assert fd == pytest.approx(analytic, rel=1e-6)
