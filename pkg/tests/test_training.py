"""Forward pass, exact gradients vs. finite differences, AdamW, and the
training loop."""

import math

import numpy as np
import pytest

from fgpan.data import (
    ClassPrototype,
    PatchEmbedding,
    PrototypeSet,
    SlideRecord,
    SyntheticConfig,
    gen_synthetic,
)
from fgpan.params import grad_zeros, init_params
from fgpan.training import (
    TrainConfig,
    _central_difference,
    adamw_step,
    desk_profile,
    finite_diff_check,
    forward_slide,
    grad_total_loss,
    paper_profile,
    random_instance,
    total_loss,
    train,
)


def tiny_corpus(classes=2, sigma=0.0, rho=1.0, m=9, d=8, seed=1, slides_per_class=2):
    cfg = SyntheticConfig(
        classes=classes, slides_per_class=slides_per_class, patches_per_slide=m,
        dim=d, signal_fraction=rho, noise_sigma=sigma, grid_rows=4, grid_cols=4,
        seed=seed,
    )
    return gen_synthetic(cfg)


class TestForward:
    def test_identity_pipeline_noise_free_is_confident(self):
        """sigma=0, rho=1, C=2: raw patches sit exactly on the prototype, so
        the cosine margin is 1 and softmax at tau=0.07 leaves less than 1e-6
        probability elsewhere."""
        slides, pset = tiny_corpus(classes=2)
        params = init_params(8, 2, 2, seed=0)
        for s in slides:
            _, pred = forward_slide(s, params, pset, lwa_gff=False)
            assert pred.predicted == s.label
            assert pred.P[s.label] > 1.0 - 1e-6

    def test_forward_is_pure(self):
        slides, pset = tiny_corpus(sigma=0.2, rho=0.6)
        params = init_params(8, 2, 2, seed=3)
        _, a = forward_slide(slides[0], params, pset)
        _, b = forward_slide(slides[0], params, pset)
        np.testing.assert_array_equal(a.P, b.P)
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_single_patch_slide(self):
        slides, pset = tiny_corpus(m=1)
        params = init_params(8, 2, 2, seed=0)
        patch_preds, pred = forward_slide(slides[0], params, pset)
        np.testing.assert_array_equal(pred.alpha, [1.0])
        np.testing.assert_allclose(pred.P, patch_preds[0].probs, atol=1e-15)

    def test_fresh_params_give_uniform_alpha(self):
        slides, pset = tiny_corpus(m=9, sigma=0.3, rho=0.5)
        params = init_params(8, 2, 2, seed=5)
        _, pred = forward_slide(slides[0], params, pset)
        np.testing.assert_allclose(pred.alpha, 1.0 / 9.0, atol=1e-15)

    def test_prototype_rescale_is_invisible(self):
        """Scaling all prototype embeddings then re-normalizing changes nothing."""
        from fgpan.prototypes import normalize_prototypes

        slides, pset = tiny_corpus(sigma=0.2, rho=0.6)
        scaled = PrototypeSet(
            pset.dim,
            [
                ClassPrototype(p.class_id, p.name, p.description, 5.0 * p.embedding)
                for p in pset.prototypes
            ],
        )
        params = init_params(8, 2, 2, seed=1)
        _, a = forward_slide(slides[0], params, pset)
        _, b = forward_slide(slides[0], params, normalize_prototypes(scaled))
        np.testing.assert_allclose(b.P, a.P, atol=1e-12)


class TestTotalLoss:
    def test_lambda_zero_is_patch_ce_only(self):
        """With the refinement off, the total loss at lambda=0 must equal an
        independently coded prototype-cosine cross entropy."""
        slides, pset = tiny_corpus(sigma=0.3, rho=0.5, m=8)
        params = init_params(8, 2, 2, seed=2)
        got = total_loss(slides, params, pset, 0.0, lwa_gff=False)

        # independent reference: cosine -> softmax(s/tau) -> mean -ln p_y
        t = pset.matrix()
        tau = params.temp.tau
        ref_total = 0.0
        for s in slides:
            f = s.matrix()
            cos = (f / np.linalg.norm(f, axis=1, keepdims=True)) @ t.T
            z = cos / tau
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
            ref_total += float(-np.log(p[:, s.label]).mean())
        assert abs(got - ref_total / len(slides)) < 1e-12

    def test_confident_limit_is_zero(self):
        """tau -> 0 with exact prototypes drives both CE terms to exactly 0."""
        slides, pset = tiny_corpus(classes=2)
        params = init_params(8, 2, 2, seed=0, tau0=1e-3)
        assert total_loss(slides, params, pset, 1.0, lwa_gff=False) == 0.0

    def test_linear_in_lambda(self):
        slides, pset = tiny_corpus(sigma=0.2, rho=0.6)
        params = init_params(8, 2, 2, seed=4)
        l0 = total_loss(slides, params, pset, 0.0)
        l1 = total_loss(slides, params, pset, 1.0)
        l2 = total_loss(slides, params, pset, 2.0)
        assert abs((l2 - l1) - (l1 - l0)) < 1e-12

    def test_non_negative(self):
        for seed in range(5):
            slides, pset, params = random_instance(seed)
            assert total_loss(slides, params, pset, 1.0) >= 0.0

    def test_unlabeled_slide_rejected(self):
        slides, pset = tiny_corpus()
        bare = SlideRecord(
            "u", None, slides[0].dim, slides[0].patches,
            slides[0].grid_rows, slides[0].grid_cols,
        )
        params = init_params(8, 2, 2, seed=0)
        with pytest.raises(ValueError, match="unlabeled"):
            total_loss([bare], params, pset, 1.0)


class TestGradients:
    def test_matches_finite_differences(self):
        slides, pset, params = random_instance(0)
        assert finite_diff_check(slides, params, pset, 1.0, 1e-4) <= 1e-5

    def test_matches_finite_differences_learned_table(self):
        slides, pset, params = random_instance(1, pos_mode="learned_table")
        assert finite_diff_check(slides, params, pset, 1.0, 1e-4) <= 1e-5

    @pytest.mark.parametrize("pos_mode", ["sinusoidal", "learned_table"])
    def test_matches_finite_differences_at_randomized_point(self, pos_mode):
        """Randomized parameters put nonzero flow through paths that are
        gradient-dead at fresh init (gates, aggregation w, learned table).

        At step 1e-4 the central-difference oracle resolves roughly 1e-12
        absolute on an O(1) loss, so components whose true gradient sits
        near zero cannot meet a relative bound; accept absolute agreement
        at the oracle's noise floor for those.
        """
        from fgpan.params import flatten_grads
        from fgpan.training import _central_difference, grad_total_loss, total_loss

        slides, pset, params = random_instance(
            4, pos_mode=pos_mode, randomize_params=True
        )
        analytic = flatten_grads(grad_total_loss(slides, params, pset, 1.0), params)
        base = params.flatten()

        def loss_at(vec):
            return total_loss(slides, params.with_flat(vec), pset, 1.0)

        for i in range(base.size):
            numeric = _central_difference(loss_at, base, i, 1e-4)
            a = analytic[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            assert rel <= 1e-5 or abs(a - numeric) <= 1e-10, (
                f"coordinate {i}: analytic {a:.6e}, numeric {numeric:.6e}"
            )

    def test_deterministic(self):
        slides, pset, params = random_instance(2)
        a = grad_total_loss(slides, params, pset, 1.0)
        b = grad_total_loss(slides, params, pset, 1.0)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_unused_table_rows_get_zero_gradient(self):
        """Learned-table rows for grid cells no patch occupies never move."""
        slides, pset, params = random_instance(3, pos_mode="learned_table")
        grads = grad_total_loss(slides, params, pset, 1.0)
        used = set()
        for s in slides:
            for r, c in s.coords():
                used.add(int(r) * 4 + int(c))
        unused = [i for i in range(16) if i not in used]
        assert unused, "fixture should leave some grid cells empty"
        np.testing.assert_array_equal(grads["agg.table"][unused], 0.0)

    def test_ablation_off_freezes_refinement_params(self):
        slides, pset, params = random_instance(4)
        grads = grad_total_loss(slides, params, pset, 1.0, lwa_gff=False)
        for name, g in grads.items():
            if name.startswith(("lwa.", "gates.", "fusion.")):
                np.testing.assert_array_equal(g, 0.0)
        assert np.any(grads["agg.w"] != 0.0) or np.any(grads["temp.log_tau"] != 0.0)

    def test_central_difference_on_quadratic(self):
        """The checker's own stencil: d/dx x^2 at 1 is 2 to high accuracy."""

        def f(vec):
            return float(vec[0] ** 2)

        got = _central_difference(f, np.array([1.0]), 0, 1e-4)
        assert abs(got - 2.0) < 1e-7

    def test_zero_step_rejected(self):
        slides, pset, params = random_instance(5)
        with pytest.raises(ValueError, match="positive"):
            finite_diff_check(slides, params, pset, 1.0, 0.0)


class TestAdamW:
    def test_zero_learning_rate_is_identity(self):
        slides, pset, params = random_instance(6)
        grads = grad_total_loss(slides, params, pset, 1.0)
        cfg = TrainConfig(learning_rate=0.0, weight_decay=0.1)
        new, _ = adamw_step(params, grads, None, cfg)
        np.testing.assert_array_equal(new.flatten(), params.flatten())

    def test_first_step_hand_value(self):
        """theta=0, g=1, wd=0, lr=0.01: bias correction makes m_hat=v_hat=1,
        so theta' = -0.01 / (1 + eps)."""
        params = init_params(2, 1, 1, seed=0)
        grads = grad_zeros(params)
        for name in grads:
            grads[name][:] = 1.0
        base = params.with_flat(np.zeros(params.n_scalars))
        cfg = TrainConfig(learning_rate=0.01, weight_decay=0.0)
        new, state = adamw_step(base, grads, None, cfg)
        want = -0.01 / (1.0 + 1e-8)
        np.testing.assert_allclose(new.flatten(), want, rtol=1e-9)
        assert state["step"] == 1

    def test_pure_decay(self):
        """Zero gradient: decayed leaves shrink by (1 - lr*wd), exempt leaves
        (log_tau, b_g, b_f) stay exactly put."""
        params = init_params(4, 2, 1, seed=3)
        vec = params.flatten()
        vec[:] = np.linspace(0.5, 1.5, vec.size)
        params = params.with_flat(vec)
        grads = grad_zeros(params)
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.5)
        new, _ = adamw_step(params, grads, None, cfg)
        mask = params.decay_mask()
        np.testing.assert_allclose(new.flatten()[mask], vec[mask] * (1 - 0.1 * 0.5), rtol=1e-12)
        np.testing.assert_array_equal(new.flatten()[~mask], vec[~mask])


class TestTrain:
    def test_seed_determinism(self):
        slides, pset = tiny_corpus(classes=3, sigma=0.1, rho=0.6, m=8,
                                   slides_per_class=3)
        cfg = desk_profile(iterations=20, seed=11)
        p1, t1 = train(slides, cfg, pset)
        p2, t2 = train(slides, cfg, pset)
        assert t1 == t2
        np.testing.assert_array_equal(p1.flatten(), p2.flatten())

    def test_loss_decreases_on_synthetic(self):
        slides, pset = tiny_corpus(classes=4, sigma=0.05, rho=0.6, m=16, d=16,
                                   slides_per_class=3, seed=2)
        cfg = desk_profile(iterations=200, seed=0)
        _, losses = train(slides, cfg, pset)
        assert losses[-1] < losses[0]

    def test_zero_learning_rate_flat_trajectory(self):
        slides, pset = tiny_corpus(classes=2, sigma=0.1, rho=0.8, m=6,
                                   slides_per_class=2)
        cfg = TrainConfig(learning_rate=0.0, iterations=10, batch_size=8, seed=0)
        _, losses = train(slides, cfg, pset)
        assert max(losses) == min(losses)

    def test_empty_dataset_rejected(self):
        _, pset = tiny_corpus()
        with pytest.raises(ValueError, match="empty"):
            train([], desk_profile(), pset)

    def test_label_outside_prototypes_rejected(self):
        slides, pset = tiny_corpus(classes=3)
        two = PrototypeSet(pset.dim, pset.prototypes[:2])
        cfg = desk_profile(iterations=1)
        with pytest.raises(ValueError, match="outside prototype set"):
            train(slides, cfg, two)

    def test_profiles(self):
        desk = desk_profile()
        assert (desk.learning_rate, desk.iterations) == (1e-3, 300)
        paper = paper_profile()
        assert (paper.learning_rate, paper.weight_decay) == (1e-5, 1e-4)
        assert (paper.batch_size, paper.iterations) == (4, 20000)
