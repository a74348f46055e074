import math

import numpy as np
import pytest

from busca.core import BBox, Observation
from busca.model import (
    DecisionModel,
    ModelConfig,
    Outcome,
    Role,
    assemble,
    backward_batch,
    batch_loss_and_grad,
    forward,
    forward_batch,
    init_model,
    loss,
    loss_and_grad,
    pack_batch,
    param_names,
    param_shape,
    smoothed_targets,
)
from busca.proposals import Proposal, ProposalKind
from busca.ste import Anchor, SteConfig, embed_project, interplay_map, saturated_interplay
from helpers import flat_appearance, miss_forcing_model, tiny_config, zeroed_model

CFG = tiny_config()
STE_CFG = SteConfig(d_model=CFG.d_model)


def unit_vec(rng, f=CFG.feature_dim):
    v = rng.normal(size=f)
    return (v / np.linalg.norm(v)).astype(np.float32)


def make_window(n=3, seed=0, t_last=10, appearance=None):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        app = appearance if appearance is not None else unit_vec(rng)
        out.append(
            Observation(
                BBox(50.0 + 2.0 * i, 40.0, 10.0, 20.0),
                t=t_last - n + 1 + i,
                appearance=app,
            )
        )
    return out


def with_seps(bodies):
    out = []
    for p in bodies:
        out.append(p)
        out.append(Proposal(ProposalKind.SEP, p.bbox, p.t))
    return out


def full_proposals(frame=11, seed=1, appearance=None):
    rng = np.random.default_rng(seed)

    def app():
        return appearance if appearance is not None else unit_vec(rng)

    bodies = [
        Proposal(ProposalKind.CANDIDATE, BBox(60.0, 40.0, 10.0, 20.0), frame, app()),
        Proposal(ProposalKind.CONTEXTUAL, BBox(70.0, 42.0, 11.0, 21.0), frame, app()),
        Proposal(ProposalKind.CONTEXTUAL, BBox(40.0, 39.0, 9.0, 18.0), frame, app()),
        Proposal(ProposalKind.MISS, BBox(58.0, 40.0, 10.0, 20.0), frame - 1),
        Proposal(ProposalKind.HALLUC, BBox(58.0, 40.0, 10.0, 20.0), frame - 1),
    ]
    return with_seps(bodies)


def make_seq(model, window_n=3, seed=0, use_ste=True):
    window = make_window(window_n, seed=seed)
    anchor = Anchor(window[-1].bbox, window[-1].t)
    return assemble(window, full_proposals(seed=seed + 1), anchor, model, STE_CFG, use_ste)


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=10, n_heads=3)

    def test_nonpositive_dimension_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            tiny_config(n_layers=0)

    def test_dropout_range(self):
        with pytest.raises(ValueError, match="dropout"):
            tiny_config(dropout=1.0)

    def test_label_smoothing_range(self):
        with pytest.raises(ValueError, match="label_smoothing"):
            tiny_config(label_smoothing=-0.1)


class TestInit:
    def test_every_declared_parameter_exists_with_its_shape(self):
        model = init_model(CFG, seed=1)
        names = param_names(CFG)
        assert sorted(model.params) == sorted(names)
        for name in names:
            assert model.params[name].shape == param_shape(name, CFG)
            assert model.params[name].dtype == np.float32

    def test_gains_one_biases_zero(self):
        model = init_model(CFG, seed=1)
        np.testing.assert_array_equal(model.params["layer0.ln1.g"], 1.0)
        np.testing.assert_array_equal(model.params["layer0.attn.bq"], 0.0)
        np.testing.assert_array_equal(model.params["head.b1"], 0.0)

    def test_learned_tokens_are_random(self):
        model = init_model(CFG, seed=1)
        assert np.any(model.params["tok.miss"] != 0.0)

    def test_seed_determinism(self):
        a = init_model(CFG, seed=7)
        b = init_model(CFG, seed=7)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_dtype_request(self):
        assert init_model(CFG, seed=0, dtype=np.float64).dtype == np.float64


class TestAssemble:
    def test_roles_and_scoreable_indices(self):
        model = init_model(CFG, seed=0)
        seq = make_seq(model)
        assert seq.n_tokens == 3 + 10
        assert list(seq.roles[:3]) == [Role.TRACK_OBS] * 3
        # candidate, ctx, ctx, miss, halluc at even proposal offsets
        assert list(seq.scoreable) == [3, 5, 7, 9, 11]
        assert [Role(seq.roles[i]) for i in seq.scoreable] == [
            Role.CANDIDATE,
            Role.CONTEXTUAL,
            Role.CONTEXTUAL,
            Role.MISS,
            Role.HALLUC,
        ]

    def test_learned_token_rows_are_zero_appearance(self):
        model = init_model(CFG, seed=0)
        seq = make_seq(model)
        np.testing.assert_array_equal(seq.appearances[9], 0.0)  # miss
        np.testing.assert_array_equal(seq.appearances[11], 0.0)  # halluc

    def test_ste_rows_match_encoder(self):
        model = init_model(CFG, seed=0)
        window = make_window()
        anchor = Anchor(window[-1].bbox, window[-1].t)
        props = full_proposals()
        seq = assemble(window, props, anchor, model, STE_CFG)
        want = embed_project(
            interplay_map(window[0].bbox, window[0].t, anchor, STE_CFG), CFG.d_model
        )
        np.testing.assert_array_equal(seq.ste[0], want)
        halluc_row = 3 + 8
        want = embed_project(saturated_interplay(STE_CFG), CFG.d_model)
        np.testing.assert_array_equal(seq.ste[halluc_row], want)

    def test_use_ste_false_zeroes_encoding(self):
        model = init_model(CFG, seed=0)
        seq = make_seq(model, use_ste=False)
        np.testing.assert_array_equal(seq.ste, 0.0)

    def test_empty_window_rejected(self):
        model = init_model(CFG, seed=0)
        with pytest.raises(ValueError, match="empty"):
            assemble([], full_proposals(), Anchor(BBox(1, 1, 1, 1), 0), model, STE_CFG)

    def test_encoding_width_mismatch_rejected(self):
        model = init_model(CFG, seed=0)
        window = make_window()
        with pytest.raises(ValueError, match="width"):
            assemble(
                window,
                full_proposals(),
                Anchor(window[-1].bbox, window[-1].t),
                model,
                SteConfig(d_model=16),
            )

    def test_missing_appearance_rejected(self):
        model = init_model(CFG, seed=0)
        window = make_window()
        window[1] = Observation(window[1].bbox, window[1].t, appearance=None)
        with pytest.raises(ValueError, match="no appearance"):
            assemble(window, full_proposals(), Anchor(window[-1].bbox, window[-1].t), model, STE_CFG)

    def test_wrong_appearance_dim_rejected(self):
        model = init_model(CFG, seed=0)
        window = make_window()
        bad = np.ones(CFG.feature_dim + 1, dtype=np.float32)
        props = full_proposals()
        props[0] = Proposal(ProposalKind.CANDIDATE, props[0].bbox, props[0].t, bad)
        with pytest.raises(ValueError, match="dim"):
            assemble(window, props, Anchor(window[-1].bbox, window[-1].t), model, STE_CFG)

    def test_learned_token_with_appearance_rejected(self):
        model = init_model(CFG, seed=0)
        window = make_window()
        props = full_proposals()
        props[6] = Proposal(
            ProposalKind.MISS, props[6].bbox, props[6].t, np.ones(CFG.feature_dim, np.float32)
        )
        with pytest.raises(ValueError, match="must not carry"):
            assemble(window, props, Anchor(window[-1].bbox, window[-1].t), model, STE_CFG)

    def test_no_scoreable_tokens_rejected(self):
        model = init_model(CFG, seed=0)
        window = make_window()
        with pytest.raises(ValueError, match="scoreable"):
            assemble(window, [], Anchor(window[-1].bbox, window[-1].t), model, STE_CFG)


class TestPackBatch:
    def test_padding_and_masks(self):
        model = init_model(CFG, seed=0)
        s1 = make_seq(model, window_n=3)
        s2 = make_seq(model, window_n=5, seed=4)
        apps, stes, roles, key_mask, score_idx = pack_batch([s1, s2], CFG)
        t_max = s2.n_tokens
        assert apps.shape == (2, t_max, CFG.feature_dim)
        assert key_mask[0].sum() == s1.n_tokens
        assert key_mask[1].all()
        np.testing.assert_array_equal(apps[0, s1.n_tokens :], 0.0)
        assert (roles[0, s1.n_tokens :] == -1).all()
        np.testing.assert_array_equal(score_idx[0], s1.scoreable)


class TestForward:
    def test_probabilities_normalize(self):
        model = init_model(CFG, seed=2)
        dec = forward(make_seq(model), model)
        assert dec.probabilities.shape == (5,)
        assert dec.probabilities.sum() == pytest.approx(1.0, abs=1e-9)
        assert (dec.probabilities >= 0).all()

    def test_zeroed_model_is_uniform_and_accepts(self):
        model = zeroed_model(CFG)
        dec = forward(make_seq(model), model)
        np.testing.assert_allclose(dec.probabilities, 0.2, atol=1e-7)
        assert dec.argmax == 0
        assert dec.kinds[0] == Role.CANDIDATE
        assert dec.outcome is Outcome.UPDATE_WITH_CANDIDATE

    def test_miss_forcing_model_pauses(self):
        model = miss_forcing_model()
        window = make_window(appearance=flat_appearance())
        anchor = Anchor(window[-1].bbox, window[-1].t)
        props = full_proposals(appearance=flat_appearance())
        seq = assemble(window, props, anchor, model, STE_CFG, use_ste=False)
        dec = forward(seq, model)
        assert dec.kinds[dec.argmax] == Role.MISS
        assert dec.outcome is Outcome.PAUSE

    def test_padding_does_not_change_logits(self):
        model = init_model(CFG, seed=3, dtype=np.float64)
        s1 = make_seq(model, window_n=3)
        s2 = make_seq(model, window_n=6, seed=9)
        batch1 = pack_batch([s1], CFG)
        batch2 = pack_batch([s1, s2], CFG)
        solo, _ = forward_batch(model, *batch1)
        pair, _ = forward_batch(model, *batch2)
        np.testing.assert_allclose(pair[0, : s1.n_scoreable], solo[0], atol=1e-12)

    def test_proposal_order_equivariance(self):
        model = init_model(CFG, seed=3, dtype=np.float64)
        window = make_window()
        anchor = Anchor(window[-1].bbox, window[-1].t)
        bodies = full_proposals()[0::2]
        swapped = [bodies[0], bodies[2], bodies[1], bodies[3], bodies[4]]
        seq_a = assemble(window, with_seps(bodies), anchor, model, STE_CFG)
        seq_b = assemble(window, with_seps(swapped), anchor, model, STE_CFG)
        pa = forward(seq_a, model).probabilities
        pb = forward(seq_b, model).probabilities
        np.testing.assert_allclose(pb, pa[[0, 2, 1, 3, 4]], atol=1e-9)

    def test_dropout_needs_rng_in_train_mode(self):
        model = init_model(tiny_config(dropout=0.5), seed=0)
        batch = pack_batch([make_seq(model)], model.config)
        with pytest.raises(ValueError, match="rng"):
            forward_batch(model, *batch, train_mode=True)

    def test_dropout_changes_training_logits_deterministically(self):
        model = init_model(tiny_config(dropout=0.5), seed=0)
        batch = pack_batch([make_seq(model)], model.config)
        eval_logits, _ = forward_batch(model, *batch)
        t1, _ = forward_batch(model, *batch, train_mode=True, rng=np.random.default_rng(4))
        t2, _ = forward_batch(model, *batch, train_mode=True, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(t1, t2)
        assert not np.allclose(t1, eval_logits)


class TestLoss:
    def test_smoothed_targets_values(self):
        q = smoothed_targets(5, 2, 0.1)
        np.testing.assert_allclose(q, [0.025, 0.025, 0.9, 0.025, 0.025])
        assert q.sum() == pytest.approx(1.0)

    def test_smoothed_targets_validation(self):
        with pytest.raises(ValueError, match="at least 2"):
            smoothed_targets(1, 0, 0.1)
        with pytest.raises(ValueError, match="outside"):
            smoothed_targets(3, 3, 0.1)

    def test_uniform_logits_cost_log_j(self):
        assert loss(np.zeros(5), 0, eps=0.0) == pytest.approx(math.log(5), rel=1e-12)

    def test_hand_computed_smoothed_case(self):
        val, grad = loss_and_grad(np.array([math.log(3.0), 0.0]), 0, eps=0.2)
        assert val == pytest.approx(0.5074045301854028, rel=1e-12)
        np.testing.assert_allclose(grad, [-0.05, 0.05], atol=1e-12)

    def test_grad_sums_to_zero(self):
        rng = np.random.default_rng(0)
        _, grad = loss_and_grad(rng.normal(size=7), 3, eps=0.1)
        assert grad.sum() == pytest.approx(0.0, abs=1e-12)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=6)
        _, grad = loss_and_grad(logits, 2, eps=0.1)
        h = 1e-6
        for k in range(6):
            up, dn = logits.copy(), logits.copy()
            up[k] += h
            dn[k] -= h
            num = (loss(up, 2, 0.1) - loss(dn, 2, 0.1)) / (2 * h)
            assert num == pytest.approx(grad[k], abs=1e-8)

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 2.0])
        assert loss(logits, 1) == pytest.approx(loss(logits + 100.0, 1), rel=1e-12)

    def test_batch_mean_and_padded_grads(self):
        logits = np.array(
            [[math.log(3.0), 0.0, -1e30], [0.0, 0.0, 0.0]], dtype=np.float64
        )
        score_idx = np.array([[5, 7, -1], [1, 2, 3]])
        targets = np.array([0, 1])
        total, dlogits = batch_loss_and_grad(logits, score_idx, targets, eps=0.0)
        want = (-math.log(0.75) + math.log(3.0)) / 2.0
        assert total == pytest.approx(want, rel=1e-12)
        assert dlogits[0, 2] == 0.0
        np.testing.assert_allclose(dlogits[0, :2], np.array([0.75 - 1.0, 0.25]) / 2.0, atol=1e-12)


class TestGradients:
    def test_analytic_gradients_match_numeric_spot_checks(self):
        cfg = tiny_config(ffn_dim=12)
        model = init_model(cfg, seed=5, dtype=np.float64)
        s1 = make_seq(model, window_n=3, seed=0)
        s2 = make_seq(model, window_n=5, seed=6)
        apps, stes, roles, key_mask, score_idx = pack_batch([s1, s2], cfg)
        rng = np.random.default_rng(8)
        weights = np.where(score_idx >= 0, rng.normal(size=score_idx.shape), 0.0)

        def objective():
            logits, _ = forward_batch(model, apps, stes, roles, key_mask, score_idx)
            return float((weights * np.where(score_idx >= 0, logits, 0.0)).sum())

        logits, cache = forward_batch(model, apps, stes, roles, key_mask, score_idx)
        grads = backward_batch(model, cache, weights)

        h = 1e-5
        for name in (
            "in.w",
            "in.b",
            "tok.miss",
            "tok.sep",
            "layer0.attn.wq",
            "layer0.attn.wo",
            "layer0.ffn.w1",
            "layer0.ln1.g",
            "final_ln.b",
            "head.w1",
            "head.w2",
            "head.b2",
        ):
            arr = model.params[name]
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for k in picks:
                orig = flat[k]
                flat[k] = orig + h
                up = objective()
                flat[k] = orig - h
                dn = objective()
                flat[k] = orig
                num = (up - dn) / (2 * h)
                ana = grads[name].reshape(-1)[k]
                assert num == pytest.approx(ana, abs=1e-6), f"{name}[{k}]"

    def test_gradients_cover_every_parameter(self):
        model = init_model(CFG, seed=1, dtype=np.float64)
        batch = pack_batch([make_seq(model)], CFG)
        logits, cache = forward_batch(model, *batch)
        grads = backward_batch(model, cache, np.ones_like(logits))
        assert sorted(grads) == sorted(model.params)
        for name, g in grads.items():
            assert g.shape == model.params[name].shape
