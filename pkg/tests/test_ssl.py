import copy
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtforensics.errors import ConfigError
from gtforensics.layers import wrap
from gtforensics.numerics import NumericError, Tensor
from gtforensics.optim import scaled_lr
from gtforensics.selftest import gradcheck_ssl
from gtforensics.ssl import (
    AugmentConfig,
    AugmentedViews,
    PretrainConfig,
    StudentTeacherState,
    ViTEncoderConfig,
    augment_pair,
    blockwise_mask,
    ema_update_teacher,
    encode,
    load_encoder,
    loss_cls,
    loss_mim,
    pretrain,
    project,
    save_encoder,
    total_loss,
)
from gtforensics.ssl.augment import IDENTITY
from gtforensics.ssl.encoder import embed_tokens
from gtforensics.ssl.losses import mim_view_term, warm_start_center
from gtforensics.ssl.pretrain import entropy_csv, trace_csv

TINY = ViTEncoderConfig(image_size=8, patch_size=4, dim=8, heads=2, depth=2, mlp_dim=8,
                        head_hidden=8, prototypes=4)


def tiny_state(cfg=TINY, seed=0, uniform=False):
    st_ = StudentTeacherState.create(cfg, np.random.default_rng(seed))
    if uniform:
        for net in (st_.student, st_.teacher):
            net["head.w3"][:] = 0.0
            net["head.b3"][:] = 0.0
    return st_


def tiny_views(rng, cfg=TINY, b=2, masks=None):
    s, n = cfg.image_size, cfg.tokens
    if masks is None:
        masks = (np.tile([1.0, 0, 1, 0], (b, 1)), np.tile([0.0, 1, 1, 0], (b, 1)))
    return AugmentedViews(rng.random((b, s, s, 3)), rng.random((b, s, s, 3)), *masks)


class TestAugment:
    def test_deterministic(self, rng):
        img = rng.random((16, 16, 3))
        u1, v1 = augment_pair(img, 7)
        u2, v2 = augment_pair(img, 7)
        assert np.array_equal(u1, u2) and np.array_equal(v1, v2)

    def test_identity_config(self, rng):
        img = rng.random((16, 16, 3))
        u, v = augment_pair(img, 3, IDENTITY)
        assert np.array_equal(u, img) and np.array_equal(v, img)

    def test_range_exhaustive(self):
        img = np.stack(np.meshgrid(np.linspace(0, 1, 6), np.linspace(0, 1, 6),
                                   indexing="ij") + (np.ones((6, 6)),), axis=-1)
        for seed in range(200):
            for view in augment_pair(img, seed, AugmentConfig(brightness=(1.25, 1.25))):
                assert view.min() >= 0.0 and view.max() <= 1.0


class TestMasking:
    def test_tiny_ratio_single_min_block(self):
        for seed in range(50):
            m = blockwise_mask(8, 8, 1e-9, seed)
            assert len(m.blocks) == 1 and m.mask.sum() == 4

    def test_coverage_bounds_monte_carlo(self):
        for seed in range(1000):
            c = blockwise_mask(8, 8, 0.4, seed).coverage
            assert 0.4 <= c <= 0.4 + 0.4

    def test_union_of_rectangles(self):
        for seed in range(100):
            m = blockwise_mask(8, 8, 0.4, seed)
            rebuilt = np.zeros((8, 8), dtype=bool)
            for top, left, h, w in m.blocks:
                assert 4 <= h * w <= int(0.4 * 64)
                assert 1 / 3 <= h / w <= 3 or min(h, w) == 1
                rebuilt[top:top + h, left:left + w] = True
            assert np.array_equal(rebuilt, m.mask)

    @pytest.mark.parametrize("r", [0.0, 1.0, -0.2, 1.5])
    def test_bad_ratio(self, r):
        with pytest.raises(ConfigError):
            blockwise_mask(8, 8, r, 0)


class TestEncoder:
    def test_shapes(self, rng):
        st_ = tiny_state()
        cls, patches = encode(st_.student, TINY, rng.random((8, 8, 3)))
        assert cls.shape == (8,) and patches.shape == (4, 8)
        cls, patches = encode(st_.student, TINY, rng.random((3, 8, 8, 3)))
        assert cls.shape == (3, 8) and patches.shape == (3, 4, 8)

    def test_no_mask_means_no_substitution(self, rng):
        st_ = tiny_state()
        img = rng.random((1, 8, 8, 3))
        a = embed_tokens(wrap(st_.student), TINY, img, None).data
        b = embed_tokens(wrap(st_.student), TINY, img, np.zeros((1, 4))).data
        assert np.array_equal(a, b)

    def test_all_masked_inputs(self, rng):
        p = tiny_state().student
        z = embed_tokens(wrap(p), TINY, rng.random((2, 8, 8, 3)), np.ones((2, 4))).data
        np.testing.assert_array_equal(z[:, 1:], np.broadcast_to(p["mask_token"] + p["pos_embed"][1:],
                                                                (2, 4, 8)))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            encode(tiny_state().student, TINY, rng.random((16, 16, 3)))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            ViTEncoderConfig(image_size=10, patch_size=4)
        with pytest.raises(ConfigError):
            ViTEncoderConfig(dim=10, heads=4)


class TestProject:
    def test_zero_logits_uniform(self):
        st_ = tiny_state(uniform=True)
        p = project(Tensor(np.ones(8)), st_.student, 0.1).data
        np.testing.assert_allclose(p, np.full(4, 0.25), atol=1e-15)

    def test_sharpening(self, rng):
        st_ = tiny_state()
        e = Tensor(rng.normal(size=8))
        assert project(e, st_.student, 0.1).data.max() > project(e, st_.student, 1.0).data.max()

    def test_center_equal_logits_uniform(self, rng):
        from gtforensics.ssl.encoder import head_logits
        st_ = tiny_state()
        e = Tensor(rng.normal(size=8))
        c = head_logits(e, st_.teacher).data
        np.testing.assert_allclose(project(e, st_.teacher, 0.04, c).data, np.full(4, 0.25),
                                   atol=1e-15)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            project(Tensor(np.ones(8)), tiny_state().student, 0.0)


class TestLosses:
    def test_cls_uniform_is_ln_p(self, rng):
        assert loss_cls(tiny_state(uniform=True), tiny_views(rng)) == pytest.approx(math.log(4),
                                                                                      abs=1e-12)

    def test_cls_view_swap_symmetry(self, rng):
        st_, views = tiny_state(), tiny_views(rng)
        assert loss_cls(st_, views) == pytest.approx(loss_cls(st_, views.swapped()), abs=1e-13)
        assert loss_mim(st_, views) == pytest.approx(loss_mim(st_, views.swapped()), abs=1e-13)

    def test_cls_one_hot_agreement_near_zero(self):
        from gtforensics.ssl.losses import cls_term, student_log_probs
        onehot = np.array([[1.0, 0, 0, 0]])
        s = student_log_probs(Tensor(np.array([[1.0, -1e3, -1e3, -1e3]])), 0.1)
        assert cls_term(onehot, onehot, s, s).item() == pytest.approx(0.0, abs=1e-12)

    def test_mim_empty_masks_zero_with_warning(self, rng, caplog):
        views = tiny_views(rng, masks=(np.zeros((2, 4)), np.zeros((2, 4))))
        with caplog.at_level(logging.WARNING):
            assert loss_mim(tiny_state(), views) == 0.0
        assert "empty" in caplog.text

    def test_mim_uniform_is_ln_p_for_any_mask(self, rng):
        st_ = tiny_state(uniform=True)
        for seed in range(5):
            r = np.random.default_rng(seed)
            m = (r.random((2, 4)) < 0.5).astype(float)
            m[:, 0] = 1.0
            views = tiny_views(rng, masks=(m, m[::-1].copy()))
            assert loss_mim(st_, views) == pytest.approx(math.log(4), abs=1e-12)

    def test_mim_normalisation(self, rng):
        t = rng.dirichlet(np.ones(4), size=(1, 6))
        t[0, 3:] = t[0, :3]
        s = Tensor(np.log(rng.dirichlet(np.ones(4), size=(1, 6))))
        s.data[0, 3:] = s.data[0, :3]
        one = mim_view_term(t, s, np.array([[1.0, 1, 0, 0, 0, 0]])).item()
        two = mim_view_term(t, s, np.array([[1.0, 1, 0, 1, 1, 0]])).item()
        assert one == pytest.approx(two, abs=1e-14)

    def test_total_is_sum(self, rng):
        st_, views = tiny_state(), tiny_views(rng)
        parts = total_loss(st_, views)
        assert parts.total.item() == pytest.approx(parts.cls.item() + parts.mim.item(), abs=1e-14)
        uni = total_loss(tiny_state(uniform=True), views).total.item()
        assert uni == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_teacher_receives_no_gradient(self, rng):
        st_, views = tiny_state(), tiny_views(rng)
        student = wrap(st_.student, requires_grad=True)
        teacher = wrap(st_.teacher, requires_grad=True)
        total_loss(st_, views, student=student, teacher=teacher).total.backward()
        assert all(t.grad is None for t in teacher.values())
        assert any(t.grad is not None and np.any(t.grad) for t in student.values())

    def test_masking_locality_depth_zero(self, rng):
        cfg = ViTEncoderConfig(image_size=8, patch_size=4, dim=8, heads=2, depth=0, mlp_dim=8,
                               head_hidden=8, prototypes=4)
        st_ = tiny_state(cfg)
        m = np.array([[1.0, 0, 0, 1]])
        views = tiny_views(rng, cfg, b=1, masks=(m, m))
        base = loss_mim(st_, views)
        # perturb pixels of the student's unmasked patch (token 1) only in the student input:
        # the teacher sees u unmasked too, so compare against a state whose teacher ignores it
        from gtforensics.ssl.losses import student_log_probs, token_logits
        s1 = student_log_probs(token_logits(wrap(st_.student), cfg, views.u, m), 0.1).data
        u2 = views.u.copy()
        u2[:, 0:4, 4:8] += 0.3
        s2 = student_log_probs(token_logits(wrap(st_.student), cfg, u2, m), 0.1).data
        masked = m[0].astype(bool)
        assert np.array_equal(s1[0, 1:][masked], s2[0, 1:][masked])
        assert base == loss_mim(st_, views)

    def test_gradcheck_two_block_encoder(self):
        assert gradcheck_ssl("total").passed


class TestEma:
    def test_momentum_one_keeps_teacher(self):
        st_ = tiny_state()
        st_.student = {k: v + 1.0 for k, v in st_.student.items()}
        before = copy.deepcopy(st_.teacher)
        st_.m_ema = 1.0
        ema_update_teacher(st_)
        assert all(np.array_equal(before[k], st_.teacher[k]) for k in before)

    def test_momentum_zero_copies_student(self):
        st_ = tiny_state()
        st_.student = {k: v + 1.0 for k, v in st_.student.items()}
        st_.m_ema = 0.0
        ema_update_teacher(st_)
        assert all(np.array_equal(st_.student[k], st_.teacher[k]) for k in st_.student)

    @given(st.floats(0.0, 1.0))
    def test_two_steps_equal_squared_momentum(self, m):
        a, b = tiny_state(seed=1), tiny_state(seed=1)
        for s in (a, b):
            s.student = {k: v * 0 + 0.5 for k, v in s.student.items()}
        a.m_ema = m
        ema_update_teacher(a)
        ema_update_teacher(a)
        b.m_ema = m * m
        ema_update_teacher(b)
        for k in a.teacher:
            np.testing.assert_allclose(a.teacher[k], b.teacher[k], atol=1e-14)

    def test_center_rho_zero(self, rng):
        st_ = tiny_state()
        st_.rho = 0.0
        logits = rng.normal(size=(5, 4))
        ema_update_teacher(st_, logits)
        np.testing.assert_array_equal(st_.center, logits.mean(axis=0))

    def test_warm_start(self, rng):
        st_ = tiny_state()
        logits = rng.normal(size=(5, 4))
        warm_start_center(st_, logits)
        assert st_.center_ready and np.array_equal(st_.center, logits.mean(axis=0))


class TestPretrain:
    def test_lr_rule(self):
        assert scaled_lr(256) == pytest.approx(5e-4)
        assert scaled_lr(64) == pytest.approx(1.25e-4)
        assert PretrainConfig(batch_size=64, lr_mult=1.0).lr == pytest.approx(1.25e-4)

    def test_initial_loss_entropy_scale(self, rng):
        st_ = StudentTeacherState.create(ViTEncoderConfig(), np.random.default_rng(0))
        views = tiny_views(rng, ViTEncoderConfig(), b=4, masks=(
            np.stack([blockwise_mask(8, 8, 0.4, s).flat for s in range(4)]).astype(float),
            np.stack([blockwise_mask(8, 8, 0.4, s + 9).flat for s in range(4)]).astype(float)))
        val = total_loss(st_, views).total.item()
        assert 0.0 < val < 2 * math.log(256) * 1.5

    def test_short_run_trace_and_checkpoint(self, rng, tmp_path):
        imgs = rng.random((6, 8, 8, 3))
        cfg = PretrainConfig(encoder=TINY, batch_size=3)
        state, trace = pretrain(imgs, cfg, 2, seed=0)
        again, trace2 = pretrain(imgs, cfg, 2, seed=0)
        assert [t.total for t in trace] == [t.total for t in trace2]
        csv = trace_csv(trace).strip().split("\n")
        assert csv[0] == "epoch,loss_cls,loss_mim,total" and len(csv) == 3
        assert entropy_csv(trace).startswith("epoch,teacher_entropy,teacher_entropy_min\n1,")
        assert all(t.teacher_entropy_min <= t.teacher_entropy + 1e-12 for t in trace)
        save_encoder(tmp_path, state.student, state.cfg)
        params, cfg2 = load_encoder(tmp_path)
        assert cfg2 == TINY and all(np.array_equal(params[k], state.student[k]) for k in params)

    def test_nan_aborts_with_diagnostic(self, rng):
        imgs = rng.random((4, 8, 8, 3))
        st_ = tiny_state()
        st_.student["patch_embed.w"][0, 0] = np.nan
        with pytest.raises(NumericError):
            pretrain(imgs, PretrainConfig(encoder=TINY, batch_size=4), 1, 0, state=st_)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            pretrain(np.zeros((0, 8, 8, 3)), PretrainConfig(encoder=TINY), 1, 0)
