import math

import numpy as np
import pytest
import torch

from mosmooth import nnkit
from mosmooth.nnkit import (
    AdamWState,
    Encoder,
    EncoderConfig,
    PlateauHalver,
    adamw_step,
    encoder_forward,
    gradient_of,
    multihead_self_attention,
    softmax_columns,
)

from oracles import attention_loop, central_difference, encoder_loop, relative_error, softmax_column_loop


def t(x):
    return torch.tensor(x, dtype=torch.float64)


class TestSoftmaxColumns:
    def test_zero_matrix_is_uniform(self):
        assert torch.equal(softmax_columns(torch.zeros(2, 2, dtype=torch.float64)), torch.full((2, 2), 0.5, dtype=torch.float64))

    def test_log3_column(self):
        out = softmax_columns(t([[0.0], [math.log(3)]]))
        np.testing.assert_allclose(out.numpy().ravel(), [0.25, 0.75], atol=1e-15)

    def test_large_entries_do_not_overflow(self):
        out = softmax_columns(t([[1000.0], [1000.0]]))
        np.testing.assert_array_equal(out.numpy().ravel(), [0.5, 0.5])

    def test_columns_sum_to_one(self):
        M = torch.randn(7, 5, generator=torch.Generator().manual_seed(0), dtype=torch.float64) * 30
        out = softmax_columns(M)
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(0).numpy(), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.numpy(), softmax_column_loop(M.numpy()), atol=1e-14)

    def test_mask_zeroes_entries(self):
        M = t([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        mask = torch.tensor([[True], [True], [False]])
        out = softmax_columns(M, mask)
        assert (out[2] == 0).all()
        np.testing.assert_allclose(out.sum(0).numpy(), 1.0)

    def test_jacobian_matches_closed_form(self):
        # d softmax / d m = diag(s) - s s^T for a single column
        m = torch.randn(5, 1, generator=torch.Generator().manual_seed(3), dtype=torch.float64, requires_grad=True)
        s = softmax_columns(m)
        jac = torch.autograd.functional.jacobian(lambda x: softmax_columns(x).squeeze(1), m).squeeze(-1)
        sv = s.detach().squeeze(1)
        expected = torch.diag(sv) - torch.outer(sv, sv)
        np.testing.assert_allclose(jac.numpy(), expected.numpy(), atol=1e-14)


def _rand(shape, seed):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


class TestAttention:
    def test_single_element_identity_weights(self):
        a = t([[0.3, -1.2, 2.0]])
        eye = torch.eye(3, dtype=torch.float64)[None]
        out = multihead_self_attention(a, eye, eye, eye, torch.eye(3, dtype=torch.float64))
        np.testing.assert_allclose(out.numpy(), a.numpy(), atol=1e-15)

    def test_matches_scalar_loop(self):
        d, n, h = 4, 3, 2
        A = _rand((d, n), 1)
        wq, wk, wv = _rand((h, d, d), 2), _rand((h, d, d), 3), _rand((h, d, d), 4)
        w0 = _rand((d, h * d), 5)
        out = multihead_self_attention(A.T, wq, wk, wv, w0)
        ref = attention_loop(A.numpy(), wq.numpy(), wk.numpy(), wv.numpy(), w0.numpy())
        np.testing.assert_allclose(out.numpy(), ref.T, atol=1e-12, rtol=0)

    def test_permutation_equivariance(self):
        d, n, h = 5, 6, 3
        a = _rand((n, d), 7)
        ws = [_rand((h, d, d), s) for s in (8, 9, 10)]
        w0 = _rand((d, h * d), 11)
        perm = torch.randperm(n, generator=torch.Generator().manual_seed(0))
        out = multihead_self_attention(a, *ws, w0)
        out_perm = multihead_self_attention(a[perm], *ws, w0)
        np.testing.assert_allclose(out_perm.numpy(), out[perm].numpy(), atol=1e-12)

    def test_shape_mismatch(self):
        a = _rand((3, 4), 0)
        with pytest.raises(nnkit.ShapeError):
            multihead_self_attention(a, _rand((2, 4, 4), 1), _rand((2, 4, 4), 1), _rand((2, 4, 4), 1), _rand((4, 4), 2))

    def test_key_mask_ignores_padding(self):
        d, h = 4, 2
        a = _rand((3, d), 12)
        ws = [_rand((h, d, d), s) for s in (13, 14, 15)]
        w0 = _rand((d, h * d), 16)
        padded = torch.cat([a, _rand((2, d), 17)])
        mask = torch.tensor([True, True, True, False, False])
        out = multihead_self_attention(padded, *ws, w0, key_mask=mask)
        np.testing.assert_allclose(out[:3].numpy(), multihead_self_attention(a, *ws, w0).numpy(), atol=1e-13)


def small_encoder(d=4, n_h=2, N=1, ffn=6, max_positions=5, seed=0, dropout=0.1):
    return Encoder(EncoderConfig(d, n_h, N, ffn, dropout, max_positions), torch.Generator().manual_seed(seed))


class TestEncoder:
    def test_shape(self):
        enc = small_encoder(N=2)
        out = encoder_forward(_rand((3, 4), 0), [0, 1, 1], enc)
        assert out.shape == (3, 4)

    def test_matches_straight_line_oracle(self):
        enc = small_encoder(d=4, N=1)
        a = _rand((2, 4), 1)
        out = encoder_forward(a, [0, 3], enc, "eval")
        np.testing.assert_allclose(out.detach().numpy(), encoder_loop(a.numpy(), [0, 3], enc), atol=1e-12, rtol=0)

    def test_two_block_oracle(self):
        enc = small_encoder(d=5, n_h=3, N=2, ffn=7, seed=4)
        a = _rand((4, 5), 2)
        out = encoder_forward(a, [1, 0, 2, 1], enc, "eval")
        np.testing.assert_allclose(out.detach().numpy(), encoder_loop(a.numpy(), [1, 0, 2, 1], enc), atol=1e-12, rtol=0)

    def test_zero_positions_permutation_equivariant(self):
        enc = small_encoder(d=6, N=2, ffn=8, seed=2)
        with torch.no_grad():
            enc.positions.zero_()
        a = _rand((5, 6), 3)
        perm = torch.tensor([3, 0, 4, 1, 2])
        pos = [0, 1, 2, 3, 4]
        out = encoder_forward(a, pos, enc)
        out_perm = encoder_forward(a[perm], pos, enc)
        np.testing.assert_allclose(out_perm.detach().numpy(), out[perm].detach().numpy(), atol=1e-12)

    def test_eval_mode_is_bitwise_deterministic(self):
        enc = small_encoder(N=2)
        a = _rand((4, 4), 5)
        one = encoder_forward(a, [0, 1, 2, 3], enc, "eval")
        two = encoder_forward(a, [0, 1, 2, 3], enc, "eval")
        assert torch.equal(one, two)

    def test_train_mode_uses_dropout(self):
        enc = small_encoder(N=2, dropout=0.5)
        a = _rand((4, 4), 5)
        gen = torch.Generator().manual_seed(0)
        train = encoder_forward(a, [0, 1, 2, 3], enc, "train", gen=gen)
        evald = encoder_forward(a, [0, 1, 2, 3], enc, "eval")
        assert not torch.allclose(train, evald)

    def test_position_out_of_range(self):
        enc = small_encoder(max_positions=3)
        with pytest.raises(nnkit.PositionError):
            encoder_forward(_rand((2, 4), 0), [0, 3], enc)


class TestGradients:
    def test_sum_gradient_is_ones(self):
        x = _rand((3, 2), 0).requires_grad_()
        (g,) = gradient_of(x.sum(), [x])
        assert torch.equal(g, torch.ones(3, 2, dtype=torch.float64))

    def test_non_scalar_rejected(self):
        x = _rand((3,), 0).requires_grad_()
        with pytest.raises(ValueError):
            gradient_of(x * 2, [x])

    def test_encoder_finite_differences(self):
        enc = small_encoder(d=4, n_h=2, N=2, ffn=6, seed=9)
        enc.eval()
        a = _rand((3, 4), 4)
        w = _rand((3, 4), 5)

        def loss():
            return (enc(a, torch.tensor([0, 2, 1])) * w).sum()

        params = list(enc.named_parameters())
        grads = gradient_of(loss(), [p for _, p in params])
        fd = central_difference(loss, params)
        for (name, _), g in zip(params, grads):
            idx, vals = fd[name]
            assert relative_error(vals, g.reshape(-1)[idx].numpy()) < 1e-4, name


class TestAdamW:
    def test_first_step_moves_by_lr(self):
        p = t([0.5])
        state = AdamWState.zeros_like([p])
        adamw_step([p], [t([1.0])], state, lr=0.01, weight_decay=0.0)
        np.testing.assert_allclose(p.numpy(), [0.5 - 0.01], atol=1e-9)

    def test_pure_decay(self):
        p = t([2.0, -1.0])
        state = AdamWState.zeros_like([p])
        adamw_step([p], [torch.zeros(2, dtype=torch.float64)], state, lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(p.numpy(), [2.0 * (1 - 0.05), -1.0 * (1 - 0.05)], atol=1e-15)

    def test_quadratic_descent(self):
        p = t([1.0])
        state = AdamWState.zeros_like([p])
        trace = []
        for _ in range(100):
            adamw_step([p], [2 * p.clone()], state, lr=0.1, weight_decay=0.0)
            trace.append(abs(p.item()))
        # a few overshoot steps, then steady contraction
        assert trace[-1] < 0.05
        tail = trace[40:]
        peaks = [tail[i] for i in range(1, len(tail) - 1) if tail[i] >= tail[i - 1] and tail[i] >= tail[i + 1]]
        assert all(b <= a for a, b in zip(peaks, peaks[1:]))

    def test_matches_torch_reference(self):
        gen = torch.Generator().manual_seed(0)
        p_ours = torch.randn(5, generator=gen, dtype=torch.float64)
        p_ref = p_ours.clone().requires_grad_()
        opt = torch.optim.AdamW([p_ref], lr=0.01, weight_decay=0.1)
        state = AdamWState.zeros_like([p_ours])
        for _ in range(20):
            g = torch.randn(5, generator=gen, dtype=torch.float64)
            adamw_step([p_ours], [g], state, lr=0.01, weight_decay=0.1)
            p_ref.grad = g.clone()
            opt.step()
        np.testing.assert_allclose(p_ours.numpy(), p_ref.detach().numpy(), atol=1e-14)


class TestPlateau:
    def test_halves_after_patience(self):
        sched = PlateauHalver(1.0, window=2, patience=3)
        for loss in [5, 4, 3, 3, 3, 3, 3]:
            sched.update(loss)
        assert sched.lr == 0.5
        assert sched.reductions == 1

    def test_improving_never_halves(self):
        sched = PlateauHalver(1.0, window=3, patience=2)
        for i in range(50):
            sched.update(100 - i)
        assert sched.lr == 1.0


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    enc = small_encoder(N=2)
    tensors = dict(enc.state_dict())
    tensors["scalar"] = torch.tensor(math.pi, dtype=torch.float64)
    nnkit.save_checkpoint(tmp_path / "ck", tensors, {"note": "x"})
    back, meta = nnkit.load_checkpoint(tmp_path / "ck")
    assert meta == {"note": "x"}
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].numpy().tobytes() == tensors[k].numpy().tobytes()
