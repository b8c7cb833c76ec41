import math

import numpy as np
import pytest
import torch

from mosmooth import nnkit
from mosmooth.dda import MatchResult
from mosmooth.partitioner import partition, partition_by_labels
from mosmooth.simkit import GroundTruthTrajectory, radar_project
from mosmooth.smoother import (
    DSConfig,
    DeepSmoother,
    MissingMatchError,
    TrackLengthError,
    TrajectoryEstimate,
    ds_forward,
    ds_loss,
    ds_loss_from_targets,
    encode_tracks,
    extract_trajectories,
    preprocess_slot,
)

from oracles import central_difference, relative_error


def tiny_cfg(**kw):
    return DSConfig(**{**dict(d=8, n_h=2, N=2, ffn_hidden=12, T=3, state_hidden=8, state_layers=2,
                              exist_hidden=6, exist_layers=2), **kw})


def some_tracks(T=3, seed=0):
    rng = np.random.default_rng(seed)
    n = 6
    A = rng.dirichlet(np.ones(3), size=n)
    z = rng.uniform([0.5, 0, -1.3], [15, 8, 1.3], size=(n, 3))
    return partition(A, z, rng.integers(1, T + 1, n), T)


class TestPreprocess:
    def test_on_axis(self):
        np.testing.assert_allclose(preprocess_slot([2, 1, 0]), [2, 0, 1])

    def test_sixty_degrees(self):
        np.testing.assert_allclose(preprocess_slot([1, 0, 1.0472]), [0.5, 0.86603, 0], atol=1e-5)

    def test_inverts_radar_projection(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.uniform([-10, -10], [10, 10])
            z = radar_project([p[0], p[1], 0.0, 0.0])
            np.testing.assert_allclose(preprocess_slot(z)[:2], p, atol=1e-12)


class TestModel:
    def test_shapes_and_ranges(self):
        model = DeepSmoother(tiny_cfg(), seed=0)
        tracks = some_tracks()
        est = ds_forward(tracks, model)
        assert est.x_hat.shape == (len(tracks), 3, 4)
        assert est.p.shape == (len(tracks), 3) and est.p_bar.shape == (len(tracks),)
        assert ((est.p > 0) & (est.p < 1)).all() and ((est.p_bar > 0) & (est.p_bar < 1)).all()

    def test_eval_passes_are_bitwise_equal(self):
        model = DeepSmoother(tiny_cfg(), seed=1)
        tracks = some_tracks(seed=1)
        a, b = ds_forward(tracks, model), ds_forward(tracks, model)
        assert torch.equal(a.x_hat, b.x_hat) and torch.equal(a.p_logit, b.p_logit)
        assert torch.equal(a.p_bar_logit, b.p_bar_logit)

    def test_all_dummy_track(self):
        model = DeepSmoother(tiny_cfg(), seed=2)
        feats, mask = np.zeros((1, 3, 4)), np.zeros((1, 3), dtype=bool)
        with torch.no_grad():
            est = model(feats, mask)
        assert torch.isfinite(est.x_hat).all()
        assert 0 < est.p_bar[0].item() < 1

    def test_wrong_track_length(self):
        with pytest.raises(TrackLengthError):
            ds_forward(some_tracks(T=4), DeepSmoother(tiny_cfg()))

    def test_encode_tracks_marks_dummies(self):
        tracks = partition_by_labels([0, 0], np.array([[2, 1, 0], [3, 1, 0.0]]), [1, 3], 3)
        feats, mask = encode_tracks(tracks, 3)
        assert mask.tolist() == [[True, False, True]]
        np.testing.assert_allclose(feats[0, 0], [2, 0, 1, 1])
        assert (feats[0, 1] == 0).all()

    def test_gradients_match_finite_differences(self):
        model = DeepSmoother(tiny_cfg(T=3), seed=3)
        model.eval()
        rng = np.random.default_rng(3)
        for scene in range(5):
            tracks = some_tracks(seed=10 + scene)
            feats, mask = encode_tracks(tracks, 3)
            m = len(tracks)
            states = rng.normal(size=(m, 3, 4)) * 3
            alive = rng.random((m, 3)) < 0.6
            matched = rng.random(m) < 0.7

            def loss():
                return ds_loss_from_targets(model(feats, mask), states, alive, matched)

            params = list(model.named_parameters())
            grads = nnkit.gradient_of(loss(), [p for _, p in params])
            fd = central_difference(loss, params, max_entries=6, rng=rng)
            for (name, _), g in zip(params, grads):
                idx, vals = fd[name]
                assert relative_error(vals, g.reshape(-1)[idx].numpy()) < 1e-4, name


def single(x_hat, p, p_bar):
    return TrajectoryEstimate.from_probabilities([x_hat], [p], [p_bar], source_columns=[0])


def match_to(obj):
    return MatchResult(S=np.array([[1]]), s_star=np.array([obj]), C=np.zeros((1, 1)), object_ids=np.array([obj]))


class TestLoss:
    def test_unmatched_half(self):
        est = single(np.zeros((2, 4)), [0.5, 0.5], 0.5)
        loss = ds_loss(est, [], match_to(-1))
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_worked_example(self):
        truth = GroundTruthTrajectory(3, 1, np.zeros((1, 4)))
        x_hat = np.array([[1.0, 0, 0, 0], [5.0, 5, 5, 5]])
        est = single(x_hat, [0.8, 0.3], 0.9)
        loss = float(ds_loss(est, [truth], match_to(3)))
        expected = -math.log(0.9) + (1 - math.log(0.8)) - math.log(0.7)
        assert expected == pytest.approx(1.68517, abs=1e-5)
        assert loss == pytest.approx(expected, abs=1e-12)

    def test_perfect_limit(self):
        states = np.arange(8.0).reshape(2, 4)
        truth = GroundTruthTrajectory(0, 1, states)
        eps = 1e-9
        est = single(np.vstack([states, np.zeros((1, 4))]), [1 - eps, 1 - eps, eps], 1 - eps)
        assert float(ds_loss(est, [truth], match_to(0))) < 1e-7

    def test_missing_truth(self):
        with pytest.raises(MissingMatchError):
            ds_loss(single(np.zeros((2, 4)), [0.5, 0.5], 0.5), [], match_to(7))


class TestExtraction:
    def test_low_existence_dropped(self):
        assert extract_trajectories(single(np.zeros((3, 4)), [0.9, 0.9, 0.9], 0.4)) == []

    def test_trailing_span(self):
        x = np.arange(12.0).reshape(3, 4)
        (traj,) = extract_trajectories(single(x, [0.9, 0.9, 0.1], 0.99))
        assert traj.t_s == 1 and traj.t_end == 2
        np.testing.assert_allclose(traj.states, x[:2])

    def test_interior_gap_kept(self):
        (traj,) = extract_trajectories(single(np.zeros((3, 4)), [0.9, 0.5, 0.9], 0.99))
        assert (traj.t_s, traj.t_end) == (1, 3)

    def test_late_start(self):
        (traj,) = extract_trajectories(single(np.zeros((4, 4)), [0.1, 0.85, 0.9, 0.2], 0.7))
        assert (traj.t_s, traj.t_end) == (2, 3)

    def test_no_confident_step(self):
        assert extract_trajectories(single(np.zeros((2, 4)), [0.5, 0.6], 0.9)) == []

    def test_dict_round_trip(self):
        (traj,) = extract_trajectories(single(np.ones((2, 4)), [0.9, 0.9], 0.8))
        back = type(traj).from_dict(traj.to_dict())
        assert back.t_s == traj.t_s and np.array_equal(back.states, traj.states)
