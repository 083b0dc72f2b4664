import math

import numpy as np
import pytest

from forecast_gauntlet.assignment import FORBIDDEN, solve_bruteforce
from forecast_gauntlet.association import associate_mot, association_window, gated_costs, match_t0
from forecast_gauntlet.scene import EvalConfig, PredTrack

from conftest import REF, history_of, line_track, make_scene


def far_apart_scene(n=2):
    return make_scene([line_track(i, (15 * i + 5, 3 * i), (3, 1)) for i in range(n)])


class TestMatchT0:
    def test_exact_predictions(self, cfg, two_agent_scene):
        preds = [history_of(t, track_id=10 + t.gt_id) for t in two_agent_scene.gt_tracks]
        m = match_t0(two_agent_scene, preds, cfg)
        assert sorted(m.pairs) == [(0, 10), (1, 11)]
        assert m.distances == (0.0, 0.0) and m.missed_gt == () and m.false_tracks == ()

    def test_beyond_gate(self, cfg):
        scene = far_apart_scene(1)
        gt = scene.gt_tracks[0]
        pred = PredTrack(7, "car", 1.0, REF, [gt.position(REF) + [2.01, 0.0]])
        m = match_t0(scene, [pred], cfg)
        assert m.pairs == () and m.missed_gt == (0,) and m.false_tracks == (7,)

    def test_gate_is_inclusive(self, cfg):
        scene = far_apart_scene(1)
        pred = PredTrack(7, "car", 1.0, REF, [scene.gt_tracks[0].position(REF) + [2.0, 0.0]])
        assert match_t0(scene, [pred], cfg).pairs == ((0, 7),)

    def test_class_mismatch_not_matched(self, cfg):
        scene = far_apart_scene(1)
        pred = history_of(scene.gt_tracks[0], cls="bus")
        m = match_t0(scene, [pred], cfg)
        assert m.pairs == () and m.false_tracks == (0,)

    def test_unscored_prediction_ignored(self, cfg):
        scene = far_apart_scene(1)
        pred = history_of(scene.gt_tracks[0], track_id=3, cls="pedestrian")
        m = match_t0(scene, [pred], cfg)
        assert m.false_tracks == () and m.missed_gt == (0,)

    def test_ineligible_gt_not_matched(self, cfg):
        scene = make_scene([line_track(0, (5, 5), (0, 0))])  # parked
        m = match_t0(scene, [history_of(scene.gt_tracks[0])], cfg)
        assert m.pairs == () and m.missed_gt == () and m.false_tracks == (0,)

    def test_jittered_pairs_equal_bruteforce(self, cfg):
        rng = np.random.default_rng(3)
        for trial in range(50):
            scene = make_scene(
                [line_track(i, rng.uniform(-6, 6, 2), rng.uniform(1, 4, 2)) for i in range(5)]
            )
            preds = [
                PredTrack(100 + t.gt_id, "car", 1.0, REF, [t.position(REF) + rng.normal(0, 0.3, 2)])
                for t in scene.gt_tracks
            ]
            m = match_t0(scene, preds, cfg)
            gt_xy = np.array([t.position(REF) for t in scene.gt_tracks])
            pr_xy = np.array([p.position(REF) for p in preds])
            ref = solve_bruteforce(gated_costs(gt_xy, pr_xy, cfg.match_threshold_m))
            assert m.pairs == tuple((r, 100 + c) for r, c in ref.pairs), trial


class TestAssociateMot:
    def test_perfect_tracks(self, cfg, two_agent_scene):
        ev = associate_mot(two_agent_scene, [history_of(t, track_id=50 + t.gt_id) for t in two_agent_scene.gt_tracks], cfg)
        assert (ev.fp, ev.fn, ev.ids) == (0, 0, 0)
        assert ev.gt_total == 10 and ev.match_distance_sum == 0.0

    def test_window(self, cfg, two_agent_scene):
        assert list(association_window(two_agent_scene, cfg)) == [0, 1, 2, 3, 4]

    def test_swap_mid_sequence_is_two_switches(self, cfg):
        scene = far_apart_scene(2)
        a, b = scene.gt_tracks
        swap = 2
        xa = np.concatenate([a.xy[:swap], b.xy[swap:REF + 1]])
        xb = np.concatenate([b.xy[:swap], a.xy[swap:REF + 1]])
        preds = [PredTrack(10, "car", 1.0, 0, xa), PredTrack(11, "car", 1.0, 0, xb)]
        ev = associate_mot(scene, preds, cfg)
        assert ev.ids == 2 and ev.fp == 0 and ev.fn == 0
        assert [f.ids_gts for f in ev.frames if f.ids_gts] == [(0, 1)]

    def test_unmatched_gt_over_window(self, cfg):
        ev = associate_mot(far_apart_scene(1), [], cfg)
        assert (ev.fn, ev.fp, ev.ids) == (5, 0, 0)

    def test_switch_after_gap(self, cfg):
        scene = far_apart_scene(1)
        gt = scene.gt_tracks[0]
        first = PredTrack(1, "car", 1.0, 0, gt.xy[:2])
        second = PredTrack(2, "car", 1.0, 3, gt.xy[3:REF + 1])
        ev = associate_mot(scene, [first, second], cfg)
        assert ev.fn == 1 and ev.ids == 1

    def test_carry_over_keeps_identity(self, cfg):
        # Track 2 drifts closer than track 1 while track 1 stays within the gate.
        scene = far_apart_scene(1)
        gt = scene.gt_tracks[0]
        t1 = PredTrack(1, "car", 1.0, 0, gt.xy[:REF + 1] + [1.5, 0])
        t2 = PredTrack(2, "car", 1.0, 2, gt.xy[2:REF + 1] + [0.2, 0])
        ev = associate_mot(scene, [t1, t2], cfg)
        assert ev.ids == 0 and ev.fp == 3

    def test_class_agnostic(self, cfg):
        scene = far_apart_scene(1)
        ev = associate_mot(scene, [history_of(scene.gt_tracks[0], cls="truck")], cfg)
        assert (ev.fp, ev.fn) == (0, 0)

    def test_relabeling_invariance_and_removal_monotonicity(self, cfg):
        rng = np.random.default_rng(8)
        for trial in range(200):
            scene = make_scene([line_track(i, rng.uniform(-4, 4, 2), rng.uniform(-3, 3, 2)) for i in range(4)])
            preds = []
            for j in range(int(rng.integers(1, 7))):
                g = scene.gt_tracks[int(rng.integers(4))]
                preds.append(PredTrack(j, "car", 1.0, 0, g.xy[:REF + 1] + rng.normal(0, 1.0, (REF + 1, 2))))
            base = associate_mot(scene, preds, cfg)
            relabeled = [p.replace(track_id=1000 - p.track_id) for p in preds]
            assert associate_mot(scene, relabeled, cfg).ids == base.ids
            for k in range(len(preds)):
                fewer = associate_mot(scene, preds[:k] + preds[k + 1:], cfg)
                assert fewer.fn >= base.fn and fewer.fp <= base.fp, trial

    def test_distances_recorded(self, cfg):
        scene = far_apart_scene(1)
        pred = history_of(scene.gt_tracks[0])
        shifted = pred.replace(xy=pred.xy + [0.6, 0.8])
        ev = associate_mot(scene, [shifted], cfg)
        assert ev.match_count == 5
        assert math.isclose(ev.match_distance_sum, 5.0)


def test_gated_costs():
    c = gated_costs(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [3.0, 0.0]]), 2.0)
    assert c[0, 0] == 1.0 and c[0, 1] == FORBIDDEN
    assert gated_costs(np.zeros((0, 2)), np.zeros((3, 2)), 2.0).shape == (0, 3)


def test_config_gate_respected():
    scene = far_apart_scene(1)
    pred = PredTrack(7, "car", 1.0, REF, [scene.gt_tracks[0].position(REF) + [2.5, 0.0]])
    assert match_t0(scene, [pred], EvalConfig(match_threshold_m=3.0)).pairs == ((0, 7),)
    with pytest.raises(ValueError):
        EvalConfig(match_threshold_m=-1)
