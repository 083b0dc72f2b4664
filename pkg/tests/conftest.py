from __future__ import annotations

import numpy as np
import pytest

from forecast_gauntlet.scene import EvalConfig, GtTrack, PredTrack, Scene

NUM_FRAMES = 17
REF = 4


def line_track(gt_id, p0, v, cls="car", start=0, n=NUM_FRAMES, rate=2.0):
    """GT track moving at constant velocity ``v`` (m/s) from ``p0`` at ``start``."""
    t = np.arange(n)[:, None] / rate
    return GtTrack(gt_id, cls, start, np.asarray(p0, float) + t * np.asarray(v, float))


def make_scene(tracks=(), scene_id="s0", num_frames=NUM_FRAMES, ref=REF, ego=(0.0, 0.0)):
    poses = np.zeros((num_frames, 3))
    poses[:, :2] = ego
    return Scene(scene_id, num_frames, ref, poses, tuple(tracks))


def history_of(track: GtTrack, ref=REF, history=4, track_id=None, confidence=1.0, cls=None):
    start = max(track.start_frame, ref - history)
    xy = track.xy[start - track.start_frame: ref - track.start_frame + 1]
    return PredTrack(track.gt_id if track_id is None else track_id, cls or track.cls, confidence, start, xy)


@pytest.fixture
def cfg():
    return EvalConfig()


@pytest.fixture
def two_agent_scene():
    return make_scene([line_track(0, (10, 0), (4, 0)), line_track(1, (-20, 5), (0, 3), cls="truck")])


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        detail = f" ({'; '.join(e['details'])})" if e["details"] else ""
        terminalreporter.write_line(f"criterion {number}: {'PASS' if e['ok'] else 'FAIL'} {e['title']}{detail}")
