import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from futureseg.errors import ConfigError, ShapeError
from futureseg.fields import FlowField, InstanceMask, SemanticMap, SequenceSample
from futureseg.synthgen import SceneConfig, generate
from futureseg.tracker import TrackerConfig, associate, build_tracks


def box_inst(x0, y0, x1, y1, cls=1, shape=(40, 40), id=0):
    m = np.zeros(shape, bool)
    m[y0:y1, x0:x1] = True
    return InstanceMask(id, cls, 0.9, m)


def test_identity_matching():
    dets = [box_inst(0, 0, 5, 5), box_inst(10, 10, 20, 20), box_inst(30, 0, 35, 9)]
    a = associate(dets, dets)
    assert a.pairs == [(0, 0), (1, 1), (2, 2)]
    assert a.unmatched_prev == [] and a.unmatched_next == []


def test_disjoint():
    a = associate([box_inst(0, 0, 5, 5)], [box_inst(20, 20, 25, 25)])
    assert a.pairs == [] and a.unmatched_prev == [0] and a.unmatched_next == [0]


def test_greedy_competition():
    nxt = [box_inst(0, 0, 10, 10)]
    p_hi = box_inst(0, 0, 10, 8)      # IoU 0.8
    p_lo = box_inst(0, 0, 10, 6)      # IoU 0.6
    a = associate([p_lo, p_hi], nxt)
    assert a.pairs == [(1, 0)] and a.unmatched_prev == [0]


def test_class_gating_and_shape():
    a = associate([box_inst(0, 0, 5, 5, cls=1)], [box_inst(0, 0, 5, 5, cls=2)])
    assert a.pairs == []
    a = associate([box_inst(0, 0, 5, 5, cls=1)], [box_inst(0, 0, 5, 5, cls=2)],
                  TrackerConfig(same_class_only=False))
    assert a.pairs == [(0, 0)]
    with pytest.raises(ShapeError):
        associate([box_inst(0, 0, 5, 5)], [box_inst(0, 0, 5, 5, shape=(30, 30))])
    with pytest.raises(ConfigError):
        TrackerConfig(iou_threshold=1.0)


def _sample(frames):
    shape = frames[0][0].mask.shape if frames[0] else (40, 40)
    sem = [SemanticMap.background(*shape) for _ in frames]
    return SequenceSample([FlowField.zeros(*shape)] * (len(frames) - 1), frames, sem)


def test_single_object_one_track():
    frames = [[box_inst(2 + t, 5, 12 + t, 15)] for t in range(6)]
    tracks = build_tracks(_sample(frames))
    assert list(tracks.values()) == [{t: 0 for t in range(6)}]


def test_disappearing_object():
    frames = [[box_inst(2 + t, 5, 12 + t, 15)] for t in range(3)] + [[] for _ in range(3)]
    tracks = build_tracks(_sample(frames))
    assert len(tracks) == 1 and len(next(iter(tracks.values()))) == 3


def test_no_reidentification_after_gap():
    frames = [[box_inst(2, 5, 12, 15)], [], [box_inst(2, 5, 12, 15)]]
    tracks = build_tracks(_sample(frames))
    assert sorted(tracks) == [(0, 0), (2, 0)]


def _paths_cross(s):
    pos, objs = np.array(s.meta["positions"]), s.meta["objects"]
    for t in range(s.frames):
        for a in range(len(objs)):
            for b in range(a + 1, len(objs)):
                (ax, ay), (bx, by) = pos[t, a], pos[t, b]
                if (ax < bx + objs[b]["width"] and bx < ax + objs[a]["width"]
                        and ay < by + objs[b]["height"] and by < ay + objs[a]["height"]):
                    return True
    return False


def test_tracks_match_generator_ids_with_crossing_paths():
    crossing = 0
    for seed in range(40):
        cfg = SceneConfig(height=48, width=96, n_objects=3, size_range=(10, 14),
                          velocity_u=(-1, 1), velocity_v=(0, 0), frames=16, seed=seed)
        s = generate(cfg)
        if not _paths_cross(s):
            continue
        crossing += 1
        tracks = build_tracks(s, TrackerConfig(iou_threshold=0.3))
        by_id = {}
        for frames in tracks.values():
            ids = {s.instances[t][j].id for t, j in frames.items()}
            assert len(ids) == 1
            by_id.setdefault(ids.pop(), []).append(frames)
        assert sorted(by_id) == [1, 2, 3]
        for gid, ts in by_id.items():
            assert len(ts) == 1 and len(ts[0]) == s.frames
    assert crossing >= 10


masks = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(2, 9),
                           st.integers(2, 9), st.integers(1, 2)), min_size=0, max_size=5)


@settings(max_examples=60, deadline=None)
@given(masks, masks, st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_one_to_one_and_monotone_threshold(prev, nxt, t1, t2):
    P = [box_inst(x, y, x + w, y + h, c) for x, y, w, h, c in prev]
    N = [box_inst(x, y, x + w, y + h, c) for x, y, w, h, c in nxt]
    lo, hi = sorted((t1, t2))
    a_lo = associate(P, N, TrackerConfig(iou_threshold=lo))
    a_hi = associate(P, N, TrackerConfig(iou_threshold=hi))
    for a in (a_lo, a_hi):
        ps = [i for i, _ in a.pairs]
        ns = [j for _, j in a.pairs]
        assert len(set(ps)) == len(ps) and len(set(ns)) == len(ns)
    assert len(a_hi.pairs) <= len(a_lo.pairs)
