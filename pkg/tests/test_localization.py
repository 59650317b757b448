import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topoloc import liegroup as lg
from topoloc.ct_icp import POINT_TO_PLANE, MeasurementModel
from topoloc.errors import ConfigurationError, DegenerateInputError
from topoloc.localization import LocalizationOptions, AcceptanceRule, localize, se2_project
from topoloc.pointcloud import NnIndex, PointCloud

MODEL = MeasurementModel(POINT_TO_PLANE, 100.0, 0.5)
LOOSE = np.eye(6) * 1e2


def box_submap(spacing=0.25):
    """Floor and three walls around the origin, with normals."""
    g = np.arange(-4.0, 4.0 + 1e-9, spacing)
    u, v = np.meshgrid(g, g)
    u, v = u.ravel(), v.ravel()
    h = (v + 4.0) / 2
    parts = [
        (np.c_[u, v, np.full_like(u, -1.0)], [0, 0, 1.0]),
        (np.c_[np.full_like(u, 6.0), u, h], [-1.0, 0, 0]),
        (np.c_[u, np.full_like(u, 5.0), h], [0, -1.0, 0]),
        (np.c_[u, np.full_like(u, -5.0), h], [0, 1.0, 0]),
    ]
    pts = np.vstack([p for p, _ in parts])
    normals = np.vstack([np.tile(n, (len(p), 1)) for p, n in parts])
    return PointCloud(pts, np.zeros(len(pts)), normals, np.ones(len(pts)), "vertex")


def live_from(submap, T_rm):
    return PointCloud(lg.transform_points(T_rm, submap.positions), np.zeros(len(submap)),
                      submap.normals @ T_rm[:3, :3].T, submap.scores)


def test_se2_project_examples():
    assert se2_project(np.eye(4)) == (0.0, 0.0, 0.0)
    T = lg.exp_se3([1.0, 2.0, 0.0, 0.0, 0.0, 0.0])
    assert se2_project(T) == pytest.approx((2.0, 1.0, 0.0))
    T = lg.exp_se3([0, 0, 0, 0, 0, 0.3])
    assert se2_project(T)[2] == pytest.approx(0.3)


def test_fixed_point_at_truth():
    m = box_submap()
    res = localize(m, NnIndex(m), np.eye(4), LOOSE, MODEL)
    assert res.accepted and res.converged
    assert np.allclose(res.pose, np.eye(4), atol=1e-9)
    assert res.inlier_fraction == 1.0


def test_recovers_planar_shift():
    m = box_submap()
    T = lg.exp_se3([0.3, 0.1, 0.0, 0.0, 0.0, 0.0])
    res = localize(live_from(m, T), NnIndex(m), np.eye(4), LOOSE, MODEL)
    lat, lon, yaw = se2_project(res.pose @ lg.inverse(T))
    assert abs(lat) < 1e-3 and abs(lon) < 1e-3 and abs(yaw) < 1e-3
    assert res.accepted


def test_tight_prior_dominates():
    m = box_submap()
    T = lg.exp_se3([0.3, 0.1, 0.0, 0.0, 0.0, 0.0])
    res = localize(live_from(m, T), NnIndex(m), np.eye(4), np.eye(6) * 1e-12, MODEL)
    assert np.linalg.norm(lg.log_se3(res.pose)) < 1e-4


def test_cost_never_exceeds_prior_cost():
    m = box_submap()
    rng = np.random.default_rng(0)
    for _ in range(5):
        T = lg.exp_se3(np.r_[rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.03, 0.03, 3)])
        res = localize(live_from(m, T), NnIndex(m), np.eye(4), LOOSE, MODEL)
        assert res.cost <= res.prior_cost + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-6, 1e-2), st.floats(2.0, 100.0))
def test_tighter_prior_stays_closer_to_the_prior(var, ratio):
    m = box_submap(0.5)
    T = lg.exp_se3([0.3, 0.1, 0, 0, 0, 0])
    live = live_from(m, T)
    loose = localize(live, NnIndex(m), np.eye(4), np.eye(6) * var * ratio, MODEL)
    tight = localize(live, NnIndex(m), np.eye(4), np.eye(6) * var, MODEL)
    assert np.linalg.norm(lg.log_se3(tight.pose)) <= np.linalg.norm(lg.log_se3(loose.pose)) + 1e-9


def test_rejections():
    m = box_submap()
    with pytest.raises(DegenerateInputError):
        localize(PointCloud.empty(), NnIndex(m), np.eye(4), LOOSE, MODEL)
    with pytest.raises(ConfigurationError):
        localize(m, NnIndex(m), np.eye(4), np.zeros((6, 6)), MODEL)


def test_low_overlap_is_not_accepted():
    m = box_submap()
    far = PointCloud(m.positions + 50.0, m.times, m.normals, m.scores)
    res = localize(far, NnIndex(m), np.eye(4), LOOSE, MODEL)
    assert not res.accepted and res.inlier_fraction == 0.0
    strict = LocalizationOptions(acceptance=AcceptanceRule(max_translation_change=1e-6))
    res = localize(live_from(m, lg.exp_se3([0.3, 0, 0, 0, 0, 0])), NnIndex(m), np.eye(4), LOOSE, MODEL, strict)
    assert not res.accepted
