import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustvio import kernels
from robustvio.frontend import (
    FILTERED_DYNAMIC,
    KEPT,
    RANSAC_OUTLIER,
    DegenerateInputError,
    FrontendParams,
    dilate_mask,
    epipolar_readmission,
    estimate_fundamental_ransac,
    frame_correspondences,
    fundamental_from_poses,
    semantic_partition,
    single_ransac_filter,
    three_step_filter,
    write_frontend_debug,
)
from robustvio.geometry import so3_exp_mat
from robustvio.simulator import DYNAMIC, ablation_scenario, simulate
from robustvio.simulator.pairs import MOVING_POINT, synthesize_frame_pair
from robustvio.simulator.scene import CameraModel


def two_view(n=30, seed=0):
    rng = np.random.default_rng(seed)
    cam = CameraModel()
    X = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-2, 2, n), rng.uniform(4, 12, n)])
    R = so3_exp_mat([0.01, -0.03, 0.02])
    t = np.array([0.4, 0.05, 0.1])
    return cam.project(X), cam.project(X @ R.T + t), fundamental_from_poses(cam.K, R, t)


def test_dilate_zero_radius_is_identity():
    m = np.full((20, 30), 255, np.uint8)
    m[5:8, 10:12] = 0
    assert np.array_equal(dilate_mask(m, 0), m)


def test_dilate_single_pixel_matches_distance_oracle():
    m = np.full((21, 21), 255, np.uint8)
    m[10, 10] = 0
    out = dilate_mask(m, 2)
    yy, xx = np.mgrid[:21, :21]
    expected = np.where((yy - 10) ** 2 + (xx - 10) ** 2 <= 4, 0, 255)
    assert np.array_equal(out, expected)


def test_dilate_all_static_unchanged():
    m = np.full((10, 10), 255, np.uint8)
    for r in (1, 3, 7):
        assert np.array_equal(dilate_mask(m, r), m)


def test_partition_border_and_out_of_bounds():
    m = np.full((10, 10), 255, np.uint8)
    m[5, 5] = 0
    d = dilate_mask(m, 1)
    uv = np.array([[1.5, 1.5], [6.2, 5.9], [5.0, 4.0], [-1.0, 3.0], [3.0, 10.0]])
    static, dynamic, oob = semantic_partition(uv, d)
    assert static.tolist() == [True, False, False, False, False]
    assert dynamic.tolist() == [False, True, True, False, False]
    assert oob.tolist() == [False, False, False, True, True]


def test_ransac_exact_two_view():
    x1, x2, _ = two_view()
    inl, F = estimate_fundamental_ransac(x1, x2, seed=3)
    assert inl.all()
    h1 = np.c_[x1, np.ones(len(x1))]
    h2 = np.c_[x2, np.ones(len(x2))]
    assert np.max(np.abs(np.einsum("ij,jk,ik->i", h2, F, h1))) < 1e-8
    s = np.linalg.svd(F, compute_uv=False)
    assert s[-1] < 1e-9 and np.linalg.norm(F) == pytest.approx(1.0)


def test_ransac_rejects_contamination():
    x1, x2, _ = two_view(40, seed=1)
    x2 = x2.copy()
    x2[30:] += np.array([0.0, 50.0])
    inl, _ = estimate_fundamental_ransac(x1, x2, seed=0)
    assert inl[:30].all() and not inl[30:].any()


def test_ransac_needs_eight_points():
    x1, x2, _ = two_view(7)
    with pytest.raises(DegenerateInputError):
        estimate_fundamental_ransac(x1, x2)


def test_ransac_is_deterministic():
    fp = synthesize_frame_pair(4)
    a = estimate_fundamental_ransac(fp.uv_prev, fp.uv_cur, seed=9)
    b = estimate_fundamental_ransac(fp.uv_prev, fp.uv_cur, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_readmission_keeps_consistent_points():
    x1, x2, F = two_view()
    assert epipolar_readmission(x1, x2, F, 1.0).all()


def test_steady_cluster_readmitted_moving_rejected():
    fp = synthesize_frame_pair(2, pixel_sigma=0.0)
    F = fundamental_from_poses(fp.camera.K, fp.R_21, fp.t_21)
    ok = epipolar_readmission(fp.uv_prev, fp.uv_cur, F, 1.0)
    assert ok[fp.kind != MOVING_POINT].all()
    assert not ok[fp.kind == MOVING_POINT].any()


def test_psi_c_is_kept_over_f_max():
    fp = synthesize_frame_pair(5, n_static=125, n_steady=0, n_moving=0, pixel_sigma=0.0)
    out = three_step_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, fp.mask, FrontendParams(f_max=250))
    assert out.kept.sum() == len(fp.kp_id) == 125
    assert out.psi_c == 0.5


def test_full_blackout_gives_zero_weight():
    fp = synthesize_frame_pair(6)
    mask = np.zeros_like(fp.mask)
    out = three_step_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, mask)
    assert out.psi_c == 0.0 and out.kept.sum() == 0 and out.F is None
    assert set(out.status) == {FILTERED_DYNAMIC}


def test_statuses_partition_input():
    fp = synthesize_frame_pair(7)
    out = three_step_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, fp.mask)
    assert len(out.status) == len(fp.kp_id)
    assert set(out.status) <= {KEPT, FILTERED_DYNAMIC, RANSAC_OUTLIER}
    assert set(out.kept_ids) <= set(fp.kp_id)


def test_all_static_noiseless_equals_single_ransac():
    fp = synthesize_frame_pair(8, n_moving=0, pixel_sigma=0.0)
    mask = np.full_like(fp.mask, 255)
    p = FrontendParams(seed=4)
    a = three_step_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, mask, p)
    b = single_ransac_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, p)
    assert np.array_equal(a.kept, b.kept)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 250))
def test_psi_c_bounded_and_monotone(seed, f_max_offset):
    fp = synthesize_frame_pair(seed, n_static=60, n_steady=10, n_moving=10)
    out = three_step_filter(fp.kp_id, fp.uv_prev, fp.uv_cur, fp.mask, FrontendParams(f_max=50 + f_max_offset))
    assert 0.0 <= out.psi_c <= 1.0
    assert out.psi_c == min(out.kept.sum() / (50 + f_max_offset), 1.0)


def test_backends_agree_on_sampson():
    fp = synthesize_frame_pair(1)
    F = fundamental_from_poses(fp.camera.K, fp.R_21, fp.t_21)
    a = kernels.sampson_distances(F, fp.uv_prev, fp.uv_cur)
    b = kernels._pykernels.sampson_distances(F, fp.uv_prev, fp.uv_cur)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_simulated_occluder_keypoints_masked_dynamic(tmp_path):
    spec = ablation_scenario(duration=14.0)
    spec.scene.static_count = 300
    spec.scene.blackout_events[0].t_end = 13.0
    res = simulate(spec)
    tr = res.dataset.tracks
    fid = int(np.flatnonzero(res.truth.t[res.truth.frame_indices()] >= 11.5)[0])
    kp, uv0, uv1 = frame_correspondences(tr, fid - 1, fid)
    labels = {int(k): int(l) for k, l in zip(tr.kp_id[tr.frame_id == fid], tr.label[tr.frame_id == fid])}
    occ = np.array([res.tracks.kp_entity[int(k)][0] == "occluder" for k in kp])
    assert occ.any()
    _, dynamic, _ = semantic_partition(uv1, dilate_mask(res.dataset.mask(fid), 4))
    assert dynamic[occ].all()
    assert all(labels[int(k)] == DYNAMIC for k in kp[occ])
    out = three_step_filter(kp, uv0, uv1, res.dataset.mask(fid))
    write_frontend_debug(tmp_path / "dbg.csv", [(fid, out)])
    lines = (tmp_path / "dbg.csv").read_text().splitlines()
    assert lines[0] == "frame_id,kp_id,status" and len(lines) == len(kp) + 1
