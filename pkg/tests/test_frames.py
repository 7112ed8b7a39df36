"""State layout, gauge handling and the frame transform.

The affine map is checked against a direct geometric transformation
performed with plain rotation/translation arithmetic in the test.
"""

import numpy as np
import pytest

import tdoacalib as tc
from tdoacalib.exceptions import DegenerateGeometryError, FrameGaugeError
from conftest import make_config


def test_layout_dimensions():
    lay = tc.StateLayout(6, 8)
    assert lay.mic_dim == 5 * 6 - 1
    assert lay.source_dim == 3 * 8 - 6
    assert lay.dim == 5 * 6 - 1 + 3 * 8 - 6
    rel = tc.StateLayout(6, 8, relative_drifts=True)
    assert rel.mic_dim == 5 * 6 - 2
    assert rel.dim == 5 * 6 - 2 + 3 * 8 - 6


def test_layout_column_kinds_counts():
    lay = tc.StateLayout(5, 9)
    kinds = lay.column_kinds()
    assert len(kinds) == lay.dim
    assert (kinds == "pos").sum() == 15
    assert (kinds == "tau").sum() == 4
    assert (kinds == "dri").sum() == 5
    assert (kinds == "src").sum() == 3 * 9 - 6
    rel = tc.StateLayout(5, 9, relative_drifts=True)
    assert (rel.column_kinds() == "dri").sum() == 4


def test_pack_unpack_roundtrip():
    mics, traj = make_config(seed=8, n_mics=5)
    state = tc.pack_state(mics, traj)
    out_mics, events = tc.unpack_state(state)
    true_offsets = np.array([m.offset for m in mics])
    for i in range(5):
        np.testing.assert_allclose(out_mics[i].position, mics[i].position, atol=1e-15)
        assert out_mics[i].offset == pytest.approx(
            true_offsets[i] - true_offsets[0], abs=1e-15
        )
        assert out_mics[i].drift == pytest.approx(mics[i].drift, abs=1e-15)
    np.testing.assert_array_equal(events, traj.positions)
    # pinned coordinates come back as exact zeros
    assert events[0, 0] == 0.0 and events[0, 1] == 0.0 and events[0, 2] == 0.0
    assert events[1, 1] == 0.0 and events[1, 2] == 0.0
    assert events[2, 2] == 0.0


def test_pack_state_rejects_broken_gauge():
    mics, traj = make_config(seed=8, n_mics=4)
    shifted = tc.EventTrajectory(traj.positions + 0.5, traj.intervals)
    with pytest.raises(FrameGaugeError):
        tc.pack_state(mics, shifted)


def test_anchor_frame_properties():
    rng = np.random.default_rng(3)
    for _ in range(25):
        p1, p2, p3 = rng.normal(size=(3, 3)) * 4.0
        r, t = tc.anchor_frame(p1, p2, p3)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
        q1 = r @ p1 + t
        q2 = r @ p2 + t
        q3 = r @ p3 + t
        np.testing.assert_allclose(q1, 0.0, atol=1e-12)
        assert q2[0] > 0
        np.testing.assert_allclose(q2[1:], 0.0, atol=1e-12)
        assert abs(q3[2]) < 1e-12
        assert q3[1] > 0
        # distances survive the rigid map
        assert np.linalg.norm(q2 - q1) == pytest.approx(np.linalg.norm(p2 - p1))


def test_anchor_frame_rejects_collinear():
    p = np.array([0.0, 0.0, 0.0])
    with pytest.raises(DegenerateGeometryError):
        tc.anchor_frame(p, p + [1, 0, 0], p + [2, 0, 0])
    with pytest.raises(DegenerateGeometryError):
        tc.anchor_frame(p, p, p + [1, 1, 0])


def test_affine_matches_direct_transform():
    # Apply the affine (A, b) to a packed state and compare against
    # transforming each quantity by hand with the same R, t.
    mics, traj = make_config(seed=5, n_mics=5)
    state = tc.pack_state(mics, traj)
    transform = tc.compute_frame_transform(np.array([m.position for m in mics]))
    mic_vec = state.vector[: state.layout.mic_dim]
    mapped = transform.affine_matrix @ mic_vec + transform.affine_offset

    r, t = transform.rotation, transform.translation
    out = tc.MicFrameState(mapped, 5)
    positions, offsets, drifts, _ = state.layout.unpack(state.vector)
    np.testing.assert_allclose(
        out.positions(), positions @ r.T + t, atol=1e-12
    )
    np.testing.assert_allclose(out.relative_offsets(), offsets[1:], atol=1e-15)
    np.testing.assert_allclose(
        out.relative_drifts(), drifts[1:] - drifts[0], atol=1e-15
    )


def test_to_mic_frame_lands_in_mic_gauge():
    mics, traj = make_config(seed=9, n_mics=6)
    state = tc.pack_state(mics, traj)
    mic_state = tc.to_mic_frame(state)
    pos = mic_state.positions()
    np.testing.assert_allclose(pos[0], 0.0, atol=1e-12)
    assert pos[1, 0] > 0
    np.testing.assert_allclose(pos[1, 1:], 0.0, atol=1e-12)
    assert abs(pos[2, 2]) < 1e-12 and pos[2, 1] > 0
    # rigid: pairwise distances preserved
    truth = np.array([m.position for m in mics])
    for i in range(6):
        for j in range(i + 1, 6):
            assert np.linalg.norm(pos[i] - pos[j]) == pytest.approx(
                np.linalg.norm(truth[i] - truth[j]), abs=1e-10
            )


def test_mic_frame_vector_agrees_with_transformed_truth():
    mics, traj = make_config(seed=10, n_mics=4)
    direct = tc.mic_frame_vector(mics)
    via_state = tc.to_mic_frame(tc.pack_state(mics, traj))
    np.testing.assert_allclose(direct.vector, via_state.vector, atol=1e-12)


def test_two_mic_transform_is_translation_only():
    mics, traj = make_config(seed=12, n_mics=2)
    state = tc.pack_state(mics, traj)
    mic_state = tc.to_mic_frame(state)
    truth = np.array([m.position for m in mics])
    np.testing.assert_allclose(mic_state.positions()[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(
        mic_state.positions()[1], truth[1] - truth[0], atol=1e-12
    )


def test_sound_frame_state_validation():
    lay = tc.StateLayout(4, 8)
    with pytest.raises(ValueError):
        tc.SoundFrameState(np.zeros(lay.dim + 1), 4, 8)
    ok = tc.SoundFrameState(np.zeros(lay.dim), 4, 8)
    assert ok.layout.dim == lay.dim
