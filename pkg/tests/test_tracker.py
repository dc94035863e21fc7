import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skiptrack.errors import ShapeError
from skiptrack.head import HeadWeights, conv3x3, head_forward, init_head
from skiptrack.tensor import hann_window_2d
from skiptrack.tracker import (IMAGENET_MEAN, IMAGENET_STD, BoundingBox, CropParams, crop_resize,
                               decode_box, enhance_search_tokens, hanning_penalty, init_track, run_search,
                               track_step)

IDENTITY = CropParams(0.0, 0.0, 1.0)


def bilinear_oracle(frame, center, side, out_side):
    """Per-pixel scalar bilinear sampling with mean fill outside the frame."""
    h, w, _ = frame.shape
    fill = [float(frame[:, :, c].mean()) for c in range(3)]
    s = side / out_side
    x0, y0 = center[0] - side / 2, center[1] - side / 2
    out = np.zeros((3, out_side, out_side))

    def px(r, c, ch):
        return float(frame[r, c, ch]) if 0 <= r < h and 0 <= c < w else fill[ch]

    for v in range(out_side):
        for u in range(out_side):
            x, y = x0 + (u + 0.5) * s - 0.5, y0 + (v + 0.5) * s - 0.5
            c0, r0 = math.floor(x), math.floor(y)
            ax, ay = x - c0, y - r0
            for ch in range(3):
                out[ch, v, u] = ((1 - ay) * ((1 - ax) * px(r0, c0, ch) + ax * px(r0, c0 + 1, ch))
                                 + ay * ((1 - ax) * px(r0 + 1, c0, ch) + ax * px(r0 + 1, c0 + 1, ch)))
    return out


# crop -------------------------------------------------------------------------

def test_crop_of_constant_frame_is_normalized_color():
    frame = np.empty((40, 50, 3), np.uint8)
    frame[:] = (200, 100, 50)
    out = crop_resize(frame, (25, 20), 20, 8)
    for c, v in enumerate((200, 100, 50)):
        np.testing.assert_allclose(out[c], (v / 255 - IMAGENET_MEAN[c]) / IMAGENET_STD[c], atol=1e-6)


def test_crop_identity_is_a_bitwise_copy(rng):
    frame = rng.integers(0, 256, size=(30, 40, 3), dtype=np.uint8)
    out = crop_resize(frame, (20, 15), 10, 10, normalize=False)
    np.testing.assert_array_equal(out, frame[10:20, 15:25].transpose(2, 0, 1).astype(np.float32))


def test_crop_downscale_checkerboard_matches_oracle():
    yy, xx = np.mgrid[:32, :32]
    board = (((yy // 3) + (xx // 3)) % 2 * 255).astype(np.uint8)
    frame = np.stack([board, 255 - board, board // 2], axis=2)
    out = crop_resize(frame, (16, 16), 32, 16, normalize=False)
    assert np.max(np.abs(out - bilinear_oracle(frame, (16, 16), 32, 16))) < 1e-5


def test_crop_partly_outside_uses_mean_fill_oracle(rng):
    frame = rng.integers(0, 256, size=(12, 9, 3), dtype=np.uint8)
    out = crop_resize(frame, (1.3, 10.7), 11.0, 7, normalize=False)
    assert np.max(np.abs(out - bilinear_oracle(frame, (1.3, 10.7), 11.0, 7))) < 1e-4


def test_crop_argument_checks():
    frame = np.zeros((4, 4, 3), np.uint8)
    with pytest.raises(ValueError):
        crop_resize(frame, (2, 2), 0, 4)
    with pytest.raises(ValueError):
        crop_resize(frame, (2, 2), 4, 0)
    with pytest.raises(ShapeError):
        crop_resize(np.zeros((4, 4), np.uint8), (2, 2), 4, 4)


# head -------------------------------------------------------------------------

def test_zero_head():
    score, offset, size = head_forward(np.ones((4, 3, 3), np.float32), HeadWeights.zeros(4, 2))
    assert not score.any() and not offset.any()
    np.testing.assert_array_equal(size, 0.5)
    assert score.shape == (3, 3) and offset.shape == size.shape == (2, 3, 3)


def test_conv_on_single_pixel_uses_center_tap_only():
    x = np.array([[[2.0]], [[-1.0]]], np.float32)  # 2 channels, 1x1
    w = np.arange(2 * 2 * 9, dtype=np.float32).reshape(2, 2, 3, 3) / 10
    b = np.array([0.5, -0.5], np.float32)
    out = conv3x3(x, w, b)
    expected = [2 * w[o, 0, 1, 1] - w[o, 1, 1, 1] + b[o] for o in range(2)]
    np.testing.assert_allclose(out[:, 0, 0], expected, atol=1e-6)


def test_conv_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 4, 5)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    out = conv3x3(x, w, b)
    for o in range(3):
        for i in range(4):
            for j in range(5):
                acc = float(b[o])
                for c in range(2):
                    for dy in range(3):
                        for dx in range(3):
                            r, q = i + dy - 1, j + dx - 1
                            if 0 <= r < 4 and 0 <= q < 5:
                                acc += float(w[o, c, dy, dx]) * float(x[c, r, q])
                assert abs(out[o, i, j] - acc) < 1e-5
    with pytest.raises(ShapeError):
        conv3x3(x, w[:, :1], b)


def test_score_branch_is_translation_equivariant(rng):
    head = init_head(3, 4, rng)
    x = rng.normal(size=(3, 10, 10)).astype(np.float32)
    shifted = np.roll(x, 1, axis=2)
    a = head_forward(x, head)[0]
    b = head_forward(shifted, head)[0]
    # two stacked 3x3 convs see two pixels each way; compare cells untouched by padding or wrap
    np.testing.assert_allclose(b[2:-2, 3:-2], a[2:-2, 2:-3], atol=1e-5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_head_output_ranges(seed):
    rng = np.random.default_rng(seed)
    _, offset, size = head_forward(rng.normal(size=(3, 4, 4)).astype(np.float32) * 5, init_head(3, 4, rng))
    assert np.all(np.abs(offset) < 0.5) and np.all((size > 0) & (size < 1))


# penalty ----------------------------------------------------------------------

def test_penalty_on_constant_map_follows_window():
    out = hanning_penalty(np.full((5, 5), 3.0, np.float32))
    np.testing.assert_allclose(out / out.max(), hann_window_2d(5, 5), atol=1e-6)
    assert np.unravel_index(np.argmax(out), out.shape) == (2, 2)


def test_penalty_keeps_a_dominant_peak(rng):
    score = rng.uniform(0, 1, size=(16, 16)).astype(np.float32)
    win = hann_window_2d(16, 16)
    i, j = 4, 11
    # peak beats every other cell even after weighting by the window
    score[i, j] = 10 * win.max() / win[i, j] * score.max()
    out = hanning_penalty(score)
    assert np.unravel_index(np.argmax(out), out.shape) == (i, j)


def test_penalty_single_cell():
    out = hanning_penalty(np.array([[4.0]], np.float32))
    assert out.shape == (1, 1) and abs(out[0, 0] - 1e-6) < 1e-9


def test_penalty_hamming_option():
    out = hanning_penalty(np.zeros((3, 3), np.float32), "hamming")
    assert out[0, 0] > 0


# decode -----------------------------------------------------------------------

def flat_maps(h=16, w=16):
    return np.zeros((h, w), np.float32), np.zeros((2, h, w), np.float32), np.full((2, h, w), 0.5, np.float32)


def test_decode_uniform_tie_resolves_to_first_cell():
    score, offset, size = flat_maps()
    box = decode_box(score, offset, size, IDENTITY, 256)
    assert (box.cx, box.cy, box.w, box.h) == (8.0, 8.0, 128.0, 128.0)


def test_decode_peak_cell():
    score, offset, size = flat_maps()
    score[8, 8] = 1
    box = decode_box(score, offset, size, IDENTITY, 256)
    assert (box.cx, box.cy) == (136.0, 136.0)


def test_decode_matches_exhaustive_scan(rng):
    for _ in range(20):
        score = rng.integers(0, 5, size=(6, 7)).astype(np.float32)
        offset = rng.uniform(-0.5, 0.5, size=(2, 6, 7)).astype(np.float32)
        size = rng.uniform(0.01, 1, size=(2, 6, 7)).astype(np.float32)
        crop = CropParams(float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)), float(rng.uniform(0.5, 3)))
        best, bi, bj = -np.inf, 0, 0
        for i in range(6):
            for j in range(7):
                if score[i, j] > best:
                    best, bi, bj = score[i, j], i, j
        cx = crop.x0 + (bj + 0.5 + float(offset[0, bi, bj])) / 7 * 112 * crop.scale
        cy = crop.y0 + (bi + 0.5 + float(offset[1, bi, bj])) / 6 * 112 * crop.scale
        box = decode_box(score, offset, size, crop, 112)
        assert abs(box.cx - cx) < 1e-9 and abs(box.cy - cy) < 1e-9
        assert abs(box.w - float(size[0, bi, bj]) * 112 * crop.scale) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(-100, 400), st.floats(-100, 400), st.floats(0.2, 4))
def test_decoded_box_stays_inside_frame(seed, x0, y0, scale):
    rng = np.random.default_rng(seed)
    score = rng.normal(size=(4, 4)).astype(np.float32)
    offset = rng.uniform(-0.5, 0.5, (2, 4, 4)).astype(np.float32)
    size = rng.uniform(0.01, 0.99, (2, 4, 4)).astype(np.float32)
    box = decode_box(score, offset, size, CropParams(x0, y0, scale, 320, 240), 64)
    assert box.cx - box.w / 2 >= -1e-9 and box.cx + box.w / 2 <= 320 + 1e-9
    assert box.cy - box.h / 2 >= -1e-9 and box.cy + box.h / 2 <= 240 + 1e-9
    assert box.w > 0 and box.h > 0


def test_decoded_center_inside_search_region(rng):
    for _ in range(20):
        score, _, size = flat_maps(5, 5)
        score = rng.normal(size=(5, 5)).astype(np.float32)
        offset = rng.uniform(-0.5, 0.5, (2, 5, 5)).astype(np.float32)
        box = decode_box(score, offset, size, IDENTITY, 80)
        assert 0 <= box.cx <= 80 and 0 <= box.cy <= 80


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 1)
    with pytest.raises(ValueError):
        BoundingBox(float("nan"), 0, 1, 1)


# full step --------------------------------------------------------------------

def synthetic_frame(rng, h=64, w=80, target=(40, 32)):
    frame = rng.integers(0, 60, size=(h, w, 3), dtype=np.uint8)
    yy, xx = np.mgrid[:h, :w]
    blob = (xx - target[0]) ** 2 + (yy - target[1]) ** 2 < 36
    frame[blob] = (230, 200, 40)
    return frame


def test_track_step_structure_and_determinism(tiny_cfg, tiny_model, rng):
    frame = synthetic_frame(rng)
    state = init_track(frame, BoundingBox(40, 32, 12, 12), tiny_model)
    cache = state.template_tokens.copy()
    s1, b1 = track_step(state, frame, tiny_model)
    s2, b2 = track_step(state, frame, tiny_model)
    assert b1 == b2
    assert len(s1.last_step.blocks_executed) == tiny_cfg.l_star + 1
    assert s1.last_step.blocks_executed[:tiny_cfg.l_star] == list(range(1, tiny_cfg.l_star + 1))
    assert s1.frame_index == 1
    s3, _ = track_step(s1, frame, tiny_model)
    np.testing.assert_array_equal(s3.template_tokens, cache)
    assert not s3.template_tokens.flags.writeable
    assert 0 <= b1.cx <= 80 and 0 <= b1.cy <= 64


def test_identical_frames_move_less_than_one_cell(tiny_cfg, tiny_model, rng):
    frame = synthetic_frame(rng)
    state = init_track(frame, BoundingBox(40, 32, 12, 12), tiny_model)
    s1, b1 = track_step(state, frame, tiny_model)
    _, b2 = track_step(s1, frame, tiny_model)
    cell = s1.last_crop.scale * tiny_cfg.search_side / tiny_cfg.search_grid
    # a one-cell step in the second search crop is measured in that crop's scale
    cell2 = 4.0 * math.sqrt(b1.w * b1.h) / tiny_cfg.search_grid
    assert math.hypot(b2.cx - b1.cx, b2.cy - b1.cy) < max(cell, cell2) * math.sqrt(2) + 1e-9


def test_forced_k_changes_the_output(tiny_cfg, tiny_model, rng):
    frame = synthetic_frame(rng)
    state = init_track(frame, BoundingBox(40, 32, 12, 12), tiny_model)
    outs = []
    for k in range(1, tiny_cfg.k_choices + 1):
        s, box = track_step(state, frame, tiny_model, forced_k=k)
        assert s.last_step.chosen_k == k
        assert s.last_step.blocks_executed[-1] == tiny_cfg.l_star + k
        outs.append((box, s.last_step.score_max))
    assert len(set(outs)) == len(outs)


def test_run_search_and_ggca_preserve_token_shapes(tiny_cfg, tiny_model, rng):
    tokens = rng.normal(size=(tiny_cfg.n_tokens, tiny_cfg.embed_dim)).astype(np.float32)
    out = enhance_search_tokens(tokens, tiny_model)
    assert out.shape == tokens.shape
    np.testing.assert_array_equal(out[:tiny_cfg.n_template], tokens[:tiny_cfg.n_template])
    frame = synthetic_frame(rng)
    state = init_track(frame, BoundingBox(40, 32, 12, 12), tiny_model)
    S = rng.normal(size=(3, 32, 32)).astype(np.float32)
    box, info = run_search(state, S, tiny_model, CropParams(0, 0, 1.0))
    assert 1 <= info.chosen_k <= tiny_cfg.k_choices and np.isfinite(info.score_max)
