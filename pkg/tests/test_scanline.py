import numpy as np
import pytest

from flashlive.scanline import (
    CameraTimeline,
    Frame,
    ScreenTimeline,
    capture,
    decode_trace,
    encode_trace,
    lighting_area_start,
    make_camera_timeline,
    make_screen_timeline,
    roi_locate,
)


def nominal_screen(n_frames=4, t_frame=1 / 60, rows=64, start=0.0):
    return make_screen_timeline(rows, t_frame, n_frames, start=start, jitter=0.0)


def nominal_camera(n_frames=4, ct_frame=1 / 60, cols=1280, start=0.0, exposure=None):
    return make_camera_timeline(cols, ct_frame, n_frames, start=start, exposure=exposure, jitter=0.0)


class TestLightingAreaStart:
    def test_top_row(self):
        tl = nominal_screen()
        assert lighting_area_start(0.0, tl, 2) == pytest.approx(tl.t_begin[2], abs=1e-15)

    def test_half_screen(self):
        tl = make_screen_timeline(64, 1 / 60, 4, start=2.0, jitter=0.0)
        assert lighting_area_start(0.5, tl, 0) == pytest.approx(2.0 + 0.5 / 60, abs=1e-12)

    def test_bottom_row(self):
        tl = nominal_screen()
        t = lighting_area_start(1.0, tl, 1)
        assert t == pytest.approx(tl.t_begin[1] + tl.periods[1], abs=1e-15)

    def test_frame_index_range(self):
        tl = nominal_screen()
        with pytest.raises(ValueError):
            lighting_area_start(0.5, tl, 99)
        with pytest.raises(ValueError):
            lighting_area_start(-0.1, tl, 0)


class TestRoiLocate:
    def test_frame_start(self):
        cam = nominal_camera()
        loc = roi_locate(float(cam.ct_k[1]), cam)
        assert loc.k == 1
        assert loc.l == pytest.approx(0.0, abs=1e-12)

    def test_midframe(self):
        cam = nominal_camera(cols=1280)
        t = float(cam.ct_k[1]) + cam.periods[1] / 2
        loc = roi_locate(t, cam)
        assert loc.k == 1
        assert loc.l == pytest.approx(640.0, abs=1e-9)

    def test_boundary_belongs_to_next_frame(self):
        cam = nominal_camera()
        t = float(cam.ct_k[1]) + float(cam.periods[1])
        loc = roi_locate(t, cam)
        assert loc.k == 2
        assert loc.l == pytest.approx(0.0, abs=1e-9)

    def test_outside_span(self):
        cam = nominal_camera()
        with pytest.raises(ValueError):
            roi_locate(-1.0, cam)
        with pytest.raises(ValueError):
            roi_locate(float(cam.ct_k[-1]) + float(cam.periods[-1]) + 1.0, cam)

    def test_round_trip(self):
        # invert the timing from a target shift, then recover it
        rng = np.random.default_rng(7)
        cam = make_camera_timeline(1280, 1 / 60, 16, jitter=0.005, rng=rng)
        for _ in range(200):
            k = int(rng.integers(0, 16))
            l0 = float(rng.uniform(0, 1280))
            t = cam.ct_k[k] + l0 / 1280 * cam.periods[k]
            loc = roi_locate(float(t), cam)
            assert loc.k == k
            assert loc.l == pytest.approx(l0, abs=1e-9)


class TestCapture:
    def test_static_radiance_uniform_columns(self):
        cam = nominal_camera(cols=32)
        grid = np.random.default_rng(0).uniform(0.1, 0.9, size=(16, 32, 3))
        frame = capture(lambda t: grid, cam, 1)
        assert np.allclose(frame.pixels, grid.astype(np.float32), atol=1e-6)
        assert np.all(np.diff(frame.column_times) > 0)

    def test_color_switch_boundary(self):
        # screen switches red->green mid-frame: boundary column matches the
        # scan-shift prediction once the box exposure's half-width is removed
        cols = 256
        cam = nominal_camera(cols=cols, ct_frame=1 / 60)
        red = np.zeros((8, cols, 3))
        red[:, :, 0] = 0.8
        green = np.zeros((8, cols, 3))
        green[:, :, 1] = 0.8
        t_switch = float(cam.ct_k[1]) + 0.5 * float(cam.periods[1])
        frame = capture(
            lambda t: red if t < t_switch else green, cam, 1, switch_times=[t_switch]
        )
        profile = frame.pixels[4, :, 1] / 0.8  # green fraction per column
        half = np.interp(0.5, profile, np.arange(cols))
        predicted = roi_locate(t_switch, cam).l - cam.exposure / float(cam.periods[1]) * cols / 2
        assert half == pytest.approx(predicted, abs=1.0)
        assert abs(half - cols / 2) < cols * 0.1

    def test_boundary_error_bounded_by_exposure(self):
        rng = np.random.default_rng(123)
        cols = 128
        for trial in range(20):
            exposure = float(rng.uniform(1, 12)) / cols / 60
            cam = make_camera_timeline(
                cols, 1 / 60, 4, exposure=exposure, jitter=0.005, rng=rng
            )
            a = np.full((4, cols, 3), 0.2)
            b = np.full((4, cols, 3), 0.9)
            t_switch = float(cam.ct_k[2]) + float(rng.uniform(0.2, 0.8)) * float(cam.periods[2])
            frame = capture(lambda t: a if t < t_switch else b, cam, 2, switch_times=[t_switch])
            profile = (frame.pixels[0, :, 0] - 0.2) / 0.7
            first_touched = int(np.argmax(profile > 1e-9))
            last_untouched = int(np.argmax(profile >= 1 - 1e-9))
            l = roi_locate(t_switch, cam).l
            smear = exposure * cols / float(cam.periods[2])
            assert first_touched >= l - smear - 1
            assert last_untouched <= l + 1 + 1e-9


class TestTraceCodec:
    def frames(self):
        rng = np.random.default_rng(5)
        return [
            Frame(
                capture_start=k / 60,
                period=1 / 60,
                pixels=rng.uniform(0, 1, size=(8, 12, 3)).astype(np.float32),
            )
            for k in range(3)
        ]

    def test_round_trip(self):
        frames = self.frames()
        out = decode_trace(encode_trace(frames))
        assert len(out) == 3
        for a, b in zip(frames, out):
            assert a.capture_start == b.capture_start
            assert a.period == b.period
            assert np.array_equal(a.pixels, b.pixels)

    def test_byte_layout(self):
        frames = self.frames()
        data = encode_trace(frames)
        assert data[:4] == b"FFTR"
        assert int.from_bytes(data[4:6], "little") == 1
        assert int.from_bytes(data[6:8], "little") == 12  # width
        assert int.from_bytes(data[8:10], "little") == 8  # height
        assert data[10] == 3
        assert int.from_bytes(data[11:15], "little") == 3  # frame count
        per_frame = 16 + 8 * 12 * 3 * 4
        assert len(data) == 15 + 3 * per_frame

    def test_truncated_rejected(self):
        data = encode_trace(self.frames())
        with pytest.raises(ValueError):
            decode_trace(data[:-5])
        with pytest.raises(ValueError):
            decode_trace(b"XXXX" + data[4:])
        with pytest.raises(ValueError):
            decode_trace(data + b"\x00")

    def test_empty_trace(self):
        assert decode_trace(encode_trace([])) == []


def test_timeline_invariants():
    rng = np.random.default_rng(11)
    screen = make_screen_timeline(64, 1 / 60, 100, jitter=0.005, rng=rng)
    assert np.all(np.diff(screen.t_begin) > 0)
    assert np.all(np.abs(screen.periods / screen.t_frame - 1) <= 0.005 + 1e-12)
    cam = make_camera_timeline(64, 1 / 60, 100, jitter=0.005, rng=rng)
    assert np.all(np.diff(cam.ct_k) > 0)
    assert 0 < cam.exposure <= cam.ct_frame
