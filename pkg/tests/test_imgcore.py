import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from motionflow.imgcore import (
    DomainError,
    FlowDomain,
    FlowFormatError,
    ImageDecodeError,
    MotionFlow,
    check_image,
    flow_from_bytes,
    flow_to_bytes,
    load_image,
    read_flow,
    save_image,
    write_flow,
)


def _png(path, arr, mode):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)
    return path


class TestLoadImage:
    def test_white_pixel(self, tmp_path):
        img = load_image(_png(tmp_path / "w.png", [[[255, 255, 255]]], "RGB"))
        assert img.shape == (1, 1, 3)
        assert np.array_equal(img, np.ones((1, 1, 3)))

    def test_black_pixel(self, tmp_path):
        img = load_image(_png(tmp_path / "b.png", [[[0, 0, 0]]], "RGB"))
        assert np.all(img == 0.0)

    def test_gray_division(self, tmp_path):
        img = load_image(_png(tmp_path / "g.png", [[128, 64]], "L"))
        assert img.shape == (1, 2, 1)
        assert img[0, 0, 0] == 128 / 255 and img[0, 1, 0] == 64 / 255

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_garbage_file(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"not a png at all")
        with pytest.raises(ImageDecodeError):
            load_image(p)

    def test_16bit_rejected(self, tmp_path):
        p = tmp_path / "deep.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(p)
        with pytest.raises(ImageDecodeError):
            load_image(p)


class TestSaveImage:
    def test_roundtrip_quantized_grid(self, tmp_path, rng):
        x = rng.integers(0, 256, (5, 7, 3)) / 255.0
        save_image(x, tmp_path / "x.png")
        assert np.array_equal(load_image(tmp_path / "x.png"), x)

    def test_half_stores_128(self, tmp_path):
        save_image(np.full((1, 1, 1), 0.5), tmp_path / "h.png")
        assert np.asarray(Image.open(tmp_path / "h.png"))[0, 0] == 128

    @pytest.mark.parametrize("bad", [1.2, -0.1, np.nan])
    def test_out_of_range_rejected(self, tmp_path, bad):
        p = tmp_path / "bad.png"
        with pytest.raises(ValueError):
            save_image(np.full((2, 2, 3), bad), p)
        assert not p.exists()


def test_check_image_promotes_gray():
    assert check_image(np.zeros((3, 4))).shape == (3, 4, 1)
    with pytest.raises(ValueError):
        check_image(np.zeros((3, 4, 2)))


class TestFlowFormat:
    def test_zero_flow_layout(self, tmp_path):
        write_flow(MotionFlow.zeros(4, 4), tmp_path / "z.mflw")
        data = (tmp_path / "z.mflw").read_bytes()
        assert data[:4] == b"MFLW"
        assert struct.unpack("<HII", data[4:14]) == (1, 4, 4)
        assert data[14:] == bytes(4 * 4 * 4)
        assert read_flow(tmp_path / "z.mflw") == MotionFlow.zeros(4, 4)

    def test_first_vector_bytes(self, tmp_path):
        u = np.zeros((2, 3), int)
        v = np.zeros((2, 3), int)
        u[0, 0], v[0, 0] = 3, -2
        write_flow(MotionFlow(u, v), tmp_path / "f.mflw")
        payload = (tmp_path / "f.mflw").read_bytes()[14:]
        assert payload[:4] == struct.pack("<hh", 3, -2)

    def test_row_major_order(self, tmp_path):
        u = np.arange(6).reshape(2, 3)
        write_flow(MotionFlow(u, -u), tmp_path / "f.mflw")
        vals = np.frombuffer((tmp_path / "f.mflw").read_bytes()[14:], "<i2")
        assert list(vals[0::2]) == [0, 1, 2, 3, 4, 5]
        assert struct.unpack("<II", (tmp_path / "f.mflw").read_bytes()[6:14]) == (3, 2)

    def test_bad_magic(self):
        data = b"XXXX" + struct.pack("<HII", 1, 1, 1) + bytes(4)
        with pytest.raises(FlowFormatError) as exc:
            flow_from_bytes(data)
        assert exc.value.offset == 0

    def test_bad_version(self):
        with pytest.raises(FlowFormatError) as exc:
            flow_from_bytes(b"MFLW" + struct.pack("<HII", 9, 1, 1) + bytes(4))
        assert exc.value.offset == 4

    def test_truncated(self):
        good = b"MFLW" + struct.pack("<HII", 1, 2, 2) + bytes(16)
        for cut in (3, 10, len(good) - 1):
            with pytest.raises(FlowFormatError):
                flow_from_bytes(good[:cut])
        with pytest.raises(FlowFormatError):
            flow_from_bytes(good + b"\0")

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_roundtrip_property(self, h, w, seed):
        r = np.random.default_rng(seed)
        flow = MotionFlow(r.integers(-300, 300, (h, w)), r.integers(-300, 300, (h, w)))
        assert flow_from_bytes(flow_to_bytes(flow)) == flow


class TestFlowDomain:
    def test_cardinality_paper_scale(self):
        dom = FlowDomain(36, 36)
        assert (dom.n_u, dom.n_v, dom.n_labels) == (37, 73, 110)

    def test_origin_labels(self):
        assert FlowDomain(5, 4).label_of(0, 0) == (0, 4)

    def test_exhaustive_roundtrip(self):
        dom = FlowDomain(3, 3)
        seen = set()
        for u in range(0, 4):
            for v in range(-3, 4):
                lab = dom.label_of(u, v)
                seen.add(lab)
                assert dom.motion_of(*lab) == (u, v)
        assert len(seen) == 4 * 7

    def test_array_labels(self):
        dom = FlowDomain(2, 2)
        ul, vl = dom.label_of(np.array([0, 2]), np.array([-2, 1]))
        assert list(ul) == [0, 2] and list(vl) == [0, 3]

    @pytest.mark.parametrize("m", [(-1, 0), (4, 0), (0, 4), (0, -4)])
    def test_out_of_domain(self, m):
        with pytest.raises(DomainError):
            FlowDomain(3, 3).label_of(*m)

    def test_bad_labels(self):
        with pytest.raises(DomainError):
            FlowDomain(3, 3).motion_of(4, 0)

    def test_flat_labels(self):
        dom = FlowDomain(8, 8)
        assert dom.flat_label(0, -8) == (0, 9)
        assert dom.flat_label(8, 8) == (8, 25)


class TestMotionFlow:
    def test_immutable(self):
        f = MotionFlow.zeros(2, 2)
        with pytest.raises(ValueError):
            f.u[0, 0] = 1

    def test_rejects_fractional(self):
        with pytest.raises(ValueError):
            MotionFlow(np.full((2, 2), 0.5), np.zeros((2, 2)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            MotionFlow(np.zeros((2, 2), int), np.zeros((2, 3), int))

    def test_domain_check(self):
        f = MotionFlow(np.array([[9]]), np.array([[0]]))
        assert not f.in_domain(FlowDomain(8, 8))
        with pytest.raises(DomainError):
            f.check_domain(FlowDomain(8, 8))
