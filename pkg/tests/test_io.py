import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repgelan.boxes import Detection, format_detections, iou_xyxy, parse_detections
from repgelan.config import bundled_config, parse_config
from repgelan.data import GroundTruthBox, image_size, load_image, parse_label_file, write_pgm
from repgelan.exceptions import FormatError
from repgelan.graph import build_graph, fuse_graph, same_graph
from repgelan.oracles import raster_iou
from repgelan.weights import MAGIC, load_weights, read_weights, save_weights


class TestLabels:
    def test_denormalize(self):
        assert parse_label_file("0 0.5 0.5 0.25 0.25", 640, 640) == [(0, 240, 240, 400, 400)]

    def test_non_square(self):
        assert parse_label_file("1 0.5 0.5 0.5 0.5\n", 200, 100) == [(1, 50, 25, 150, 75)]

    def test_empty(self):
        assert parse_label_file("", 64, 64) == []
        assert parse_label_file("\n  \n", 64, 64) == []

    @pytest.mark.parametrize("text, line", [
        ("0 1.5 0.5 0.1 0.1", 1),
        ("0 0.5 0.5 0.1 0.1\n0 0.5 abc 0.1 0.1", 2),
        ("-1 0.5 0.5 0.1 0.1", 1),
        ("0 0.5 0.5 0.1", 1),
        ("0 0.95 0.5 0.2 0.1", 1),
        ("0 0.5 0.5 0 0.1", 1),
    ])
    def test_errors_carry_line(self, text, line):
        with pytest.raises(FormatError) as exc:
            parse_label_file(text, 64, 64)
        assert exc.value.line == line
        assert str(exc.value).startswith(f"line {line}:")

    def test_slack_at_border(self):
        GroundTruthBox(0, 0.1, 0.5, 0.2 + 5e-7, 0.2)
        with pytest.raises(ValueError):
            GroundTruthBox(0, 0.1, 0.5, 0.2 + 1e-3, 0.2)


class TestImages:
    def test_scaling(self, tmp_path):
        path = tmp_path / "a.pgm"
        write_pgm(path, np.array([[0, 128], [255, 64]]))
        x = load_image(path.read_bytes())
        assert x.shape == (1, 1, 2, 2) and x.dtype == np.float32
        np.testing.assert_allclose(x.ravel(), [0, 128 / 255, 1, 64 / 255], rtol=1e-6)
        assert image_size(path) == (2, 2)

    def test_sixteen_bit_and_comment(self):
        data = b"P5\n# made by hand\n1 1\n1000\n" + struct.pack(">H", 250)
        assert load_image(data).item() == pytest.approx(0.25)

    def test_ascii_rejected(self):
        with pytest.raises(FormatError, match="P5"):
            load_image(b"P2\n1 1\n255\n0\n")

    def test_truncated(self):
        with pytest.raises(FormatError, match="truncated"):
            load_image(b"P5\n4 4\n255\n" + bytes(10))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 65535), st.integers(0, 999))
    def test_range(self, w, h, maxval, seed):
        px = np.random.default_rng(seed).integers(0, maxval + 1, (h, w))
        dtype = ">u2" if maxval > 255 else "u1"
        x = load_image(f"P5\n{w} {h}\n{maxval}\n".encode() + px.astype(dtype).tobytes())
        assert x.min() >= 0 and x.max() <= 1


class TestDetectionsAndIou:
    def test_line_round_trip(self):
        dets = [Detection((1.5, 2, 30.25, 40), 0.875, 0), Detection((0, 0, 1, 1), 0.1, 2)]
        text = format_detections(dets)
        assert text.splitlines()[0] == "0 0.875 1.5 2 30.25 40"
        assert parse_detections(text) == dets

    def test_bad_lines(self):
        with pytest.raises(FormatError) as exc:
            parse_detections("0 0.5 0 0 1 1\n0 x 0 0 1 1\n")
        assert exc.value.line == 2
        with pytest.raises(FormatError):
            parse_detections("0 1.5 0 0 1 1")
        with pytest.raises(FormatError):
            parse_detections("0 0.5 0 0 0 1")

    def test_iou_examples(self):
        assert iou_xyxy((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
        assert iou_xyxy((0, 0, 2, 2), (5, 5, 6, 6)) == 0.0
        assert iou_xyxy((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)
        assert raster_iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            iou_xyxy((0, 0, 0, 2), (0, 0, 1, 1))

    @settings(max_examples=100, deadline=None)
    @given(*[st.floats(0, 50, allow_nan=False) for _ in range(4)], st.floats(0.5, 20), st.floats(0.5, 20),
           st.floats(0.5, 20), st.floats(0.5, 20))
    def test_iou_properties(self, ax, ay, bx, by, aw, ah, bw, bh):
        a, b = (ax, ay, ax + aw, ay + ah), (bx, by, bx + bw, by + bh)
        v = iou_xyxy(a, b)
        assert 0 <= v <= 1
        assert v == iou_xyxy(b, a)
        assert iou_xyxy(a, a) == 1.0


class TestWeights:
    def test_round_trip(self, toy_graph, tmp_path):
        path = tmp_path / "toy.rgw"
        save_weights(toy_graph, path)
        assert path.read_bytes()[:4] == MAGIC
        entries = read_weights(path)
        assert [n for n, _ in entries] == [n.name for n in toy_graph.nodes]
        # a graph with other random weights becomes bitwise equal after loading
        other = build_graph(parse_config(bundled_config("toy.cfg")), 128, seed=99)
        assert not same_graph(other, toy_graph)
        assert same_graph(load_weights(other, path), toy_graph)

    def test_structure_mismatch(self, toy_graph, tmp_path):
        path = tmp_path / "fused.rgw"
        save_weights(fuse_graph(toy_graph), path)
        with pytest.raises(FormatError):
            load_weights(toy_graph, path)

    def test_corrupt(self, toy_graph, tmp_path):
        path = tmp_path / "w.rgw"
        save_weights(toy_graph, path)
        data = path.read_bytes()
        (tmp_path / "short.rgw").write_bytes(data[:-4])
        (tmp_path / "magic.rgw").write_bytes(b"XXXX" + data[4:])
        (tmp_path / "header.rgw").write_bytes(data[:10])
        for name in ("short.rgw", "magic.rgw", "header.rgw"):
            with pytest.raises(FormatError):
                read_weights(tmp_path / name)
