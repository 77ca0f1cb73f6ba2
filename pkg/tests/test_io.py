import base64
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rktd.errors import FormatError, InvalidArgumentError
from rktd.io import (
    RunRecord,
    load_model,
    model_from_bytes,
    model_to_bytes,
    parse_records,
    pnm_from_bytes,
    pnm_to_bytes,
    read_image,
    read_tensor,
    save_model,
    ten_from_bytes,
    ten_to_bytes,
    write_image,
    write_tensor,
)
from rktd.ktd import ktd_decompose
from rktd.randla import SketchConfig
from rktd.synth import synth_ktd

DATA = Path(__file__).parent / "data"
CANONICAL = ["gray2x2.pgm", "color3x2.ppm"]


class TestTen:
    def test_layout(self):
        buf = ten_to_bytes(np.arange(6.0).reshape(2, 3))
        assert buf[:4] == b"KTDT"
        assert struct.unpack_from("<BI", buf, 4) == (1, 2)
        assert struct.unpack_from("<2Q", buf, 9) == (2, 3)
        assert struct.unpack_from("<6d", buf, 25) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
        assert len(buf) == 25 + 48

    @given(arrays(np.float64, st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple),
                  elements=st.floats(allow_nan=False)))
    def test_round_trip_bitwise(self, t):
        buf = ten_to_bytes(t)
        back = ten_from_bytes(buf)
        assert back.shape == t.shape and back.tobytes() == t.tobytes()
        assert ten_to_bytes(back) == buf

    def test_file_round_trip(self, tmp_path, rng):
        t = rng.standard_normal((3, 2, 4))
        write_tensor(tmp_path / "a.ten", t)
        first = (tmp_path / "a.ten").read_bytes()
        write_tensor(tmp_path / "b.ten", read_tensor(tmp_path / "a.ten"))
        assert (tmp_path / "b.ten").read_bytes() == first

    @pytest.mark.parametrize("buf, offset", [
        (b"KTD", 3),
        (b"XXXX\x01\x01\x00\x00\x00", 0),
        (b"KTDT\x02\x01\x00\x00\x00", 4),
        (b"KTDT\x01\x02\x00\x00\x00" + struct.pack("<Q", 2), 17),
    ])
    def test_errors_carry_offsets(self, buf, offset):
        with pytest.raises(FormatError) as info:
            ten_from_bytes(buf)
        assert info.value.offset == offset
        assert f"offset {offset}" in str(info.value)

    def test_truncated_payload(self):
        buf = ten_to_bytes(np.ones(4))[:-3]
        with pytest.raises(FormatError, match="payload"):
            ten_from_bytes(buf)


class TestModelFile:
    def model(self):
        x, _ = synth_ktd("2,3x3,2", 3, seed=1)
        return ktd_decompose(x, "2,3x3,2", 3, "randomized", SketchConfig(rank=3, seed=2))

    def test_round_trip_bitwise(self, tmp_path):
        m = self.model()
        save_model(tmp_path / "m.ktdm", m)
        back = load_model(tmp_path / "m.ktdm")
        assert back.identical(m)
        assert back.metadata["method"] == "randomized"
        assert set(back.metadata["timings"]) == {"rearrange", "cpd", "assemble"}
        save_model(tmp_path / "n.ktdm", back)
        assert (tmp_path / "n.ktdm").read_bytes() == (tmp_path / "m.ktdm").read_bytes()

    def test_manifest_is_readable_json(self):
        doc = json.loads(model_to_bytes(self.model()))
        assert doc["format"] == "ktdm" and doc["grid"] == [[2, 3], [3, 2]]
        payload = base64.b64decode(doc["factors"][0][1])
        assert ten_from_bytes(payload).shape == (3, 2)

    def test_rejects_garbage(self):
        with pytest.raises(FormatError):
            model_from_bytes(b"{not json")
        with pytest.raises(FormatError):
            model_from_bytes(b'{"format": "other"}')

    def test_rejects_wrong_block_shape(self):
        doc = json.loads(model_to_bytes(self.model()))
        doc["factors"][0][0] = base64.b64encode(ten_to_bytes(np.ones((3, 3)))).decode()
        with pytest.raises(FormatError, match="block 0"):
            model_from_bytes(json.dumps(doc).encode())


class TestPnm:
    def test_gray_fixture(self):
        t = read_image(DATA / "gray2x2.pgm")
        np.testing.assert_array_equal(t, [[0, 255], [128, 64]])
        assert t.dtype == np.float64

    def test_color_fixture(self):
        t = read_image(DATA / "color3x2.ppm")
        assert t.shape == (2, 3, 3)
        assert t[0, 1, 2] == 14 * 5 and t[1, 2, 0] == 14 * 15

    @pytest.mark.parametrize("name", CANONICAL)
    def test_canonical_round_trip(self, tmp_path, name):
        raw = (DATA / name).read_bytes()
        write_image(tmp_path / name, read_image(DATA / name))
        assert (tmp_path / name).read_bytes() == raw

    def test_comments_parsed(self):
        np.testing.assert_array_equal(read_image(DATA / "commented.pgm"), [[9, 8, 7]])
        assert pnm_to_bytes([[9, 8, 7]]) == b"P5\n3 1\n255\n\x09\x08\x07"

    def test_clamp_and_round_half_away(self):
        out = pnm_to_bytes(np.array([[-4.0, 0.5, 1.5, 2.4999, 300.0]]))
        assert out.endswith(bytes([0, 1, 2, 2, 255]))

    def test_sixteen_bit_rejected(self):
        with pytest.raises(FormatError, match="maxval 65535") as info:
            pnm_from_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        assert info.value.offset == 7

    def test_truncated(self):
        with pytest.raises(FormatError, match="truncated") as info:
            pnm_from_bytes(b"P5\n2 2\n255\n\x00\x01")
        assert info.value.offset == 13

    @pytest.mark.parametrize("buf", [b"P3\n1 1\n255\n0", b"P5\n2 x\n255\n", b"P5\n2 2", b"P5\n0 2\n255\n"])
    def test_malformed_headers(self, buf):
        with pytest.raises(FormatError, match="offset"):
            pnm_from_bytes(buf)

    def test_bad_shape_for_writing(self):
        with pytest.raises(InvalidArgumentError):
            pnm_to_bytes(np.zeros((2, 2, 2)))

    @given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.sampled_from([1, 3]))))
    def test_byte_images_round_trip(self, img):
        img = img[:, :, 0] if img.shape[2] == 1 else img
        buf = pnm_to_bytes(img.astype(float))
        assert pnm_to_bytes(pnm_from_bytes(buf)) == buf
        np.testing.assert_array_equal(pnm_from_bytes(buf), img)


class TestRecords:
    def test_round_trip(self):
        rec = RunRecord("decompose", {"rank": 3, "grid": "2x2"}, {"cpd": 1.5}, {"relative_error": 1e-12},
                        7, {"a.ktdm": "ab"}, {"rel_change": [0.1, 0.01]})
        back = RunRecord.from_json(rec.to_json())
        assert back == rec
        assert parse_records(rec.to_json() + "\n\n" + rec.to_json()) == [rec, rec]

    def test_negative_timing_rejected(self):
        with pytest.raises(InvalidArgumentError):
            RunRecord("x", timings_ms={"a": -1.0})

    def test_schema_checked(self):
        with pytest.raises(FormatError):
            RunRecord.from_json('{"command": "x", "schema": 99}')
