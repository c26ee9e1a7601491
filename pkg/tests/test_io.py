import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcca_lab import io
from mcca_lab.errors import InvalidConfigError


class TestMatrixFile:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(1, 5)),
                  elements=st.floats(allow_nan=True, allow_infinity=True, width=64)))
    def test_round_trip_bit_exact(self, tmp_path_factory, data):
        path = tmp_path_factory.mktemp("m") / "x.mvwm"
        io.write_matrix(path, data)
        back = io.read_matrix(path)
        assert back.shape == data.shape
        assert back.tobytes() == np.ascontiguousarray(data).tobytes()

    def test_layout(self, tmp_path):
        path = tmp_path / "x.mvwm"
        io.write_matrix(path, np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        raw = path.read_bytes()
        assert raw[:5] == b"MVWM1"
        assert struct.unpack("<QQ", raw[5:21]) == (3, 2)
        assert struct.unpack("<6d", raw[21:]) == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)

    def test_one_dimensional_becomes_column(self, tmp_path):
        io.write_matrix(tmp_path / "x.mvwm", np.arange(4.0))
        assert io.read_matrix(tmp_path / "x.mvwm").shape == (4, 1)

    def test_sidecar(self, tmp_path):
        io.write_matrix(tmp_path / "x.mvwm", np.ones((2, 2)), {"view_id": 3, "sample_rate_hz": 64.0})
        assert io.read_matrix_meta(tmp_path / "x.mvwm") == {"view_id": "3", "sample_rate_hz": "64.0"}

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.mvwm").write_bytes(b"NOPE!" + bytes(16))
        with pytest.raises(InvalidConfigError, match="magic"):
            io.read_matrix(tmp_path / "x.mvwm")

    def test_truncated_payload(self, tmp_path):
        io.write_matrix(tmp_path / "x.mvwm", np.ones((3, 3)))
        raw = (tmp_path / "x.mvwm").read_bytes()
        (tmp_path / "x.mvwm").write_bytes(raw[:-8])
        with pytest.raises(InvalidConfigError, match="payload"):
            io.read_matrix(tmp_path / "x.mvwm")


class TestText:
    def test_kv_comments_and_spacing(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# header\na = 1\n  b=two  # trailing\n\nc = 1,2,3\n")
        assert io.read_kv(tmp_path / "c.cfg") == {"a": "1", "b": "two", "c": "1,2,3"}

    def test_kv_rejects_bare_token(self, tmp_path):
        (tmp_path / "c.cfg").write_text("a = 1\noops\n")
        with pytest.raises(InvalidConfigError, match=":2:"):
            io.read_kv(tmp_path / "c.cfg")

    def test_parse_float_infinities(self):
        assert io.parse_float("inf") == float("inf")
        assert io.parse_float("-inf") == float("-inf")
        assert io.parse_float(" 2.5 ") == 2.5

    def test_record_round_trip(self, tmp_path):
        recs = [{"kind": "corr", "subject": 1, "value": 0.125}, {"kind": "dprime", "duration": 2.0}]
        io.write_records(tmp_path / "r.txt", recs)
        assert io.read_records(tmp_path / "r.txt") == [
            {"kind": "corr", "subject": "1", "value": "0.125"}, {"kind": "dprime", "duration": "2.0"}]

    def test_float_format_is_exact(self):
        x = 0.1 + 0.2
        assert float(io.format_value(x)) == x

    def test_malformed_record(self):
        with pytest.raises(InvalidConfigError):
            io.parse_record("a=1 b")


class TestContainer:
    def test_round_trip(self, tmp_path):
        arrays = [("w", np.arange(6.0).reshape(2, 3)), ("b", np.array([1.5, -2.0]))]
        io.write_container(tmp_path / "m.bin", "LMCCA1", {"lag": 4}, arrays)
        header, back = io.read_container(tmp_path / "m.bin", "LMCCA1")
        assert header["lag"] == 4
        for name, a in arrays:
            np.testing.assert_array_equal(back[name], a)

    def test_wrong_magic(self, tmp_path):
        io.write_container(tmp_path / "m.bin", "LMCCA1", {}, [])
        with pytest.raises(InvalidConfigError):
            io.read_container(tmp_path / "m.bin", "DMCCA1")

    def test_trailing_bytes(self, tmp_path):
        io.write_container(tmp_path / "m.bin", "DMCCA1", {}, [("a", np.ones(2))])
        with open(tmp_path / "m.bin", "ab") as fh:
            fh.write(b"x")
        with pytest.raises(InvalidConfigError, match="trailing"):
            io.read_container(tmp_path / "m.bin", "DMCCA1")
