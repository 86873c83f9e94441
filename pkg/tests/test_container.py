import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnnbench import container
from qnnbench.errors import FormatError, TruncationError, VersionError


def write_and_read(tmp_path, pairs, arrays):
    path = tmp_path / "x.qnn"
    container.save_container(path, pairs, arrays)
    return container.load_container(path)


class TestRoundTrip:
    def test_pairs_and_arrays(self, tmp_path):
        arrays = {
            "w": np.array([1.5, -2.25, 0.0, 1e-300]),
            "codes": np.array([[-3, 7], [0, 2]], dtype=np.int32),
            "empty": np.zeros(0, dtype=np.float64),
        }
        m = write_and_read(tmp_path, {"kind": "model", "name": "A2W2"}, arrays)
        assert m.pairs["kind"] == "model"
        assert m.require("name") == "A2W2"
        assert m.arrays["w"].dtype == np.float64
        assert np.array_equal(m.arrays["w"], arrays["w"])
        # arrays come back flattened; callers reshape from their own metadata
        assert m.arrays["codes"].dtype == np.int32
        assert np.array_equal(m.arrays["codes"], arrays["codes"].ravel())
        assert m.arrays["empty"].size == 0

    def test_array_order_preserved(self, tmp_path):
        arrays = {f"a{i}": np.array([float(i)]) for i in (3, 1, 2, 0)}
        m = write_and_read(tmp_path, {}, arrays)
        assert list(m.arrays) == ["a3", "a1", "a2", "a0"]

    @given(values=st.lists(st.floats(allow_nan=False, width=64), min_size=1, max_size=32))
    @settings(max_examples=30, deadline=None)
    def test_f64_bit_exact(self, values, tmp_path_factory):
        path = tmp_path_factory.mktemp("c") / "x.qnn"
        arr = np.array(values, dtype=np.float64)
        container.save_container(path, {}, {"v": arr})
        back = container.load_container(path).arrays["v"]
        assert back.tobytes() == arr.tobytes()

    def test_special_float_values(self, tmp_path):
        arr = np.array([np.inf, -np.inf, np.nan, -0.0])
        back = write_and_read(tmp_path, {}, {"v": arr}).arrays["v"]
        assert back.tobytes() == arr.tobytes()

    def test_value_with_spaces_and_equals(self, tmp_path):
        m = write_and_read(tmp_path, {"note": "a = b = c", "x": "1"}, {})
        assert m.pairs["note"] == "a = b = c"

    def test_save_guards(self, tmp_path):
        with pytest.raises(ValueError):
            container.save_container(tmp_path / "x.qnn", {}, {"bad name": np.zeros(1)})
        with pytest.raises(ValueError):
            container.save_container(tmp_path / "x.qnn", {}, {"w": np.zeros(1, dtype=np.int64)})
        with pytest.raises(ValueError):
            container.save_container(tmp_path / "x.qnn", {"k": "a\nb"}, {})


class TestParseErrors:
    def good_bytes(self):
        return (
            b"#qnn-container format_version=1\n"
            b"kind = test\n"
            b"array.0 = w f64 0 2\n"
            b"blob_bytes = 16\n---BLOB---\n" + np.array([1.0, 2.0]).tobytes()
        )

    def test_good_bytes_parse(self):
        m = container.parse_container(self.good_bytes())
        assert m.arrays["w"].tolist() == [1.0, 2.0]

    def test_bad_magic_offset_zero(self):
        data = self.good_bytes().replace(b"#qnn-container", b"#not-a-container")
        with pytest.raises(FormatError) as ei:
            container.parse_container(data)
        assert "byte offset 0" in str(ei.value)

    def test_unsupported_version_names_supported(self):
        data = self.good_bytes().replace(b"format_version=1", b"format_version=999")
        with pytest.raises(VersionError) as ei:
            container.parse_container(data)
        msg = str(ei.value)
        assert "999" in msg and "1" in msg

    def test_version_not_integer(self):
        data = self.good_bytes().replace(b"format_version=1", b"format_version=one")
        with pytest.raises(FormatError):
            container.parse_container(data)

    def test_missing_separator(self):
        with pytest.raises(FormatError) as ei:
            container.parse_container(b"#qnn-container format_version=1\nblob_bytes = 0\n")
        assert "---BLOB---" in str(ei.value)

    def test_truncated_blob_reports_offset_of_end(self):
        data = self.good_bytes()[:-8]
        with pytest.raises(TruncationError) as ei:
            container.parse_container(data)
        assert f"byte offset {len(data)}" in str(ei.value)
        assert "expected 16" in str(ei.value) and "found 8" in str(ei.value)

    def test_malformed_line_reports_line_offset(self):
        data = self.good_bytes().replace(b"kind = test", b"kind   test")
        with pytest.raises(FormatError) as ei:
            container.parse_container(data)
        # the bad line starts right after the 32-byte magic line
        assert "byte offset 32" in str(ei.value)

    def test_malformed_array_line(self):
        data = self.good_bytes().replace(b"array.0 = w f64 0 2", b"array.0 = w f64 0")
        with pytest.raises(FormatError):
            container.parse_container(data)

    def test_unknown_dtype(self):
        data = self.good_bytes().replace(b"w f64 0 2", b"w f16 0 2")
        with pytest.raises(FormatError) as ei:
            container.parse_container(data)
        assert "f16" in str(ei.value)

    def test_array_overruns_blob(self):
        data = self.good_bytes().replace(b"w f64 0 2", b"w f64 8 2")
        with pytest.raises(FormatError) as ei:
            container.parse_container(data)
        assert "overruns" in str(ei.value)

    def test_missing_blob_bytes(self):
        data = self.good_bytes().replace(b"blob_bytes = 16\n", b"")
        with pytest.raises(FormatError) as ei:
            container.parse_container(data)
        assert "blob_bytes" in str(ei.value)

    def test_comments_and_blank_lines_ignored(self):
        data = self.good_bytes().replace(
            b"kind = test\n", b"# a comment\n\nkind = test\n"
        )
        assert container.parse_container(data).pairs["kind"] == "test"

    def test_require_missing_key(self):
        m = container.parse_container(self.good_bytes())
        with pytest.raises(FormatError):
            m.require("absent")


class TestFormatFloat:
    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    @settings(max_examples=200, deadline=None)
    def test_round_trips_exactly(self, x):
        s = container.format_float(x)
        assert float(s) == x or (x == 0.0 and float(s) == x)

    def test_known_values(self):
        assert container.format_float(0.1) == "0.1"
        assert float(container.format_float(1 / 3)) == 1 / 3
