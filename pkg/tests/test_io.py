import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kerneldist import GaussianKernel, WeightedPointSet
from kerneldist import io as kio
from kerneldist.errors import InvalidParameterError, ParseError
from kerneldist.features import (draw_frequencies, embed, kernel_distance_features,
                                 make_taylor_basis)


class TestCsv:
    def test_basic(self):
        f = kio.parse_csv("x1,x2\n0,1\n2.5,-3\n")
        np.testing.assert_array_equal(f.points.coords, [[0, 1], [2.5, -3]])
        np.testing.assert_array_equal(f.points.masses, [1, 1])
        assert f.normals is None

    def test_column_order_and_spaces(self):
        f = kio.parse_csv("w, x2, x1\n2, 1, 0\n")
        np.testing.assert_array_equal(f.points.coords, [[0, 1]])
        assert f.points.masses[0] == 2.0

    def test_blank_lines_skipped(self):
        f = kio.parse_csv("x1\n1\n\n2\n")
        assert f.points.n == 2

    def test_header_only_is_empty_set(self):
        f = kio.parse_csv("x1,x2,x3\n")
        assert f.points.n == 0 and f.points.dim == 3

    @pytest.mark.parametrize("text,line", [
        ("x1,x2\n0,1\n0,abc\n", 3),
        ("x1,x2\n0,1\n0\n", 3),
        ("x1,w\n0,1\n1,0\n", 3),
        ("x1,w\n0,-2\n", 2),
        ("x1,x2\n0,nan\n", 2),
        ("x1,x2\n0,1\n1,2\n5,inf\n", 4),
    ])
    def test_error_line_numbers(self, text, line):
        with pytest.raises(ParseError) as ei:
            kio.parse_csv(text)
        assert ei.value.line == line
        assert str(ei.value).startswith(f"line {line}: ")
        assert ei.value.exit_code == 2

    @pytest.mark.parametrize("text", ["", "x1,x1\n0,0\n", "x1,y\n0,0\n", "x2\n0\n", "w\n1\n",
                                      "x1,x2,u1\n0,0,1\n"])
    def test_bad_headers(self, text):
        with pytest.raises(ParseError):
            kio.parse_csv(text)

    def test_normals_within_tolerance(self):
        f = kio.parse_csv("x1,x2,u1,u2\n0,0,1.0000005,0\n")
        np.testing.assert_allclose(f.normals, [[1.0, 0.0]])
        assert f.oriented.normals.shape == (1, 2)

    def test_normals_outside_tolerance(self):
        with pytest.raises(ParseError) as ei:
            kio.parse_csv("x1,x2,u1,u2\n0,0,1,0\n0,0,0.6,0.6\n")
        assert ei.value.line == 3

    def test_oriented_without_normals(self):
        with pytest.raises(InvalidParameterError):
            kio.parse_csv("x1\n0\n").oriented

    def test_round_trip_exact(self, rng, tmp_path):
        P = WeightedPointSet(rng.standard_normal((50, 3)) * 1e3, rng.uniform(0.1, 10, 50))
        N = rng.standard_normal((50, 3))
        N /= np.linalg.norm(N, axis=1, keepdims=True)
        path = tmp_path / "p.csv"
        kio.write_points(path, P, N)
        f = kio.read_points(path)
        np.testing.assert_array_equal(f.points.coords, P.coords)
        np.testing.assert_array_equal(f.points.masses, P.masses)
        np.testing.assert_allclose(f.normals, N, rtol=0, atol=1e-15)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
positive = st.floats(min_value=1e-300, max_value=1e300, allow_nan=False)


class TestCsvProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 4).flatmap(lambda d: st.tuples(
        arrays(np.float64, st.tuples(st.integers(0, 12), st.just(d)), elements=finite),
        st.just(d))), st.data())
    def test_round_trip_bit_exact(self, Xd, data):
        X, d = Xd
        w = data.draw(arrays(np.float64, X.shape[0], elements=positive))
        P = WeightedPointSet(X, w, dim=d)
        f = kio.parse_csv(kio.format_csv(P))
        assert f.points.dim == d
        np.testing.assert_array_equal(f.points.coords, P.coords)
        np.testing.assert_array_equal(f.points.masses, P.masses)


class TestJson:
    def test_rows(self):
        f = kio.parse_json('[{"x1": 0, "x2": 1, "w": 2}, {"x1": 3, "x2": 4, "w": 1}]')
        np.testing.assert_array_equal(f.points.coords, [[0, 1], [3, 4]])
        np.testing.assert_array_equal(f.points.masses, [2, 1])

    def test_columns(self):
        f = kio.parse_json('{"x1": [0, 3], "x2": [1, 4]}')
        np.testing.assert_array_equal(f.points.coords, [[0, 1], [3, 4]])

    @pytest.mark.parametrize("text", [
        '{"x1": [0, 3], "x2": [1]}',
        '{"x1": 0}',
        '[{"x1": 0}, {"x2": 1}]',
        '[]',
        '3',
        '{"x1": [0, "a"]}',
        '{"x1": [0], "w": [0]}',
    ])
    def test_errors(self, text):
        with pytest.raises(ParseError):
            kio.parse_json(text)

    def test_syntax_error_line(self):
        with pytest.raises(ParseError) as ei:
            kio.parse_json('{\n"x1": [0,\n 1,,]\n}')
        assert ei.value.line == 3

    def test_round_trip(self, rng, tmp_path):
        P = WeightedPointSet(rng.standard_normal((20, 2)), rng.uniform(0.1, 10, 20))
        path = tmp_path / "p.json"
        kio.write_points(path, P)
        f = kio.read_points(path)
        np.testing.assert_array_equal(f.points.coords, P.coords)
        np.testing.assert_array_equal(f.points.masses, P.masses)


class TestReadPoints:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            kio.read_points(tmp_path / "nope.csv")

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_bytes(b"x1\n\xff\xfe\n")
        with pytest.raises(ParseError):
            kio.read_points(path)

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("x1\n0\n")
        with pytest.raises(InvalidParameterError):
            kio.read_points(path, fmt="xml")

    def test_format_override(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text('{"x1": [1, 2]}')
        assert kio.read_points(path, fmt="json").points.n == 2


@pytest.fixture
def sample_sets(rng):
    P = WeightedPointSet(rng.uniform(-1, 1, (30, 2)), rng.uniform(0.5, 2, 30))
    Q = WeightedPointSet(rng.uniform(-1, 1, (25, 2)))
    return P, Q


class TestFeatureBinary:
    def test_rff_round_trip(self, sample_sets):
        P, _ = sample_sets
        fv = embed(draw_frequencies(1.0, 2, 64, 7), P)
        back = kio.feature_from_bytes(kio.feature_bytes(fv))
        np.testing.assert_array_equal(back.values, fv.values)
        assert back.basis.key == fv.basis.key and back.mass == fv.mass

    def test_ifgt_round_trip(self, sample_sets):
        P, Q = sample_sets
        basis = make_taylor_basis(1.0, [0.1, -0.2], 5)
        fp, fq = embed(basis, P), embed(basis, Q)
        bp = kio.feature_from_bytes(kio.feature_bytes(fp))
        bq = kio.feature_from_bytes(kio.feature_bytes(fq))
        assert kernel_distance_features(bp, bq) == kernel_distance_features(fp, fq)

    def test_header_layout(self, sample_sets):
        P, _ = sample_sets
        fv = embed(draw_frequencies(2.0, 2, 16, 99), P)
        data = kio.feature_bytes(fv)
        assert data[:4] == b"KDFV"
        assert struct.unpack_from("<I", data, 4)[0] == 1
        assert struct.unpack_from("<I", data, 8)[0] == 1
        assert struct.unpack_from("<I", data, 12)[0] == 2
        assert struct.unpack_from("<Q", data, 16)[0] == 16
        assert struct.unpack_from("<d", data, 24)[0] == 2.0
        assert struct.unpack_from("<d", data, 32)[0] == P.total_mass
        assert struct.unpack_from("<Q", data, 40)[0] == 99
        assert len(data) == 48 + 16 * 8
        np.testing.assert_array_equal(np.frombuffer(data[48:], "<f8"), fv.values)

    def test_ifgt_block(self, sample_sets):
        P, _ = sample_sets
        basis = make_taylor_basis(1.0, [0.5, -0.25], 3)
        data = kio.feature_bytes(embed(basis, P))
        assert struct.unpack_from("<I", data, 8)[0] == 2
        assert struct.unpack_from("<Q", data, 40)[0] == 3
        assert struct.unpack_from("<2d", data, 48) == (0.5, -0.25)
        assert len(data) == 64 + 8 * basis.rho

    def test_bad_magic(self, sample_sets):
        data = bytearray(kio.feature_bytes(embed(draw_frequencies(1.0, 2, 8, 0), sample_sets[0])))
        data[:4] = b"XXXX"
        with pytest.raises(ParseError, match="magic"):
            kio.feature_from_bytes(bytes(data))

    def test_bad_version(self, sample_sets):
        data = bytearray(kio.feature_bytes(embed(draw_frequencies(1.0, 2, 8, 0), sample_sets[0])))
        struct.pack_into("<I", data, 4, 2)
        with pytest.raises(ParseError, match="version"):
            kio.feature_from_bytes(bytes(data))

    def test_bad_tag(self, sample_sets):
        data = bytearray(kio.feature_bytes(embed(draw_frequencies(1.0, 2, 8, 0), sample_sets[0])))
        struct.pack_into("<I", data, 8, 9)
        with pytest.raises(ParseError):
            kio.feature_from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [0, 10, 47, 50, -8, -1])
    def test_truncated(self, sample_sets, cut):
        data = kio.feature_bytes(embed(draw_frequencies(1.0, 2, 8, 0), sample_sets[0]))
        with pytest.raises(ParseError):
            kio.feature_from_bytes(data[:cut])

    def test_trailing_bytes(self, sample_sets):
        data = kio.feature_bytes(embed(draw_frequencies(1.0, 2, 8, 0), sample_sets[0]))
        with pytest.raises(ParseError):
            kio.feature_from_bytes(data + b"\0" * 8)

    def test_ifgt_rho_mismatch(self, sample_sets):
        basis = make_taylor_basis(1.0, [0.0, 0.0], 3)
        data = bytearray(kio.feature_bytes(embed(basis, sample_sets[0])))
        struct.pack_into("<Q", data, 40, 4)
        with pytest.raises(ParseError):
            kio.feature_from_bytes(bytes(data))

    def test_file_round_trip(self, sample_sets, tmp_path):
        fv = embed(draw_frequencies(1.0, 2, 32, 5), sample_sets[0])
        kio.write_features(tmp_path / "f.bin", fv)
        back = kio.read_features(tmp_path / "f.bin")
        np.testing.assert_array_equal(back.values, fv.values)
        with pytest.raises(ParseError):
            kio.read_features(tmp_path / "missing.bin")


class TestReports:
    def test_basis_dict(self):
        assert kio.basis_dict(draw_frequencies(1.0, 2, 8, 3)) == {
            "basis": "rff", "rho": 8, "sigma": 1.0, "seed": 3}
        b = kio.basis_dict(make_taylor_basis(1.0, [0.0, 1.0], 2))
        assert b["basis"] == "ifgt" and b["tau"] == 2 and b["center"] == [0.0, 1.0]
        with pytest.raises(InvalidParameterError):
            kio.basis_dict(object())

    def test_dumps_sorted_and_strict(self):
        text = kio.dumps_report({"b": 1, "a": [1.5]})
        assert text.endswith("\n") and text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [1.5], "b": 1}
        with pytest.raises(ValueError):
            kio.dumps_report({"a": float("nan")})
