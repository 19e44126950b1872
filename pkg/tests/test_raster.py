import json
import struct

import numpy as np
import pytest

from varifuse import (
    BandMatrix,
    FormatError,
    GeometryError,
    RasterImage,
    UnsupportedFormatError,
    create_raster,
    import_pgm,
    read_raster,
    write_raster,
)


def f32(a):
    # pre-quantize so VCR round trips are bit exact
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class TestRasterImage:
    def test_two_dimensional_input_becomes_single_band(self):
        img = RasterImage(np.zeros((4, 5)))
        assert (img.bands, img.height, img.width) == (1, 4, 5)

    def test_geometry_properties(self):
        img = RasterImage(np.zeros((3, 4, 5)))
        assert (img.width, img.height, img.bands) == (5, 4, 3)

    def test_data_is_copied_and_read_only(self):
        src = np.zeros((1, 2, 2))
        img = RasterImage(src)
        src[0, 0, 0] = 7.0
        assert img.data[0, 0, 0] == 0.0
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_rejects_bad_rank_and_nonfinite(self):
        with pytest.raises(GeometryError):
            RasterImage(np.zeros(4))
        with pytest.raises(GeometryError):
            RasterImage(np.zeros((1, 1, 2, 2)))
        with pytest.raises(GeometryError):
            RasterImage(np.array([[np.nan]]))

    def test_mask_shape_must_match_plane(self):
        with pytest.raises(GeometryError):
            RasterImage(np.zeros((1, 2, 2)), mask=np.ones((3, 3), dtype=bool))

    def test_wavelengths_validated(self):
        RasterImage(np.zeros((2, 2, 2)), wavelengths=[500.0, 600.0])
        with pytest.raises(GeometryError):
            RasterImage(np.zeros((2, 2, 2)), wavelengths=[500.0])
        with pytest.raises(GeometryError):
            RasterImage(np.zeros((2, 2, 2)), wavelengths=[500.0, -1.0])

    def test_with_data_keeps_metadata(self):
        img = RasterImage(np.zeros((2, 3, 3)), mask=np.ones((3, 3), dtype=bool),
                          wavelengths=[500.0, 600.0])
        out = img.with_data(np.ones((2, 3, 3)))
        assert np.array_equal(out.mask, img.mask)
        assert np.array_equal(out.wavelengths, img.wavelengths)
        assert out.data[0, 0, 0] == 1.0

    def test_band_view(self):
        img = RasterImage(np.arange(8.0).reshape(2, 2, 2))
        assert img.band(1)[0, 0] == 4.0


class TestBandMatrix:
    def test_rows_cols(self):
        m = BandMatrix(np.ones((2, 5)))
        assert (m.rows, m.cols) == (2, 5)

    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(GeometryError):
            BandMatrix(np.ones(3))
        with pytest.raises(GeometryError):
            BandMatrix(np.array([[np.inf]]))


class TestVcrRoundTrip:
    def test_plain_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = RasterImage(f32(rng.random((3, 7, 5))))
        path = tmp_path / "a.vcr"
        write_raster(path, img)
        back = read_raster(path)
        assert np.array_equal(back.data, img.data)
        assert back.mask is None and back.wavelengths is None

    def test_mask_and_wavelengths_survive(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = rng.random((4, 6)) > 0.3
        img = RasterImage(f32(rng.random((2, 4, 6))), mask=mask,
                          wavelengths=[450.0, 550.0])
        path = tmp_path / "b.vcr"
        write_raster(path, img)
        back = read_raster(path)
        assert np.array_equal(back.mask, mask)
        assert np.allclose(back.wavelengths, [450.0, 550.0])

    def test_write_quantizes_to_f32(self, tmp_path):
        img = RasterImage(np.full((1, 1, 1), 1.0 + 1e-12))
        path = tmp_path / "c.vcr"
        write_raster(path, img)
        assert read_raster(path).data[0, 0, 0] == np.float32(1.0 + 1e-12)

    def test_header_is_canonical_json(self, tmp_path):
        path = tmp_path / "d.vcr"
        write_raster(path, create_raster(2, 2, 1))
        blob = path.read_bytes()
        (hlen,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8:8 + hlen])
        assert header["dtype"] == "f32" and header["layout"] == "bsq"
        assert header["mask"] is False


class TestVcrErrors:
    def write_doctored(self, tmp_path, mutate):
        path = tmp_path / "x.vcr"
        write_raster(path, create_raster(2, 2, 1, fill=0.5))
        blob = bytearray(path.read_bytes())
        mutate(blob)
        path.write_bytes(bytes(blob))
        return path

    def test_bad_magic(self, tmp_path):
        path = self.write_doctored(tmp_path, lambda b: b.__setitem__(slice(0, 4), b"NOPE"))
        with pytest.raises(FormatError) as err:
            read_raster(path)
        assert err.value.offset == 0

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.vcr"
        path.write_bytes(b"VCR1")
        with pytest.raises(FormatError) as err:
            read_raster(path)
        assert err.value.expected == 8 and err.value.actual == 4

    def test_payload_size_mismatch_reports_counts(self, tmp_path):
        path = self.write_doctored(tmp_path, lambda b: b.extend(b"\0\0"))
        with pytest.raises(FormatError) as err:
            read_raster(path)
        assert err.value.expected == 16 and err.value.actual == 18

    def test_header_not_json(self, tmp_path):
        path = tmp_path / "j.vcr"
        bad = b"{not json"
        path.write_bytes(b"VCR1" + struct.pack("<I", len(bad)) + bad)
        with pytest.raises(FormatError):
            read_raster(path)

    def test_unsupported_dtype_and_layout(self, tmp_path):
        for key, val in (("dtype", "f64"), ("layout", "bip")):
            header = {"width": 1, "height": 1, "bands": 1, "dtype": "f32",
                      "layout": "bsq", "mask": False, key: val}
            hb = json.dumps(header).encode()
            path = tmp_path / f"{key}.vcr"
            path.write_bytes(b"VCR1" + struct.pack("<I", len(hb)) + hb + b"\0" * 4)
            with pytest.raises(UnsupportedFormatError):
                read_raster(path)

    def test_missing_header_key(self, tmp_path):
        hb = json.dumps({"width": 1}).encode()
        path = tmp_path / "m.vcr"
        path.write_bytes(b"VCR1" + struct.pack("<I", len(hb)) + hb)
        with pytest.raises(FormatError):
            read_raster(path)


class TestCreateRaster:
    def test_fill(self):
        img = create_raster(3, 2, 4, fill=0.25)
        assert img.data.shape == (4, 2, 3)
        assert np.all(img.data == 0.25)

    def test_invalid_geometry_or_fill(self):
        with pytest.raises(GeometryError):
            create_raster(0, 1, 1)
        with pytest.raises(GeometryError):
            create_raster(1, 1, 1, fill=np.nan)


class TestImportPgm:
    def test_8bit_values_scale_to_unit(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = import_pgm(path)
        assert img.bands == 1
        assert np.allclose(img.data[0], np.array([[0, 255], [128, 64]]) / 255.0)

    def test_16bit_big_endian(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P5\n1 2\n65535\n" + struct.pack(">HH", 0, 65535))
        img = import_pgm(path)
        assert np.allclose(img.data[0], [[0.0], [1.0]])

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n1 1\n255\n\x40")
        assert import_pgm(path).data[0, 0, 0] == pytest.approx(64 / 255)

    def test_ascii_variant_rejected(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P2\n1 1\n255\n64\n")
        with pytest.raises(UnsupportedFormatError):
            import_pgm(path)

    def test_truncated_pixels(self, tmp_path):
        path = tmp_path / "e.pgm"
        path.write_bytes(b"P5\n2 2\n255\n\x00\x01")
        with pytest.raises(FormatError) as err:
            import_pgm(path)
        assert err.value.expected == 4 and err.value.actual == 2

    def test_odd_maxval_rejected(self, tmp_path):
        path = tmp_path / "f.pgm"
        path.write_bytes(b"P5\n1 1\n100\n\x00")
        with pytest.raises(UnsupportedFormatError):
            import_pgm(path)
