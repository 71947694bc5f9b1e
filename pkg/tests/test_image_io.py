"""
Unit tests for PFM, RGBE and PNG codecs
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.utils.errors import InvalidArgumentError, ParseError
from src.utils.image_io import (float_to_rgbe, read_image, read_pfm, read_rgbe, rgbe_to_float, write_pfm,
                                write_png, write_rgbe)


class TestPFM:
    """Test portable float maps"""

    def test_colour_round_trip_keeps_row_order(self, tmp_path):
        image = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
        write_pfm(tmp_path / "a.pfm", image)
        back = read_pfm(tmp_path / "a.pfm")
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, image)

    def test_greyscale_is_written_as_pf_lower(self, tmp_path):
        write_pfm(tmp_path / "v.pfm", np.full((4, 5), 0.25))
        assert (tmp_path / "v.pfm").read_bytes().startswith(b"Pf\n5 4\n")
        assert read_pfm(tmp_path / "v.pfm").shape == (4, 5, 1)

    def test_big_endian_payload(self, tmp_path):
        payload = np.array([1.0, 2.0, 3.0], dtype=">f4").tobytes()
        (tmp_path / "b.pfm").write_bytes(b"PF\n1 1\n1.0\n" + payload)
        np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm")[0, 0], [1.0, 2.0, 3.0])

    def test_bad_identifier(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n-1.0\n" + bytes(12))
        with pytest.raises(ParseError) as err:
            read_pfm(tmp_path / "x.pfm")
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "t.pfm").write_bytes(b"PF\n2 2\n-1.0\n" + bytes(20))
        with pytest.raises(ParseError):
            read_pfm(tmp_path / "t.pfm")

    def test_rejects_two_channels(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_pfm(tmp_path / "c.pfm", np.zeros((2, 2, 2)))


class TestRGBE:
    """Test Radiance HDR encoding"""

    def test_unit_value_encodes_exactly(self):
        rgbe = float_to_rgbe(np.array([[1.0, 0.5, 0.0]]))
        assert rgbe[0].tolist() == [128, 64, 0, 129]
        np.testing.assert_array_equal(rgbe_to_float(rgbe), [[1.0, 0.5, 0.0]])

    def test_zero_exponent_is_black(self):
        np.testing.assert_array_equal(rgbe_to_float(np.array([[200, 10, 3, 0]], dtype=np.uint8)), 0.0)

    @pytest.mark.parametrize("width", [4, 40, 300])
    def test_file_round_trip(self, tmp_path, width):
        rng = np.random.default_rng(width)
        image = (10.0 ** rng.uniform(-2, 2, size=(3, width, 1)) * np.ones(3)).astype(np.float32)
        write_rgbe(tmp_path / "e.hdr", image)
        back = read_rgbe(tmp_path / "e.hdr")
        np.testing.assert_allclose(back, image, rtol=0.01)

    def test_missing_magic(self, tmp_path):
        (tmp_path / "bad.hdr").write_bytes(b"P3\n\n-Y 1 +X 1\n" + bytes(4))
        with pytest.raises(ParseError):
            read_rgbe(tmp_path / "bad.hdr")


class TestPNG:
    """Test LDR output"""

    def test_write_then_read(self, tmp_path):
        image = np.zeros((4, 6, 3), dtype=np.uint8)
        image[..., 0] = 255
        write_png(tmp_path / "r.png", image)
        back = read_image(tmp_path / "r.png")
        assert back.shape == (4, 6, 3)
        np.testing.assert_allclose(back[..., 0], 1.0)
        np.testing.assert_allclose(back[..., 1:], 0.0)

    def test_float_input_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_png(tmp_path / "f.png", np.zeros((2, 2, 3)))
