import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crispnet import raw


def frame_of(values, black=0, white=65535):
    return raw.BayerFrame(np.asarray(values, dtype=np.uint16), black, white)


def test_pack_single_cell():
    packed = raw.pack(frame_of([[4096, 8192], [12288, 16384]]))
    assert packed.shape == (1, 1, 4)
    np.testing.assert_allclose(packed[0, 0], [4096 / 65535, 8192 / 65535, 16384 / 65535, 12288 / 65535], rtol=1e-6)


def test_pack_black_white_levels():
    packed = raw.pack(frame_of([[1023, 65535], [0, 33279]], black=1023, white=65535))
    np.testing.assert_allclose(packed[0, 0], [0.0, 1.0, 0.5, 0.0], atol=1e-6)


def test_constant_frame_packs_to_equal_channels():
    p = raw.pack(frame_of(np.full((4, 6), 3000)))
    assert np.all(p == p[0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 8), w=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_pack_unpack_bijection(h, w, seed):
    rng = np.random.default_rng(seed)
    mosaic = rng.random((2 * h, 2 * w)).astype(np.float32)
    assert np.array_equal(raw.unpack(raw.pack_mosaic(mosaic)), mosaic)
    packed = rng.random((h, w, 4)).astype(np.float32)
    assert np.array_equal(raw.pack_mosaic(raw.unpack(packed)), packed)


def test_odd_extents_rejected():
    with pytest.raises(raw.RawFormatError):
        frame_of(np.zeros((3, 4)))
    with pytest.raises(raw.RawFormatError):
        raw.pack_mosaic(np.zeros((4, 5)))


def test_demosaick_uniform_and_preserves_sites():
    d = raw.demosaick_mosaic(np.full((6, 8), 0.25))
    np.testing.assert_allclose(d, 0.25)
    rng = np.random.default_rng(0)
    m = rng.random((6, 8))
    d = raw.demosaick_mosaic(m)
    masks = raw.cfa_masks(6, 8)
    for c in range(3):
        assert np.array_equal(d[..., c][masks[..., c]], m[masks[..., c]])
    assert d.min() >= m.min() and d.max() <= m.max()


def test_demosaick_hand_worked_4x4():
    m = np.arange(16, dtype=np.float64).reshape(4, 4)
    d = raw.demosaick_mosaic(m)
    # R samples sit at (0,0)=0, (0,2)=2, (2,0)=8, (2,2)=10
    assert d[1, 1, 0] == pytest.approx((0 + 2 + 8 + 10) / 4)
    assert d[0, 1, 0] == pytest.approx((0 + 2) / 2)
    assert d[3, 3, 0] == pytest.approx(10.0)
    # G at an R site averages its four neighbours, at a corner only two
    assert d[2, 2, 1] == pytest.approx((6 + 9 + 11 + 14) / 4)
    assert d[0, 0, 1] == pytest.approx((1 + 4) / 2)
    # B samples sit at (1,1)=5, (1,3)=7, (3,1)=13, (3,3)=15
    assert d[2, 2, 2] == pytest.approx((5 + 7 + 13 + 15) / 4)
    assert d[0, 0, 2] == pytest.approx(5.0)


def test_tile_examples():
    img = np.arange(16).reshape(4, 4)
    patches, layout = raw.tile(img, 2, 2)
    assert len(patches) == 4 and layout.positions[1] == (0, 1)
    assert np.array_equal(raw.untile(patches, layout), img)
    single, lay = raw.tile(img, 4, 4)
    assert len(single) == 1 and np.array_equal(single[0], img)


def test_paper_tiling_arithmetic():
    patches, layout = raw.tile(np.zeros((2944, 3840), dtype=np.uint8), 368, 480)
    assert len(patches) == 64 and layout.grid == (8, 8)
    assert all(p.shape == (368, 480) for p in patches)


def test_tile_requires_crop():
    with pytest.raises(raw.TileError, match="crop"):
        raw.tile(np.zeros((3024, 4032)), 368, 480)


@settings(max_examples=25, deadline=None)
@given(gh=st.integers(1, 4), gw=st.integers(1, 4), ph=st.integers(1, 5), pw=st.integers(1, 5),
       seed=st.integers(0, 1000))
def test_untile_shuffled(gh, gw, ph, pw, seed):
    rng = np.random.default_rng(seed)
    img = rng.random((gh * ph, gw * pw, 3))
    patches, layout = raw.tile(img, ph, pw)
    order = rng.permutation(len(patches))
    shuffled = raw.TileLayout(layout.height, layout.width, ph, pw, tuple(layout.positions[i] for i in order))
    assert np.array_equal(raw.untile([patches[i] for i in order], shuffled), img)


def test_untile_count_mismatch():
    patches, layout = raw.tile(np.zeros((4, 4)), 2, 2)
    with pytest.raises(raw.TileError):
        raw.untile(patches[:3], layout)


def test_global_input_uniform_and_size():
    g = raw.make_global_input(frame_of(np.full((96, 128), 20000)), (12, 16))
    assert g.shape == (12, 16, 3)
    np.testing.assert_allclose(g, 20000 / 65535, rtol=1e-6)


def test_global_input_keeps_left_right_order():
    data = np.full((64, 64), 1000, dtype=np.uint16)
    data[:, :32] = 50000
    g = raw.make_global_input(frame_of(data), (8, 8))
    assert g[:, :4].mean() > g[:, 4:].mean()


def test_area_resize_inverts_integer_upsampling():
    rng = np.random.default_rng(0)
    small = rng.random((6, 5, 3))
    big = np.repeat(np.repeat(small, 3, axis=0), 3, axis=1)
    np.testing.assert_allclose(raw.area_resize(big, 6, 5), small, atol=1e-12)


def test_area_resize_fractional_preserves_mean():
    rng = np.random.default_rng(1)
    img = rng.random((10, 14, 2))
    np.testing.assert_allclose(raw.area_resize(img, 3, 4).mean(axis=(0, 1)), img.mean(axis=(0, 1)), rtol=1e-12)


def test_global_input_too_large():
    with pytest.raises(ValueError):
        raw.make_global_input(frame_of(np.zeros((8, 8))), (8, 8))


def test_craw_roundtrip_and_header(tmp_path):
    rng = np.random.default_rng(0)
    f = raw.BayerFrame(rng.integers(0, 65535, (6, 10)).astype(np.uint16), 1024, 65535)
    p = tmp_path / "a.craw"
    raw.write_craw(p, f)
    blob = p.read_bytes()
    assert blob[:4] == b"CRAW" and len(blob) == 13 + 2 * 60
    g = raw.read_craw(p)
    assert np.array_equal(g.data, f.data) and (g.black_level, g.white_level) == (1024, 65535)
    p.write_bytes(blob[:-2])
    with pytest.raises(raw.RawFormatError):
        raw.read_craw(p)


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    raw.write_ppm(tmp_path / "x.ppm", img)
    assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    assert np.array_equal(raw.read_ppm(tmp_path / "x.ppm", as_float=False), img)


def test_meta_roundtrip(tmp_path):
    m = raw.WbMeta(wb_r=2.0, wb_b=0.5, wb_g=2.0, exposure_ms=12.5, gain_iso=400, scene_class=1, split="val",
                   extra={"illum_r": "1.01"})
    assert (m.wb_r, m.wb_g, m.wb_b) == (1.0, 1.0, 0.25)
    np.testing.assert_array_equal(m.expanded(), [1.0, 1.0, 0.25, 1.0])
    raw.write_meta(tmp_path / "m.txt", m)
    back = raw.read_meta(tmp_path / "m.txt")
    assert back == m


def test_meta_rejects_bad_gains(tmp_path):
    with pytest.raises(ValueError):
        raw.WbMeta(wb_r=0.0, wb_b=1.0)
    (tmp_path / "m.txt").write_text("wb_r=1.0\n")
    with pytest.raises(raw.RawFormatError):
        raw.read_meta(tmp_path / "m.txt")
