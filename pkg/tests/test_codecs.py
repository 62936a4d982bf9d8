import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rimr import codecs
from rimr.codecs import FormatError, SampleRecord
from rimr.geometry import CameraModel, Pose, rotation_z
from rimr.radar import IntensityMap, RadarConfig
from rimr.tensor.checkpoint import CheckpointEntry, CheckpointError, decode_checkpoint, encode_checkpoint


def _volume(rng, shape=(2, 3, 4), frame="cartesian"):
    bounds = np.array([[-1.0, 1.0], [1.0, 3.0], [-0.5, 0.5]]) if frame == "cartesian" else None
    pose = Pose(rotation_z(0.3), np.array([0.1, -2.0, 0.5]))
    return IntensityMap(rng.random(shape).astype(np.float32), frame, RadarConfig(), pose, bounds)


def _record(i=0):
    rel = f"samples/s{i:05d}"
    return SampleRecord(f"s{i:05d}", "box", (0.7, 0.5, 0.3), Pose(rotation_z(1.1), np.array([0.05, -0.02, 0.0])),
                        f"{rel}/cloud.ply", tuple(f"{rel}/view{v}.vol" for v in range(4)),
                        tuple(f"{rel}/view{v}.pgm" for v in range(4)))


def _truncation_points(n, rng, count=100):
    """``count`` distinct cut lengths in [0, n), always including the extremes."""
    cuts = {0, n - 1}
    if n > count:
        cuts.update(rng.choice(n, count - 2, replace=False).tolist())
    else:
        cuts.update(range(n))
    return sorted(cuts)


# -- RIMRVOL --------------------------------------------------------------

@pytest.mark.parametrize("frame", ["cartesian", "polar"])
def test_volume_round_trip_bit_identical(frame):
    m = _volume(np.random.default_rng(0), frame=frame)
    buf = codecs.encode_volume(m)
    back = codecs.decode_volume(buf)
    assert codecs.encode_volume(back) == buf
    np.testing.assert_array_equal(back.values, m.values)
    assert back.frame == frame and back.config == m.config
    np.testing.assert_array_equal(back.sensor_pose.to_floats(), m.sensor_pose.to_floats())
    if frame == "cartesian":
        np.testing.assert_array_equal(back.bounds, m.bounds)
    else:
        assert back.bounds is None


def test_volume_layout():
    m = _volume(np.random.default_rng(1))
    buf = codecs.encode_volume(m)
    assert buf[:7] == b"RIMRVOL"
    hlen = int.from_bytes(buf[22:26], "little")
    assert len(buf) == 26 + hlen + 96 + 4 * 24
    np.testing.assert_array_equal(np.frombuffer(buf[-96:], "<f4").reshape(2, 3, 4), m.values)


@pytest.mark.parametrize("frame", ["cartesian", "polar"])
def test_volume_truncation_fuzz(frame):
    rng = np.random.default_rng(2)
    buf = codecs.encode_volume(_volume(rng, frame=frame))
    for cut in _truncation_points(len(buf), rng):
        with pytest.raises(FormatError):
            codecs.decode_volume(buf[:cut])


def test_volume_truncation_reports_lengths():
    buf = codecs.encode_volume(_volume(np.random.default_rng(3)))
    with pytest.raises(FormatError, match=f"expected {len(buf)} bytes, got {len(buf) - 5}"):
        codecs.decode_volume(buf[:-5])


def test_volume_rejects_bad_magic_and_version():
    buf = bytearray(codecs.encode_volume(_volume(np.random.default_rng(4))))
    bad = bytes(buf)
    with pytest.raises(FormatError, match="offset 0"):
        codecs.decode_volume(b"X" + bad[1:])
    buf[7] = 9
    with pytest.raises(FormatError, match="version 9 at offset 7"):
        codecs.decode_volume(bytes(buf))
    with pytest.raises(FormatError, match="trailing"):
        codecs.decode_volume(bad + b"\0")


# -- PLY ------------------------------------------------------------------

def test_ply_empty_cloud():
    buf = codecs.encode_ply(np.zeros((0, 3)))
    assert buf.endswith(b"element vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n")
    assert codecs.decode_ply(buf).shape == (0, 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 20), st.just(3)),
              elements=st.floats(-1e6, 1e6, allow_nan=False, width=64)))
def test_ply_round_trip_nine_digits(cloud):
    back = codecs.decode_ply(codecs.encode_ply(cloud))
    np.testing.assert_allclose(back, cloud, rtol=1e-8, atol=0)
    # a second pass is exact: the printed value reproduces itself
    assert codecs.encode_ply(back) == codecs.encode_ply(cloud)


def test_ply_truncation_fuzz():
    rng = np.random.default_rng(5)
    buf = codecs.encode_ply(rng.normal(size=(40, 3)))
    for cut in _truncation_points(len(buf), rng):
        with pytest.raises(FormatError):
            codecs.decode_ply(buf[:cut])


def test_ply_rejects_count_mismatch_and_binary():
    buf = codecs.encode_ply(np.ones((3, 3)))
    with pytest.raises(FormatError, match="declares 4"):
        codecs.decode_ply(buf.replace(b"vertex 3", b"vertex 4"))
    with pytest.raises(FormatError):
        codecs.decode_ply(buf.replace(b"ascii", b"binary_little_endian"))


# -- PGM and camera -------------------------------------------------------

def test_pgm_quantization_at_max_depth():
    d = np.array([[65.535, 0.0], [1.0004, 1.0006]])
    buf = codecs.encode_pgm(d)
    raw = np.frombuffer(buf[-8:], ">u2")
    assert raw.tolist() == [65535, 0, 1000, 1001]
    back = codecs.decode_pgm(buf)
    assert back[0, 0] == pytest.approx(65.535, abs=1e-12)
    assert np.abs(back - d).max() <= 0.5e-3 + 1e-12


def test_pgm_rejects_out_of_range():
    with pytest.raises(ValueError):
        codecs.encode_pgm(np.array([[70.0]]))
    with pytest.raises(ValueError):
        codecs.encode_pgm(np.array([[-0.1]]))


def test_pgm_round_trip_bit_identical():
    d = np.random.default_rng(6).integers(0, 65536, (5, 7)) * 1e-3
    buf = codecs.encode_pgm(d)
    assert buf.startswith(b"P5\n7 5\n65535\n")
    assert codecs.encode_pgm(codecs.decode_pgm(buf)) == buf


def test_pgm_truncation_fuzz():
    rng = np.random.default_rng(7)
    buf = codecs.encode_pgm(rng.uniform(0, 5, (9, 11)))
    for cut in _truncation_points(len(buf), rng):
        with pytest.raises(FormatError):
            codecs.decode_pgm(buf[:cut])
    with pytest.raises(FormatError, match=f"expected {len(buf)} bytes, got {len(buf) - 1}"):
        codecs.decode_pgm(buf[:-1])


def test_camera_round_trip_and_truncation():
    cam = CameraModel(128.0, 64.0, 64.0, 128, 128, Pose(rotation_z(0.7), np.array([1.0, 2.0, 0.5])))
    buf = codecs.encode_camera(cam)
    back = codecs.decode_camera(buf)
    assert codecs.encode_camera(back) == buf
    rng = np.random.default_rng(8)
    for cut in _truncation_points(len(buf), rng):
        with pytest.raises(FormatError):
            codecs.decode_camera(buf[:cut])


# -- manifest -------------------------------------------------------------

def test_manifest_round_trip():
    recs = [_record(i) for i in range(3)]
    buf = codecs.encode_manifest(recs)
    back = codecs.decode_manifest(buf)
    assert codecs.encode_manifest(back) == buf
    assert [r.id for r in back] == ["s00000", "s00001", "s00002"]
    assert all(len(line.split("\t")) == 13 for line in buf.decode().splitlines()[1:])


def test_manifest_truncation_fuzz():
    rng = np.random.default_rng(9)
    buf = codecs.encode_manifest([_record(i) for i in range(3)])
    for cut in _truncation_points(len(buf), rng):
        with pytest.raises(FormatError):
            codecs.decode_manifest(buf[:cut])


def test_record_requires_four_views():
    r = _record()
    with pytest.raises(ValueError):
        SampleRecord(r.id, r.kind, r.size, r.pose, r.cloud, r.maps[:3], r.depths)


# -- checkpoint -----------------------------------------------------------

def _entries(rng):
    def entry(name, shape):
        return CheckpointEntry(name, *(rng.normal(size=shape) for _ in range(3)))
    return [entry("gen.w", (3, 4)), entry("gen.b", (4,)), entry("@epoch", ())]


def test_checkpoint_round_trip_and_truncation():
    rng = np.random.default_rng(10)
    buf = encode_checkpoint(_entries(rng))
    assert encode_checkpoint(decode_checkpoint(buf)) == buf
    for cut in _truncation_points(len(buf), rng):
        with pytest.raises(CheckpointError):
            decode_checkpoint(buf[:cut])


# -- config ---------------------------------------------------------------

def test_config_parse():
    text = "# scene\nsamples = 4  # small\n\nradar.bandwidth=4e9\nkinds=box,car\n"
    assert codecs.parse_config(text) == {"samples": "4", "radar.bandwidth": "4e9", "kinds": "box,car"}
    assert codecs.parse_config(codecs.format_config({"a": 1, "b": "x"})) == {"a": "1", "b": "x"}


@pytest.mark.parametrize("text", ["novalue\n", "a=1\na=2\n", "=3\n"])
def test_config_rejects_malformed(text):
    with pytest.raises(FormatError):
        codecs.parse_config(text)
