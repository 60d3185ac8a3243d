import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mofo.artifacts import (CheckpointCodec, FloCodec, FrameCodec, load_json, read_float_dump, read_frames,
                            write_csv, write_float_dump, write_json, write_map_pgm)
from mofo.errors import FormatError, RejectedInputError
from mofo.config import FlowConfig
from mofo.flow import Frame, FlowField, estimate_flow

from .conftest import textured, write_frames


def encoded(codec, obj) -> bytes:
    sink = io.BytesIO()
    codec.encode(obj, sink)
    return sink.getvalue()


def test_flo_layout():
    field = FlowField(np.array([[1.0, 2.0]], dtype=np.float32), np.array([[3.0, 4.0]], dtype=np.float32))
    raw = encoded(FloCodec(), field)
    assert len(raw) == 28
    assert np.frombuffer(raw[:4], dtype='<f4')[0] == np.float32(202021.25)
    assert np.frombuffer(raw[4:12], dtype='<i4').tolist() == [2, 1]
    assert np.frombuffer(raw[12:], dtype='<f4').tolist() == [1.0, 3.0, 2.0, 4.0]


finite_f32 = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=32)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite_f32),
       st.data())
def test_flo_roundtrip(u, data):
    v = data.draw(arrays(np.float32, u.shape, elements=finite_f32))
    decoded = FloCodec().decode(io.BytesIO(encoded(FloCodec(), FlowField(u, v))))
    assert decoded.u.tobytes() == u.tobytes()
    assert decoded.v.tobytes() == v.tobytes()


def test_estimated_flow_survives_flo_save_load(tmp_path):
    image = textured(32, seed=9)
    field = estimate_flow(image, np.roll(image, 1, axis=1), FlowConfig(warps_per_level=2, inner_iterations=10))
    path = tmp_path / 'pair.flo'
    FloCodec().save(field, path)
    loaded = FloCodec().load(path)
    assert np.array_equal(loaded.u, field.u) and np.array_equal(loaded.v, field.v)


def test_flo_bad_magic():
    raw = bytearray(encoded(FloCodec(), FlowField.uniform(2, 2, 1.0, 0.0)))
    raw[:4] = np.array([1.0], dtype='<f4').tobytes()
    with pytest.raises(FormatError) as err:
        FloCodec().decode(io.BytesIO(bytes(raw)))
    assert err.value.offset == 0


def test_flo_truncated_payload():
    raw = encoded(FloCodec(), FlowField.uniform(2, 2, 1.0, 0.0))
    with pytest.raises(FormatError) as err:
        FloCodec().decode(io.BytesIO(raw[:-3]))
    assert err.value.offset == len(raw) - 3
    assert "truncated payload" in str(err.value)


def test_flo_load_names_the_file(tmp_path):
    path = tmp_path / 'broken.flo'
    path.write_bytes(b'\x00\x01')
    with pytest.raises(FormatError, match="broken.flo"):
        FloCodec().load(path)


def test_frame_codec_roundtrip_quantizes_to_8_bit(tmp_path):
    pixels = textured(16, seed=2)
    FrameCodec().save(Frame(pixels), tmp_path / 'frame_00000.pgm')
    frame = FrameCodec().load(tmp_path / 'frame_00000.pgm')
    assert frame.pixels.shape == (16, 16)
    assert np.abs(frame.pixels - pixels).max() <= 0.5 / 255 + 1e-12


def test_read_frames_in_index_order(tmp_path):
    frames = [np.full((8, 8), v) for v in (0.0, 0.5, 1.0)]
    directory = write_frames(tmp_path / 'clip', frames)
    (directory / 'notes.txt').write_text('ignored')
    loaded = read_frames(directory)
    assert [float(f.pixels[0, 0]) for f in loaded] == [0.0, 128 / 255, 1.0]


def test_corrupt_frame_names_the_file(tmp_path):
    directory = write_frames(tmp_path / 'clip', [np.zeros((8, 8))])
    (directory / 'frame_00001.pgm').write_bytes(b'P5\nnot a header\n')
    with pytest.raises(FormatError, match="frame_00001.pgm"):
        read_frames(directory)


def test_missing_frames_directory(tmp_path):
    with pytest.raises(RejectedInputError):
        read_frames(tmp_path / 'absent')


def test_checkpoint_roundtrip_and_layout():
    tensors = {'b': np.arange(6, dtype=np.float32).reshape(2, 3), 'a': np.array(1.5, dtype=np.float32)}
    raw = encoded(CheckpointCodec(), tensors)
    assert raw[:4] == b'MOFO'
    assert np.frombuffer(raw[4:12], dtype='<u4').tolist() == [1, 2]
    decoded = CheckpointCodec().decode(io.BytesIO(raw))
    assert sorted(decoded) == ['a', 'b']
    assert np.array_equal(decoded['b'], tensors['b'])
    assert decoded['a'].shape == ()


def test_checkpoint_rejects_corruption():
    raw = encoded(CheckpointCodec(), {'w': np.ones(4, dtype=np.float32)})
    with pytest.raises(FormatError) as err:
        CheckpointCodec().decode(io.BytesIO(b'NOPE' + raw[4:]))
    assert err.value.offset == 0
    with pytest.raises(FormatError, match="truncated"):
        CheckpointCodec().decode(io.BytesIO(raw[:-2]))
    with pytest.raises(FormatError, match="trailing"):
        CheckpointCodec().decode(io.BytesIO(raw + b'\x00'))


def test_map_preview_and_float_dump(tmp_path):
    values = np.arange(64, dtype=np.float64).reshape(8, 8)
    write_map_pgm(values, tmp_path / 'map.pgm')
    assert (tmp_path / 'map.pgm').read_bytes().startswith(b'P5')
    preview = FrameCodec().load(tmp_path / 'map.pgm').pixels
    assert preview[0, 0] == 0.0 and preview[-1, -1] == 1.0
    write_float_dump(values, tmp_path / 'map.f32')
    assert (tmp_path / 'map.f32').stat().st_size == 64 * 4
    assert np.array_equal(read_float_dump(tmp_path / 'map.f32', 8, 8), values.astype(np.float32))
    with pytest.raises(FormatError):
        read_float_dump(tmp_path / 'map.f32', 4, 4)


def test_json_and_csv_records(tmp_path):
    write_json({'b': 1, 'a': [1, 2]}, tmp_path / 'out' / 'r.json')
    assert load_json(tmp_path / 'out' / 'r.json') == {'a': [1, 2], 'b': 1}
    (tmp_path / 'bad.json').write_text('{"a": ')
    with pytest.raises(FormatError, match="bad.json"):
        load_json(tmp_path / 'bad.json')
    write_csv(['step', 'loss'], [(0, 0.1), (1, 0.05)], tmp_path / 'trace.csv')
    assert (tmp_path / 'trace.csv').read_text() == 'step,loss\n0,0.1\n1,0.05\n'
