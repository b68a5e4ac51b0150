import io
import json

import numpy as np
import pytest

from xgrain.checkpoint import decode_tensors, encode_tensors, load_model, save_model
from xgrain.errors import FormatError, ParameterError, TrainingError, UnsupportedVersionError
from xgrain.numerics import make_rng
from xgrain.objective import Model
from xgrain.synthetic import SynthConfig, generate
from xgrain.training import Adam, cosine_lr, train_toy


@pytest.fixture(scope="module")
def small():
    ds = generate(SynthConfig(num_pairs=12, dim=8, frames_per_video=4, words_per_text=3, seed=0))
    val = generate(SynthConfig(num_pairs=8, dim=8, frames_per_video=4, words_per_text=3, seed=1))
    return ds, val


def test_cosine_lr():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    assert cosine_lr(1.0, 10, 10) == pytest.approx(0.0)
    assert cosine_lr(0.3, 3, 0) == 0.3


def test_adam_first_step_is_lr_sized():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, {"w": 0.1})
    opt.step({"w": np.array([5.0, -0.01])})
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-6)


def test_adam_minimizes_quadratic():
    p = {"w": np.array([3.0])}
    opt = Adam(p, {"w": 0.1})
    for _ in range(300):
        opt.step({"w": 2 * p["w"]})
    assert abs(p["w"][0]) < 0.05


def test_zero_lr_is_flat(small):
    ds, val = small
    model = Model.init(8, make_rng(0), layers=1, max_frames=4)
    before = {k: v.copy() for k, v in model.named_tensors().items()}
    res = train_toy(ds.frames, ds.words, val.frames, val.words, epochs=3, lr_encoder=0, lr_heads=0,
                    batch_size=4, model=model)
    assert len(set(res.losses)) == 1
    for k, v in model.named_tensors().items():
        np.testing.assert_array_equal(v, before[k])


def test_deterministic_and_logged(small):
    ds, val = small
    logs = [io.StringIO(), io.StringIO()]
    runs = [train_toy(ds.frames, ds.words, val.frames, val.words, epochs=2, batch_size=4, layers=1,
                      seed=5, log=log) for log in logs]
    assert runs[0].losses == runs[1].losses
    assert logs[0].getvalue() == logs[1].getvalue()
    lines = [json.loads(x) for x in logs[0].getvalue().splitlines()]
    assert [d["epoch"] for d in lines] == [0, 1, 2]
    assert set(lines[0]) == {"epoch", "loss", "l_v2t", "l_t2v", "val_r1", "lr"}
    assert lines[-1]["lr"] == pytest.approx(0.0)
    assert runs[0].losses[-1] < runs[0].losses[0]
    other = train_toy(ds.frames, ds.words, epochs=2, batch_size=4, layers=1, seed=6)
    assert other.losses[1:] != runs[0].losses[1:]


def test_trainable_scale_is_clamped(small):
    ds, _ = small
    res = train_toy(ds.frames, ds.words, epochs=2, batch_size=4, layers=0, scale=199.9,
                    train_scale=True, lr_heads=5.0)
    assert 1.0 <= res.model.scale[0] <= 200.0


def test_divergence_reports_epoch(small):
    ds, _ = small
    frames = [f.copy() for f in ds.frames]
    frames[0][0, 0] = np.nan
    with pytest.raises(TrainingError, match="epoch 0"):
        train_toy(frames, ds.words, epochs=1, batch_size=4, layers=0)


def test_bad_arguments(small):
    ds, _ = small
    with pytest.raises(ParameterError):
        train_toy(ds.frames, ds.words[:-1], epochs=1)
    with pytest.raises(ParameterError):
        train_toy(ds.frames, ds.words, epochs=-1)


# -- checkpoints --------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, small):
    ds, _ = small
    model = Model.init(8, make_rng(3), layers=2, max_frames=4, train_scale=True, scale=42.0)
    for t in model.named_tensors().values():
        t[...] = t.astype(np.float32)   # f32-exact so the round trip is bitwise
    path = tmp_path / "m.xgep"
    save_model(model, path)
    back = load_model(path)
    assert back.train_scale and back.use_encoder and back.encoder.heads == 2
    for k, v in model.named_tensors().items():
        np.testing.assert_array_equal(back.named_tensors()[k], v)
    from xgrain.aggregation import AggregationConfig

    np.testing.assert_array_equal(back.similarity(ds.frames, ds.words, AggregationConfig()),
                                  model.similarity(ds.frames, ds.words, AggregationConfig()))


def test_tensor_records():
    t = {"a": np.arange(6.0).reshape(2, 3), "s": np.array(2.5)}
    back = decode_tensors(encode_tensors(t))
    np.testing.assert_array_equal(back["a"], t["a"])
    assert back["s"].shape == () and back["s"] == 2.5


def test_checkpoint_errors(tmp_path):
    buf = encode_tensors({"a": np.ones(3)})
    with pytest.raises(FormatError, match="magic"):
        decode_tensors(b"XGEB" + buf[4:])
    with pytest.raises(UnsupportedVersionError):
        decode_tensors(buf[:4] + (2).to_bytes(4, "little") + buf[8:])
    with pytest.raises(FormatError):
        decode_tensors(buf[:-1])
    path = tmp_path / "bad.xgep"
    path.write_bytes(buf)
    with pytest.raises(FormatError, match="missing"):
        load_model(path)
