import numpy as np
import pytest

from hodn.checkpoint import load_checkpoint, save_checkpoint
from hodn.data import generate_dataset
from hodn.errors import CompatibilityError, CorruptionError, ParseError
from hodn.model import init_params
from hodn.train import train_loop


def test_params_round_trip(tmp_path, desk):
    params = init_params(desk, 3)
    save_checkpoint(tmp_path / "m.ckpt", params)
    loaded, state = load_checkpoint(tmp_path / "m.ckpt", desk)
    assert state is None
    assert set(loaded) == set(params)
    assert all(loaded[k].tobytes() == params[k].tobytes() and loaded[k].shape == params[k].shape
               for k in params)


def test_optimizer_round_trip(tmp_path, tiny):
    res = train_loop(generate_dataset(2, 0, tiny), tiny.replace(epochs=1))
    save_checkpoint(tmp_path / "m.ckpt", res.params, res.state)
    _, state = load_checkpoint(tmp_path / "m.ckpt", tiny)
    assert state.step == res.state.step and state.lr == res.state.lr and state.betas == res.state.betas
    assert all(state.m[k].tobytes() == res.state.m[k].tobytes() for k in res.state.m)
    assert all(state.v[k].tobytes() == res.state.v[k].tobytes() for k in res.state.v)


def test_blob_is_little_endian_float64(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"a": np.array([1.5, -2.0])})
    assert (tmp_path / "m.ckpt.bin").read_bytes() == np.array([1.5, -2.0], dtype="<f8").tobytes()
    assert "param a 2 0" in (tmp_path / "m.ckpt").read_text()


def test_scalar_entry(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"s": np.array(2.0)})
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded["s"].shape == () and loaded["s"] == 2.0


@pytest.mark.parametrize("cut", [8, -8])
def test_tampered_blob(tmp_path, tiny, cut):
    save_checkpoint(tmp_path / "m.ckpt", init_params(tiny))
    blob = (tmp_path / "m.ckpt.bin").read_bytes()
    (tmp_path / "m.ckpt.bin").write_bytes(blob[:-8] if cut > 0 else blob + b"\0" * 8)
    with pytest.raises(CorruptionError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_manifest_offsets_checked(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"a": np.ones(2), "b": np.ones(2)})
    text = (tmp_path / "m.ckpt").read_text().replace("param b 2 16", "param b 2 8")
    (tmp_path / "m.ckpt").write_text(text)
    with pytest.raises(CorruptionError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_bad_manifest(tmp_path):
    (tmp_path / "m.ckpt").write_text("# hodn-checkpoint v1\nblob m.ckpt.bin 0\nparam a x 0\n")
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_incompatible_config_lists_names(tmp_path, desk):
    save_checkpoint(tmp_path / "m.ckpt", init_params(desk))
    with pytest.raises(CompatibilityError) as info:
        load_checkpoint(tmp_path / "m.ckpt", desk.replace(d=16))
    assert "embed.w" in info.value.names and "queries.human" in info.value.names
    assert "heads.interaction.b" not in info.value.names


def test_missing_random_queries(tmp_path, desk):
    save_checkpoint(tmp_path / "m.ckpt", init_params(desk))
    with pytest.raises(CompatibilityError) as info:
        load_checkpoint(tmp_path / "m.ckpt", desk.replace(link_mode="random_guide"))
    assert info.value.names == ["queries.random"]
