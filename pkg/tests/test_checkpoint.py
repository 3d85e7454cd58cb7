"""JSON tensor-manifest round-trips.

Python floats are 64-bit, so float64 tensors must survive a manifest
round-trip bit-for-bit; that exactness is what lets a reloaded frozen
encoder pass its bit-identity freeze check.
"""

import pytest
import torch
from torch import nn

from gsap.checkpoint import (
    load_manifest,
    manifest_to_state,
    save_manifest,
    state_to_manifest,
)
from gsap.config import EncoderConfig
from gsap.encoder import FrozenTransformerEncoder


def small_encoder(init_seed: int) -> FrozenTransformerEncoder:
    return FrozenTransformerEncoder(
        EncoderConfig(
            hidden_size=8, num_layers=2, num_heads=2, ff_size=16,
            max_len=32, vocab_size=11, init_seed=init_seed,
        )
    )


def test_float64_round_trip_is_exact():
    state = {
        "a": torch.randn(3, 4, dtype=torch.float64),
        "b": torch.randn(7, dtype=torch.float64),
    }
    back = manifest_to_state(state_to_manifest(state))
    assert set(back) == {"a", "b"}
    for name in state:
        assert torch.equal(back[name], state[name])
        assert back[name].dtype == torch.float64


@pytest.mark.parametrize("dtype", [torch.float32, torch.int64])
def test_other_supported_dtypes_round_trip(dtype):
    t = (torch.arange(6) if dtype is torch.int64 else torch.randn(6)).to(dtype)
    back = manifest_to_state(state_to_manifest({"t": t.reshape(2, 3)}))
    assert back["t"].dtype == dtype
    assert torch.equal(back["t"], t.reshape(2, 3))


def test_unsupported_dtype_is_rejected():
    with pytest.raises(ValueError, match="unsupported tensor dtype"):
        state_to_manifest({"h": torch.zeros(2, dtype=torch.float16)})


def test_missing_dtype_defaults_to_float64():
    manifest = {
        "tensors": [{"name": "x", "shape": [2], "data": [1.5, -2.25]}]
    }
    state = manifest_to_state(manifest)
    assert state["x"].dtype == torch.float64
    assert torch.equal(state["x"], torch.tensor([1.5, -2.25], dtype=torch.float64))


def test_file_round_trip_accepts_module_or_dict(tmp_path):
    module = nn.Linear(3, 2).double()
    p1 = tmp_path / "module.json"
    p2 = tmp_path / "dict.json"
    save_manifest(module, str(p1))
    save_manifest(module.state_dict(), str(p2))
    for p in (p1, p2):
        back = load_manifest(str(p))
        assert torch.equal(back["weight"], module.weight.detach())
        assert torch.equal(back["bias"], module.bias.detach())


def test_encoder_state_transfers_exactly(tmp_path):
    src = small_encoder(init_seed=1)
    dst = small_encoder(init_seed=2)
    assert not torch.equal(
        src.state_dict()["tok_emb.weight"], dst.state_dict()["tok_emb.weight"]
    )
    path = tmp_path / "enc.json"
    save_manifest(src, str(path))
    dst.load_state_dict(load_manifest(str(path)))
    for name, t in src.state_dict().items():
        assert torch.equal(dst.state_dict()[name], t)
