import numpy as np
import pytest

from wavres.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from wavres.errors import ConfigError, FormatError
from wavres.wavresnet import WavResNet


@pytest.fixture
def trained_like(micro_topology, rng):
    network = WavResNet(micro_topology)
    # non-trivial running statistics
    network.forward(rng.normal(size=(2, 15, 6, 6)), "train")
    return network


def test_roundtrip_is_bit_exact(trained_like, tmp_path):
    path = save_checkpoint(tmp_path / "net.wrn", trained_like, {"train.iteration": 12, "nsct.levels": 4})
    network, metadata = load_checkpoint(path)
    assert network.topology == trained_like.topology
    for name, value in trained_like.parameters().items():
        assert network.parameters()[name].tobytes() == value.tobytes()
    assert metadata == {"train.iteration": "12", "nsct.levels": "4"}


def test_encoding_is_deterministic(trained_like):
    assert encode_checkpoint(trained_like) == encode_checkpoint(trained_like)


def test_header(trained_like):
    blob = encode_checkpoint(trained_like)
    assert blob[:4] == b"WRN1"
    assert int.from_bytes(blob[4:6], "little") == 1


def test_flipped_byte_fails_crc(trained_like):
    blob = bytearray(encode_checkpoint(trained_like))
    blob[len(blob) // 2] ^= 0x01
    with pytest.raises(FormatError) as err:
        decode_checkpoint(bytes(blob))
    assert "CRC" in str(err.value)
    assert err.value.offset == len(blob) - 4


def test_bad_magic(trained_like):
    blob = b"XRN1" + encode_checkpoint(trained_like)[4:]
    with pytest.raises(FormatError) as err:
        decode_checkpoint(blob)
    assert err.value.offset == 0


def test_truncated(trained_like):
    with pytest.raises(FormatError):
        decode_checkpoint(encode_checkpoint(trained_like)[:5])


def test_metadata_cannot_override_topology(trained_like):
    with pytest.raises(ConfigError):
        encode_checkpoint(trained_like, {"net.channels": 4})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "absent.wrn")


def test_loaded_network_computes_the_same(trained_like, rng):
    network, _ = decode_checkpoint(encode_checkpoint(trained_like))
    x = rng.normal(size=(1, 15, 6, 6))
    np.testing.assert_array_equal(network.forward(x, "infer"), trained_like.forward(x, "infer"))
