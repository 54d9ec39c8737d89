import json
import zlib

import numpy as np
import pytest

from support import toy_config
from vitpercep import weights_io as wio
from vitpercep.errors import CorruptionError, FormatError, SchemaError


def read_parts(path):
    blob = path.read_bytes()
    hlen = int.from_bytes(blob[4:8], "little")
    header = json.loads(blob[8: 8 + hlen])
    pstart = (8 + hlen + wio.ALIGN - 1) // wio.ALIGN * wio.ALIGN
    return header, blob[pstart:]


def write_parts(path, header, payload):
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = len(wio.MAGIC) + 4 + len(hbytes)
    pad = (prefix + wio.ALIGN - 1) // wio.ALIGN * wio.ALIGN - prefix
    path.write_bytes(wio.MAGIC + len(hbytes).to_bytes(4, "little")
                     + hbytes + b"\x00" * pad + payload)


@pytest.fixture
def saved(tmp_path, toy_cfg, toy_bundle):
    path = tmp_path / "toy.vpw1"
    wio.save(toy_cfg, toy_bundle, path)
    return path


# ---------------------------------------------------------------------------
# schema and generation


def test_schema_names_for_toy_config(toy_cfg):
    names = [n for n, _ in wio.schema(toy_cfg)]
    assert names[:4] == ["patch_kernel", "patch_bias", "cls_embed", "pos_embed"]
    assert "layers.0.attn.wq" in names
    assert "layers.2.mlp.b2" in names
    assert names[-2:] == ["final_norm.gamma", "final_norm.beta"]
    assert len(names) == 4 + 3 * 16 + 2


def test_schema_drops_final_norm_when_disabled():
    cfg = toy_config(final_norm=False)
    names = [n for n, _ in wio.schema(cfg)]
    assert "final_norm.gamma" not in names


def test_schema_shapes(toy_cfg):
    shapes = dict(wio.schema(toy_cfg))
    d = toy_cfg.embed_dim
    assert shapes["patch_kernel"] == (toy_cfg.patch_dim, d)
    assert shapes["pos_embed"] == (toy_cfg.num_patches + 1, d)
    assert shapes["layers.1.attn.wo"] == (d, d)
    assert shapes["layers.1.mlp.w1"] == (d, toy_cfg.mlp_dim)


def test_generate_toy_is_deterministic(toy_cfg):
    a = wio.generate_toy(toy_cfg, seed=3)
    b = wio.generate_toy(toy_cfg, seed=3)
    assert np.array_equal(a.patch_kernel, b.patch_kernel)
    assert np.array_equal(a.layers[2].mlp_w2, b.layers[2].mlp_w2)
    c = wio.generate_toy(toy_cfg, seed=4)
    assert not np.array_equal(a.patch_kernel, c.patch_kernel)


def test_generate_toy_value_ranges(toy_cfg):
    b = wio.generate_toy(toy_cfg, seed=0)
    assert np.max(np.abs(b.patch_kernel)) <= wio.TOY_SCALE
    # normalization gains sit near one, not near zero
    assert np.all(np.abs(b.layers[0].ln1_gamma - 1.0) <= wio.TOY_SCALE)


def test_generate_toy_values_are_f32_exact(toy_cfg):
    b = wio.generate_toy(toy_cfg, seed=1)
    assert b.dtype == np.float64
    assert np.array_equal(b.pos_embed.astype(np.float32).astype(np.float64),
                          b.pos_embed)


# ---------------------------------------------------------------------------
# round trips


def test_round_trip_is_exact(saved, toy_cfg, toy_bundle):
    cfg, loaded = wio.load(saved)
    assert cfg == toy_cfg
    want = wio.bundle_to_dict(toy_bundle)
    got = wio.bundle_to_dict(loaded)
    for name in want:
        assert np.array_equal(want[name], got[name]), name


def test_save_is_deterministic(tmp_path, toy_cfg, toy_bundle):
    p1 = tmp_path / "a.vpw1"
    p2 = tmp_path / "b.vpw1"
    wio.save(toy_cfg, toy_bundle, p1)
    wio.save(toy_cfg, toy_bundle, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_save_load_save_is_bitwise_stable(saved, tmp_path):
    cfg, loaded = wio.load(saved)
    again = tmp_path / "again.vpw1"
    wio.save(cfg, loaded, again)
    assert saved.read_bytes() == again.read_bytes()


def test_load_dtype_control(saved):
    _, b64 = wio.load(saved)
    _, b32 = wio.load(saved, dtype=np.float32)
    assert b64.dtype == np.float64
    assert b32.dtype == np.float32
    assert np.array_equal(b32.cls_embed.astype(np.float64), b64.cls_embed)


def test_loaded_arrays_are_read_only(saved):
    _, b = wio.load(saved)
    with pytest.raises(ValueError):
        b.patch_bias[0] = 1.0


# ---------------------------------------------------------------------------
# container layout


def test_header_is_canonical_json(saved):
    blob = saved.read_bytes()
    hlen = int.from_bytes(blob[4:8], "little")
    raw = blob[8: 8 + hlen]
    assert raw == json.dumps(json.loads(raw), sort_keys=True,
                             separators=(",", ":")).encode("utf-8")


def test_header_fields(saved):
    header, payload = read_parts(saved)
    assert header["version"] == 1
    assert header["payload_length"] == len(payload)
    assert header["payload_crc32"] == zlib.crc32(payload)


def test_all_offsets_aligned(saved):
    header, _ = read_parts(saved)
    for entry in header["directory"]:
        assert entry["offset"] % wio.ALIGN == 0, entry["name"]


def test_directory_order_matches_schema(saved, toy_cfg):
    header, _ = read_parts(saved)
    assert [e["name"] for e in header["directory"]] == [n for n, _ in wio.schema(toy_cfg)]


# ---------------------------------------------------------------------------
# fault injection, one typed error per failure mode


def test_bad_magic(saved):
    blob = saved.read_bytes()
    saved.write_bytes(b"WPV1" + blob[4:])
    with pytest.raises(FormatError):
        wio.load(saved)


def test_file_too_short(tmp_path):
    p = tmp_path / "stub.vpw1"
    p.write_bytes(b"VPW1\x10")
    with pytest.raises(FormatError):
        wio.load(p)


def test_header_length_beyond_file(saved):
    blob = saved.read_bytes()
    saved.write_bytes(blob[:4] + (2 ** 31 - 1).to_bytes(4, "little") + blob[8:])
    with pytest.raises(FormatError):
        wio.load(saved)


def test_header_not_json(tmp_path):
    p = tmp_path / "garbage.vpw1"
    junk = b"{not json at all"
    p.write_bytes(wio.MAGIC + len(junk).to_bytes(4, "little") + junk)
    with pytest.raises(FormatError):
        wio.load(p)


@pytest.mark.parametrize("key", ["config", "directory", "payload_crc32", "payload_length"])
def test_header_missing_key(saved, key):
    header, payload = read_parts(saved)
    del header[key]
    write_parts(saved, header, payload)
    with pytest.raises(FormatError):
        wio.load(saved)


def test_config_missing_field(saved):
    header, payload = read_parts(saved)
    del header["config"]["embed_dim"]
    write_parts(saved, header, payload)
    with pytest.raises(SchemaError):
        wio.load(saved)


def test_config_unknown_field(saved):
    header, payload = read_parts(saved)
    header["config"]["dropout"] = 0.1
    write_parts(saved, header, payload)
    with pytest.raises(SchemaError):
        wio.load(saved)


def test_config_invalid_geometry(saved):
    header, payload = read_parts(saved)
    header["config"]["patch_size"] = 5  # does not divide image_size 16
    write_parts(saved, header, payload)
    with pytest.raises(SchemaError):
        wio.load(saved)


def test_directory_not_a_list(saved):
    header, payload = read_parts(saved)
    header["directory"] = {"oops": 1}
    write_parts(saved, header, payload)
    with pytest.raises(FormatError):
        wio.load(saved)


def test_directory_entry_missing_offset(saved):
    header, payload = read_parts(saved)
    del header["directory"][0]["offset"]
    write_parts(saved, header, payload)
    with pytest.raises(FormatError):
        wio.load(saved)


def test_duplicate_directory_entry(saved):
    header, payload = read_parts(saved)
    header["directory"].append(dict(header["directory"][0]))
    write_parts(saved, header, payload)
    with pytest.raises(FormatError):
        wio.load(saved)


def test_renamed_tensor(saved):
    header, payload = read_parts(saved)
    header["directory"][0]["name"] = "patch_kernel_v2"
    write_parts(saved, header, payload)
    with pytest.raises(SchemaError) as e:
        wio.load(saved)
    assert "patch_kernel" in str(e.value)


def test_wrong_declared_shape(saved):
    header, payload = read_parts(saved)
    header["directory"][0]["shape"] = [1, 1]
    write_parts(saved, header, payload)
    with pytest.raises(SchemaError):
        wio.load(saved)


def test_misaligned_offset(saved):
    header, payload = read_parts(saved)
    header["directory"][1]["offset"] += 4
    write_parts(saved, header, payload)
    with pytest.raises(FormatError):
        wio.load(saved)


def test_tensor_past_payload_end(saved):
    header, payload = read_parts(saved)
    header["directory"][0]["offset"] = (len(payload) // wio.ALIGN + 1) * wio.ALIGN
    write_parts(saved, header, payload)
    with pytest.raises(CorruptionError):
        wio.load(saved)


def test_overlapping_tensors(saved):
    header, payload = read_parts(saved)
    header["directory"][1]["offset"] = header["directory"][0]["offset"]
    write_parts(saved, header, payload)
    with pytest.raises(FormatError):
        wio.load(saved)


def test_truncated_payload(saved):
    blob = saved.read_bytes()
    saved.write_bytes(blob[:-16])
    with pytest.raises(CorruptionError) as e:
        wio.load(saved)
    assert "truncated" in str(e.value)


def test_flipped_payload_byte_fails_checksum(saved):
    header, payload = read_parts(saved)
    mangled = bytearray(payload)
    mangled[100] ^= 0xFF
    write_parts(saved, header, bytes(mangled))
    with pytest.raises(CorruptionError) as e:
        wio.load(saved)
    assert "CRC32" in str(e.value)


def test_nan_in_payload(saved):
    header, payload = read_parts(saved)
    mangled = bytearray(payload)
    off = header["directory"][0]["offset"]
    mangled[off: off + 4] = b"\x00\x00\xc0\x7f"  # quiet NaN, little endian
    header["payload_crc32"] = zlib.crc32(bytes(mangled))
    write_parts(saved, header, bytes(mangled))
    with pytest.raises(CorruptionError) as e:
        wio.load(saved)
    assert "non-finite" in str(e.value)


def test_save_config_mismatch_writes_nothing(tmp_path, toy_bundle):
    other = toy_config(num_heads=4)
    path = tmp_path / "never.vpw1"
    with pytest.raises(SchemaError):
        wio.save(other, toy_bundle, path)
    assert not path.exists()
