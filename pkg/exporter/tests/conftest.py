import pytest

torch = pytest.importorskip("torch")
pytest.importorskip("vpwexport")

from exporthelpers import add_decoder_noise, make_state


@pytest.fixture(scope="session")
def small_state():
    return make_state()


@pytest.fixture(scope="session")
def small_ckpt(small_state, tmp_path_factory):
    """MAE-style file: encoder + decoder under a "model" wrapper key."""
    path = tmp_path_factory.mktemp("ckpt") / "small.pth"
    torch.save({"model": add_decoder_noise(small_state), "epoch": 7}, path)
    return path


@pytest.fixture(scope="session")
def small_export(small_ckpt, tmp_path_factory):
    import vpwexport

    out = tmp_path_factory.mktemp("export") / "small.vpw1"
    manifest = vpwexport.export(small_ckpt, "mae", out)
    return out, vpwexport.manifest_path_for(out), manifest
