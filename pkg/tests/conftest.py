import pytest

from vitpercep import generate_toy

from support import gaussian_blur, make_sharp_image, toy_config


@pytest.fixture(scope="session")
def toy_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def toy_bundle(toy_cfg):
    return generate_toy(toy_cfg, seed=0)


@pytest.fixture(scope="session")
def sharp_image():
    return make_sharp_image()


@pytest.fixture(scope="session")
def blurred_image(sharp_image):
    return gaussian_blur(sharp_image)
