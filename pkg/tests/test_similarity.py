import numpy as np
import pytest

import oracles
from vitpercep import encoder as enc
from vitpercep.autodiff import Tensor
from vitpercep.errors import ContractError
from vitpercep.similarity import SimilarityMap, heatmap_delta, similarity_map


def rand_image(cfg, seed):
    r = np.random.RandomState(seed)
    return r.rand(cfg.image_size, cfg.image_size, cfg.channels)


def test_query_cell_is_one(toy_bundle):
    img = rand_image(toy_bundle.config, 0)
    for q in (1, 6, 16):
        m = similarity_map(img, toy_bundle, 2, q)
        assert m.value_at(q) == pytest.approx(1.0, abs=1e-9)


def test_values_bounded_and_grid_shaped(toy_bundle):
    c = toy_bundle.config
    img = rand_image(c, 1)
    m = similarity_map(img, toy_bundle, 3, 5)
    assert m.values.shape == (c.grid, c.grid)
    assert np.all(m.values <= 1.0 + 1e-12)
    assert np.all(m.values >= -1.0 - 1e-12)
    assert m.layer == 3 and m.feature_kind == "token"


def test_values_match_cosine_oracle(toy_bundle):
    img = rand_image(toy_bundle.config, 2)
    q = 7
    m = similarity_map(img, toy_bundle, 2, q)
    feats, _ = enc.extract(Tensor(np.asarray(img, dtype=toy_bundle.dtype)),
                           toy_bundle, 2)
    rows = feats.data[1:].astype(np.float64)
    for t in range(rows.shape[0]):
        assert m.values.reshape(-1)[t] == pytest.approx(
            oracles.cosine(rows[t], rows[q - 1]), abs=1e-12)


def test_map_is_symmetric_in_query_and_target(toy_bundle):
    img = rand_image(toy_bundle.config, 3)
    m4 = similarity_map(img, toy_bundle, 2, 4)
    m11 = similarity_map(img, toy_bundle, 2, 11)
    assert m4.value_at(11) == pytest.approx(m11.value_at(4), abs=1e-12)


def test_map_ignores_feature_scale():
    # cosine throws away positive rescaling; check on the raw helper through
    # two bundles differing only by a final-layer gamma scale is expensive,
    # so exercise the rule directly
    from vitpercep.similarity import _cosine_to_query

    r = np.random.RandomState(4)
    rows = r.rand(10, 6) - 0.5
    q = rows[3]
    a = _cosine_to_query(rows, q)
    b = _cosine_to_query(rows * 2.5, q * 2.5)
    assert np.max(np.abs(a - b)) < 1e-12


def test_zero_norm_rows():
    from vitpercep.similarity import _cosine_to_query

    rows = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    z = _cosine_to_query(rows, np.zeros(2))
    assert z.tolist() == [1.0, 0.0, 1.0]
    nz = _cosine_to_query(rows, np.array([2.0, 0.0]))
    assert nz.tolist() == [0.0, 1.0, 0.0]


def test_query_index_bounds(toy_bundle):
    img = rand_image(toy_bundle.config, 5)
    with pytest.raises(ContractError):
        similarity_map(img, toy_bundle, 1, 0)
    with pytest.raises(ContractError):
        similarity_map(img, toy_bundle, 1, toy_bundle.config.num_patches + 1)


def test_map_values_read_only(toy_bundle):
    img = rand_image(toy_bundle.config, 6)
    m = similarity_map(img, toy_bundle, 1, 1)
    with pytest.raises(ValueError):
        m.values[0, 0] = 0.0


def test_delta_of_identical_maps_is_zero(toy_bundle):
    img = rand_image(toy_bundle.config, 7)
    m = similarity_map(img, toy_bundle, 2, 3)
    grid, mean = heatmap_delta(m, m)
    assert mean == 0.0
    assert np.all(grid == 0.0)


def test_delta_hand_value():
    a = SimilarityMap(np.array([[1.0, 0.5], [0.0, -0.5]]), 1, 1, "token")
    b = SimilarityMap(np.array([[1.0, 0.0], [0.5, -1.0]]), 1, 1, "token")
    grid, mean = heatmap_delta(a, b)
    assert grid.tolist() == [[0.0, 0.5], [0.5, 0.5]]
    assert mean == pytest.approx(0.375)


@pytest.mark.parametrize("other", [
    SimilarityMap(np.zeros((2, 2)), 2, 1, "token"),   # query differs
    SimilarityMap(np.zeros((2, 2)), 1, 2, "token"),   # layer differs
    SimilarityMap(np.zeros((2, 2)), 1, 1, "key"),     # kind differs
    SimilarityMap(np.zeros((3, 3)), 1, 1, "token"),   # grid differs
])
def test_delta_rejects_incomparable_maps(other):
    base = SimilarityMap(np.zeros((2, 2)), 1, 1, "token")
    with pytest.raises(ContractError):
        heatmap_delta(base, other)


def test_blur_shifts_map_more_than_noise(toy_bundle, sharp_image, blurred_image):
    # the structural property the diagnostic exists for; thresholds here are
    # loose, the acceptance test pins the calibrated ones
    from support import noised_copy

    noisy = noised_copy(sharp_image, "sim-noise")
    m_sharp = similarity_map(sharp_image, toy_bundle, 3, 6)
    m_blur = similarity_map(blurred_image, toy_bundle, 3, 6)
    m_noise = similarity_map(noisy, toy_bundle, 3, 6)
    _, blur_delta = heatmap_delta(m_sharp, m_blur)
    _, noise_delta = heatmap_delta(m_sharp, m_noise)
    assert blur_delta > noise_delta > 0.0
