"""
Tests for the Haar transform and the frequency discriminator.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdtm.errors import ShapeError
from sdtm.frequency import (
    FreDNet,
    WaveletBands,
    fred_losses,
    fred_score,
    frequency_scores,
    haar_dwt,
    haar_idwt,
    high_freq,
    high_freq_energy,
)
from sdtm.tensor import Tensor


def block(values):
    return Tensor(np.array(values, dtype=np.float64).reshape(1, 1, 2, 2))


def test_known_block():
    bands = haar_dwt(block([[1, 2], [3, 4]]))
    assert [b.item() for b in bands.as_tuple()] == [5.0, -1.0, -2.0, 0.0]


def test_constant_block_has_no_detail():
    bands = haar_dwt(block([[3, 3], [3, 3]]))
    assert bands.ll.item() == 6.0
    assert bands.lh.item() == bands.hl.item() == bands.hh.item() == 0.0


def test_checkerboard_is_diagonal_detail():
    img = np.tile(np.array([[1.0, 0.0], [0.0, 1.0]]), (3, 3))[None, None]
    bands = haar_dwt(Tensor(img))
    assert_array_equal(bands.hh.data, np.ones((1, 1, 3, 3)))
    assert_array_equal(bands.lh.data, 0.0)
    assert_array_equal(bands.hl.data, 0.0)


def test_round_trip(rng):
    x = rng.normal(size=(2, 3, 8, 6))
    assert_allclose(haar_idwt(haar_dwt(Tensor(x, dtype=np.float64))).data, x, atol=1e-12)


def test_energy_is_preserved(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    bands = haar_dwt(Tensor(x, dtype=np.float64))
    assert_allclose(sum(np.sum(b.data ** 2) for b in bands.as_tuple()), np.sum(x ** 2), rtol=1e-12)


def test_zero_bands_give_zero_image():
    zero = Tensor(np.zeros((1, 2, 3, 3)))
    assert_array_equal(haar_idwt(WaveletBands(zero, zero, zero, zero)).data, 0.0)


def test_ll_only_gives_block_constant_image(rng):
    ll = rng.normal(size=(1, 1, 3, 3))
    zero = Tensor(np.zeros_like(ll))
    img = haar_idwt(WaveletBands(Tensor(ll, dtype=np.float64), zero, zero, zero)).data
    assert_allclose(img, np.repeat(np.repeat(ll / 2, 2, axis=2), 2, axis=3))


def test_odd_extent():
    with pytest.raises(ShapeError):
        haar_dwt(Tensor(np.zeros((1, 1, 5, 4))))


def test_high_freq_channels(rng):
    out = high_freq(haar_dwt(Tensor(rng.normal(size=(2, 3, 8, 8)))))
    assert out.shape == (2, 9, 4, 4)


def test_high_freq_of_constant_is_zero():
    assert_array_equal(high_freq(haar_dwt(Tensor(np.full((1, 3, 4, 4), 0.3)))).data, 0.0)
    assert high_freq_energy(np.full((1, 3, 4, 4), 0.3, dtype=np.float32)) == 0.0


def test_fred_score_per_sample(rng):
    net = FreDNet(3 * 4, rng, width=4)
    features = rng.normal(size=(3, 4, 8, 8))
    scores = frequency_scores(net, Tensor(np.concatenate([features, features[:1]])))
    assert scores.shape == (4,)
    assert_allclose(scores.data[0], scores.data[3], rtol=1e-6)


def test_fred_score_pool_too_large(rng):
    net = FreDNet(3, rng, width=4)
    with pytest.raises(ShapeError):
        fred_score(net, Tensor(np.zeros((1, 3, 1, 1))))


def test_zero_head_identical_features_give_two(rng):
    net = FreDNet(3 * 2, rng, width=4)
    net.head.weight.data[:] = 0.0
    features = Tensor(rng.normal(size=(2, 2, 8, 8)))
    loss_d, loss_g = fred_losses(net, features, features)
    assert_allclose(loss_d.item(), 2.0)
    assert loss_g.item() == 0.0


def test_fred_losses_odd_features(rng):
    net = FreDNet(3, rng, width=4)
    with pytest.raises(ShapeError):
        fred_losses(net, Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 5, 5))))


def test_fred_losses_mismatched_features(rng):
    net = FreDNet(6, rng, width=4)
    with pytest.raises(ShapeError):
        fred_losses(net, Tensor(np.zeros((1, 2, 8, 8))), Tensor(np.zeros((1, 2, 4, 4))))


def test_fred_losses_hand_value(rng, monkeypatch):
    net = FreDNet(3, rng, width=4)
    scores = iter([Tensor([0.2]), Tensor([0.3])])
    monkeypatch.setattr("sdtm.frequency.frequency_scores", lambda _net, _f: next(scores))
    loss_d, loss_g = fred_losses(net, Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 4, 4))))
    assert_allclose(loss_d.item(), 2.1, atol=1e-6)
    assert_allclose(loss_g.item(), -0.3, atol=1e-6)


def test_noise_has_more_detail_than_its_blur(rng):
    noise = rng.normal(size=(1, 3, 16, 16)).astype(np.float32)
    padded = np.pad(noise, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    blurred = sum(padded[:, :, i:i + 16, j:j + 16] for i in range(3) for j in range(3)) / 9.0
    assert high_freq_energy(noise) > high_freq_energy(blurred.astype(np.float32))
