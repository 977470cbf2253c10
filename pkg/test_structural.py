"""
Tests for the Laplacian filter and the structural discriminator.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdtm import losses
from sdtm.errors import EmptyBatchError, ShapeError
from sdtm.models import DiscriminatorNet
from sdtm.structural import (
    LAPLACIAN_KERNEL,
    StructDNet,
    laplacian_energy,
    laplacian_filter,
    structd_losses,
    structd_score,
)
from sdtm.tensor import Tape, Tensor


def naive_laplacian(img):
    """Replicate-padded 4-neighbour Laplacian, one loop per pixel."""
    n, c, h, w = img.shape
    out = np.zeros_like(img)
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    up, down = img[b, ch, max(i - 1, 0), j], img[b, ch, min(i + 1, h - 1), j]
                    left, right = img[b, ch, i, max(j - 1, 0)], img[b, ch, i, min(j + 1, w - 1)]
                    out[b, ch, i, j] = 4 * img[b, ch, i, j] - up - down - left - right
    return out


def test_kernel_sums_to_zero():
    assert LAPLACIAN_KERNEL.sum() == 0.0


def test_constant_image_is_zero_everywhere():
    out = laplacian_filter(Tensor(np.full((2, 3, 8, 8), 0.75)))
    assert out.shape == (2, 3, 8, 8)
    assert np.all(out.data == 0.0)


def test_interior_impulse_response():
    img = np.zeros((1, 1, 7, 7))
    img[0, 0, 3, 3] = 1.0
    out = laplacian_filter(Tensor(img)).data[0, 0]
    expected = np.zeros((7, 7))
    expected[2:5, 2:5] = LAPLACIAN_KERNEL
    assert_array_equal(out, expected)


def test_ramp_interior_vanishes():
    ramp = np.tile(np.arange(8, dtype=np.float64), (8, 1))[None, None]
    out = laplacian_filter(Tensor(ramp)).data
    assert np.all(out[0, 0, 1:-1, 1:-1] == 0.0)


def test_matches_loop_oracle(rng):
    img = rng.normal(size=(2, 3, 6, 5))
    out = laplacian_filter(Tensor(img, dtype=np.float64)).data
    assert_allclose(out, naive_laplacian(img), atol=1e-9)


def test_channels_are_filtered_independently(rng):
    img = rng.normal(size=(1, 3, 6, 6)).astype(np.float32)
    full = laplacian_filter(Tensor(img)).data
    for c in range(3):
        assert_array_equal(full[:, c:c + 1], laplacian_filter(Tensor(img[:, c:c + 1])).data)


def test_too_small_image():
    with pytest.raises(ShapeError):
        laplacian_filter(Tensor(np.zeros((1, 1, 2, 5))))


def test_laplacian_energy_constant():
    assert laplacian_energy(np.ones((1, 3, 8, 8), dtype=np.float32)) == 0.0


def test_zero_head_scores_zero(rng):
    net = StructDNet(3, rng, width=4)
    net.head.weight.data[:] = 0.0
    scores = structd_score(net, laplacian_filter(Tensor(rng.normal(size=(3, 3, 16, 16)))))
    assert_array_equal(scores.data, np.zeros(3))


def test_score_per_sample(rng):
    net = StructDNet(3, rng, width=4)
    x = rng.normal(size=(1, 3, 16, 16))
    batch = np.concatenate([x, rng.normal(size=(2, 3, 16, 16)), x])
    scores = net(Tensor(batch)).data
    assert scores.shape == (4,)
    assert_allclose(scores[0], scores[3], rtol=1e-6)


def test_score_rejects_flat_input(rng):
    with pytest.raises(ShapeError):
        structd_score(StructDNet(3, rng, width=4), Tensor(np.zeros((3, 16, 16))))


@pytest.mark.parametrize(
    "real, fake, loss_d, loss_g",
    [
        ([1.0], [-1.0], 0.0, 1.0),
        ([0.0], [0.0], 2.0, 0.0),
        ([0.5, 2.0], [-0.25, 0.5], 1.375, -0.125),
    ],
)
def test_structd_hinge_table(real, fake, loss_d, loss_g):
    d, g = structd_losses(Tensor(real), Tensor(fake))
    assert_allclose(d.item(), loss_d, atol=1e-6)
    assert_allclose(g.item(), loss_g, atol=1e-6)


def test_structd_losses_empty():
    with pytest.raises(EmptyBatchError):
        structd_losses(Tensor(np.zeros(0)), Tensor([0.0]))


def test_structd_is_lightweight():
    rng = np.random.default_rng(0)
    structd = StructDNet(3, rng, width=32)
    disc = DiscriminatorNet(3, 3, rng, width=32)
    assert structd.num_parameters() == 19457
    assert structd.num_parameters() / disc.num_parameters() < 0.05


def box_blur(images):
    padded = np.pad(images, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = images.shape[2:]
    return sum(padded[:, :, i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def test_sharp_image_has_more_laplacian_energy_than_its_blur(rng):
    sharp = rng.uniform(-1, 1, size=(2, 3, 16, 16)).astype(np.float32)
    assert laplacian_energy(sharp) > 2 * laplacian_energy(box_blur(sharp))


def test_generator_loss_reaches_image_through_laplacian(rng):
    """StructD's generator term backpropagates through the fixed filter into the image."""
    net = StructDNet(3, rng, width=4)
    x = Tensor(rng.uniform(-1, 1, size=(2, 3, 8, 8)), requires_grad=True)
    with Tape():
        loss_g = losses.generated(structd_score(net, laplacian_filter(x)))
    loss_g.backward()
    assert x.grad is not None and x.grad.shape == x.shape
    assert np.abs(x.grad).sum() > 0
