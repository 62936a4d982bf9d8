import numpy as np
import pytest

from rimr import tensor as T
from rimr.stage1 import (PerceptualExtractor, Stage1Config, Stage1Discriminator, Stage1Generator,
                         Stage1LossWeights, d_r2i_forward, g_r2i_forward, skip_feature, stage1_d_loss,
                         stage1_g_loss)
from rimr.tensor.gradcheck import check_gradients

# small enough for finite differences; every layer type is still exercised
TINY = Stage1Config(map_shape=(4, 4, 4), enc_channels=(2, 4), latent=4, base_channels=3, base_size=2,
                    up_channels=(3, 3), refine_channels=(2, 2, 1), skip_k=2, img_down_channels=(2, 2, 4),
                    img_refine_channels=(), fusion_channels=2)


def brute_skip(maps, k):
    z, x, _ = maps.shape
    out = np.zeros((k, z, x))
    for i in range(z):
        for j in range(x):
            out[:, i, j] = sorted(maps[i, j], reverse=True)[:k]
    return out


class ConstD:
    def __init__(self, value):
        self.value = value

    def __call__(self, maps, img):
        return T.Tensor(np.full(img.shape[0], self.value))


class FixedG:
    def __init__(self, out):
        self.out = out

    def __call__(self, maps):
        return self.out


# -- skip feature ---------------------------------------------------------

def test_skip_single_voxel():
    m = np.zeros((6, 5, 20))
    m[2, 3, 11] = 4.5
    f = skip_feature(m, 8, (6, 5))
    assert f.shape == (8, 6, 5)
    assert f[0, 2, 3] == 4.5 and not f[1:, 2, 3].any()
    assert np.count_nonzero(f) == 1


def test_skip_constant_map():
    f = skip_feature(np.full((4, 4, 16), 0.3), 8, (8, 8))
    assert np.all(f == 0.3)


@pytest.mark.parametrize("seed", range(10))
def test_skip_matches_per_cell_sort(seed):
    m = np.random.default_rng(seed).random((4, 4, 16))
    np.testing.assert_array_equal(skip_feature(m, 8, (4, 4)), brute_skip(m, 8))


def test_skip_nearest_resize():
    m = np.random.default_rng(0).random((2, 2, 8))
    f = skip_feature(m, 3, (4, 4))
    base = brute_skip(m, 3)
    np.testing.assert_array_equal(f, np.repeat(np.repeat(base, 2, axis=1), 2, axis=2))


# -- networks -------------------------------------------------------------

@pytest.fixture(scope="module")
def default_nets():
    cfg = Stage1Config()
    return Stage1Generator(cfg), Stage1Discriminator(cfg)


def test_generator_default_shapes(default_nets):
    gen, _ = default_nets
    out = g_r2i_forward(gen, np.zeros((64, 64, 256)))
    assert out.shape == (128, 128)
    assert np.all(np.isfinite(out)) and out.min() >= 0
    with pytest.raises(ValueError):
        g_r2i_forward(gen, np.zeros((32, 64, 256)))


def test_generator_scale_invariant(default_nets):
    gen, _ = default_nets
    m = np.random.default_rng(0).random((64, 64, 256)) ** 8
    a = g_r2i_forward(gen, m)
    b = g_r2i_forward(gen, m * 37.5)
    assert np.abs(a - b).max() <= 1e-6


def test_discriminator_range_and_determinism(default_nets):
    _, disc = default_nets
    r = np.random.default_rng(1)
    m, d = r.random((64, 64, 256)), r.uniform(0, 3, (128, 128))
    s = d_r2i_forward(disc, m, d)
    assert 0 < s < 1
    assert d_r2i_forward(disc, m, d) == s
    with pytest.raises(ValueError):
        disc(m[None], T.Tensor(np.zeros((1, 1, 64, 64))))


# -- losses ---------------------------------------------------------------

def test_g_loss_vanishes_at_perfect_output(f64):
    tgt = T.Tensor(np.random.default_rng(0).random((1, 1, 8, 8)))
    loss, parts = stage1_g_loss(None, tgt, FixedG(tgt), ConstD(1.0), PerceptualExtractor())
    assert loss.data == 0 and parts == {"L_GAN": 0.0, "L_1": 0.0, "L_p": 0.0}


def test_g_loss_component_sum(f64):
    r = np.random.default_rng(0)
    g = r.random((2, 1, 8, 8))
    pred = T.Tensor(g + 0.1)
    ex = PerceptualExtractor()
    loss, parts = stage1_g_loss(None, T.Tensor(g), FixedG(pred), ConstD(0.5), ex)
    lp = float(ex.loss(T.Tensor(g + 0.1), T.Tensor(g)).data)
    assert parts["L_GAN"] == pytest.approx(0.25, rel=1e-12)
    assert parts["L_1"] == pytest.approx(0.1, rel=1e-9)
    assert float(loss.data) == pytest.approx(0.25 + 1000 * 0.1 + 20 * lp, rel=1e-6)
    zero, _ = stage1_g_loss(None, T.Tensor(g), FixedG(pred), ConstD(0.5), ex, Stage1LossWeights(0, 0))
    assert float(zero.data) == pytest.approx(0.25)


def test_d_loss_examples(f64):
    tgt = T.Tensor(np.zeros((2, 1, 8, 8)))
    gen = FixedG(T.Tensor(np.ones((2, 1, 8, 8))))

    def perfect(maps, img):
        return T.Tensor(np.where(img.data.reshape(2, -1)[:, 0] == 0, 1.0, 0.0))

    assert float(stage1_d_loss(None, tgt, gen, perfect).data) == 0
    assert float(stage1_d_loss(None, tgt, gen, ConstD(0.5)).data) == pytest.approx(0.25)


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        Stage1LossWeights(-1, 20)


# -- gradient flow and finite differences ---------------------------------

def _tiny_batch(seed):
    r = np.random.default_rng(seed)
    return r.random((2, 4, 4, 4)), T.Tensor(r.random((2, 1, 8, 8)))


def test_gradient_flow_and_isolation(f64):
    gen, disc = Stage1Generator(TINY), Stage1Discriminator(TINY)
    maps, tgt = _tiny_batch(0)
    loss, _ = stage1_g_loss(maps, tgt, gen, disc, PerceptualExtractor())
    T.backward(loss)
    assert all(p.grad is not None for p in gen.parameters())
    assert all(p.grad is None for p in disc.parameters())
    gen.zero_grad()
    T.backward(stage1_d_loss(maps, tgt, gen, disc))
    assert all(p.grad is None for p in gen.parameters())
    assert all(p.grad is not None for p in disc.parameters())


def test_zero_learning_rate_changes_nothing(f64):
    gen, disc = Stage1Generator(TINY), Stage1Discriminator(TINY)
    before = [p.data.copy() for p in gen.parameters()]
    maps, tgt = _tiny_batch(1)
    loss, parts = stage1_g_loss(maps, tgt, gen, disc, PerceptualExtractor())
    assert all(np.isfinite(v) for v in parts.values())
    T.backward(loss)
    T.Adam(gen.parameters(), lr=0.0).step()
    assert all(np.array_equal(a, p.data) for a, p in zip(before, gen.parameters()))


@pytest.mark.parametrize("seed", range(5))
def test_g_loss_gradcheck(f64, seed):
    rng = np.random.default_rng(seed)
    gen, disc = Stage1Generator(TINY, rng), Stage1Discriminator(TINY, rng)
    maps, tgt = _tiny_batch(seed)
    ex = PerceptualExtractor(seed=seed)

    def f():
        return stage1_g_loss(maps, tgt, gen, disc, ex)[0]

    assert check_gradients(f, gen.parameters()) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_d_loss_gradcheck(f64, seed):
    rng = np.random.default_rng(seed)
    gen, disc = Stage1Generator(TINY, rng), Stage1Discriminator(TINY, rng)
    maps, tgt = _tiny_batch(seed)
    assert check_gradients(lambda: stage1_d_loss(maps, tgt, gen, disc), disc.parameters()) < 1e-4
