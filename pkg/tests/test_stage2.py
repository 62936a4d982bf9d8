import numpy as np
import pytest

from rimr import tensor as T
from rimr.metrics import chamfer, hard_iou
from rimr.stage2 import (Stage2Config, Stage2Discriminator, Stage2Generator, Stage2LossWeights, d_p2p_forward,
                         encode, g_p2p_forward, prepare_clouds, stage2_d_loss, stage2_g_loss)
from rimr.tensor.gradcheck import check_gradients

TINY = Stage2Config(n_input=8, n_output=8, block1=(4, 4), block2=(4, 4), decoder=(4, 4), disc_hidden=4,
                    voxel_size=0.2)


class ConstD:
    def __init__(self, value):
        self.value = value

    def __call__(self, coarse, cloud):
        return T.Tensor(np.full(cloud.shape[0], self.value))


class FixedG:
    def __init__(self, out):
        self.out = out

    def __call__(self, coarse):
        return self.out


@pytest.fixture(scope="module")
def nets():
    cfg = Stage2Config()
    return Stage2Generator(cfg), Stage2Discriminator(cfg)


# -- invariances ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_encoder_permutation_invariant(nets, seed):
    gen, _ = nets
    r = np.random.default_rng(seed)
    x = r.normal(size=(1024, 3))
    a = encode(gen.encoder, x, 1024)
    b = encode(gen.encoder, r.permutation(x), 1024)
    assert np.abs(a - b).max() <= 1e-6


def test_encoder_max_pool_properties(nets):
    gen, _ = nets
    r = np.random.default_rng(0)
    x = r.normal(size=(50, 3))
    with T.no_grad():
        base = gen.encoder(T.Tensor(x[None])).data
        dup = gen.encoder(T.Tensor(np.concatenate([x, x[:7]])[None])).data
        outlier = x.copy()
        outlier[3] = [40.0, -30.0, 25.0]
        far = gen.encoder(T.Tensor(outlier[None])).data
    np.testing.assert_array_equal(base, dup)
    assert np.abs(base - far).max() > 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_generator_and_discriminator_invariance(nets, seed):
    gen, disc = nets
    r = np.random.default_rng(seed)
    coarse, cloud = r.normal(size=(1500, 3)), r.normal(size=(3000, 3))
    out = g_p2p_forward(gen, coarse)
    assert out.shape == (2048, 3) and np.all(np.isfinite(out))
    assert np.abs(out - g_p2p_forward(gen, r.permutation(coarse))).max() <= 1e-6
    s = d_p2p_forward(disc, coarse, cloud)
    assert 0 < s < 1
    assert abs(s - d_p2p_forward(disc, r.permutation(coarse), cloud)) < 1e-6
    assert abs(s - d_p2p_forward(disc, coarse, r.permutation(cloud))) < 1e-6


def test_empty_cloud_rejected(nets):
    gen, disc = nets
    with pytest.raises(ValueError):
        g_p2p_forward(gen, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        d_p2p_forward(disc, np.ones((4, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        gen(T.Tensor(np.zeros((1, 100, 3))))


def test_prepare_clouds_small_input_upsamples():
    x = np.random.default_rng(0).normal(size=(10, 3))
    out = prepare_clouds(x, 32, seed=3)
    assert out.shape == (1, 32, 3)
    assert all(any(np.array_equal(p, q) for q in x) for p in out[0])


def test_generator_finite_over_random_inputs():
    cfg = Stage2Config()
    gen = Stage2Generator(cfg)
    r = np.random.default_rng(0)
    with T.no_grad():
        for _ in range(100):
            x = r.normal(size=(10, cfg.n_input, 3)) * r.uniform(0.01, 100)
            assert np.all(np.isfinite(gen(T.Tensor(x)).data))


# -- losses ---------------------------------------------------------------

FOUR = np.array([[0.05, 0.05, 0.05], [0.35, 0.05, 0.05], [0.05, 0.35, 0.05], [0.05, 0.05, 0.35]])


def test_g_loss_floor_at_perfect_prediction(f64):
    loss, parts = stage2_g_loss(None, [FOUR], FixedG(T.Tensor(FOUR[None])), ConstD(1.0), voxel_size=0.1)
    assert parts["L_GAN"] == 0 and parts["L_cf"] == 0
    assert float(loss.data) == pytest.approx(10 * 2.5e-7, rel=1e-3)


def test_g_loss_component_sum(f64):
    truth = np.array([[0.5, 0.5, 0.5], [1.01, 0.5, 0.5]])
    pred = np.array([[0.5, 0.5, 0.5], [0.99, 0.5, 0.5]])
    assert chamfer(pred, truth) == pytest.approx(0.02, abs=1e-15)
    assert hard_iou(pred, truth, 1.0) == pytest.approx(0.5, rel=1e-5)
    loss, parts = stage2_g_loss(None, [truth], FixedG(T.Tensor(pred[None])), ConstD(0.5), voxel_size=1.0)
    assert float(loss.data) == pytest.approx(7.25, rel=1e-6)
    expected = parts["L_GAN"] + 100 * parts["L_cf"] + 10 * parts["L_iou"]
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)
    pure, _ = stage2_g_loss(None, [truth], FixedG(T.Tensor(pred[None])), ConstD(0.5),
                            Stage2LossWeights(0, 0), voxel_size=1.0)
    assert float(pure.data) == pytest.approx(0.25)


def test_g_loss_without_iou_still_reports_it(f64):
    truth = np.array([[0.5, 0.5, 0.5], [1.01, 0.5, 0.5]])
    pred = T.Tensor(np.array([[[0.5, 0.5, 0.5], [0.99, 0.5, 0.5]]]))
    loss, parts = stage2_g_loss(None, [truth], FixedG(pred), None, Stage2LossWeights(100, 0), voxel_size=1.0)
    assert parts["L_iou"] == pytest.approx(0.5, rel=1e-5) and parts["L_GAN"] == 0
    assert float(loss.data) == pytest.approx(100 * parts["L_cf"])


def test_d_loss_examples(f64):
    truth = np.zeros((3, 3))
    gen = FixedG(T.Tensor(np.ones((1, 8, 3))))

    def perfect(coarse, cloud):
        return T.Tensor(np.where(np.abs(cloud.data).sum() == 0, 1.0, 0.0).reshape(1))

    x = T.Tensor(np.zeros((1, 8, 3)))
    assert float(stage2_d_loss(x, [truth], gen, perfect).data) == 0
    assert float(stage2_d_loss(x, [truth], gen, ConstD(0.5)).data) == pytest.approx(0.25)


def test_d_loss_touches_only_discriminator(f64):
    gen, disc = Stage2Generator(TINY), Stage2Discriminator(TINY)
    r = np.random.default_rng(0)
    x = T.Tensor(prepare_clouds(r.normal(size=(20, 3)), 8))
    T.backward(stage2_d_loss(x, [r.normal(size=(12, 3))], gen, disc))
    assert all(p.grad is None for p in gen.parameters())
    assert all(p.grad is not None for p in disc.parameters())


@pytest.mark.parametrize("seed", range(5))
def test_full_g_loss_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    gen, disc = Stage2Generator(TINY, r), Stage2Discriminator(TINY, r)
    x = T.Tensor(prepare_clouds([r.uniform(0, 1, (30, 3)), r.uniform(0, 1, (25, 3))], 8))
    truths = [r.uniform(0, 1, (15, 3)), r.uniform(0, 1, (11, 3))]

    def f():
        return stage2_g_loss(x, truths, gen, disc, voxel_size=0.2, iou_mode="surrogate")[0]

    assert check_gradients(f, gen.parameters()) < 1e-4
    assert all(p.grad is None for p in disc.parameters())


@pytest.mark.parametrize("seed", range(5))
def test_d_loss_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    gen, disc = Stage2Generator(TINY, r), Stage2Discriminator(TINY, r)
    x = T.Tensor(prepare_clouds([r.uniform(0, 1, (30, 3))], 8))
    truth = [r.uniform(0, 1, (15, 3))]
    assert check_gradients(lambda: stage2_d_loss(x, truth, gen, disc), disc.parameters()) < 1e-4
