import numpy as np
import pytest

from dfnet.gradcheck import check_gradients
from dfnet.losses import (
    FeatureExtractor,
    LossWeights,
    gram,
    perceptual_loss,
    recon_loss,
    style_loss,
    total_loss,
    tv_loss,
)
from dfnet.tensor import ContractError, ShapeError, Tensor
from oracles import (
    loop_features,
    loop_gram,
    loop_l1,
    loop_perceptual,
    loop_style,
    loop_total,
    loop_tv,
)


def _close(a, b, rel=1e-12):
    assert abs(a - b) <= rel * max(abs(a), abs(b), 1e-300), (a, b)


@pytest.fixture(scope="module")
def fx():
    return FeatureExtractor((4, 6, 6), seed=3)


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    return rng.uniform(size=(2, 3, 8, 8)), rng.uniform(size=(2, 3, 8, 8))


def test_recon_examples_and_oracle(pair):
    a, b = pair
    assert recon_loss(Tensor(a), a).item() == 0.0
    assert recon_loss(Tensor(np.zeros((1, 2, 3, 5))), np.ones((1, 2, 3, 5))).item() == 1.0
    _close(recon_loss(Tensor(a), b).item(), loop_l1(a, b))
    with pytest.raises(ShapeError):
        recon_loss(Tensor(a), b[:, :2])


def test_perceptual_oracle(pair, fx):
    a, b = pair
    assert perceptual_loss(Tensor(a), a, fx).item() == 0.0
    _close(perceptual_loss(Tensor(a), b, fx).item(), loop_perceptual(fx, a, b))


def test_feature_taps_match_oracle(pair, fx):
    a, _ = pair
    for got, want in zip(fx(Tensor(a)), loop_features(fx, a)):
        assert np.allclose(got.data, want, rtol=1e-13, atol=1e-15)


def test_gram_examples():
    assert np.array_equal(gram(Tensor(np.zeros((3, 2, 2)))).data, np.zeros((3, 3)))
    assert np.array_equal(gram(Tensor(np.full((1, 2, 2), 2.0))).data, [[4.0]])


def test_gram_oracle_symmetry_psd():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(4, 3, 5))
    g = gram(Tensor(f)).data
    assert np.allclose(g, loop_gram(f), rtol=1e-13, atol=1e-15)
    assert np.array_equal(g, g.T)
    for _ in range(20):
        x = rng.normal(size=4)
        assert x @ g @ x >= -1e-12


def test_gram_permutation_invariance_exact():
    rng = np.random.default_rng(2)
    f = rng.integers(-8, 8, size=(3, 4, 4)).astype(float)  # integer features sum exactly in any order
    perm = rng.permutation(16)
    shuffled = f.reshape(3, 16)[:, perm].reshape(3, 4, 4)
    assert np.array_equal(gram(Tensor(f)).data, gram(Tensor(shuffled)).data)


def test_style_oracle(pair, fx):
    a, b = pair
    assert style_loss(Tensor(a), a, fx).item() == 0.0
    _close(style_loss(Tensor(a), b, fx).item(), loop_style(fx, a, b))


def test_tv_examples_and_oracle(pair):
    a, _ = pair
    assert tv_loss(Tensor(np.full((1, 3, 4, 4), 0.3))).item() == 0.0
    assert tv_loss(Tensor(np.array([[[[0.0, 1.0], [0.0, 1.0]]]]))).item() == 0.5
    assert tv_loss(Tensor(np.ones((1, 3, 1, 1)))).item() == 0.0
    _close(tv_loss(Tensor(a)).item(), loop_tv(a))


def test_loss_gradients_fd(fx):
    rng = np.random.default_rng(3)
    target = rng.uniform(size=(2, 3, 8, 8))
    pred = Tensor(rng.uniform(size=(2, 3, 8, 8)), requires_grad=True)
    assert check_gradients(lambda: recon_loss(pred, target), [pred]) < 1e-6
    assert check_gradients(lambda: tv_loss(pred), [pred]) < 1e-6
    assert check_gradients(lambda: perceptual_loss(pred, target, fx), [pred]) < 1e-4
    assert check_gradients(lambda: style_loss(pred, target, fx), [pred]) < 1e-4


def _outputs(rng, ks, size=16):
    outs = {k: rng.uniform(size=(2, 3, size >> (k - 1), size >> (k - 1))) for k in ks}
    tgts = {k: rng.uniform(size=v.shape) for k, v in outs.items()}
    return outs, tgts


def test_total_loss_decomposition(fx):
    rng = np.random.default_rng(4)
    w = LossWeights()
    outs, tgts = _outputs(rng, range(1, 7), size=64)
    P, Q = (1, 2, 3, 4, 5, 6), (1, 2, 3)
    got = total_loss({k: Tensor(v) for k, v in outs.items()}, tgts, P, Q, w, fx).item()
    _close(got, loop_total(fx, outs, tgts, P, Q, w))


def test_total_loss_reductions(fx):
    rng = np.random.default_rng(5)
    w = LossWeights()
    outs, tgts = _outputs(rng, [1])
    t = {1: Tensor(outs[1])}
    assert total_loss(t, tgts, (1,), (), w, fx).item() == w.l1 * recon_loss(t[1], tgts[1]).item()
    assert total_loss({1: Tensor(tgts[1])}, tgts, (1,), (1,), w, fx).item() == pytest.approx(
        w.tv * tv_loss(Tensor(tgts[1])).item(), rel=1e-12)
    with pytest.raises(ContractError):
        total_loss(t, tgts, (2,), (), w, fx)


def test_structure_term_set_averaging(fx):
    rng = np.random.default_rng(6)
    outs, tgts = _outputs(rng, [1])
    # copying layer 1 into layer 2 doubles the summed term and |P|
    outs[2], tgts[2] = outs[1], tgts[1]
    ts = {k: Tensor(v) for k, v in outs.items()}
    one = total_loss(ts, tgts, (1,), (), LossWeights(), fx).item()
    two = total_loss(ts, tgts, (1, 2), (), LossWeights(), fx).item()
    assert one == two


def test_nonnegativity(fx):
    rng = np.random.default_rng(7)
    for _ in range(5):
        outs, tgts = _outputs(rng, [1, 2])
        terms = {}
        val = total_loss({k: Tensor(v) for k, v in outs.items()}, tgts, (1, 2), (1, 2), LossWeights(), fx, terms)
        assert val.item() >= 0 and all(v >= 0 for v in terms.values())


def test_extractor_is_frozen_and_checks_size(fx):
    assert all(not w.requires_grad and not b.requires_grad for w, b in fx.weights)
    with pytest.raises(ShapeError):
        fx(Tensor(np.zeros((1, 3, 4, 4))))
    e = fx.embed(np.random.default_rng(8).uniform(size=(3, 3, 16, 16)))
    assert e.shape == (3, fx.dim)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(l1=-1.0)
    with pytest.raises(ValueError):
        LossWeights(style=float("nan"))
