import numpy as np
import pytest

from oracles import central_fd
from pdeseg.datagen import CorpusConfig, make_corpus
from pdeseg.fidelity import CompositeWeights
from pdeseg.predictor import (
    ArchConfig,
    ParamSet,
    TrainConfig,
    backward,
    forward,
    init_params,
    train,
)
from pdeseg.predictor.network import param_shapes
from pdeseg.priors import PFParams, RDParams

SMALL = ArchConfig(depth=1, base_channels=2)


def small_pair(rng, size=8):
    img = rng.random((size, size))
    y = np.zeros((size, size), dtype=np.uint8)
    y[2:6, 3:7] = 1
    return img, y


def test_param_shapes():
    shapes = param_shapes(ArchConfig(depth=2, base_channels=4))
    assert shapes["enc0.conv1.w"] == (4, 1, 3, 3)
    assert shapes["mid.conv1.w"] == (16, 8, 3, 3)
    assert shapes["out.w"] == (1, 4, 1, 1)
    assert all(shapes[k][0] == shapes[k.replace(".w", ".b")][0] for k in shapes if k.endswith(".w"))


def test_init_deterministic_and_bounded():
    a, b, c = init_params(SMALL, 3), init_params(SMALL, 3), init_params(SMALL, 4)
    assert a == b and not a == c
    for name in a:
        arr = a[name]
        if name.endswith(".b"):
            assert not arr.any()
        else:
            assert np.abs(arr).max() <= np.sqrt(1.0 / np.prod(arr.shape[1:]))


def test_zero_params_give_half(rng):
    u = forward(rng.random((16, 16)), init_params(ArchConfig(), 0, zero=True), ArchConfig())
    assert u.shape == (16, 16) and np.all(u == 0.5)


def test_forward_shape_and_range(rng):
    arch = ArchConfig(depth=2, base_channels=4)
    u = forward(rng.random((16, 24)), init_params(arch, 1), arch)
    assert u.shape == (16, 24)
    assert np.all((u > 0) & (u < 1))


def test_dims_not_divisible():
    arch = ArchConfig(depth=2)
    with pytest.raises(ValueError, match="divisible by 2\\*\\*depth = 4"):
        forward(np.zeros((18, 16)), init_params(arch, 0), arch)


@pytest.mark.parametrize("arch", [ArchConfig(depth=1, base_channels=2), ArchConfig(depth=2, base_channels=2)])
def test_gradient_matches_finite_differences(rng, arch):
    img, y = small_pair(rng)
    params = init_params(arch, 7)
    # nonzero biases keep pre-activations off the ReLU kink
    params = params.with_flat(params.flat() + rng.uniform(-0.05, 0.05, params.size))
    w = CompositeWeights(0.3, 0.2)
    rd, pf = RDParams(), PFParams()
    _, grads = backward(img, y, params, arch, w, rd, pf)
    theta, g = params.flat(), grads.flat()

    def loss(vec):
        return backward(img, y, params.with_flat(vec), arch, w, rd, pf)[0]

    picks = rng.choice(theta.size, size=20, replace=False)
    for k in picks:
        e = np.zeros_like(theta)
        e[k] = 1.0
        fd = central_fd(loss, theta, e, 1e-6)
        assert abs(fd - g[k]) <= 1e-3 * max(1.0, abs(fd))


def test_pf_gradient_linear_in_weight(rng):
    img, y = small_pair(rng)
    params = init_params(SMALL, 2)
    rd, pf = RDParams(), PFParams()
    _, g0 = backward(img, y, params, SMALL, CompositeWeights(0, 0), rd, pf)
    _, g1 = backward(img, y, params, SMALL, CompositeWeights(0, 0.1), rd, pf)
    _, g2 = backward(img, y, params, SMALL, CompositeWeights(0, 0.2), rd, pf)
    d1, d2 = g1.flat() - g0.flat(), g2.flat() - g0.flat()
    assert np.allclose(d2, 2 * d1, rtol=1e-8, atol=1e-14)


def test_paramset_roundtrip(tmp_path):
    arch = ArchConfig(depth=2, base_channels=3)
    p = init_params(arch, 5)
    path = tmp_path / "p.json"
    p.save(path, arch)
    q, arch2 = ParamSet.load(path)
    assert q == p and arch2 == arch
    assert all(np.array_equal(p[n], q[n]) for n in p)
    first = path.read_bytes()
    p.save(path, arch)
    assert path.read_bytes() == first


def test_with_flat_roundtrip():
    p = init_params(SMALL, 1)
    assert p.with_flat(p.flat()) == p
    with pytest.raises(ValueError):
        p.with_flat(np.zeros(p.size + 1))


def tiny_corpus(seed=0):
    return make_corpus(CorpusConfig(counts=(4, 2, 1, 1), size=16, seed=seed))


def test_train_deterministic():
    corpus = tiny_corpus()
    cfg = TrainConfig(epochs_stage1=2, epochs_stage2=2, batch_size=2, seed=3)
    a, la = train(corpus, cfg, SMALL)
    b, lb = train(corpus, cfg, SMALL)
    assert a == b and la.epochs == lb.epochs
    assert la.stage1_params == lb.stage1_params
    c, _ = train(corpus, TrainConfig(epochs_stage1=2, epochs_stage2=2, batch_size=2, seed=4), SMALL)
    assert not a == c


def test_stage_structure():
    corpus = tiny_corpus()
    cfg = TrainConfig(epochs_stage1=3, epochs_stage2=2, batch_size=3, seed=1)
    params, log = train(corpus, cfg, SMALL)
    assert [r.stage for r in log.epochs] == [1, 1, 1, 2, 2]
    assert all(r.rd == 0 and r.pf == 0 for r in log.epochs[:3])
    assert all(r.rd > 0 and r.pf > 0 for r in log.epochs[3:])
    s1, _ = train(corpus, TrainConfig(epochs_stage1=3, epochs_stage2=0, batch_size=3, seed=1), SMALL)
    assert log.stage1_params == s1


def test_stage2_without_priors_extends_stage1():
    corpus = tiny_corpus()
    two = TrainConfig(epochs_stage1=2, epochs_stage2=2, batch_size=2, weights=CompositeWeights(0, 0))
    one = TrainConfig(epochs_stage1=4, epochs_stage2=0, batch_size=2)
    a, _ = train(corpus, two, SMALL)
    b, _ = train(corpus, one, SMALL)
    assert a == b


def test_near_fixed_point_gradient_small():
    corpus = make_corpus(CorpusConfig(counts=(1, 1, 1, 1), size=16, seed=2))
    arch = ArchConfig(depth=1, base_channels=4)
    cfg = TrainConfig(epochs_stage1=300, epochs_stage2=0, batch_size=1, step_size=0.02)
    params, log = train(corpus, cfg, arch)
    s = corpus.split("train")[0]
    _, g0 = backward(s.image, s.mask, init_params(arch, 0), arch, CompositeWeights(), RDParams(), PFParams())
    _, g1 = backward(s.image, s.mask, params, arch, CompositeWeights(), RDParams(), PFParams())
    assert np.linalg.norm(g1.flat()) < 0.1 * np.linalg.norm(g0.flat())
    assert log.epochs[-1].total < log.epochs[0].total


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs_stage1=0, epochs_stage2=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
