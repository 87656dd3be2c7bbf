"""Central finite-difference gradient checks for every differentiable op."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d fn() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Max absolute deviation scaled by the larger gradient's max magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: list[Tensor], h: float = 1e-6) -> float:
    """Max relative error between backprop and finite differences over ``tensors``.

    Each tensor is scored against its own gradient scale, floored at 1e-3 of
    the largest gradient in the set; exactly-zero gradients (a bias feeding
    batch norm) would otherwise be scored on pure rounding noise.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    numeric = [numerical_grad(fn, t.data, h) for t in tensors]
    top = max(max(np.max(np.abs(a)), np.max(np.abs(n))) for a, n in zip(analytic, numeric))
    floor = max(1e-3 * top, 1e-12)
    return max(relative_error(a, n, floor) for a, n in zip(analytic, numeric))


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted(out: Tensor, rng) -> Callable[[], Tensor]:
    # random projection so every output element contributes distinctly
    return Tensor(rng.standard_normal(out.shape))


def _op_check(build: Callable[..., Tensor], inputs: list[Tensor], rng) -> float:
    w = _weighted(build(*inputs), rng)
    return check_gradients(lambda: T.tsum(T.mul(build(*inputs), w)), inputs)


def _check_conv2d(rng):
    x = _param(rng, 1, 2, 5, 5)
    wt = _param(rng, 3, 2, 3, 3)
    b = _param(rng, 3)
    e1 = _op_check(lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1), [x, wt, b], rng)
    w4 = _param(rng, 2, 2, 4, 4)
    x6 = _param(rng, 2, 2, 6, 6)
    e2 = _op_check(lambda x, w: T.conv2d(x, w, None, stride=2, padding=1), [x6, w4], rng)
    return max(e1, e2)


def _check_leaky_relu(rng):
    return _op_check(lambda x: T.leaky_relu(x, 0.2), [_param(rng, 3, 4)], rng)


def _check_sigmoid(rng):
    return _op_check(T.sigmoid, [_param(rng, 3, 4, scale=3.0)], rng)


def _check_batch_norm(rng):
    x = _param(rng, 4, 3, 3, 3)
    gamma = Tensor(1.0 + 0.1 * rng.standard_normal(3), requires_grad=True)
    beta = _param(rng, 3)

    def build(x, g, b):
        return T.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True)

    return _op_check(build, [x, gamma, beta], rng)


def _check_structure(rng):
    a = _param(rng, 2, 3, 4, 4)
    b = _param(rng, 2, 5, 4, 4)
    errs = [
        _op_check(T.upsample_nearest_2x, [_param(rng, 1, 2, 3, 3)], rng),
        _op_check(T.downsample_avg_2x, [_param(rng, 1, 2, 4, 6)], rng),
        _op_check(T.concat_channels, [a, b], rng),
        _op_check(T.add, [_param(rng, 2, 3), _param(rng, 1, 3)], rng),
        _op_check(T.sub, [_param(rng, 2, 3), _param(rng, 2, 3)], rng),
        _op_check(lambda x: T.mul(x, 2.5), [_param(rng, 2, 3)], rng),
    ]
    return max(errs)


def _check_mul(rng):
    return _op_check(T.mul, [_param(rng, 2, 3, 4), _param(rng, 2, 3, 4)], rng)


def _check_matmul(rng):
    return _op_check(T.matmul, [_param(rng, 2, 3, 4), _param(rng, 2, 4, 5)], rng)


def _check_reductions(rng):
    x = _param(rng, 2, 3, 4)
    errs = [
        _op_check(lambda t: T.tabs(t), [x], rng),
        _op_check(lambda t: T.tsum(t, axis=1), [x], rng),
        _op_check(lambda t: T.mean(t, axis=(0, 2), keepdims=True), [x], rng),
        _op_check(lambda t: t.reshape(6, 4), [x], rng),
        _op_check(lambda t: t.transpose(2, 0, 1), [x], rng),
        _op_check(lambda t: t[:, 1:, ::2], [x], rng),
    ]
    return max(errs)


def _check_losses(rng):
    from .losses import FeatureExtractor, gram, perceptual_loss, recon_loss, style_loss, tv_loss

    fx = FeatureExtractor(widths=(4, 6), seed=int(rng.integers(1 << 30)))
    pred = Tensor(rng.uniform(0.1, 0.9, (2, 3, 8, 8)), requires_grad=True)
    target = Tensor(rng.uniform(0, 1, (2, 3, 8, 8)))
    feats = _param(rng, 2, 4, 3, 3)
    errs = [
        check_gradients(lambda: recon_loss(pred, target), [pred]),
        check_gradients(lambda: perceptual_loss(pred, target, fx), [pred]),
        check_gradients(lambda: style_loss(pred, target, fx), [pred]),
        check_gradients(lambda: tv_loss(pred), [pred]),
        _op_check(gram, [feats], rng),
    ]
    return max(errs)


def _check_fusion_block(rng):
    from .model import FusionBlock

    block = FusionBlock(5, alpha_width=4, rng=rng)
    feats = _param(rng, 4, 5, 4, 4)
    image = Tensor(rng.uniform(0, 1, (4, 3, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 4, 4)))
    params = [feats, image] + list(block.named_parameters().values())
    return check_gradients(lambda: T.tsum(T.mul(block(feats, image)[2], w)), params)


def _check_dfnet(rng):
    from .losses import FeatureExtractor, LossWeights, total_loss
    from .model import DFNet, DFNetConfig, resize_input

    cfg = DFNetConfig(depth=3, widths=(3, 4, 4), blocks=2, P=(1, 2), Q=(1, 2), alpha_width=3,
                      seed=int(rng.integers(1 << 30)))
    net = DFNet(cfg)
    # zero biases put all-hole receptive fields exactly on the leaky-ReLU kink
    for name, p in net.named_parameters().items():
        if name.endswith("bias"):
            p.data[...] = 0.1 * rng.standard_normal(p.shape)
    fx = FeatureExtractor(widths=(3,), seed=5)
    image = rng.uniform(0, 1, (2, 3, 8, 8))
    mask = np.ones((2, 8, 8))
    mask[0, 2:5, 3:7] = 0
    mask[1, 4:8, 0:3] = 0
    targets = {k: resize_input(Tensor(image), k) for k in (1, 2)}
    weights = LossWeights(1.0, 0.5, 10.0, 0.3)
    state = {name: buf.copy() for name, buf in net.named_buffers().items()}

    def loss():
        # restore running stats so every evaluation sees identical buffers
        for name, buf in net.named_buffers().items():
            buf[...] = state[name]
        outs = {o.k: o.blended for o in net(Tensor(image), mask)}
        return total_loss(outs, targets, cfg.P, cfg.Q, weights, fx)

    return check_gradients(loss, list(net.named_parameters().values()))


@dataclass(frozen=True)
class Check:
    name: str
    run: Callable[[np.random.Generator], float]
    tolerance: float
    fault_op: str


CHECKS: tuple[Check, ...] = (
    Check("conv2d", _check_conv2d, 1e-6, "conv2d"),
    Check("leaky_relu", _check_leaky_relu, 1e-6, "leaky_relu"),
    Check("sigmoid", _check_sigmoid, 1e-6, "sigmoid"),
    Check("batch_norm", _check_batch_norm, 1e-5, "batch_norm"),
    Check("structure_ops", _check_structure, 1e-6, "concat"),
    Check("mul", _check_mul, 1e-6, "mul"),
    Check("matmul", _check_matmul, 1e-6, "matmul"),
    Check("reductions", _check_reductions, 1e-6, "abs"),
    Check("losses", _check_losses, 1e-5, "abs"),
    Check("fusion_block", _check_fusion_block, 1e-4, "sigmoid"),
    Check("dfnet_end_to_end", _check_dfnet, 1e-4, "conv2d"),
)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def run_suite(seed: int = 0, corrupt: str | None = None,
              only: list[str] | None = None) -> list[CheckResult]:
    """Run every registered check; ``corrupt`` names one check whose op's
    backward rule is perturbed while it runs."""
    results = []
    for i, check in enumerate(CHECKS):
        if only and check.name not in only:
            continue
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        if check.name == corrupt:
            with T.inject_grad_fault(check.fault_op):
                err = check.run(rng)
        else:
            err = check.run(rng)
        results.append(CheckResult(check.name, err, check.tolerance, time.perf_counter() - t0))
    return results
