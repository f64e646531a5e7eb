"""Finite-difference verification of recorded gradients.

Central differences at float64: for each checked coordinate x_i,
numeric = (f(x + h e_i) - f(x - h e_i)) / 2h, compared against the
backpropagated value with a relative error floored at 1e-6 in the
denominator. Functions here never mutate the tape; numeric evaluations
run under no_grad with in-place coordinate nudges that are restored.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


def _pick_coords(shape: tuple[int, ...], max_coords: int | None,
                 rng: np.random.Generator | None) -> list[tuple[int, ...]]:
    size = int(np.prod(shape)) if shape else 1
    if max_coords is None or size <= max_coords:
        flat = range(size)
    else:
        if rng is None:
            raise ValueError("max_coords needs an rng to sample coordinates")
        flat = rng.choice(size, size=max_coords, replace=False)
    if not shape:
        return [()]
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in flat]


def check_function(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], *,
                   h: float = DEFAULT_H, max_coords: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error of ``fn``'s gradient over the given float64 inputs.

    ``fn`` maps one Tensor per array to a scalar Tensor. Every coordinate of
    every array is checked unless ``max_coords`` caps the per-array count.
    """
    for a in arrays:
        if a.dtype != np.float64:
            raise ValueError(f"gradient checks run at float64, got {a.dtype}")
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*leaves).backward()

    worst = 0.0
    with no_grad():
        for leaf in leaves:
            analytic = leaf.grad
            assert analytic is not None, "leaf received no gradient"
            for coord in _pick_coords(leaf.shape, max_coords, rng):
                orig = leaf.data[coord]
                leaf.data[coord] = orig + h
                up = fn(*leaves).item()
                leaf.data[coord] = orig - h
                down = fn(*leaves).item()
                leaf.data[coord] = orig
                numeric = (up - down) / (2.0 * h)
                worst = max(worst, relative_error(float(analytic[coord]), numeric))
    return worst


def op_suite(seed: int = 0) -> dict[str, float]:
    """Finite-difference check of every differentiable op at small shapes.

    Returns max relative error keyed by op name. Dropout participates by
    rebuilding the same seeded mask stream on every evaluation.
    """
    from . import tensor as ops
    from .tensor import new_rng

    rng = new_rng((seed, 101))

    def arr(*shape):
        return rng.standard_normal(shape)

    pos = np.abs(arr(3, 4)) + 0.5
    ids = np.array([[1, 0, 3], [2, 2, 1]])
    picked = np.array([[0, 2], [3, 1]])
    # Fixed weights folded into the losses so reductions stay direction-aware.
    w34, w43, w25, w3 = arr(3, 4), arr(4, 3), arr(2, 5), arr(3)
    w23, w235 = arr(2, 3), arr(2, 3, 5)

    cases: dict[str, tuple[Callable, list[np.ndarray]]] = {
        "add": (lambda a, b: (a + b).sum(), [arr(3, 4), arr(1, 4)]),
        "sub": (lambda a, b: (a - b).sum(), [arr(3, 4), arr(3, 1)]),
        "mul": (lambda a, b: (a * b).sum(), [arr(3, 4), arr(4)]),
        "scale": (lambda a: ops.scale(a, -0.7).sum(), [arr(3, 4)]),
        "matmul": (lambda a, b: ops.matmul(a, b).sum(),
                   [arr(2, 3, 4), arr(4, 5)]),
        "exp": (lambda a: ops.exp(a).sum(), [arr(3, 4)]),
        "log": (lambda a: ops.log(a).sum(), [pos]),
        "tanh": (lambda a: ops.tanh(a).sum(), [arr(3, 4)]),
        "sigmoid": (lambda a: ops.sigmoid(a).sum(), [arr(3, 4)]),
        "relu": (lambda a: ops.relu(a).sum(), [arr(3, 4) + 0.1]),
        "leaky_relu": (lambda a: ops.leaky_relu(a, 0.01).sum(),
                       [arr(3, 4) + 0.1]),
        "reshape": (lambda a: (ops.reshape(a, (4, 3)) * w43).sum(),
                    [arr(3, 4)]),
        "transpose": (lambda a: (ops.transpose(a, (1, 0, 2)) * 2.0).sum(),
                      [arr(2, 3, 4)]),
        "concat": (lambda a, b: (ops.concat([a, b], axis=1) * w25).sum(),
                   [arr(2, 3), arr(2, 2)]),
        "take_slice": (lambda a: ops.take_slice(a, (slice(1, None),
                                                    slice(None, None, 2))
                                                ).sum(), [arr(3, 4)]),
        "reduce_sum": (lambda a: (ops.reduce_sum(a, axis=1) * w3).sum(),
                       [arr(3, 4)]),
        "reduce_mean": (lambda a: (ops.reduce_mean(a, axis=(0, 2)) * w3
                                   ).sum(), [arr(2, 3, 4)]),
        "global_avg_pool": (lambda a: (ops.global_avg_pool(a) * w23).sum(),
                            [arr(2, 3, 4, 4)]),
        "softmax": (lambda a: (ops.softmax(a, axis=-1) * w34).sum(),
                    [arr(3, 4)]),
        "log_softmax": (lambda a: (ops.log_softmax(a, axis=-1) * w34).sum(),
                        [arr(3, 4)]),
        "layer_norm": (lambda a, g, b: ops.layer_norm(a, g, b, axis=-1).sum(),
                       [arr(3, 4), arr(4), arr(4)]),
        "conv2d": (lambda x, w: ops.conv2d(x, w, stride=2, padding=1).sum(),
                   [arr(2, 3, 6, 6), arr(4, 3, 3, 3)]),
        "embedding": (lambda t: (ops.embedding(t, ids) * w235).sum(),
                      [arr(5, 4)]),
        "take_along_last": (lambda a: ops.take_along_last(a, picked).sum(),
                            [arr(2, 2, 4)]),
        "dropout": (lambda a: ops.dropout(a, 0.4, new_rng((seed, 7))).sum(),
                    [arr(4, 5)]),
    }
    return {name: check_function(fn, arrays)
            for name, (fn, arrays) in cases.items()}


def model_suite(seed: int = 0, coords_per_tensor: int = 2,
                spatial: int = 16) -> dict[str, float]:
    """Sampled end-to-end gradient check of tiny builds of both models.

    The loss is the masked NLL of a short teacher-forced target against a
    two-frame clip, so every parameter participates. Params are jittered off
    their init values first: fresh gains/biases leave activations sitting
    exactly on LeakyReLU kinks, where central differences are meaningless.
    """
    from .models import ModelConfig, build_model
    from .tensor import new_rng
    from .train import nll_loss

    report: dict[str, float] = {}
    for kind, layers in (("vmt", (1, 1)), ("seq2seq", (2, 2))):
        config = ModelConfig(kind=kind, hidden=16, enc_layers=layers[0],
                             dec_layers=layers[1], heads=2, d_ff=32,
                             dropout=0.0, max_target_len=8)
        model = build_model(config, seed=seed, dtype=np.float64)
        rng = new_rng((seed, 11))
        for p in model.named_params().values():
            p.data += 0.05 * rng.standard_normal(p.shape)
        clips = Tensor(rng.standard_normal((1, 2, 3, spatial, spatial)))
        target = np.array([[308, 40, 200, 309]])
        mask = np.ones((1, 3))

        def loss_fn():
            logits = model.forward(clips, target[:, :-1])
            return nll_loss(logits, target[:, 1:], mask)

        errs = check_params(loss_fn, model.named_params(),
                            coords_per_tensor=coords_per_tensor,
                            rng=new_rng((seed, 12)))
        report[f"model.{kind}"] = max(errs.values())
    return report


def full_suite(seed: int = 0) -> dict[str, float]:
    """Op checks plus tiny-model checks, keyed by `op.NAME` / `model.KIND`."""
    report = {f"op.{name}": err for name, err in op_suite(seed).items()}
    report.update(model_suite(seed))
    return report


def check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], *,
                 h: float = DEFAULT_H, coords_per_tensor: int = 3,
                 rng: np.random.Generator | None = None) -> dict[str, float]:
    """Sampled gradient check of a closure over named parameter tensors.

    Full-model graphs have too many coordinates for an exhaustive sweep, so
    each parameter tensor contributes ``coords_per_tensor`` sampled entries,
    each measured at ``h`` and ``h/10`` keeping the smaller error.
    Returns the max relative error per parameter name.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"gradient checks run at float64; {name} is {p.dtype}")
        p.grad = None

    loss_fn().backward()
    analytic = {name: p.grad for name, p in params.items()}

    report: dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            grad = analytic[name]
            assert grad is not None, f"{name} received no gradient"
            worst = 0.0
            for coord in _pick_coords(p.shape, coords_per_tensor, rng):
                # two step sizes, keep the better: the wide step can straddle
                # a relu corner somewhere in the activations, the narrow one
                # amplifies roundoff on near-zero partials; an actual
                # chain-rule bug fails at both
                err = np.inf
                for hh in (h, h / 10.0):
                    orig = p.data[coord]
                    p.data[coord] = orig + hh
                    up = loss_fn().item()
                    p.data[coord] = orig - hh
                    down = loss_fn().item()
                    p.data[coord] = orig
                    numeric = (up - down) / (2.0 * hh)
                    err = min(err, relative_error(float(grad[coord]), numeric))
                    if err < 1e-6:
                        break
                worst = max(worst, err)
            report[name] = worst
    return report
