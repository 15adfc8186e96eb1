"""Finite-difference gradient suites, grouped by scope, all in float64."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from . import functional as F
from .cfib import EncoderLayer, FrequencyGatedModulation, HfbConfig, HighFrequencyBlock
from .config import stream_rng
from .gradcheck import GradcheckResult, check, projected
from .lms import laplacian_decompose, laplacian_reconstruct
from .net import ConvStage, ModelConfig, LFINet, dice_bce_loss
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
NORM_TOL = 1e-5  # batch norm, layer norm, attention
LMS_TOL = 1e-5
COMPOSITE_TOL = 1e-4
STAGE_TOL = 1e-5
LOSS_TOL = 1e-6
NET_TOL = 1e-3
NET_COORDS = 256
COMPOSITE_COORDS = 300

SCOPES = ("tensor", "lms", "cfib", "prd", "loss")


def _t(rng: np.random.Generator, *shape, lo: float | None = None) -> Tensor:
    a = rng.standard_normal(shape)
    if lo is not None:
        # keep values away from kinks/boundaries so central differences stay smooth
        a = np.sign(a) * (np.abs(a) + lo)
    return Tensor(a, requires_grad=True, dtype=np.float64)


def _pos(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.uniform(0.5, 2.0, shape), requires_grad=True, dtype=np.float64)


def _module_inputs(module, **extra: Tensor) -> dict[str, Tensor]:
    inputs = dict(extra)
    inputs.update(module.named_parameters())
    return inputs


def _tensor_cases(rng) -> Iterator[GradcheckResult]:
    tol = PRIMITIVE_TOL
    a, b = _t(rng, 3, 4), _t(rng, 4)
    yield check(projected(lambda: a * b + a / (b * b + 1.0) - b, rng), {"a": a, "b": b}, tol, "elementwise arith")
    p = _pos(rng, 3, 4)
    yield check(projected(lambda: p.log() + p.sqrt() + p.exp() + p**1.5, rng), {"p": p}, tol, "exp/log/sqrt/pow")
    x, y = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    yield check(projected(lambda: x @ y, rng), {"x": x, "y": y}, tol, "matmul (broadcast)")
    yield check(projected(lambda: x.transpose(0, 2, 1).reshape(2, 12).sum(axis=0), rng), {"x": x}, tol,
                "reshape/transpose/sum")
    yield check(projected(lambda: x.mean(axis=(1, 2), keepdims=True) * x, rng), {"x": x}, tol, "mean")
    c = _t(rng, 3, 3, lo=0.05)
    yield check(projected(lambda: c.clip(-0.8, 0.8), rng), {"c": c}, tol, "clip")

    x = _t(rng, 2, 4, 7, 7)
    w, bias = _t(rng, 6, 4, 3, 3), _t(rng, 6)
    yield check(projected(lambda: F.conv2d(x, w, bias, padding=1), rng), {"x": x, "w": w, "b": bias}, tol,
                "conv2d 3x3")
    ws = _t(rng, 6, 4, 3, 3)
    yield check(projected(lambda: F.conv2d(x, ws, stride=2, padding=1), rng), {"x": x, "w": ws}, tol,
                "conv2d stride 2")
    wg = _t(rng, 4, 2, 3, 3)
    yield check(projected(lambda: F.conv2d(x, wg, padding=2, dilation=2, groups=2), rng), {"x": x, "w": wg}, tol,
                "conv2d grouped dilated")
    wd, bd = _t(rng, 4, 1, 5, 5), _t(rng, 4)
    yield check(projected(lambda: F.conv2d(x, wd, bd, padding=4, dilation=2, groups=4), rng),
                {"x": x, "w": wd, "b": bd}, tol, "depthwise 5x5 d2")
    wf = _t(rng, 4, 1, 7, 7)
    yield check(projected(lambda: F.conv2d(x, wf, padding=9, dilation=3, groups=4), rng), {"x": x, "w": wf}, tol,
                "depthwise 7x7 d3 (fft)")
    xt, wt, bt = _t(rng, 2, 3, 4, 4), _t(rng, 3, 5, 2, 2), _t(rng, 5)
    yield check(projected(lambda: F.conv_transpose2d(xt, wt, bt), rng), {"x": xt, "w": wt, "b": bt}, tol,
                "conv_transpose2d")
    xp = _t(rng, 2, 3, 6, 8)
    yield check(projected(lambda: F.avg_pool2x2(xp), rng), {"x": xp}, tol, "avg_pool2x2")
    for s in F.UPSAMPLE_SCALES:
        xu = _t(rng, 1, 2, 3, 4)
        yield check(projected(lambda: F.bilinear_upsample(xu, s), rng), {"x": xu}, tol, f"bilinear x{s}")
    yield check(projected(lambda: F.pad2d(xp, 2), rng), {"x": xp}, tol, "reflect pad")

    xb, g, be = _t(rng, 3, 4, 5, 5), _t(rng, 4), _t(rng, 4)
    rm, rv = np.zeros(4), np.ones(4)
    yield check(projected(lambda: F.batch_norm2d(xb, g, be, rm, rv, training=True), rng),
                {"x": xb, "gamma": g, "beta": be}, NORM_TOL, "batch_norm2d (train)")
    xl, gl, bl = _t(rng, 2, 5, 8), _t(rng, 8), _t(rng, 8)
    yield check(projected(lambda: F.layer_norm(xl, gl, bl), rng), {"x": xl, "gamma": gl, "beta": bl}, NORM_TOL,
                "layer_norm")
    xa = _t(rng, 3, 4, 5, lo=0.05)
    for kind in ("relu", "gelu", "sigmoid"):
        yield check(projected(lambda: F.activation(xa, kind), rng), {"x": xa}, tol, kind)
    xs = _t(rng, 2, 3, 4)
    yield check(projected(lambda: F.softmax(xs, axis=1), rng), {"x": xs}, tol, "softmax")
    yield check(projected(lambda: F.global_avg_pool(xp), rng), {"x": xp}, tol, "global_avg_pool")
    c1, c2 = _t(rng, 2, 2, 3, 3), _t(rng, 2, 5, 3, 3)
    yield check(projected(lambda: F.concat(F.slice_channels(F.concat([c1, c2]), [(0, 4), (4, 7)])[::-1]), rng),
                {"a": c1, "b": c2}, tol, "concat/slice_channels")
    q, k, v = _t(rng, 2, 5, 8), _t(rng, 2, 5, 8), _t(rng, 2, 5, 8)
    yield check(projected(lambda: F.scaled_dot_attention(q, k, v, heads=2), rng), {"q": q, "k": k, "v": v},
                NORM_TOL, "attention (2 heads)")


def _lms_cases(rng) -> Iterator[GradcheckResult]:
    img = _t(rng, 2, 1, 16, 16)
    d0 = laplacian_decompose(img)
    weights = [rng.standard_normal(t.shape) for t in (*d0.levels, d0.base)]

    def pyramid() -> Tensor:
        d = laplacian_decompose(img)
        total = None
        for t, r in zip((*d.levels, d.base), weights):
            term = (t * r).sum()
            total = term if total is None else total + term
        return total

    yield check(pyramid, {"image": img}, LMS_TOL, "laplacian decompose")
    base = _t(rng, 1, 1, 16, 16)
    yield check(projected(lambda: laplacian_reconstruct(laplacian_decompose(base)), rng), {"image": base}, LMS_TOL,
                "reconstruct(decompose)")


def _cfib_cases(rng) -> Iterator[GradcheckResult]:
    hfb = HighFrequencyBlock(HfbConfig(16), rng).astype(np.float64)
    x = _t(rng, 2, 1, 12, 12)
    yield check(projected(lambda: hfb(x), rng), _module_inputs(hfb, x=x), COMPOSITE_TOL, "HFB (C=16, 12x12)",
                max_coords=COMPOSITE_COORDS, rng=rng)
    layer = EncoderLayer(16, 4, 4, rng).astype(np.float64)
    tokens = _t(rng, 2, 16, 16)  # 4x4 spatial grid as 16 tokens
    yield check(projected(lambda: layer(tokens), rng), _module_inputs(layer, x=tokens), COMPOSITE_TOL,
                "ST layer (4x4 tokens)", max_coords=COMPOSITE_COORDS, rng=rng)
    fgm = FrequencyGatedModulation(8, 16, 2, rng).astype(np.float64)
    hf, lf = _t(rng, 2, 8, 8, 8), _t(rng, 2, 16, 4, 4)
    yield check(projected(lambda: fgm(hf, lf), rng), _module_inputs(fgm, hf=hf, lf=lf), COMPOSITE_TOL,
                "FGM (C=8, 8x8)", max_coords=COMPOSITE_COORDS, rng=rng)


def _loss_cases(rng) -> Iterator[GradcheckResult]:
    logits = rng.standard_normal((2, 1, 6, 6))
    pred = Tensor(1.0 / (1.0 + np.exp(-logits)), requires_grad=True, dtype=np.float64)
    target = (rng.random((2, 1, 6, 6)) < 0.4).astype(np.float64)
    yield check(lambda: dice_bce_loss(pred, target).total, {"pred": pred}, LOSS_TOL, "dice_bce_loss")


def _prd_cases(rng) -> Iterator[GradcheckResult]:
    stage = ConvStage(6, 8, rng).astype(np.float64)
    x = _t(rng, 2, 6, 16, 16)
    yield check(projected(lambda: stage(x), rng), _module_inputs(stage, x=x), STAGE_TOL, "ConvStage (16x16)",
                max_coords=COMPOSITE_COORDS, rng=rng)
    net = LFINet(ModelConfig(image_size=(16, 16)), rng).astype(np.float64)
    image = Tensor(rng.random((2, 1, 16, 16)), dtype=np.float64)
    target = (rng.random((2, 1, 16, 16)) < 0.3).astype(np.float64)
    params = dict(net.named_parameters())
    yield check(lambda: dice_bce_loss(net(image), target).total, params, NET_TOL, "full net (16x16)",
                max_coords=NET_COORDS, rng=rng)


_SUITES: dict[str, Callable] = {
    "tensor": _tensor_cases,
    "lms": _lms_cases,
    "cfib": _cfib_cases,
    "prd": _prd_cases,
    "loss": _loss_cases,
}


def run(scope: str = "all", seed: int = 0) -> list[GradcheckResult]:
    """Run the suites for ``scope`` (one of SCOPES or "all")."""
    if scope != "all" and scope not in _SUITES:
        raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {', '.join(SCOPES)} or all")
    names = SCOPES if scope == "all" else (scope,)
    results = []
    for i, name in enumerate(names):
        results.extend(_SUITES[name](stream_rng(seed, "gradcheck", i)))
    return results
