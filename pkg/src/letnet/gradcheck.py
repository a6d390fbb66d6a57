"""Central finite-difference gradient checks.

The scalar probed is ``sum(output * R)`` for a fixed random ``R``, so every
output element contributes.  Checks run in float64 (modules are cast with
``Module.to_dtype``); at float32 the rounding noise of a difference quotient
with ``h = 1e-3`` is of the same order as the tolerance.

A central difference is only meaningful if the function is smooth on
``[x - h, x + h]``.  Piecewise ops (ReLU, max pooling) log their branch
pattern; when the pattern at ``x +- h`` differs from the one at ``x`` the
stencil straddles a kink, and the step is shrunk by 10x (up to
``MAX_REFINE`` times) until it no longer does.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import Module
from .tensor import Tensor, no_grad, pattern_log

H = 1e-3
TOLERANCE = 1e-3
DENOM_FLOOR = 1e-8
MAX_REFINE = 4


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int
    tolerance: float = TOLERANCE
    refined: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.refined} stencils shrunk off a kink)" if self.refined else ""
        return f"{status} {self.name:<24} worst rel err {self.max_rel_error:.3e} over {self.checked} elements{extra}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(numeric) + DENOM_FLOOR)


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    *,
    name: str = "fn",
    h: float = H,
    tol: float = TOLERANCE,
    max_per_tensor: int | None = None,
    seed: int = 0,
    corrupt: bool = False,
) -> GradcheckResult:
    """Compare analytic gradients of ``fn`` w.r.t. ``tensors`` with central differences.

    ``fn`` must recompute its output from the current ``.data`` of the given
    tensors on every call.  ``max_per_tensor`` samples that many elements
    per tensor (all elements when ``None``).  ``corrupt`` perturbs the
    analytic gradient by 1 % and exists only as a negative control.
    """
    # independent of any stream a caller may have seeded its inputs with
    rng = np.random.default_rng([seed, 0x6763])
    with no_grad():
        probe_shape = fn().shape
    weights = rng.standard_normal(probe_shape)

    def objective() -> tuple[float, list[np.ndarray]]:
        with no_grad(), pattern_log() as patterns:
            value = float(np.sum(fn().data.astype(np.float64) * weights))
        return value, patterns

    def same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
        return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))

    _, base_patterns = objective()

    for t in tensors.values():
        t.grad = None
    out = fn()
    (out * Tensor(weights.astype(out.dtype))).sum().backward()

    worst = 0.0
    checked = 0
    refined = 0
    for tname, t in tensors.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        if corrupt:
            analytic = analytic * 1.01 + 1e-3
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            indices = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        for i in indices:
            original = flat[i]
            step = h
            for attempt in range(MAX_REFINE + 1):
                flat[i] = original + step
                plus, p_plus = objective()
                flat[i] = original - step
                minus, p_minus = objective()
                flat[i] = original
                if same(p_plus, base_patterns) and same(p_minus, base_patterns):
                    break
                if attempt < MAX_REFINE:
                    step /= 10
            if step != h:
                refined += 1
            numeric = (plus - minus) / (2 * step)
            err = float(relative_error(analytic.reshape(-1)[i], numeric))
            worst = max(worst, err)
            checked += 1
    return GradcheckResult(name, worst, checked, tol, refined)


def check_module(
    module: Module,
    input_shape: tuple[int, ...],
    *,
    name: str,
    seed: int = 0,
    max_per_tensor: int | None = None,
    corrupt: bool = False,
    include_params: bool = True,
) -> GradcheckResult:
    """Gradient-check a module (cast to float64) w.r.t. its input and parameters."""
    module.to_dtype(np.float64)
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.standard_normal(input_shape), requires_grad=True, dtype=np.float64)
    tensors = {"input": x}
    if include_params:
        tensors.update(dict(module.named_parameters()))
    return gradcheck(lambda: module(x), tensors, name=name, seed=seed, max_per_tensor=max_per_tensor, corrupt=corrupt)


# -- suites used by the CLI and the acceptance run --------------------------------


def _leaf(rng: np.random.Generator, *shape, scale: float = 1.0, positive: bool = False) -> Tensor:
    data = rng.standard_normal(shape) * scale
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True, dtype=np.float64)


def primitive_cases(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], dict[str, Tensor]]]:
    """(name, fn, tensors) triples covering every differentiable primitive."""
    from . import ops
    from .blocks import channel_attention, segmented_attention
    from .tensor import concat, matmul, split
    from .training import cross_entropy

    rng = np.random.default_rng(seed)
    x = _leaf(rng, 1, 4, 6, 6)
    y = _leaf(rng, 1, 4, 6, 6)
    b = _leaf(rng, 4, 1, 1)
    a2, b2 = _leaf(rng, 2, 3, 5), _leaf(rng, 2, 5, 4)
    w_full, bias = _leaf(rng, 6, 4, 3, 3, scale=0.3), _leaf(rng, 6)
    w_group = _leaf(rng, 4, 2, 3, 3, scale=0.3)
    w_dw = _leaf(rng, 4, 1, 3, 1, scale=0.3)
    lin_x, lin_w, lin_b = _leaf(rng, 5, 6), _leaf(rng, 3, 6, scale=0.3), _leaf(rng, 3)
    bn_g, bn_b = _leaf(rng, 4, positive=True), _leaf(rng, 4)
    tok, ln_g, ln_b = _leaf(rng, 1, 6, 8), _leaf(rng, 8, positive=True), _leaf(rng, 8)
    q, k, v = _leaf(rng, 1, 2, 8, 4), _leaf(rng, 1, 2, 8, 4), _leaf(rng, 1, 2, 8, 4)
    ca_w = _leaf(rng, 3)
    logits = _leaf(rng, 2, 3, 4, 4)
    labels = rng.integers(0, 3, size=(2, 4, 4))
    labels[0, 0, :2] = 255
    class_w = np.array([1.0, 2.0, 0.5])
    mean_buf, var_buf = np.zeros(4), np.ones(4)

    return [
        ("add (broadcast)", lambda: x + b, {"x": x, "b": b}),
        ("mul (broadcast)", lambda: x * b, {"x": x, "b": b}),
        ("mul", lambda: x * y, {"x": x, "y": y}),
        ("matmul", lambda: matmul(a2, b2), {"a": a2, "b": b2}),
        ("sum/mean", lambda: x.sum(axis=(2, 3)) + y.mean(axis=(0, 2)).sum(axis=1).reshape(1, 4) * 1.0, {"x": x, "y": y}),
        ("reshape/transpose", lambda: x.reshape(1, 4, 36).transpose(0, 2, 1) * 1.0, {"x": x}),
        ("concat/split", lambda: concat(split(x, 2, axis=1)[::-1] + [y], axis=1), {"x": x, "y": y}),
        ("conv2d", lambda: ops.conv2d(x, w_full, bias, padding=1), {"x": x, "w": w_full, "b": bias}),
        ("conv2d strided", lambda: ops.conv2d(x, w_full, stride=2, padding=1), {"x": x, "w": w_full}),
        ("conv2d grouped", lambda: ops.conv2d(x, w_group, groups=2, padding=2, dilation=2), {"x": x, "w": w_group}),
        ("conv2d depthwise dilated", lambda: ops.conv2d(x, w_dw, groups=4, padding=(2, 0), dilation=(2, 1)),
         {"x": x, "w": w_dw}),
        ("linear", lambda: ops.linear(lin_x, lin_w, lin_b), {"x": lin_x, "w": lin_w, "b": lin_b}),
        ("batch_norm", lambda: ops.batch_norm(x, bn_g, bn_b, mean_buf.copy(), var_buf.copy(), True),
         {"x": x, "gamma": bn_g, "beta": bn_b}),
        ("layer_norm", lambda: ops.layer_norm(tok, ln_g, ln_b), {"x": tok, "gamma": ln_g, "beta": ln_b}),
        ("relu", lambda: ops.relu(x), {"x": x}),
        ("sigmoid", lambda: ops.sigmoid(x), {"x": x}),
        ("softmax", lambda: ops.softmax(x, axis=1), {"x": x}),
        ("global avg/max pool", lambda: ops.global_avg_pool(x) + ops.global_max_pool(y), {"x": x, "y": y}),
        ("channel avg/max pool", lambda: ops.channel_pool(x, "avg") * ops.channel_pool(y, "max"), {"x": x, "y": y}),
        ("pool2d avg", lambda: ops.pool2d(x, "avg", 3, 1), {"x": x}),
        ("pool2d max", lambda: ops.pool2d(y, "max", 3, 1), {"y": y}),
        ("channel_shuffle", lambda: ops.channel_shuffle(x, 2) * 1.0, {"x": x}),
        ("resize_bilinear", lambda: ops.resize_bilinear(x, 9, 12), {"x": x}),
        ("channel_attention", lambda: channel_attention(x, ca_w), {"x": x, "w": ca_w}),
        ("segmented_attention", lambda: segmented_attention(q, k, v, 2), {"q": q, "k": k, "v": v}),
        ("cross_entropy", lambda: cross_entropy(logits, labels, class_w), {"logits": logits}),
    ]


def primitive_suite(seed: int = 0, corrupt: bool = False) -> list[GradcheckResult]:
    return [
        gradcheck(fn, tensors, name=name, seed=seed, corrupt=corrupt)
        for name, fn, tensors in primitive_cases(seed)
    ]


def block_suite(seed: int = 0, corrupt: bool = False) -> list[GradcheckResult]:
    """LDB, EMHA, ET, FE and PA on a 1 x 16 x 8 x 8 input."""
    from .blocks import (
        EMHA, LDB, EfficientTransformer, EMHAConfig, FEConfig, FeatureEnhancement, LDBConfig, PAConfig,
        PixelAttention,
    )

    rng = np.random.default_rng(seed)
    emha_cfg = EMHAConfig(16, heads=2, segments=4)
    blocks = [
        ("LDB", LDB(LDBConfig(16, dilation=2), rng), (1, 16, 8, 8)),
        ("EMHA", EMHA(emha_cfg, rng), (1, 64, 8)),
        ("ET", EfficientTransformer(emha_cfg, rng), (1, 16, 8, 8)),
        ("FE", FeatureEnhancement(FEConfig(16), rng), (1, 16, 8, 8)),
        ("PA", PixelAttention(PAConfig(16), rng), (1, 16, 8, 8)),
    ]
    results = []
    for name, module, shape in blocks:
        module.train()
        results.append(check_module(module, shape, name=name, seed=seed, corrupt=corrupt))
    return results


def model_suite(seed: int = 0, corrupt: bool = False, max_per_tensor: int = 20) -> list[GradcheckResult]:
    """Whole tiny model: 2 classes, 16 x 16 input, widths (8, 16, 32), depths (1, 1, 2)."""
    from .model import LETNet, tiny_config

    model = LETNet(tiny_config(num_classes=2, resolution=(16, 16)), seed=seed)
    model.train()
    return [check_module(model, (1, 3, 16, 16), name="LETNet (tiny)", seed=seed,
                         max_per_tensor=max_per_tensor, corrupt=corrupt)]


SCOPES = {"primitive": primitive_suite, "block": block_suite, "model": model_suite}
