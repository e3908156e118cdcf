"""Post-hoc attribution over superpixels: KernelSHAP, LIME, GradCAM and occlusion.

Perturbation explainers talk to the model through a *callback*: a function
mapping a batch ``(N, C, H, W)`` of images to ``(N, u)`` class
probabilities. :func:`as_callback` wraps a :class:`~xdistill.models.Model`.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from xdistill.errors import (
    ParameterError,
    SamplingError,
    SingularSystemError,
    UnsupportedArchitectureError,
    ValidationError,
)
from xdistill.superpixel import PatchExplanation, aggregate_attributions
from xdistill.tensor import ops
from xdistill.tensor.core import Tensor, backward

MAX_SHAP_PATCHES = 64
EXACT_ENUMERATION_LIMIT = 12


@dataclass
class ExplainerConfig:
    n_samples: int = 0  # 0 -> 64 * n_patches for SHAP
    baseline: str = "mean-color"
    channel_mean: tuple = ()
    seed: int = 0
    lime_samples: int = 1000
    kernel_width: float = 0.25
    ridge_lambda: float = 1.0
    batch_size: int = 256


def as_callback(model, batch_size=256, check=False):
    """Wrap a model (or pass through a callable) as ``images -> probabilities``."""
    if hasattr(model, "predict_proba"):
        def callback(images):
            return model.predict_proba(images, batch_size=batch_size)
    else:
        callback = model
    if not check:
        return callback

    def checked(images):
        probs = np.asarray(callback(images))
        if np.any(probs < -1e-7) or not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-5):
            raise ValidationError("model callback returned rows that are not probability vectors")
        return probs

    return checked


def baseline_fill(image, baseline="mean-color", channel_mean=None):
    """Per-channel fill values used for absent patches."""
    image = np.asarray(image)
    if isinstance(baseline, str):
        if baseline == "zeros":
            return np.zeros(image.shape[0], dtype=image.dtype)
        if baseline == "mean-color":
            if channel_mean is not None and len(channel_mean):
                return np.asarray(channel_mean, dtype=image.dtype)
            return image.reshape(image.shape[0], -1).mean(axis=1)
        raise ParameterError(f"unknown baseline {baseline!r}; use 'mean-color' or 'zeros'")
    fill = np.asarray(baseline, dtype=image.dtype)
    if fill.shape != (image.shape[0],):
        raise ParameterError(f"baseline needs one value per channel, got shape {fill.shape}")
    return fill


def mask_images(image, seg, masks, fill):
    """Images where patch ``p`` is kept if ``mask[p] == 1`` and replaced by ``fill`` otherwise."""
    masks = np.atleast_2d(np.asarray(masks))
    keep = masks[:, seg.labels].astype(image.dtype)[:, None]  # (S, 1, H, W)
    return image[None] * keep + fill[None, :, None, None] * (1 - keep)


def _evaluate(callback, image, seg, masks, fill, class_id, batch_size):
    out = np.empty(len(masks))
    for start in range(0, len(masks), batch_size):
        chunk = mask_images(image, seg, masks[start:start + batch_size], fill)
        out[start:start + batch_size] = np.asarray(callback(chunk), dtype=np.float64)[:, class_id]
    return out


# ---------------------------------------------------------------- KernelSHAP

def shapley_kernel_weight(m, size):
    """``(M - 1) / (C(M, |z|) * |z| * (M - |z|))``; infinite for the empty and full coalitions."""
    if size == 0 or size == m:
        return np.inf
    return (m - 1) / (comb(m, size) * size * (m - size))


def _all_coalitions(m):
    codes = np.arange(1, 2 ** m - 1)
    masks = ((codes[:, None] >> np.arange(m)) & 1).astype(np.float64)
    weights = np.array([shapley_kernel_weight(m, int(s)) for s in masks.sum(axis=1)])
    return masks, weights


def _sampled_coalitions(m, n_samples, rng):
    """Draw coalition sizes from the Shapley kernel, each paired with its complement."""
    sizes = np.arange(1, m)
    p = np.array([(m - 1) / (s * (m - s)) for s in sizes])
    p /= p.sum()
    n_pairs = max(1, n_samples // 2)
    drawn = rng.choice(sizes, size=n_pairs, p=p)
    masks = np.zeros((2 * n_pairs, m))
    for i, s in enumerate(drawn):
        members = rng.choice(m, size=s, replace=False)
        masks[2 * i, members] = 1
        masks[2 * i + 1] = 1 - masks[2 * i]
    return masks, np.ones(len(masks))


def solve_constrained_wls(masks, weights, y, total):
    """Weighted least squares for ``y ~ masks @ phi`` subject to ``sum(phi) == total``.

    The constraint is eliminated by substituting the last coefficient.
    """
    m = masks.shape[1]
    if m == 1:
        return np.array([total])
    x = masks[:, :-1] - masks[:, -1:]
    target = y - masks[:, -1] * total
    xtw = x.T * weights
    gram = xtw @ x
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystemError("KernelSHAP regression system is singular", cond)
    head = np.linalg.solve(gram, xtw @ target)
    return np.append(head, total - head.sum())


def kernel_shap(model, image, seg, class_id, baseline="mean-color", n_samples=None, seed=0,
                channel_mean=None, exact=None, batch_size=256):
    """Shapley values of the superpixels of ``image`` for ``class_id``.

    Coalitions are scored by replacing absent patches with the baseline
    colour. The empty and full coalitions are hard constraints, so the
    values always sum to ``f(x) - f(baseline)``. With at most 12 patches and
    a budget of at least ``2**M`` samples every coalition is enumerated and
    the result is exact; ``exact=False`` forces sampling.
    """
    m = seg.n_patches
    if m < 1:
        raise ParameterError("segmentation has no patches")
    if m > MAX_SHAP_PATCHES:
        raise ParameterError(f"{m} patches exceeds the KernelSHAP limit of {MAX_SHAP_PATCHES}")
    n_samples = n_samples or 64 * m
    if n_samples < 2 * m:
        raise ParameterError(f"n_samples={n_samples} must be at least 2 * n_patches = {2 * m}")
    callback = as_callback(model, batch_size)
    image = np.asarray(image)
    fill = baseline_fill(image, baseline, channel_mean)
    ends = _evaluate(callback, image, seg, np.array([np.ones(m), np.zeros(m)]), fill, class_id, batch_size)
    f_x, f_0 = ends
    if exact is None:
        exact = m <= EXACT_ENUMERATION_LIMIT and n_samples >= 2 ** m
    if m == 1:
        values = np.array([f_x - f_0])
    else:
        if exact:
            masks, weights = _all_coalitions(m)
        else:
            masks, weights = _sampled_coalitions(m, n_samples, np.random.default_rng(seed))
        y = _evaluate(callback, image, seg, masks, fill, class_id, batch_size) - f_0
        values = solve_constrained_wls(masks, weights, y, f_x - f_0)
    meta = {"n_samples": n_samples, "seed": seed, "exact": bool(exact), "f_x": float(f_x),
            "f_baseline": float(f_0)}
    return PatchExplanation(values, class_id, seg, "shap", meta)


# ---------------------------------------------------------------- LIME

def lime_explain(model, image, seg, class_id, n_samples=1000, kernel_width=0.25, ridge_lambda=1.0,
                 seed=0, baseline="mean-color", channel_mean=None, batch_size=256):
    """Ridge surrogate over random patch masks, weighted by closeness to the full image.

    Sample weights are ``exp(-d^2 / kernel_width^2)`` with ``d`` the fraction
    of patches switched off. The first sample is always the unperturbed image.
    """
    m = seg.n_patches
    if n_samples < m:
        raise ParameterError(f"n_samples={n_samples} must be at least n_patches={m}")
    rng = np.random.default_rng(seed)
    masks = rng.integers(0, 2, size=(n_samples, m)).astype(np.float64)
    masks[0] = 1.0
    if np.all(masks == masks[0]):
        raise SamplingError("all sampled masks are identical; increase n_samples")
    callback = as_callback(model, batch_size)
    image = np.asarray(image)
    fill = baseline_fill(image, baseline, channel_mean)
    y = _evaluate(callback, image, seg, masks, fill, class_id, batch_size)
    d = (m - masks.sum(axis=1)) / m
    w = np.exp(-(d ** 2) / kernel_width ** 2)
    xm = (w @ masks) / w.sum()
    ym = (w @ y) / w.sum()
    xc, yc = masks - xm, y - ym
    gram = (xc.T * w) @ xc + ridge_lambda * np.eye(m)
    coef = np.linalg.solve(gram, (xc.T * w) @ yc)
    meta = {"n_samples": n_samples, "seed": seed, "intercept": float(ym - xm @ coef)}
    return PatchExplanation(coef, class_id, seg, "lime", meta)


# ---------------------------------------------------------------- GradCAM

def bilinear_resize(a, out_h, out_w):
    """Half-pixel-centre bilinear resize of a 2-D array."""
    h, w = a.shape

    def axis(n_out, n_in):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(out_h, h)
    x0, x1, fx = axis(out_w, w)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bottom * fy[:, None]


def gradcam(model, image, class_id):
    """Class-discriminative heatmap ``(1, H, W)`` in [0, 1] from the last conv activations."""
    idx = model.last_conv_index() if hasattr(model, "last_conv_index") else None
    if idx is None:
        raise UnsupportedArchitectureError("GradCAM needs a model with at least one conv layer")
    image = np.asarray(image)
    x = Tensor(image[None].astype(model.parameters()[0].dtype if model.parameters() else image.dtype),
               requires_grad=True)
    logits, outputs = model.forward(x, trace=True)
    acts = outputs[idx]
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[0, class_id] = 1
    backward(ops.sum(ops.mul(logits, onehot)), retain_graph=False)
    params = model.all_parameters() if hasattr(model, "all_parameters") else model.parameters()
    for p in params:
        p.grad = None
    a = acts.data[0].astype(np.float64)
    g = acts.grad[0].astype(np.float64) if acts.grad is not None else np.zeros_like(a)
    alpha = g.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, a, axes=1), 0.0)
    cam = bilinear_resize(cam, image.shape[1], image.shape[2])
    cam = np.maximum(cam, 0.0)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return cam[None]


# ---------------------------------------------------------------- occlusion

def occlusion_map(model, image, class_id, mask_size=4, stride=4, mask_fill="gray", batch_size=256):
    """Score drop ``f(x) - f(x with window filled)`` for every window position.

    ``mask_fill`` is ``"gray"`` (0.5), ``"mean"`` (image channel mean), a
    scalar, or an array shaped like the image whose pixels are copied in.
    """
    if stride <= 0:
        raise ParameterError(f"stride must be positive, got {stride}")
    image = np.asarray(image)
    _, h, w = image.shape
    if mask_size < 1 or mask_size > min(h, w):
        raise ParameterError(f"mask_size {mask_size} must lie in [1, {min(h, w)}]")
    if isinstance(mask_fill, str):
        if mask_fill == "gray":
            source = np.full_like(image, 0.5)
        elif mask_fill == "mean":
            source = np.broadcast_to(image.mean(axis=(1, 2), keepdims=True), image.shape)
        else:
            raise ParameterError(f"unknown mask_fill {mask_fill!r}")
    else:
        source = np.broadcast_to(np.asarray(mask_fill, dtype=image.dtype), image.shape)
    hg = (h - mask_size) // stride + 1
    wg = (w - mask_size) // stride + 1
    callback = as_callback(model, batch_size)
    base = float(np.asarray(callback(image[None]))[0, class_id])
    batch = np.repeat(image[None], hg * wg, axis=0)
    for i in range(hg):
        for j in range(wg):
            ys, xs = slice(i * stride, i * stride + mask_size), slice(j * stride, j * stride + mask_size)
            batch[i * wg + j][:, ys, xs] = source[:, ys, xs]
    scores = np.concatenate([np.asarray(callback(batch[s:s + batch_size]))[:, class_id]
                             for s in range(0, len(batch), batch_size)])
    return (base - scores).reshape(1, hg, wg)


# ---------------------------------------------------------------- uniform interface

def explain_for_comparison(method, model, image, seg, class_id, cfg=None):
    """Per-patch explanation from any supported method, for cross-model comparison."""
    cfg = cfg or ExplainerConfig()
    mean = cfg.channel_mean or None
    if method == "shap":
        return kernel_shap(model, image, seg, class_id, baseline=cfg.baseline, n_samples=cfg.n_samples or None,
                           seed=cfg.seed, channel_mean=mean, batch_size=cfg.batch_size)
    if method == "lime":
        return lime_explain(model, image, seg, class_id, n_samples=cfg.lime_samples,
                            kernel_width=cfg.kernel_width, ridge_lambda=cfg.ridge_lambda, seed=cfg.seed,
                            baseline=cfg.baseline, channel_mean=mean, batch_size=cfg.batch_size)
    if method == "gradcam":
        return aggregate_attributions(gradcam(model, image, class_id), seg, class_id, "gradcam")
    raise ParameterError(f"unknown explanation method {method!r}; use shap, lime or gradcam")
