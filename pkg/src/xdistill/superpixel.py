"""SLIC superpixels and the per-patch explanation representation.

Pixel attributions are summed over channels and over each superpixel,
giving one signed value per patch; rendering spreads each patch value back
over its pixels as a piecewise-constant single-channel map.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from xdistill.errors import DimensionError, ParameterError, ValidationError

K_RANGE = (3, 20)
DEFAULT_K = 19
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class SegmentMap:
    labels: np.ndarray
    n_patches: int
    params: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.labels.shape

    def sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.n_patches)

    def as_float_tensor(self):
        """Labels coded as floats for XDT1 storage."""
        return self.labels.astype(np.float32)[None]

    @classmethod
    def from_float_tensor(cls, data, params=None):
        labels = np.rint(np.asarray(data)).astype(np.int64).reshape(np.asarray(data).shape[-2:])
        return cls(labels, int(labels.max()) + 1, dict(params or {}))

    def manifest_line(self):
        p = self.params
        return (f"segments k={p.get('k')} m={p.get('compactness')} iterations={p.get('iterations')} "
                f"seed={p.get('seed')} n_patches={self.n_patches}")


@dataclass
class PatchExplanation:
    values: np.ndarray
    class_id: int
    segments: SegmentMap
    method: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.segments.n_patches,):
            raise DimensionError(
                f"{self.values.shape[0] if self.values.ndim else 0} patch values for "
                f"{self.segments.n_patches} patches"
            )

    def render(self):
        return render_patch_map(self)


# ---------------------------------------------------------------- colour

def color_transform(image):
    """sRGB ``(3, H, W)`` in [0, 1] to CIE L*a*b* (D65 white)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"color_transform expects (3, H, W), got {image.shape}")
    if image.min() < -1e-6 or image.max() > 1 + 1e-6:
        raise ValidationError(f"pixel values must lie in [0, 1], got [{image.min()}, {image.max()}]")
    rgb = np.clip(image, 0.0, 1.0)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    m = np.array([[0.412453, 0.357580, 0.180423],
                  [0.212671, 0.715160, 0.072169],
                  [0.019334, 0.119193, 0.950227]])
    xyz = np.tensordot(m, lin, axes=1)
    xyz /= np.array([0.950456, 1.0, 1.088754])[:, None, None]
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(xyz)
    lab[0] = 116 * f[1] - 16
    lab[1] = 500 * (f[0] - f[1])
    lab[2] = 200 * (f[1] - f[2])
    return lab


# ---------------------------------------------------------------- SLIC

def _grid_centres(h, w, k):
    rows = max(1, int(np.sqrt(k * h / w)))
    cols = max(1, int(np.ceil(k / rows)))
    ys = (np.arange(rows) + 0.5) * h / rows
    xs = (np.arange(cols) + 0.5) * w / cols
    return [(y, x) for y in ys for x in xs]


def _gradient_magnitude(feat):
    padded = np.pad(feat, ((0, 0), (1, 1), (1, 1)), mode="edge")
    dy = padded[:, 2:, 1:-1] - padded[:, :-2, 1:-1]
    dx = padded[:, 1:-1, 2:] - padded[:, 1:-1, :-2]
    return (dy ** 2).sum(axis=0) + (dx ** 2).sum(axis=0)


def slic_segment(image, k=DEFAULT_K, compactness=None, iterations=10, seed=0, force=False):
    """Localised k-means over (colour, row, column) producing about ``k`` superpixels.

    Colour images cluster in CIELAB with compactness 10 by default;
    single-channel images cluster on raw intensity with compactness
    ``0.2 * intensity range``. ``k`` outside [3, 20] needs ``force=True``.
    The result is always 4-connected with labels ``0..n_patches-1``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DimensionError(f"slic_segment expects (1|3, H, W), got {image.shape}")
    _, h, w = image.shape
    if k < 1 or k > h * w:
        raise ParameterError(f"k must lie in [1, {h * w}], got {k}")
    if not force and not K_RANGE[0] <= k <= K_RANGE[1]:
        raise ParameterError(f"k={k} outside the supported range {list(K_RANGE)}; pass force=True to override")
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    if image.shape[0] == 3:
        feat = color_transform(image)
        m = 10.0 if compactness is None else float(compactness)
    else:
        feat = image.copy()
        span = float(image.max() - image.min())
        m = 0.2 * span if compactness is None else float(compactness)
    params = {"k": k, "compactness": m, "iterations": iterations, "seed": seed}
    step = np.sqrt(h * w / k)

    grad = _gradient_magnitude(feat)
    centres = []
    for cy, cx in _grid_centres(h, w, k):
        iy, ix = min(int(cy), h - 1), min(int(cx), w - 1)
        y0, y1 = max(iy - 1, 0), min(iy + 2, h)
        x0, x1 = max(ix - 1, 0), min(ix + 2, w)
        local = grad[y0:y1, x0:x1]
        dy, dx = np.unravel_index(np.argmin(local), local.shape)
        py, px = y0 + dy, x0 + dx
        centres.append(np.concatenate([feat[:, py, px], [py, px]]))
    centres = np.array(centres)
    n_feat = feat.shape[0]

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    spatial_scale = (m / step) ** 2
    labels = np.full((h, w), -1, dtype=np.int64)
    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for idx, c in enumerate(centres):
            cy, cx = c[n_feat], c[n_feat + 1]
            y0, y1 = max(int(np.floor(cy - step)), 0), min(int(np.ceil(cy + step)) + 1, h)
            x0, x1 = max(int(np.floor(cx - step)), 0), min(int(np.ceil(cx + step)) + 1, w)
            if y0 >= y1 or x0 >= x1:
                continue
            dc = ((feat[:, y0:y1, x0:x1] - c[:n_feat, None, None]) ** 2).sum(axis=0)
            ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            dist = dc + ds * spatial_scale
            region = best[y0:y1, x0:x1]
            closer = dist < region  # strict: the lower id keeps ties
            region[closer] = dist[closer]
            labels[y0:y1, x0:x1][closer] = idx
        missing = labels < 0
        if missing.any():
            # pixels outside every search window fall back to the globally nearest centre
            pts = np.concatenate([feat[:, missing], yy[missing][None], xx[missing][None]])
            dc = ((pts[:n_feat, :, None] - centres[:, :n_feat].T[:, None, :]) ** 2).sum(axis=0)
            ds = ((pts[n_feat:, :, None] - centres[:, n_feat:].T[:, None, :]) ** 2).sum(axis=0)
            labels[missing] = np.argmin(dc + ds * spatial_scale, axis=1)
        for idx in range(len(centres)):
            sel = labels == idx
            if sel.any():
                centres[idx, :n_feat] = feat[:, sel].mean(axis=1)
                centres[idx, n_feat] = yy[sel].mean()
                centres[idx, n_feat + 1] = xx[sel].mean()

    labels = _enforce_connectivity(labels, min_size=max(1, int(h * w / k / 8)))
    return SegmentMap(labels, int(labels.max()) + 1, params)


def _enforce_connectivity(labels, min_size):
    """Split labels into 4-connected components, then merge orphans into a neighbour.

    Each cluster keeps its largest component; smaller fragments, and any
    component under ``min_size`` pixels, join the adjacent component sharing
    the longest border (lowest id on ties). Output is relabelled in raster
    order of first appearance.
    """
    comp = np.zeros_like(labels)
    next_id = 0
    keep = set()
    for lab in np.unique(labels):
        cc, n = ndimage.label(labels == lab, structure=_FOUR_CONNECTED)
        if n == 0:
            continue
        sizes = np.bincount(cc.ravel())[1:]
        for j in range(n):
            comp[cc == j + 1] = next_id + j
        keep.add(next_id + int(np.argmax(sizes)))
        next_id += n
    while True:
        ids, sizes = np.unique(comp, return_counts=True)
        if len(ids) == 1:
            break
        candidates = [(s, i) for i, s in zip(ids, sizes) if i not in keep or s < min_size]
        if not candidates:
            break
        _, target = min(candidates)
        neighbour = _dominant_neighbour(comp, target)
        comp[comp == target] = neighbour
        keep.discard(target)
    _, first = np.unique(comp.ravel(), return_index=True)
    order = comp.ravel()[np.sort(first)]
    remap = {old: new for new, old in enumerate(order)}
    return np.vectorize(remap.get)(comp).astype(np.int64)


def _dominant_neighbour(comp, target):
    mask = comp == target
    counts = {}
    for a, b in ((comp[:-1, :], comp[1:, :]), (comp[1:, :], comp[:-1, :]),
                 (comp[:, :-1], comp[:, 1:]), (comp[:, 1:], comp[:, :-1])):
        m = a == target
        for other in b[m & (b != target)]:
            counts[int(other)] = counts.get(int(other), 0) + 1
    if not counts:
        raise RuntimeError("component has no neighbours")  # unreachable with >1 component
    return min(counts, key=lambda i: (-counts[i], i))


# ---------------------------------------------------------------- representation

def aggregate_attributions(attr, seg, class_id=-1, method=""):
    """Sum a pixel attribution map over channels and over each patch."""
    attr = np.asarray(attr, dtype=np.float64)
    if attr.ndim == 2:
        attr = attr[None]
    if attr.ndim != 3 or attr.shape[1:] != seg.shape:
        raise DimensionError(f"attribution shape {attr.shape} does not match segmentation {seg.shape}")
    collapsed = attr.sum(axis=0)
    values = np.bincount(seg.labels.ravel(), weights=collapsed.ravel(), minlength=seg.n_patches)
    return PatchExplanation(values, class_id, seg, method)


def render_patch_map(pe):
    """Piecewise-constant ``(1, H, W)`` map: each pixel carries its patch's value."""
    return pe.values[pe.segments.labels][None]


def normalization_constant(explanations, q=99.0):
    """The ``q``-th percentile of absolute patch values over a set of explanations."""
    values = np.concatenate([np.abs(pe.values) for pe in explanations]) if explanations else np.zeros(1)
    scale = float(np.percentile(values, q))
    return scale if scale > 0 else 1.0


def normalize_explanation(pe, scale):
    """Divide patch values by ``scale`` and clip to [-1, 1] (the CAE output range)."""
    values = np.clip(pe.values / scale, -1.0, 1.0)
    return PatchExplanation(values, pe.class_id, pe.segments, pe.method, dict(pe.meta, scale=scale))
