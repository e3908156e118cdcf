"""SLIC superpixels and the per-patch explanation representation.

Segments a synthetic colour scene, checks the properties the explainers rely
on (every pixel labelled, every patch connected), then shows how a pixel
attribution map is summed per patch, rendered back as a piecewise-constant
map, and normalised into the CAE's [-1, 1] output range.

``python3 demos/03_superpixels.py [--k 19] [--out runs/demo3]``
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import ndimage

from xdistill.eval import heatmap_to_rgb, write_ppm
from xdistill.superpixel import (
    aggregate_attributions,
    normalization_constant,
    normalize_explanation,
    render_patch_map,
    slic_segment,
)


def scene(size=64, seed=0):
    """Three coloured discs on a gradient background, plus a little noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size] / size
    img = np.stack([0.2 + 0.3 * xx, 0.3 + 0.2 * yy, 0.5 * np.ones_like(xx)])
    for (cy, cx, r), colour in zip([(0.3, 0.3, 0.18), (0.65, 0.7, 0.22), (0.75, 0.25, 0.12)],
                                   [(0.9, 0.1, 0.1), (0.1, 0.8, 0.2), (0.95, 0.9, 0.1)]):
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[:, disc] = np.asarray(colour)[:, None]
    return np.clip(img + rng.normal(scale=0.02, size=img.shape), 0, 1)


def boundaries(labels):
    edge = np.zeros(labels.shape, bool)
    edge[:-1] |= labels[:-1] != labels[1:]
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    return edge


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--k", type=int, default=19, help="target number of superpixels")
    parser.add_argument("--out", default="runs/demo_superpixels")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    img = scene()
    seg = slic_segment(img, k=args.k)
    sizes = seg.sizes()
    print(f"k={args.k}: {seg.n_patches} superpixels, sizes {sizes.min()}..{sizes.max()} pixels")
    components = [ndimage.label(seg.labels == p)[1] for p in range(seg.n_patches)]
    print(f"every patch is one connected region: {all(c == 1 for c in components)}")

    overlay = (np.moveaxis(img, 0, -1) * 255).astype(np.uint8)
    overlay[boundaries(seg.labels)] = 0
    write_ppm(out / "segments.ppm", overlay)

    # a made-up attribution: positive on the red disc, negative on the green one
    attr = img[0] - img[1]
    pe = aggregate_attributions(attr, seg, class_id=0, method="demo")
    print(f"pixel total {attr.sum():+.3f} equals patch total {pe.values.sum():+.3f}")
    scale = normalization_constant([pe])
    norm = normalize_explanation(pe, scale)
    print(f"normalised by the 99th percentile |value| {scale:.3f}; range "
          f"[{norm.values.min():+.2f}, {norm.values.max():+.2f}]")
    write_ppm(out / "patch_map.ppm", heatmap_to_rgb(render_patch_map(norm)[0]))
    print(f"images written to {out}/")


if __name__ == "__main__":
    main()
