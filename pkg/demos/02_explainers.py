"""Four ways to explain one prediction: KernelSHAP, LIME, GradCAM and occlusion.

Trains a small teacher on synthetic digits, picks one test image, explains
the predicted class with every method and writes the heatmaps as PPM files
(red = supports the class, blue = opposes it). The three patch-based methods
share one SLIC segmentation, so their per-patch values can be compared
directly; the script prints the top patches each method picks.

``python3 demos/02_explainers.py [--index N] [--out runs/demo2]``
"""

import argparse
from pathlib import Path

import numpy as np

from xdistill.data import synthetic_digits
from xdistill.distill import TrainConfig, train_teacher
from xdistill.eval import heatmap_to_gray, heatmap_to_rgb, top_k, write_pgm, write_ppm
from xdistill.explainers import ExplainerConfig, explain_for_comparison, occlusion_map
from xdistill.models import build_teacher_mnist
from xdistill.superpixel import render_patch_map, slic_segment


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--index", type=int, help="test image to explain (default: first correctly classified)")
    parser.add_argument("--out", default="runs/demo_explainers")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train = synthetic_digits(2000, seed=0)
    test = synthetic_digits(50, seed=1, split="test")
    teacher, _ = train_teacher(train, build_teacher_mnist(0), TrainConfig(epochs=6, batch_size=64))

    index = args.index
    if index is None:
        index = int(np.flatnonzero(teacher.predict(test.images) == test.labels)[0])
    image, label = test.images[index], int(test.labels[index])
    probs = teacher.predict_proba(image[None])[0]
    cls = int(np.argmax(probs))
    print(f"image {index}: true digit {label}, predicted {cls} with p={probs[cls]:.3f}")
    write_pgm(out / "image.pgm", heatmap_to_gray(image[0]))

    seg = slic_segment(image, k=19)
    print(f"SLIC produced {seg.n_patches} superpixels")
    cfg = ExplainerConfig(seed=0)
    for method in ("shap", "lime", "gradcam"):
        pe = explain_for_comparison(method, teacher, image, seg, cls, cfg)
        scaled = render_patch_map(pe)[0] / (np.abs(pe.values).max() or 1.0)
        write_ppm(out / f"{method}.ppm", heatmap_to_rgb(scaled))
        best = top_k(pe.values, 3)
        print(f"  {method:8s} top patches {best.tolist()} values {np.round(pe.values[best], 4).tolist()}")
        if method == "shap":
            print(f"  {'':8s} sum of SHAP values {pe.values.sum():+.4f} = "
                  f"f(x) - f(baseline) {pe.meta['f_x'] - pe.meta['f_baseline']:+.4f}")

    occ = occlusion_map(teacher, image, cls, mask_size=4, stride=2)
    write_ppm(out / "occlusion.ppm", heatmap_to_rgb(occ[0] / (np.abs(occ).max() or 1.0)))
    i, j = np.unravel_index(np.argmax(occ[0]), occ[0].shape)
    print(f"  occlusion: largest score drop {occ.max():.4f} when masking the window at ({2 * i}, {2 * j})")
    print(f"heatmaps written to {out}/")


if __name__ == "__main__":
    main()
