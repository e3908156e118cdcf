"""End-to-end explainable distillation on synthetic seven-segment digits.

Walks through both phases in one process:

1. train a LeNet-style teacher;
2. explain part of the training set with superpixel KernelSHAP and render the
   explanations as piecewise-constant target maps;
3. train the small convolutional autoencoder (CAE) to map images to those
   maps, then freeze it;
4. train three students: plain cross-entropy, classic KD, and XDistillation
   (student CNN fused with the frozen CAE);
5. compare accuracy and explanation consistency with the teacher.

Real MNIST can be used instead with ``--mnist DIR``. Run:
``python3 demos/01_end_to_end.py [--train 3000] [--out runs/demo1]``
"""

import argparse
import logging
from pathlib import Path

from xdistill.data import load_dataset, synthetic_digits
from xdistill.distill import (
    TrainConfig,
    build_explanation_dataset,
    train_cae,
    train_student_kd,
    train_student_xdistill,
    train_teacher,
)
from xdistill.eval import ReportRow, compare_students, emit_report, evaluate_accuracy, format_table
from xdistill.explainers import ExplainerConfig
from xdistill.models import build_cae, build_student_mnist, build_teacher_mnist, build_xmodel, count_parameters


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--train", type=int, default=3000, help="training images")
    parser.add_argument("--test", type=int, default=1000, help="test images")
    parser.add_argument("--explain", type=int, default=200, help="images explained for the CAE targets")
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--mnist", help="directory holding the MNIST IDX files")
    parser.add_argument("--out", default="runs/demo_end_to_end")
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)
    out = Path(args.out)

    if args.mnist:
        train = load_dataset("mnist", args.mnist, "train", limit=args.train)
        test = load_dataset("mnist", args.mnist, "test", limit=args.test)
    else:
        train = synthetic_digits(args.train, seed=0)
        test = synthetic_digits(args.test, seed=1, split="test")
    print(f"data: {len(train)} train / {len(test)} test images of shape {train.images.shape[1:]}")

    cfg = TrainConfig(epochs=args.epochs, batch_size=64)
    teacher, _ = train_teacher(train, build_teacher_mnist(0), cfg)
    print(f"teacher ({count_parameters(teacher)} params): {evaluate_accuracy(teacher, test):.1f}% test accuracy")

    print(f"\nphase 1: explaining {args.explain} training images with superpixel KernelSHAP ...")
    expl = build_explanation_dataset(teacher, train, k=19, seed=0, limit=args.explain)
    print(f"  {expl.manifest['explained']} explained, {expl.manifest['skipped']} skipped, "
          f"normalised by {float(expl.manifest['normalization']):.4f}")
    cae, cae_log = train_cae(expl, build_cae("small", seed=2),
                             TrainConfig(epochs=10, batch_size=32, lr_schedule=((0, 1e-2),)))
    print(f"  CAE ({count_parameters(cae)} params) MAE {cae_log.initial_loss:.4f} -> "
          f"{cae_log.epochs[-1]['total']:.4f}; frozen={cae.frozen}")

    print("\nphase 2: students")
    baseline, _ = train_teacher(train, build_student_mnist(1), cfg)
    kd, _ = train_student_kd(teacher, build_student_mnist(1), train, cfg)
    xmodel = build_xmodel(build_student_mnist(1), cae, hidden_width=10, seed=3)
    xdistill, _ = train_student_xdistill(teacher, xmodel, train, cfg)

    models = {"teacher": teacher, "baseline": baseline, "kd": kd, "xdistill": xdistill}
    rows = {"accuracy": [ReportRow(n, "-", "accuracy", evaluate_accuracy(m, test), len(test), 0)
                         for n, m in models.items()]}
    print(format_table(rows["accuracy"]))

    print("\nexplanation consistency with the teacher (SHAP, top-2 patches, both-correct images):")
    reports = compare_students(teacher, {"kd": kd, "xdistill": xdistill}, test, "shap", k=2, n_images=50,
                               cfg=ExplainerConfig(seed=0))
    rows["mse"] = [ReportRow(n, "shap", "mse", r.mse_mean, r.n_qualifying, 0) for n, r in reports.items()]
    rows["overlap"] = [ReportRow(n, "shap", "sign_overlap_top2", 100 * r.overlap, r.n_qualifying, 0)
                       for n, r in reports.items()]
    print(format_table(rows["mse"] + rows["overlap"]))
    for path in emit_report(rows, out):
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
