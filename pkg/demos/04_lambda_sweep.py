"""How the feature-reduction weight lambda gates the CNN and CAE branches.

The XDistillation student concatenates CNN features with the frozen CAE's
explanation map and mixes them through one dense layer ``c``. Training adds
``lambda * ||c||^2``; larger lambda shrinks ``c``. This script trains the
same student for several lambda values, writes each training curve as CSV
and prints the norm of the CNN and CAE column blocks of ``c``.

``python3 demos/04_lambda_sweep.py [--lambdas 0 5e-4 5e-2] [--out runs/demo4]``
"""

import argparse
from pathlib import Path

import numpy as np

from xdistill.data import synthetic_digits
from xdistill.distill import TrainConfig, build_explanation_dataset, train_cae, train_student_xdistill, train_teacher
from xdistill.eval import evaluate_accuracy
from xdistill.models import build_cae, build_student_mnist, build_teacher_mnist, build_xmodel


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 5e-4, 5e-2])
    parser.add_argument("--epochs", type=int, default=4)
    parser.add_argument("--out", default="runs/demo_lambda")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train = synthetic_digits(2000, seed=0)
    test = synthetic_digits(500, seed=1, split="test")
    teacher, _ = train_teacher(train, build_teacher_mnist(0), TrainConfig(epochs=6, batch_size=64))
    expl = build_explanation_dataset(teacher, train, k=19, seed=0, limit=150)
    cae, _ = train_cae(expl, build_cae("small", seed=2), TrainConfig(epochs=10, batch_size=32,
                                                                    lr_schedule=((0, 1e-2),)))

    print(f"{'lambda':>8} {'acc %':>7} {'|c_cnn|':>9} {'|c_cae|':>9} {'final loss_fr':>14}")
    for lam in args.lambdas:
        xm = build_xmodel(build_student_mnist(1), cae, 10, seed=3)
        xm, record = train_student_xdistill(teacher, xm, train,
                                            TrainConfig(epochs=args.epochs, batch_size=64, lam=lam))
        record.write_csv(out / f"curve_lambda_{lam:g}.csv")
        c = xm.concat_weight.data
        print(f"{lam:>8g} {evaluate_accuracy(xm, test):>7.1f} {np.linalg.norm(c[:, xm.cnn_columns]):>9.4f} "
              f"{np.linalg.norm(c[:, xm.cae_columns]):>9.4f} {record.epochs[-1]['loss_fr']:>14.5f}")
    print(f"training curves written to {out}/")


if __name__ == "__main__":
    main()
