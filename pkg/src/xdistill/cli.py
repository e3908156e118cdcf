"""Command-line driver: one verb per pipeline stage, stages linked through files.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration error.
"""

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from xdistill.data import CONFIG_KEYS, config_help, load_dataset, parse_config
from xdistill.distill import (
    ExplanationDataset,
    TrainConfig,
    build_explanation_dataset,
    map_images,
    train_cae,
    train_student_kd,
    train_student_xdistill,
    train_teacher,
)
from xdistill.errors import ConfigError, UsageError, XDistillError
from xdistill.eval import (
    ReportRow,
    emit_report,
    evaluate_accuracy,
    compare_students,
    occlusion_similarity,
)
from xdistill.explainers import ExplainerConfig, explain_for_comparison, occlusion_map
from xdistill.models import (
    build_cae,
    build_student_cifar,
    build_student_mnist,
    build_teacher_cifar,
    build_teacher_mnist,
    build_xmodel,
    load_model,
    save_model,
)
from xdistill.superpixel import render_patch_map, slic_segment
from xdistill.tensor.xdt import save_tensor

log = logging.getLogger("xdistill")

VERBS = {
    "train-teacher": "train the teacher network",
    "explain": "explain test images with one method and save the rendered maps",
    "build-repr": "build the CAE training set from teacher SHAP explanations",
    "train-cae": "train and freeze the CAE on the explanation set",
    "train-student": "train a student (baseline, kd or xdistill)",
    "evaluate": "accuracy reports, plus explanation consistency with --method",
    "occlusion": "occlusion heatmaps for teacher and student, with their MSE",
    "reproduce": "run every stage needed for a desk-scale table",
}
STUDENT_MODES = ("baseline", "kd", "xdistill")


class Run:
    """A run directory, its effective configuration and its manifest."""

    def __init__(self, verb, cfg, argv):
        self.verb = verb
        self.cfg = cfg
        self.out = Path(cfg["output.dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = self.out / "manifest.txt"
        lines = [f"verb = {verb}", f"argv = {' '.join(argv)}", f"config_digest = {cfg.digest()}"]
        self.manifest.write_text("\n".join(lines + cfg.echo_lines()) + "\n")
        self._splits = {}

    @property
    def seed(self):
        return self.cfg["seed"]

    def note(self, key, value):
        with open(self.manifest, "a") as fh:
            fh.write(f"{key} = {value}\n")

    def path(self, name):
        return self.out / name

    def artifact(self, path):
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.note(f"artifact.{Path(path).name}", digest)
        return path

    def split(self, name):
        if name not in self._splits:
            c = self.cfg
            ds = load_dataset(c["data.dataset"], c["data.root"], name, c["data.limit"], c["seed"])
            self.note(f"dataset.{name}.n", len(ds))
            self.note(f"dataset.{name}.checksum", ds.checksum())
            for fname, digest in sorted(ds.checksums.items()):
                self.note(f"dataset.{name}.file.{fname}", digest)
            self._splits[name] = ds
        return self._splits[name]

    def train_config(self, **changes):
        return TrainConfig.from_config(self.cfg, **changes)


# ---------------------------------------------------------------- model factories

def _family(run):
    return "cifar" if run.cfg["data.dataset"] == "cifar10" else "mnist"


def new_teacher(run):
    return (build_teacher_cifar if _family(run) == "cifar" else build_teacher_mnist)(seed=run.seed)


def new_student(run):
    return (build_student_cifar if _family(run) == "cifar" else build_student_mnist)(seed=run.seed + 1)


def new_cae(run):
    channels = 3 if _family(run) == "cifar" else 1
    return build_cae(run.cfg["cae.variant"], in_channels=channels, out_channels=1, seed=run.seed + 2)


def _require(path, what, flag):
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} not found at {path}; pass {flag} or run the producing stage first")
    return Path(path)


# ---------------------------------------------------------------- stages

def stage_train_teacher(run):
    model, record = train_teacher(run.split("train"), new_teacher(run), run.train_config())
    path = run.path("teacher.xmdl")
    save_model(model, path)
    record.write_csv(run.path("teacher_metrics.csv"))
    run.artifact(path)
    return path


def _explainer_config(run):
    c = run.cfg
    return ExplainerConfig(n_samples=c["explain.n_samples"], baseline=c["explain.baseline"], seed=run.seed,
                           lime_samples=c["explain.lime_samples"])


def _slic_kwargs(run):
    c = run.cfg
    return dict(compactness=c["slic.compactness"] or None, iterations=c["slic.iterations"], force=c["slic.force"])


def stage_build_repr(run, teacher_path):
    teacher = load_model(_require(teacher_path, "teacher model", "--teacher"))
    c = run.cfg
    ds = build_explanation_dataset(teacher, run.split("train"), k=c["slic.k"], seed=run.seed,
                                   n_samples=c["explain.n_samples"] or None, baseline=c["explain.baseline"],
                                   limit=c["explain.limit"], workers=c["run.workers"],
                                   compactness=c["slic.compactness"] or None, force=c["slic.force"])
    for key, value in sorted(ds.manifest.items()):
        run.note(f"repr.{key}", value)
    if len(ds) == 0:
        raise XDistillError("every explanation failed; nothing to train the CAE on")
    path = run.path("explanations.xexp")
    ds.save(path)
    run.artifact(path)
    return path


def stage_train_cae(run, repr_path):
    ds = ExplanationDataset.load(_require(repr_path, "explanation set", "--repr"))
    c = run.cfg
    cfg = run.train_config(epochs=c["cae.epochs"], batch_size=c["cae.batch_size"], lr_schedule=((0, c["cae.lr"]),),
                           optimizer="adam", augment=False)
    cae, record = train_cae(ds, new_cae(run), cfg)
    run.note("cae.initial_mae", repr(record.initial_loss))
    run.note("cae.final_mae", repr(record.epochs[-1]["total"]))
    path = run.path("cae.xmdl")
    save_model(cae, path)
    record.write_csv(run.path("cae_metrics.csv"))
    run.artifact(path)
    return path


def stage_train_student(run, mode, teacher_path=None, cae_path=None):
    if mode == "xdistill":
        cae_path = _require(cae_path, "frozen CAE artifact", "--cae")
    cfg = run.train_config()
    train = run.split("train")
    if mode == "baseline":
        model, record = train_teacher(train, new_student(run), cfg)
        model.name = "baseline"
    else:
        teacher = load_model(_require(teacher_path, "teacher model", "--teacher"))
        if mode == "kd":
            model, record = train_student_kd(teacher, new_student(run), train, cfg)
        else:
            cae = load_model(cae_path)
            if not cae.frozen:
                raise UsageError(f"{cae_path} is not a frozen CAE")
            xmodel = build_xmodel(new_student(run), cae, run.cfg["model.hidden_width"], seed=run.seed + 3)
            model, record = train_student_xdistill(teacher, xmodel, train, cfg)
    path = run.path(f"student_{mode}.xmdl")
    save_model(model, path)
    record.write_csv(run.path(f"student_{mode}_metrics.csv"))
    run.artifact(path)
    return path


def stage_explain(run, model_path, method):
    model = load_model(_require(model_path, "model", "--model"))
    c = run.cfg
    test = run.split("test").subset(c["explain.limit"])
    preds = model.predict(test.images)
    if method == "occlusion":
        maps = [occlusion_map(model, img, int(p), c["occlusion.mask_size"], c["occlusion.stride"],
                              c["occlusion.fill"]) for img, p in zip(test.images, preds)]
        path = run.path("explanations_occlusion.xdt")
        save_tensor(path, np.stack(maps))
        run.artifact(path)
        return path
    cfg = _explainer_config(run)
    jobs = [(model, img, int(p), method, c["slic.k"], cfg, _slic_kwargs(run)) for img, p in zip(test.images, preds)]
    results = map_images(_explain_one, jobs, c["run.workers"])
    maps = np.stack([render_patch_map(pe) for pe in results])
    segs = np.stack([pe.segments.labels for pe in results]).astype(np.float32)
    path = run.path(f"explanations_{method}.xdt")
    save_tensor(path, maps)
    save_tensor(run.path(f"segments_{method}.xdt"), segs)
    run.artifact(path)
    return path


def _explain_one(job):
    model, image, class_id, method, k, cfg, slic_kwargs = job
    seg = slic_segment(image, k, seed=cfg.seed, **slic_kwargs)
    return explain_for_comparison(method, model, image, seg, class_id, cfg)


def stage_evaluate(run, models, method=None):
    """Accuracy rows for every model; with ``method`` also MSE and overlap against the teacher."""
    test = run.split("test")
    loaded = {name: load_model(_require(p, f"{name} model", f"--{name}")) for name, p in models.items()}
    rows = {"accuracy": [ReportRow(name, "-", "accuracy", evaluate_accuracy(m, test), len(test), run.seed)
                         for name, m in loaded.items()]}
    if method:
        c = run.cfg
        teacher = loaded.get("teacher")
        if teacher is None:
            raise UsageError("explanation consistency needs a teacher model")
        students = {name: m for name, m in loaded.items() if name != "teacher"}
        reports = compare_students(teacher, students, test, method, c["eval.top_k"], c["eval.samples"],
                                   c["slic.k"], _explainer_config(run), c["eval.denominator"])
        rows["mse"], rows["overlap"] = [], []
        for name, rep in reports.items():
            rows["mse"].append(ReportRow(name, method, "mse", rep.mse_mean, rep.n_qualifying, run.seed))
            rows["overlap"].append(ReportRow(name, method, f"sign_overlap_top{rep.k}", 100.0 * rep.overlap,
                                             rep.n_qualifying, run.seed))
        if reports:
            rep = next(iter(reports.values()))
            run.note(f"eval.{method}.qualifying", f"{rep.n_qualifying}/{rep.n_images}")
    for path in emit_report(rows, run.out):
        run.artifact(path)
    return rows


def stage_occlusion(run, teacher_path, student_path):
    teacher = load_model(_require(teacher_path, "teacher model", "--teacher"))
    student = load_model(_require(student_path, "student model", "--student"))
    c = run.cfg
    heat_dir = run.path("heatmaps")
    heat_dir.mkdir(exist_ok=True)
    summary = occlusion_similarity(teacher, student, run.split("test"), c["occlusion.samples"],
                                   c["occlusion.mask_size"], c["occlusion.stride"], c["occlusion.fill"],
                                   heat_dir, run.seed)
    rows = [ReportRow(Path(student_path).stem, "occlusion", "mse", summary.mean, len(summary.mse), run.seed)]
    for path in emit_report({"mse": rows}, run.out):
        run.artifact(path)
    return summary


def stage_reproduce(run, table):
    teacher = stage_train_teacher(run)
    students = {mode: None for mode in STUDENT_MODES}
    students["baseline"] = stage_train_student(run, "baseline")
    students["kd"] = stage_train_student(run, "kd", teacher)
    cae = stage_train_cae(run, stage_build_repr(run, teacher))
    students["xdistill"] = stage_train_student(run, "xdistill", teacher, cae)
    models = {"teacher": teacher, **students}
    if table == 2:
        return stage_evaluate(run, models)
    return stage_evaluate(run, models, method="shap")


# ---------------------------------------------------------------- argument handling

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key (repeatable); any key also works as --KEY VALUE")
    common.add_argument("--out", metavar="DIR", help="run directory (output.dir)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker processes for explain/evaluate")
    common.add_argument("--teacher", metavar="PATH", help="teacher model file (default: <out>/teacher.xmdl)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    epilog = "configuration keys:\n" + config_help()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="xdistill", description="Explanation-guided knowledge distillation.",
                                     epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True
    for verb, text in VERBS.items():
        p = sub.add_parser(verb, parents=[common], help=text, description=text, epilog=epilog, formatter_class=fmt)
        if verb == "train-student":
            p.add_argument("--mode", required=True, choices=STUDENT_MODES)
            p.add_argument("--cae", metavar="PATH", help="frozen CAE model file (required for xdistill)")
        elif verb == "explain":
            p.add_argument("--method", required=True, choices=("shap", "lime", "gradcam", "occlusion"))
            p.add_argument("--model", metavar="PATH", help="model to explain (default: the teacher)")
        elif verb == "train-cae":
            p.add_argument("--repr", metavar="PATH", help="explanation set (default: <out>/explanations.xexp)")
        elif verb == "evaluate":
            p.add_argument("--method", choices=("shap", "lime", "gradcam"),
                           help="also compare explanations against the teacher")
            p.add_argument("--student", metavar="NAME=PATH", action="append", default=[],
                           help="student model to evaluate (repeatable; default: every student_*.xmdl in <out>)")
        elif verb == "occlusion":
            p.add_argument("--student", metavar="PATH", required=True, help="student model file")
        elif verb == "reproduce":
            p.add_argument("--table", type=int, required=True, choices=(2, 4, 5))
    return parser


def _dotted_overrides(extra, parser):
    """Turn leftover ``--key value`` / ``--key=value`` pairs into config overrides."""
    out, i = [], 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            parser.error(f"unexpected argument {token!r}")
        key, _, value = token[2:].partition("=")
        if key not in CONFIG_KEYS:
            parser.error(f"unknown option {token!r}")
        if not _:
            if i + 1 >= len(extra):
                parser.error(f"option {token!r} needs a value")
            value = extra[i + 1]
            i += 1
        out.append(f"{key}={value}")
        i += 1
    return out


def effective_config(args, extra, parser):
    overrides = list(args.set) + _dotted_overrides(extra, parser)
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    return parse_config(args.config, overrides)


def dispatch(run, args):
    teacher = args.teacher or run.path("teacher.xmdl")
    if args.verb == "train-teacher":
        return stage_train_teacher(run)
    if args.verb == "build-repr":
        return stage_build_repr(run, teacher)
    if args.verb == "train-cae":
        return stage_train_cae(run, args.repr or run.path("explanations.xexp"))
    if args.verb == "train-student":
        return stage_train_student(run, args.mode, teacher, args.cae)
    if args.verb == "explain":
        return stage_explain(run, args.model or teacher, args.method)
    if args.verb == "evaluate":
        models = {"teacher": teacher}
        if args.student:
            for item in args.student:
                name, sep, path = item.partition("=")
                if not sep:
                    raise UsageError(f"--student expects NAME=PATH, got {item!r}")
                models[name] = path
        else:
            for path in sorted(run.out.glob("student_*.xmdl")):
                models[path.stem.removeprefix("student_")] = path
        return stage_evaluate(run, models, args.method)
    if args.verb == "occlusion":
        return stage_occlusion(run, teacher, args.student)
    return stage_reproduce(run, args.table)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        try:
            cfg = effective_config(args, extra, parser)
        except SystemExit as exc:
            return int(exc.code or 0)
        run = Run(args.verb, cfg, argv)
        dispatch(run, args)
    except ConfigError as exc:
        print(f"xdistill: config error: {exc}", file=sys.stderr)
        return 3
    except UsageError as exc:
        print(f"xdistill: usage error: {exc}", file=sys.stderr)
        return 2
    except (XDistillError, OSError) as exc:
        print(f"xdistill: error: {exc}", file=sys.stderr)
        return 1
    run.note("status", "ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
