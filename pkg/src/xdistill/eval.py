"""Accuracy, explanation-consistency metrics, occlusion comparison and report files.

Explanation metrics only count images that both models classify correctly,
and compare explanations made for that shared (true) class. Maps are
normalised per model by a dataset-wide constant before comparison.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xdistill.errors import DimensionError, FormatError, ParameterError, UsageError
from xdistill.explainers import ExplainerConfig, explain_for_comparison, occlusion_map
from xdistill.superpixel import (
    PatchExplanation,
    normalization_constant,
    normalize_explanation,
    render_patch_map,
    slic_segment,
)

REPORT_COLUMNS = ("model", "explainer", "metric", "value", "n", "seed")
REPORT_FILES = {"accuracy": "report_accuracy.csv", "mse": "report_mse.csv", "overlap": "report_overlap.csv"}


def evaluate_accuracy(model, dataset, batch_size=256):
    """Top-1 accuracy in percent."""
    if len(dataset) == 0:
        raise UsageError("cannot evaluate accuracy on an empty split")
    preds = model.predict(dataset.images, batch_size=batch_size)
    return 100.0 * float(np.mean(preds == dataset.labels))


def _as_map(x):
    if isinstance(x, PatchExplanation):
        return render_patch_map(x)
    return np.asarray(x, dtype=np.float64)


def explanation_mse(a, b):
    """Mean squared difference of two rendered maps (or patch explanations)."""
    if isinstance(a, PatchExplanation) and isinstance(b, PatchExplanation) \
            and a.segments.shape != b.segments.shape:
        raise DimensionError(f"segmentations differ: {a.segments.shape} vs {b.segments.shape}")
    ma, mb = _as_map(a), _as_map(b)
    if ma.shape != mb.shape:
        raise DimensionError(f"map shapes differ: {ma.shape} vs {mb.shape}")
    return float(np.mean((ma - mb) ** 2))


def both_correct(teacher_pred, student_pred, labels):
    labels = np.asarray(labels)
    return (np.asarray(teacher_pred) == labels) & (np.asarray(student_pred) == labels)


def top_k(values, k):
    """Indices of the ``k`` largest ``|values|``; earlier indices win ties."""
    return np.argsort(-np.abs(values), kind="stable")[:k]


@dataclass
class OverlapResult:
    score: float  # percentage
    agreements: int
    overlaps: int
    images: int
    k: int
    denominator: str = "overlap"


def sign_overlap_score(teacher_expls, student_expls, k=2, predictions=None, denominator="overlap"):
    """Sign agreement on the patches in both models' top-k sets, as a percentage.

    ``predictions`` is ``(teacher_pred, student_pred, labels)``; when given,
    only images both models classify correctly are scored. With
    ``denominator="overlap"`` the score is agreements over overlapping
    patches; ``"k-images"`` divides by ``k`` times the image count, so
    non-overlapping top-k slots count as failures.
    """
    if len(teacher_expls) != len(student_expls):
        raise DimensionError(f"{len(teacher_expls)} teacher vs {len(student_expls)} student explanations")
    if denominator not in ("overlap", "k-images"):
        raise ParameterError(f"unknown denominator {denominator!r}")
    keep = np.ones(len(teacher_expls), bool) if predictions is None else both_correct(*predictions)
    agree = overlap = images = 0
    for t, s, ok in zip(teacher_expls, student_expls, keep):
        if not ok:
            continue
        tv = t.values if isinstance(t, PatchExplanation) else np.asarray(t)
        sv = s.values if isinstance(s, PatchExplanation) else np.asarray(s)
        if tv.shape != sv.shape:
            raise DimensionError(f"patch counts differ: {tv.shape} vs {sv.shape}")
        if not 1 <= k <= len(tv):
            raise ParameterError(f"k={k} must lie in [1, {len(tv)}]")
        shared = np.intersect1d(top_k(tv, k), top_k(sv, k))
        agree += int(np.sum(np.sign(tv[shared]) == np.sign(sv[shared])))
        overlap += len(shared)
        images += 1
    denom = overlap if denominator == "overlap" else k * images
    score = 100.0 * agree / denom if denom else float("nan")
    return OverlapResult(score, agree, overlap, images, k, denominator)


@dataclass
class ConsistencyReport:
    method: str
    mse_mean: float
    mse_std: float
    overlap: float  # fraction in [0, 1]
    n_images: int
    n_qualifying: int
    k: int
    seed: int
    per_image_mse: list = field(default_factory=list)


def explain_set(model, images, classes, segments, method, cfg):
    return [explain_for_comparison(method, model, img, seg, int(c), cfg)
            for img, c, seg in zip(images, classes, segments)]


def compare_students(teacher, students, dataset, method="shap", k=2, n_images=500, slic_k=19, cfg=None,
                     denominator="overlap"):
    """Explanation consistency of several students against one teacher.

    Scores the first ``n_images`` images that the teacher and every student
    classify correctly, so all students are judged on the same inputs and
    the teacher is explained once. Every model explains the true class on a
    shared segmentation; each model's explanations are normalised by its own
    dataset constant and rendered before the MSE. Returns a dict of
    :class:`ConsistencyReport` keyed like ``students``.
    """
    cfg = cfg or ExplainerConfig()
    ok = np.ones(len(dataset), bool)
    for model in [teacher, *students.values()]:
        ok &= model.predict(dataset.images) == dataset.labels
    idx = np.flatnonzero(ok)[:n_images]
    images, labels = dataset.images[idx], dataset.labels[idx]
    segs = [slic_segment(img, slic_k, seed=cfg.seed) for img in images]
    t_ex = explain_set(teacher, images, labels, segs, method, cfg)
    t_scale = normalization_constant(t_ex)
    t_norm = [normalize_explanation(e, t_scale) for e in t_ex]
    reports = {}
    for name, student in students.items():
        s_ex = explain_set(student, images, labels, segs, method, cfg)
        s_scale = normalization_constant(s_ex)
        mses = [explanation_mse(a, normalize_explanation(b, s_scale)) for a, b in zip(t_norm, s_ex)]
        overlap = sign_overlap_score(t_ex, s_ex, k, denominator=denominator)
        reports[name] = ConsistencyReport(method, float(np.mean(mses)) if mses else float("nan"),
                                          float(np.std(mses)) if mses else float("nan"), overlap.score / 100.0,
                                          len(dataset), len(idx), k, cfg.seed, mses)
    return reports


def explanation_consistency(teacher, student, dataset, method="shap", k=2, n_images=500, slic_k=19,
                            cfg=None, denominator="overlap"):
    """Single-student form of :func:`compare_students`."""
    return compare_students(teacher, {"student": student}, dataset, method, k, n_images, slic_k, cfg,
                            denominator)["student"]


# ---------------------------------------------------------------- occlusion

@dataclass
class OcclusionSummary:
    mse: list
    indices: list
    files: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.mse)) if self.mse else float("nan")


def occlusion_similarity(teacher, student, dataset, n_images=30, mask_size=4, stride=4, mask_fill="gray",
                         out_dir=None, seed=0):
    """Occlusion heatmaps for both models on correctly classified images, and their MSE.

    Images are drawn with ``seed`` from those both models get right; each
    map is scaled by its own maximum absolute value before comparison.
    """
    ok = np.flatnonzero(both_correct(teacher.predict(dataset.images), student.predict(dataset.images),
                                     dataset.labels))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(ok, size=min(n_images, len(ok)), replace=False))
    summary = OcclusionSummary([], [int(i) for i in chosen])
    for i in chosen:
        img, label = dataset.images[i], int(dataset.labels[i])
        maps = [occlusion_map(m, img, label, mask_size, stride, mask_fill) for m in (teacher, student)]
        scaled = [m / (np.abs(m).max() or 1.0) for m in maps]
        summary.mse.append(float(np.mean((scaled[0] - scaled[1]) ** 2)))
        if out_dir is not None:
            for who, m in zip(("teacher", "student"), scaled):
                path = Path(out_dir) / f"occlusion_{i:05d}_{who}.ppm"
                write_ppm(path, heatmap_to_rgb(np.kron(m[0], np.ones((stride, stride)))))
                summary.files.append(str(path))
    return summary


# ---------------------------------------------------------------- images

def heatmap_to_gray(m):
    """Map ``[min, max]`` linearly onto 0..255."""
    m = np.asarray(m, dtype=np.float64)
    span = m.max() - m.min()
    return np.zeros(m.shape, np.uint8) if span == 0 else np.rint(255 * (m - m.min()) / span).astype(np.uint8)


def heatmap_to_rgb(m):
    """Diverging map for signed values in [-1, 1]: blue negative, white zero, red positive."""
    m = np.clip(np.asarray(m, dtype=np.float64), -1, 1)
    pos, neg = np.clip(m, 0, 1), np.clip(-m, 0, 1)
    rgb = np.stack([1 - neg, 1 - pos - neg, 1 - pos], axis=-1)
    return np.rint(255 * np.clip(rgb, 0, 1)).astype(np.uint8)


def write_pgm(path, gray):
    gray = np.asarray(gray, dtype=np.uint8)
    Path(path).write_bytes(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode() + gray.tobytes())


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    Path(path).write_bytes(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode() + rgb.tobytes())


def read_pnm(path):
    """Read a binary P5/P6 file written by :func:`write_pgm` / :func:`write_ppm`."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] not in (b"P5", b"P6") or parts[2] != b"255":
        raise FormatError(f"{path} is not a binary PGM/PPM with max value 255", 0)
    w, h = (int(v) for v in parts[1].split())
    channels = 3 if parts[0] == b"P6" else 1
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != w * h * channels:
        raise FormatError(f"{path}: expected {w * h * channels} pixel bytes, found {data.size}",
                          len(raw) - len(parts[3]))
    return data.reshape((h, w, 3) if channels == 3 else (h, w))


# ---------------------------------------------------------------- reports

@dataclass
class ReportRow:
    model: str
    explainer: str
    metric: str
    value: float
    n: int
    seed: int

    def cells(self):
        return [self.model, self.explainer, self.metric, repr(float(self.value)), str(self.n), str(self.seed)]


def write_report_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(row.cells() for row in rows)


def read_report_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != REPORT_COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}", 0)
        return [ReportRow(m, e, k, float(v), int(n), int(s)) for m, e, k, v, n, s in reader]


def format_table(rows):
    """Aligned plain-text rendering of report rows, in input order."""
    cells = [list(REPORT_COLUMNS)] + [[r.model, r.explainer, r.metric, f"{r.value:.6g}", str(r.n), str(r.seed)]
                                      for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in cells) + "\n"


def emit_report(reports, out_dir):
    """Write ``report_<kind>.csv`` and an aligned ``.txt`` twin for each kind in ``reports``.

    ``reports`` maps a kind (``accuracy``, ``mse``, ``overlap``) to a list of
    :class:`ReportRow`. Returns the written CSV paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, rows in reports.items():
        if kind not in REPORT_FILES:
            raise ParameterError(f"unknown report kind {kind!r}")
        path = out_dir / REPORT_FILES[kind]
        write_report_csv(rows, path)
        path.with_suffix(".txt").write_text(format_table(rows))
        written.append(path)
    return written
