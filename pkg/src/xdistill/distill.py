"""Training: teacher, KD student, CAE explanation approximator and the fused XDistillation student.

Every trainer shares one minibatch loop. A loss function maps a batch to a
total loss tensor plus its logged components; the loop handles shuffling,
the learning-rate schedule, divergence checks and per-epoch metrics.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xdistill.data import augment_batch
from xdistill.errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FormatError,
    InvariantViolation,
    UsageError,
    XDistillError,
)
from xdistill.explainers import kernel_shap
from xdistill.superpixel import (
    SegmentMap,
    aggregate_attributions,
    normalization_constant,
    normalize_explanation,
    render_patch_map,
    slic_segment,
)
from xdistill.tensor import ops
from xdistill.tensor.core import Tensor, backward, no_grad
from xdistill.tensor.losses import cross_entropy_loss, kd_loss, l2_penalty, mae_loss
from xdistill.tensor.optim import Optimizer
from xdistill.tensor.xdt import decode_tensor, encode_tensor

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "loss_cls", "loss_kd", "loss_fr", "total", "acc")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    optimizer: str = "adam"
    lr_schedule: tuple = ((0, 1e-3),)
    momentum: float = 0.9
    alpha: float = 0.9
    tau: float = 1.0
    lam: float = 5e-4
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        self.lr_schedule = tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        self.validate()

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", "train.alpha")
        if self.tau < 1.0:
            raise ConfigError(f"tau must be >= 1, got {self.tau}", "train.tau")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}", "train.lambda")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive", "train.epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "train.optimizer")
        starts = [e for e, _ in self.lr_schedule]
        if not starts or starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError(f"schedule epochs must start at 0 and increase strictly, got {starts}",
                              "train.lr_schedule")

    def lr_at(self, epoch):
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr

    @classmethod
    def from_config(cls, cfg, **changes):
        kwargs = dict(epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
                      optimizer=cfg["train.optimizer"], lr_schedule=cfg.lr_schedule(),
                      momentum=cfg["train.momentum"], alpha=cfg["train.alpha"], tau=cfg["train.tau"],
                      lam=cfg["train.lambda"], seed=cfg["seed"], augment=cfg["data.augment"])
        kwargs.update(changes)
        return cls(**kwargs)


@dataclass
class TrainLog:
    """Per-epoch metric rows plus every step's loss components."""

    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    initial_loss: float = float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRIC_COLUMNS)
            for row in self.epochs:
                writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])

    def column(self, name):
        return np.array([row[name] for row in self.epochs])


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snapshot):
    for p, data in zip(params, snapshot):
        p.data[...] = data


def _fit(model, params, batch_loss, images, labels, cfg, on_step=None):
    """Shared minibatch loop.

    ``batch_loss(idx, x, y)`` returns ``(total, components, n_correct)`` where
    ``components`` maps ``loss_cls``/``loss_kd``/``loss_fr`` to floats and
    ``n_correct`` is the batch's correct-prediction count (None for regressors).
    """
    opt = Optimizer(params, cfg.optimizer, cfg.lr_at(0), momentum=cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    record = TrainLog()
    good = _snapshot(opt.params)
    n = len(labels)
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr_at(epoch - 1)
        order = rng.permutation(n)
        sums = dict.fromkeys(METRIC_COLUMNS[1:5], 0.0)
        correct = None
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = augment_batch(images[idx], aug_rng, cfg.augment)
            opt.zero_grad()
            total, parts, hits = batch_loss(idx, x, labels[idx])
            value = float(total.item())
            if not np.isfinite(value):
                _restore(opt.params, good)
                raise DivergenceError(f"non-finite loss at epoch {epoch}; restored epoch {epoch - 1} weights",
                                      model, epoch - 1)
            if np.isnan(record.initial_loss):
                record.initial_loss = value
            backward(total)
            if on_step is not None:
                on_step()
            opt.step()
            step = dict(parts, total=value)
            record.steps.append(step)
            for key in sums:
                sums[key] += step[key] * len(idx)
            if hits is not None:
                correct = (correct or 0) + hits
        acc = float("nan") if correct is None else 100.0 * correct / n
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "acc": acc}
        record.epochs.append(row)
        good = _snapshot(opt.params)
        log.info("%s epoch %d: total %.4f acc %.2f", getattr(model, "name", "model"), epoch, row["total"],
                 row["acc"])
    return record


def _hits(logits, y):
    return int((logits.data.argmax(axis=1) == y).sum())


def train_teacher(dataset, model, cfg):
    """Supervised cross-entropy training. Returns ``(model, log)``."""
    def batch_loss(idx, x, y):
        logits = model(x)
        loss = cross_entropy_loss(logits, y)
        return loss, {"loss_cls": loss.item(), "loss_kd": 0.0, "loss_fr": 0.0}, _hits(logits, y)

    return model, _fit(model, model.parameters(), batch_loss, dataset.images, dataset.labels, cfg)


def teacher_probabilities(teacher, images, tau=1.0, batch_size=256):
    """Tempered teacher probabilities, computed once since the teacher is frozen."""
    return teacher.predict_proba(images, batch_size=batch_size, tau=tau)


def distillation_loss(logits, labels, teacher_probs, alpha, tau):
    """``L_cls + (1 - alpha) * L_KD`` and its two components."""
    ce = cross_entropy_loss(logits, labels)
    kd = kd_loss(teacher_probs, ops.softmax_temperature(logits, tau), tau)
    return ops.add(ce, ops.mul(kd, 1.0 - alpha)), ce, kd


def student_objective(model, x, y, teacher_probs, alpha, tau, lam=None):
    """One batch of ``L_cls + (1 - alpha) * L_KD [+ lambda * ||c||^2]``.

    The penalty is added only when ``lam`` is given, and reads nothing but
    ``model.concat_weight``. Returns ``(total, components, logits)``; the
    logged ``loss_kd`` is the weighted term so the components sum to the total.
    """
    logits = model(x)
    total, ce, kd = distillation_loss(logits, y, teacher_probs, alpha, tau)
    parts = {"loss_cls": ce.item(), "loss_kd": (1.0 - alpha) * kd.item(), "loss_fr": 0.0}
    if lam is not None:
        fr = l2_penalty(model.concat_weight, lam)
        total = ops.add(total, fr)
        parts["loss_fr"] = fr.item()
    return total, parts, logits


def _kd_batch_loss(student, teacher, dataset, cfg, lam=None):
    cached = None if cfg.augment else teacher_probabilities(teacher, dataset.images, cfg.tau)

    def batch_loss(idx, x, y):
        probs = cached[idx] if cached is not None else teacher_probabilities(teacher, x, cfg.tau)
        total, parts, logits = student_objective(student, x, y, probs, cfg.alpha, cfg.tau, lam)
        return total, parts, _hits(logits, y)

    return batch_loss


def train_student_kd(teacher, student, dataset, cfg):
    """Minimise ``L_cls + (1 - alpha) * L_KD``. Returns ``(student, log)``.

    """
    cfg.validate()
    batch_loss = _kd_batch_loss(student, teacher, dataset, cfg)
    return student, _fit(student, student.parameters(), batch_loss, dataset.images, dataset.labels, cfg)


def train_student_xdistill(teacher, xmodel, dataset, cfg):
    """Minimise ``L_cls + (1 - alpha) * L_KD + lambda * ||c||^2`` with the CAE frozen.

    ``c`` is the concatenation layer's weight matrix and nothing else is
    penalised. Any gradient reaching the CAE, or any change to its weights,
    raises :class:`InvariantViolation`. Returns ``(xmodel, log)``.
    """
    cfg.validate()
    cae = xmodel.cae
    if not cae.frozen or any(p.requires_grad for p in cae.parameters()):
        raise UsageError("the CAE branch must be frozen before distillation training")
    before = cae.weights_hash()

    def check_cae():
        for name, p in cae.named_parameters():
            if p.grad is not None and np.any(p.grad != 0):
                raise InvariantViolation(f"gradient reached frozen CAE parameter {name}")

    batch_loss = _kd_batch_loss(xmodel, teacher, dataset, cfg, cfg.lam)
    record = _fit(xmodel, xmodel.parameters(), batch_loss, dataset.images, dataset.labels, cfg, check_cae)
    if cae.weights_hash() != before:
        raise InvariantViolation("frozen CAE weights changed during distillation training")
    return xmodel, record


def concat_features(x, y):
    """Stack row blocks ``x`` (n, g) and ``y`` (m, g) into (n + m, g), ``x`` first."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=x.dtype))
    if x.shape[1:] != y.shape[1:]:
        raise DimensionError(f"cannot concatenate blocks of width {x.shape[1:]} and {y.shape[1:]}")
    return ops.concat([x, y], axis=0)


# ---------------------------------------------------------------- phase 1

@dataclass
class ExplanationDataset:
    """Images paired with normalised, rendered teacher explanations."""

    ids: np.ndarray
    images: np.ndarray
    targets: np.ndarray  # (N, 1, H, W) in [-1, 1]
    segments: np.ndarray  # (N, H, W) integer labels
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def to_bytes(self):
        """Deterministic serialisation: a manifest header followed by XDT1 tensors."""
        head = "\n".join(f"{k}={v}" for k, v in sorted(self.manifest.items())).encode()
        parts = [b"XEXP", len(head).to_bytes(4, "little"), head]
        for array in (self.ids, self.images, self.targets, self.segments):
            parts.append(encode_tensor(np.asarray(array, dtype=np.float32)))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != b"XEXP":
            raise FormatError("not an explanation dataset file", 0)
        n = int.from_bytes(buf[4:8], "little")
        head = buf[8:8 + n].decode()
        manifest = dict(line.split("=", 1) for line in head.splitlines() if line)
        offset = 8 + n
        arrays = []
        for _ in range(4):
            a, offset = decode_tensor(buf, offset)
            arrays.append(a)
        if offset != len(buf):
            raise FormatError("trailing bytes after explanation tensors", offset)
        ids, images, targets, segs = arrays
        return cls(ids.astype(np.int64), images, targets, np.rint(segs).astype(np.int64), manifest)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def explain_image(teacher, image, class_id, k=19, seed=0, n_samples=None, baseline="mean-color",
                  channel_mean=None, compactness=None, iterations=10, force=False):
    """Segment ``image`` and compute the teacher's per-patch SHAP values for ``class_id``."""
    seg = slic_segment(image, k, compactness=compactness, iterations=iterations, seed=seed, force=force)
    return kernel_shap(teacher, image, seg, class_id, baseline=baseline, n_samples=n_samples, seed=seed,
                       channel_mean=channel_mean)


def _explain_job(args):
    teacher, image, class_id, kwargs = args
    try:
        return explain_image(teacher, image, class_id, **kwargs), None
    except XDistillError as exc:
        return None, str(exc)


def map_images(job, items, workers=1):
    """Apply ``job`` to each item, in order, optionally in worker processes."""
    if workers <= 1:
        return [job(item) for item in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, items, chunksize=max(1, len(items) // (4 * workers))))


def build_explanation_dataset(teacher, dataset, k=19, seed=0, n_samples=None, baseline="mean-color",
                              limit=None, workers=1, compactness=None, force=False):
    """Teacher SHAP explanations, normalised to [-1, 1] and rendered as CAE targets.

    Each image uses seed ``seed + index`` so results do not depend on the
    worker count. Images whose explanation fails are logged and skipped.
    """
    images = dataset.images[:limit] if limit else dataset.images
    preds = teacher.predict(images)
    mean = dataset.channel_mean() if baseline == "mean-color" and images.shape[1] == 3 else None
    kwargs = [dict(k=k, seed=seed + i, n_samples=n_samples, baseline=baseline, channel_mean=mean,
                   compactness=compactness, force=force) for i in range(len(images))]
    results = map_images(_explain_job, [(teacher, img, int(c), kw) for img, c, kw in
                                         zip(images, preds, kwargs)], workers)
    kept, pes = [], []
    for i, (pe, err) in enumerate(results):
        if pe is None:
            log.warning("explanation of image %d skipped: %s", i, err)
            continue
        kept.append(i)
        pes.append(pe)
    scale = normalization_constant(pes)
    targets = np.stack([render_patch_map(normalize_explanation(pe, scale)) for pe in pes]).astype(np.float32) \
        if pes else np.zeros((0, 1) + images.shape[2:], dtype=np.float32)
    segments = np.stack([pe.segments.labels for pe in pes]) if pes else np.zeros((0,) + images.shape[2:])
    manifest = {"explainer": "shap", "seed": seed, "k": k, "n_samples": n_samples or "auto",
                "baseline": baseline, "normalization": repr(scale), "explained": len(pes),
                "skipped": len(images) - len(pes)}
    return ExplanationDataset(np.array(kept), images[kept], targets, segments, manifest)


def segment_maps(expl_ds):
    return [SegmentMap(labels, int(labels.max()) + 1) for labels in expl_ds.segments]


def patch_explanations_from_targets(expl_ds):
    """Recover per-patch values from rendered targets (each patch is constant)."""
    out = []
    for target, seg in zip(expl_ds.targets, segment_maps(expl_ds)):
        pe = aggregate_attributions(target, seg)
        pe.values = pe.values / seg.sizes()
        out.append(pe)
    return out


# ---------------------------------------------------------------- CAE

def cae_mae(cae, images, targets, batch_size=256):
    total = 0.0
    with no_grad():
        for s in range(0, len(images), batch_size):
            out = cae(images[s:s + batch_size])
            total += float(np.abs(out.data - targets[s:s + batch_size]).sum())
    return total / max(targets.size, 1)


def train_cae(expl_ds, cae, cfg):
    """Fit the CAE so that ``cae(image)`` approximates its rendered teacher explanation (L1 loss).

    Returns ``(cae, log)`` with the CAE frozen. ``log.initial_loss`` is the
    MAE over the whole set before the first update.
    """
    if len(expl_ds) == 0:
        raise UsageError("explanation dataset is empty")
    out_shape = (len(expl_ds),) + tuple(cae.shape_trace(expl_ds.images.shape[1:])[-1])
    if out_shape != expl_ds.targets.shape:
        raise DimensionError(f"CAE output {out_shape} does not match targets {expl_ds.targets.shape}")
    if cae.frozen:
        raise UsageError("CAE is already frozen")
    targets = expl_ds.targets.astype(np.float32)
    initial = cae_mae(cae, expl_ds.images, targets)

    def batch_loss(idx, x, y):
        out = cae(x)
        loss = mae_loss(out, targets[idx])
        return loss, {"loss_cls": loss.item(), "loss_kd": 0.0, "loss_fr": 0.0}, None

    cfg = TrainConfig(**{**cfg.__dict__, "optimizer": "adam", "augment": False})
    record = _fit(cae, cae.parameters(), batch_loss, expl_ds.images, np.zeros(len(expl_ds), int), cfg)
    record.initial_loss = initial
    return cae.freeze(), record
