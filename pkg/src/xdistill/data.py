"""Dataset ingestion (MNIST IDX, CIFAR-10 binary), augmentation and run configuration.

Loaders are strict: wrong magic numbers, truncated payloads, count
mismatches and trailing bytes all raise :class:`FormatError` with the byte
offset where decoding stopped. Writers produce the same formats so round
trips can be checked byte for byte.
"""

import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xdistill.errors import ConfigError, FormatError, ValidationError
from xdistill.superpixel import K_RANGE

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
NUM_CLASSES = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}


@dataclass
class Dataset:
    """Images ``(N, C, H, W)`` in [0, 1] with integer labels in [0, 9]."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    checksums: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValidationError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValidationError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ValidationError("labels must lie in [0, 9]")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValidationError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, limit=0, indices=None):
        """First ``limit`` examples (0 keeps everything), or an explicit index list."""
        if indices is None:
            if not limit or limit >= len(self):
                return self
            indices = np.arange(limit)
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.split, dict(self.checksums), self.name)

    def checksum(self):
        """SHA-256 of the decoded tensors (independent of file encoding)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()

    def channel_mean(self):
        return self.images.mean(axis=(0, 2, 3))


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if str(path).endswith(".gz"):
        raw = gzip.decompress(raw)
    return raw


def _file_digest(raw):
    return hashlib.sha256(raw).hexdigest()


# ---------------------------------------------------------------- MNIST IDX

def _idx_header(raw, magic, ndims, what):
    need = 4 * (1 + ndims)
    if len(raw) < need:
        raise FormatError(f"{what}: header needs {need} bytes, file has {len(raw)}", len(raw))
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    return struct.unpack(f">{ndims}I", raw[4:need]), need


def _idx_payload(raw, start, count, what):
    end = start + count
    if len(raw) < end:
        raise FormatError(f"{what}: payload truncated, expected {count} bytes after the header", len(raw))
    if len(raw) > end:
        raise FormatError(f"{what}: {len(raw) - end} unexpected trailing bytes", end)
    return np.frombuffer(raw, dtype=np.uint8, offset=start, count=count)


def decode_idx_images(raw):
    (n, rows, cols), start = _idx_header(raw, IDX_IMAGES, 3, "IDX images")
    return _idx_payload(raw, start, n * rows * cols, "IDX images").reshape(n, 1, rows, cols)


def decode_idx_labels(raw):
    (n,), start = _idx_header(raw, IDX_LABELS, 1, "IDX labels")
    labels = _idx_payload(raw, start, n, "IDX labels")
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        raise FormatError(f"IDX labels: label {labels[bad[0]]} outside [0, 9]", start + int(bad[0]))
    return labels


def encode_idx_images(pixels):
    """``(N, 1, H, W)`` or ``(N, H, W)`` uint8 pixels as an IDX3 file."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, h, w = pixels.shape[0], pixels.shape[-2], pixels.shape[-1]
    return struct.pack(">4I", IDX_IMAGES, n, h, w) + pixels.tobytes()


def encode_idx_labels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", IDX_LABELS, len(labels)) + labels.tobytes()


def load_mnist(image_path, label_path, split="train"):
    """Read an IDX image/label pair (optionally gzipped) into a ``(N, 1, 28, 28)`` dataset."""
    img_raw, lab_raw = _read_bytes(image_path), _read_bytes(label_path)
    pixels = decode_idx_images(img_raw)
    labels = decode_idx_labels(lab_raw)
    if len(pixels) != len(labels):
        raise FormatError(f"image count {len(pixels)} does not match label count {len(labels)}", 4)
    checksums = {Path(image_path).name: _file_digest(img_raw), Path(label_path).name: _file_digest(lab_raw)}
    return Dataset(pixels.astype(np.float32) / 255.0, labels, split, checksums, "mnist")


def save_mnist(dataset, image_path, label_path):
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    Path(image_path).write_bytes(encode_idx_images(pixels))
    Path(label_path).write_bytes(encode_idx_labels(dataset.labels))


# ---------------------------------------------------------------- CIFAR-10

def decode_cifar_records(raw):
    if len(raw) % CIFAR_RECORD:
        whole = len(raw) - len(raw) % CIFAR_RECORD
        raise FormatError(f"CIFAR-10 file size {len(raw)} is not a multiple of {CIFAR_RECORD}", whole)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        raise FormatError(f"CIFAR-10 label {labels[bad[0]]} outside [0, 9]", int(bad[0]) * CIFAR_RECORD)
    return records[:, 1:].reshape(-1, 3, 32, 32), labels


def encode_cifar_records(pixels, labels):
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    return np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pixels], axis=1).tobytes()


def load_cifar10(paths, split="train"):
    """Concatenate CIFAR-10 binary batches into a ``(N, 3, 32, 32)`` dataset."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    pixels, labels, checksums = [], [], {}
    for path in paths:
        raw = _read_bytes(path)
        p, lab = decode_cifar_records(raw)
        pixels.append(p)
        labels.append(lab)
        checksums[Path(path).name] = _file_digest(raw)
    images = np.concatenate(pixels).astype(np.float32) / 255.0 if pixels else np.zeros((0, 3, 32, 32))
    return Dataset(images, np.concatenate(labels) if labels else np.zeros(0), split, checksums, "cifar10")


def save_cifar10(dataset, path):
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    Path(path).write_bytes(encode_cifar_records(pixels, dataset.labels))


def find_dataset_files(name, root, split):
    """Locate the standard file names under ``root`` (plain or ``.gz``)."""
    root = Path(root)
    names = MNIST_FILES[split] if name == "mnist" else CIFAR_FILES[split]
    found = []
    for fname in names:
        candidates = [root / fname, root / (fname + ".gz"), root / fname.replace("-idx", ".idx")]
        hit = next((c for c in candidates if c.exists()), None)
        if hit is None:
            raise FileNotFoundError(f"{name} {split} file {fname} not found under {root}")
        found.append(hit)
    return found


def load_dataset(name, root, split, limit=0, seed=0):
    """Load a split by dataset family; ``synthetic`` needs no files."""
    if name == "synthetic":
        return synthetic_digits(limit or (6000 if split == "train" else 1000), seed, split)
    files = find_dataset_files(name, root, split)
    ds = load_mnist(*files, split=split) if name == "mnist" else load_cifar10(files, split=split)
    return ds.subset(limit)


# ---------------------------------------------------------------- synthetic digits

# segment rectangles (row0, row1, col0, col1) on a 20x12 glyph box
_SEGMENTS = {
    "a": (0, 2, 0, 12), "b": (0, 10, 10, 12), "c": (10, 20, 10, 12), "d": (18, 20, 0, 12),
    "e": (10, 20, 0, 2), "f": (0, 10, 0, 2), "g": (9, 11, 0, 12),
}
_DIGIT_SEGMENTS = ("abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg")


def synthetic_digits(n, seed=0, split="train", noise=0.15):
    """Seven-segment digits on a 28x28 canvas with random shift, intensity and noise.

    A small stand-in for MNIST when the real files are unavailable; every
    image is a pure function of ``(seed, split, index)``.
    """
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = rng.integers(0, NUM_CLASSES, size=n)
    images = np.zeros((n, 1, 28, 28), dtype=np.float32)
    for i, digit in enumerate(labels):
        glyph = np.zeros((20, 12))
        for seg in _DIGIT_SEGMENTS[digit]:
            r0, r1, c0, c1 = _SEGMENTS[seg]
            glyph[r0:r1, c0:c1] = 1.0
        dy, dx = rng.integers(0, 9), rng.integers(0, 17)
        canvas = np.zeros((28, 28))
        canvas[dy:dy + 20, dx:dx + 12] = glyph * rng.uniform(0.6, 1.0)
        canvas += rng.normal(scale=noise, size=canvas.shape)
        images[i, 0] = np.clip(canvas, 0.0, 1.0)
    return Dataset(images, labels, split, {"synthetic": f"seed={seed} n={n}"}, "synthetic")


# ---------------------------------------------------------------- augmentation

def augment(image, rng, enabled=True, pad=4):
    """Random horizontal flip (p=0.5) then zero-pad by ``pad`` and crop back to size."""
    if not enabled:
        return image
    _, h, w = image.shape
    if rng.random() < 0.5:
        image = image[:, :, ::-1]
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    y, x = rng.integers(0, 2 * pad + 1, size=2)
    return np.ascontiguousarray(padded[:, y:y + h, x:x + w])


def augment_batch(images, rng, enabled=True, pad=4):
    if not enabled:
        return images
    return np.stack([augment(img, rng, True, pad) for img in images])


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class Key:
    kind: type
    default: object
    help: str
    low: float = None
    high: float = None
    choices: tuple = ()
    low_open: bool = False

    def describe(self):
        if self.choices:
            rng = "{" + ",".join(self.choices) + "}"
        elif self.kind is bool:
            rng = "{true,false}"
        elif self.low is not None or self.high is not None:
            lo = "(" if self.low_open else "["
            rng = f"{lo}{'-inf' if self.low is None else self.low}, {'inf' if self.high is None else self.high}]"
        else:
            rng = "any"
        return f"default {self.default!r}, range {rng}"


CONFIG_KEYS = {
    "seed": Key(int, 0, "master seed for initialisation, shuffling and explainers", 0),
    "output.dir": Key(str, "runs/default", "run directory; every artifact and manifest.txt go here"),
    "run.workers": Key(int, 1, "worker processes for the explain and evaluate stages", 1),
    "data.dataset": Key(str, "mnist", "dataset family", choices=("mnist", "cifar10", "synthetic")),
    "data.root": Key(str, "data", "directory holding the raw IDX or CIFAR-10 binary files"),
    "data.limit": Key(int, 0, "cap on examples per split (0 = no cap)", 0),
    "data.augment": Key(bool, False, "random flip and pad-4 crop on the training split"),
    "train.epochs": Key(int, 50, "epochs for teacher and student training", 1),
    "train.batch_size": Key(int, 64, "minibatch size", 1),
    "train.optimizer": Key(str, "adam", "update rule", choices=("adam", "sgd")),
    "train.lr": Key(float, 1e-3, "learning rate when no schedule is given", 0, low_open=True),
    "train.lr_schedule": Key(str, "", "comma list of epoch:lr pairs, e.g. 0:0.1,30:0.01 (empty = constant)"),
    "train.momentum": Key(float, 0.9, "SGD momentum", 0, 1),
    "train.alpha": Key(float, 0.9, "KD mixing weight; the KD term is scaled by 1 - alpha", 0, 1),
    "train.tau": Key(float, 1.0, "softmax temperature for distillation", 1),
    "train.lambda": Key(float, 5e-4, "L2 penalty on the concatenation layer weights", 0),
    "model.hidden_width": Key(int, 10, "width of the concatenation dense layer", 1),
    "cae.variant": Key(str, "small", "CAE architecture", choices=("small", "large")),
    "cae.epochs": Key(int, 20, "CAE training epochs", 1),
    "cae.batch_size": Key(int, 32, "CAE minibatch size", 1),
    "cae.lr": Key(float, 1e-3, "CAE Adam learning rate", 0, low_open=True),
    "slic.k": Key(int, 19, f"target superpixel count (range {list(K_RANGE)} unless slic.force)", 1),
    "slic.force": Key(bool, False, "allow slic.k outside the supported range"),
    "slic.compactness": Key(float, 0.0, "SLIC compactness (0 = automatic)", 0),
    "slic.iterations": Key(int, 10, "SLIC k-means iterations", 1),
    "explain.method": Key(str, "shap", "explainer", choices=("shap", "lime", "gradcam")),
    "explain.n_samples": Key(int, 0, "KernelSHAP coalition budget (0 = 64 per patch)", 0),
    "explain.baseline": Key(str, "mean-color", "fill for absent patches", choices=("mean-color", "zeros")),
    "explain.limit": Key(int, 500, "number of training images explained for the CAE targets", 1),
    "explain.lime_samples": Key(int, 1000, "LIME perturbation count", 1),
    "eval.top_k": Key(int, 2, "top-k patches for the sign-overlap score", 1),
    "eval.denominator": Key(str, "overlap", "sign-overlap normalisation", choices=("overlap", "k-images")),
    "eval.samples": Key(int, 500, "test images compared in explanation metrics", 1),
    "occlusion.mask_size": Key(int, 4, "occlusion window side", 1),
    "occlusion.stride": Key(int, 4, "occlusion window stride", 1),
    "occlusion.fill": Key(str, "gray", "occlusion fill", choices=("gray", "mean")),
    "occlusion.samples": Key(int, 30, "images in the occlusion comparison", 1),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class Config:
    """Validated flat key/value configuration with documented defaults."""

    def __init__(self, values=None, sources=None):
        self.values = {k: spec.default for k, spec in CONFIG_KEYS.items()}
        self.sources = {k: "default" for k in CONFIG_KEYS}
        self.values.update(values or {})
        self.sources.update(sources or {})

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def echo_lines(self):
        """``key = value`` lines for the run manifest, one per key."""
        return [f"{k} = {_format_value(v)}" for k, v in sorted(self.values.items())]

    def digest(self):
        return hashlib.sha256("\n".join(self.echo_lines()).encode()).hexdigest()[:16]

    def lr_schedule(self):
        text = self["train.lr_schedule"]
        if not text:
            return [(0, self["train.lr"])]
        return _parse_schedule(text, "train.lr_schedule", None)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_schedule(text, key, line):
    pairs = []
    try:
        for part in text.split(","):
            epoch, lr = part.split(":")
            pairs.append((int(epoch), float(lr)))
    except ValueError:
        raise ConfigError(f"cannot parse schedule {text!r}; expected epoch:lr pairs", key, line) from None
    epochs = [e for e, _ in pairs]
    if epochs[0] != 0 or any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise ConfigError("schedule epochs must start at 0 and be strictly increasing", key, line)
    if any(lr <= 0 for _, lr in pairs):
        raise ConfigError("schedule learning rates must be positive", key, line)
    return pairs


def parse_value(key, text, line=None):
    """Convert and range-check one raw value for ``key``."""
    if key not in CONFIG_KEYS:
        raise ConfigError("unknown configuration key", key, line)
    spec = CONFIG_KEYS[key]
    text = text.strip()
    if spec.kind is bool:
        if text.lower() not in _TRUE | _FALSE:
            raise ConfigError(f"expected a boolean, got {text!r}", key, line)
        return text.lower() in _TRUE
    try:
        value = spec.kind(text) if spec.kind is not int else int(text, 10)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {spec.kind.__name__}", key, line) from None
    if spec.choices and value not in spec.choices:
        raise ConfigError(f"{value!r} is not one of {list(spec.choices)}", key, line)
    if spec.kind in (int, float):
        if not np.isfinite(value):
            raise ConfigError("value must be finite", key, line)
        too_low = spec.low is not None and (value <= spec.low if spec.low_open else value < spec.low)
        too_high = spec.high is not None and value > spec.high
        if too_low or too_high:
            raise ConfigError(f"value {value} outside {spec.describe().split('range ')[1]}", key, line)
    if key == "train.lr_schedule" and value:
        _parse_schedule(value, key, line)
    return value


def parse_config_text(text, overrides=(), origin="<config>"):
    values, sources, lines = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"expected 'key = value', got {content!r}", None, lineno)
        key, value = (s.strip() for s in content.split("=", 1))
        values[key] = parse_value(key, value, lineno)
        sources[key] = f"{origin}:{lineno}"
        lines[key] = lineno
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        values[key] = parse_value(key, value)
        sources[key] = "override"
        lines.pop(key, None)
    cfg = Config(values, sources)
    k = cfg["slic.k"]
    if not cfg["slic.force"] and not K_RANGE[0] <= k <= K_RANGE[1]:
        raise ConfigError(f"slic.k = {k} outside {list(K_RANGE)}; set slic.force = true to override",
                          "slic.k", lines.get("slic.k"))
    return cfg


def parse_config(path=None, overrides=()):
    """Read a ``key = value`` file (``#`` comments) and apply ``key=value`` overrides on top."""
    if path is None:
        return parse_config_text("", overrides)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path} is not valid UTF-8") from exc
    return parse_config_text(text, overrides, str(path))


def config_help():
    """One line per configuration key with its default and range."""
    width = max(len(k) for k in CONFIG_KEYS)
    return "\n".join(f"  {k:<{width}}  {spec.help}; {spec.describe()}" for k, spec in CONFIG_KEYS.items())
