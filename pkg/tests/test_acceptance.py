"""Exit criteria 1-10, run at their stated tolerances.

Each test carries a ``criterion`` marker; the conftest prints one
PASS / FAIL / BLOCKED line per criterion at the end of the session.
Criteria 1 and 2 need the MNIST IDX files; point ``XDISTILL_MNIST_DIR`` at
them (default ``data/mnist`` next to this repository). Without them the two
criteria are reported BLOCKED rather than approximated.

Run directly with ``python3 tests/test_acceptance.py``.
"""

import math
import os
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

from oracles import central_difference, exact_shapley, relative_error
from xdistill.data import (
    Dataset,
    decode_cifar_records,
    decode_idx_images,
    encode_cifar_records,
    encode_idx_images,
    encode_idx_labels,
    find_dataset_files,
    load_cifar10,
    load_dataset,
    load_mnist,
    parse_config_text,
    save_cifar10,
    save_mnist,
    synthetic_digits,
)
from xdistill.distill import (
    TrainConfig,
    build_explanation_dataset,
    student_objective,
    train_cae,
    train_student_kd,
    train_student_xdistill,
    train_teacher,
)
from xdistill.errors import ConfigError, FormatError, InvariantViolation
from xdistill.eval import compare_students, evaluate_accuracy
from xdistill.explainers import ExplainerConfig, kernel_shap
from xdistill.models import (
    FLATTEN,
    Model,
    XModel,
    act,
    build_cae,
    build_dense_autoencoder,
    build_student_mnist,
    build_teacher_mnist,
    build_xmodel,
    cae_bottleneck_width,
    conv,
    count_parameters,
    dense,
    load_model,
    pool,
    save_model,
)
from xdistill.superpixel import SegmentMap, slic_segment
from xdistill.tensor import losses, ops
from xdistill.tensor.core import Tensor, backward, precision
from xdistill.tensor.xdt import decode_tensor, encode_tensor, load_tensor, save_tensor

pytestmark = pytest.mark.acceptance

MNIST_DIR = Path(os.environ.get("XDISTILL_MNIST_DIR", Path(__file__).resolve().parents[1] / "data" / "mnist"))
SEEDS = (0, 1, 2)


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# ---------------------------------------------------------------- 1, 2: MNIST reproduction

def _mnist_or_block():
    try:
        find_dataset_files("mnist", MNIST_DIR, "train")
        find_dataset_files("mnist", MNIST_DIR, "test")
    except FileNotFoundError as exc:
        pytest.skip(f"BLOCKED: MNIST IDX files unavailable ({exc}); set XDISTILL_MNIST_DIR")


@pytest.fixture(scope="module")
def mnist_runs():
    """Teacher, frozen CAE and per-seed baseline / KD / XDistillation students on full MNIST."""
    _mnist_or_block()
    start = time.perf_counter()
    train = load_dataset("mnist", MNIST_DIR, "train")
    test = load_dataset("mnist", MNIST_DIR, "test")
    teacher, _ = train_teacher(train, build_teacher_mnist(0), TrainConfig(epochs=5, batch_size=64))
    expl = build_explanation_dataset(teacher, train, k=19, seed=0, limit=1000)
    cae, _ = train_cae(expl, build_cae("small", seed=2),
                       TrainConfig(epochs=20, batch_size=32, lr_schedule=((0, 1e-3),)))
    students = {}
    for seed in SEEDS:
        cfg = TrainConfig(epochs=5, batch_size=64, alpha=0.9, tau=1.0, lam=5e-4, seed=seed)
        baseline, _ = train_teacher(train, build_student_mnist(seed + 1), cfg)
        kd, _ = train_student_kd(teacher, build_student_mnist(seed + 1), train, cfg)
        xm = build_xmodel(build_student_mnist(seed + 1), cae, 10, seed=seed + 3)
        xd, _ = train_student_xdistill(teacher, xm, train, cfg)
        students[seed] = {"baseline": baseline, "kd": kd, "xdistill": xd}
    return {"train": train, "test": test, "teacher": teacher, "students": students,
            "seconds": time.perf_counter() - start}


@criterion(1, "MNIST accuracy table (teacher, baseline, KD, XDistillation)")
def test_criterion_1_mnist_accuracy(mnist_runs, record_property):
    test = mnist_runs["test"]
    teacher_acc = evaluate_accuracy(mnist_runs["teacher"], test)
    acc = {name: np.mean([evaluate_accuracy(runs[name], test) for runs in mnist_runs["students"].values()])
           for name in ("baseline", "kd", "xdistill")}
    record_property("teacher", round(teacher_acc, 2))
    for name, value in acc.items():
        record_property(name, round(float(value), 2))
    record_property("seconds", round(mnist_runs["seconds"]))
    assert teacher_acc >= 98.3
    assert 95.5 <= acc["baseline"] <= 98.0
    assert acc["kd"] >= acc["baseline"] - 0.2
    assert acc["xdistill"] >= acc["baseline"] - 0.2
    assert acc["baseline"] <= max(acc["kd"], acc["xdistill"])
    assert mnist_runs["seconds"] <= 2 * 3600


@criterion(2, "MNIST explanation consistency direction (XDistillation vs KD)")
def test_criterion_2_mnist_consistency(mnist_runs, record_property):
    overlap = {"kd": [], "xdistill": []}
    mse = {"kd": [], "xdistill": []}
    for seed, runs in mnist_runs["students"].items():
        reports = compare_students(mnist_runs["teacher"], {"kd": runs["kd"], "xdistill": runs["xdistill"]},
                                   mnist_runs["test"], "shap", k=2, n_images=500, slic_k=19,
                                   cfg=ExplainerConfig(seed=seed))
        for name, rep in reports.items():
            assert rep.n_qualifying == 500
            overlap[name].append(rep.overlap)
            mse[name].append(rep.mse_mean)
    o = {k: float(np.mean(v)) for k, v in overlap.items()}
    m = {k: float(np.mean(v)) for k, v in mse.items()}
    record_property("overlap", o)
    record_property("mse", m)
    assert o["xdistill"] >= o["kd"]
    assert m["xdistill"] <= m["kd"]


# ---------------------------------------------------------------- 3: KernelSHAP vs brute force

def _strip_image(rng, m, channels=1, width=3, height=4):
    labels = np.repeat(np.arange(m), width)[None, :].repeat(height, axis=0)
    image = rng.uniform(0, 1, size=(channels, height, m * width))
    return image, SegmentMap(labels, m)


def _random_classifier(rng, channels, height, width):
    """A small random CNN evaluated in float64."""
    layers = [conv(channels, 3, 3, padding=1), act("tanh"), FLATTEN, dense(3 * height * width, 4)]
    return Model("random", (channels, height, width), layers, num_classes=4, seed=int(rng.integers(1 << 31)))


def _brute_force_value(model, image, seg, class_id):
    """Coalition value by hand: absent patches take the image's per-channel mean colour."""
    fill = image.reshape(image.shape[0], -1).mean(axis=1)

    def value(mask):
        masked = image.copy()
        for p in range(seg.n_patches):
            if not mask[p]:
                for ch in range(image.shape[0]):
                    masked[ch][seg.labels == p] = fill[ch]
        logits = model(masked).data.astype(np.float64)
        e = np.exp(logits - logits.max())
        return float(e[class_id] / e.sum())

    return value


@criterion(3, "KernelSHAP equals brute-force Shapley values")
def test_criterion_3_kernel_shap_exact(record_property):
    start = time.perf_counter()
    worst = 0.0
    with precision("float64"):
        for m in (5, 8, 10):
            rng = np.random.default_rng(m)
            for _ in range(20):
                image, seg = _strip_image(rng, m, channels=int(rng.integers(1, 4)))
                model = _random_classifier(rng, *image.shape)
                class_id = int(rng.integers(4))
                value = _brute_force_value(model, image, seg, class_id)
                exact = exact_shapley(value, m)
                pe = kernel_shap(model, image, seg, class_id, n_samples=2 ** m)
                assert pe.meta["exact"]
                worst = max(worst, float(np.abs(pe.values - exact).max()))
                np.testing.assert_allclose(pe.values, exact, atol=1e-6, rtol=0)
                gap = value(np.ones(m)) - value(np.zeros(m))
                assert abs(pe.values.sum() - gap) < 1e-6
    seconds = time.perf_counter() - start
    record_property("max_abs_error", f"{worst:.1e}")
    record_property("seconds", round(seconds, 1))
    assert seconds < 60


# ---------------------------------------------------------------- 4: autodiff

def _away_from_zero(rng, shape, gap=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x) if x.ndim else x


def _distinct(rng, shape):
    """Values whose pairwise gaps exceed the finite-difference step, so max is locally smooth."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 1e-3, n)).reshape(shape)


def _probs(rng, shape):
    p = rng.uniform(0.05, 1.0, size=shape)
    return p / p.sum(axis=-1, keepdims=True)


def _softmax(z, tau=1.0):
    e = np.exp((z - z.max(axis=-1, keepdims=True)) / tau)
    return e / e.sum(axis=-1, keepdims=True)


# name -> (builder of the input arrays, function of Tensors returning a Tensor)
GRAD_CASES = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: ops.add(a, b)),
    "neg": (lambda r: [r.normal(size=(5,))], ops.neg),
    "mul": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], ops.mul),
    "square": (lambda r: [r.normal(size=(6,))], ops.square),
    "sum": (lambda r: [r.normal(size=(3, 3))], ops.sum),
    "mean": (lambda r: [r.normal(size=(4, 2))], ops.mean),
    "reshape": (lambda r: [r.normal(size=(2, 6))], lambda a: ops.reshape(a, (3, 4))),
    "flatten": (lambda r: [r.normal(size=(2, 2, 3))], ops.flatten),
    "tanh": (lambda r: [r.normal(size=(7,))], ops.tanh),
    "relu": (lambda r: [_away_from_zero(r, (8,))], ops.relu),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))], lambda a, b: ops.concat([a, b], axis=1)),
    "dense": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(2, 4)), r.normal(size=(2,))], ops.dense),
    "conv2d": (lambda r: [r.normal(size=(2, 2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=(3,))],
               lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1)),
    "conv2d_transpose": (lambda r: [r.normal(size=(1, 2, 3, 3)), r.normal(size=(2, 2, 2, 2)), r.normal(size=(2,))],
                         lambda x, w, b: ops.conv2d_transpose(x, w, b, stride=2)),
    "maxpool2d": (lambda r: [_distinct(r, (2, 4, 4))], lambda x: ops.maxpool2d(x, 2, 2)),
    "softmax_temperature": (lambda r: [r.normal(size=(2, 5))], lambda z: ops.softmax_temperature(z, 2.0)),
    "log_softmax": (lambda r: [r.normal(size=(2, 5))], lambda z: ops.log_softmax(z, 1.5)),
    "clamped_log": (lambda r: [r.uniform(0.1, 2.0, size=(6,))], ops.clamped_log),
    "abs_diff": (lambda r: [_away_from_zero(r, (6,)), np.zeros(6)], ops.abs_diff),
    "cross_entropy_loss": (lambda r: [r.normal(size=(4, 5))],
                           lambda z: losses.cross_entropy_loss(z, np.array([0, 3, 4, 1]))),
    "mae_loss": (lambda r: [_away_from_zero(r, (2, 5)), np.zeros((2, 5))], losses.mae_loss),
    "kd_loss": (lambda r: [r.normal(size=(3, 4))],
                lambda z: losses.kd_loss(_softmax(np.arange(12.0).reshape(3, 4) % 5, 2.0),
                                         ops.softmax_temperature(z, 2.0), tau=2.0)),
    "l2_penalty": (lambda r: [r.normal(size=(3, 4))], lambda w: losses.l2_penalty(w, 0.05)),
}


@criterion(4, "autodiff finite-difference checks on every differentiable op")
@pytest.mark.parametrize("name", list(GRAD_CASES))
def test_criterion_4_gradients(name, record_property):
    make, fn = GRAD_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    start = time.perf_counter()
    worst = 0.0
    with precision("float64"):
        for _ in range(50):
            arrays = [np.asarray(a, dtype=np.float64) for a in make(rng)]
            probe = rng.normal(size=np.shape(fn(*[Tensor(a) for a in arrays]).data))

            def scalar():
                return float(np.sum(fn(*[Tensor(a) for a in arrays]).data * probe))

            numeric = central_difference(scalar, arrays, step=1e-6)
            inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
            out = fn(*inputs)
            backward(ops.sum(ops.mul(out, Tensor(probe))))
            for t, g in zip(inputs, numeric):
                err = relative_error(t.grad, g)
                worst = max(worst, err)
                assert err < 1e-5, f"{name}: relative error {err:.2e}"
    record_property(name, f"{worst:.1e}")
    assert time.perf_counter() - start < 60


# ---------------------------------------------------------------- 5: loss formulas

def _ce_scalar(logits, label):
    mx = max(logits)
    return -(logits[label] - mx - math.log(sum(math.exp(v - mx) for v in logits)))


def _kd_scalar(p_t, logits, tau):
    z = [v / tau for v in logits]
    mx = max(z)
    log_norm = mx + math.log(sum(math.exp(v - mx) for v in z))
    return -tau * tau * sum(p * (v - log_norm) for p, v in zip(p_t, z))


def _tiny_xmodel(seed):
    cnn = Model("cnn", (1, 8, 8), [conv(1, 2, 3, padding=1), act("relu"), pool()], seed=seed)
    cae = build_cae("small", input_size=(8, 8), seed=seed + 1)
    cae.freeze()
    return XModel(cnn, cae, hidden_width=3, num_classes=4, seed=seed + 2)


@criterion(5, "loss formulas match scalar arithmetic (KD with tau^2, CE, MAE, full objective)")
def test_criterion_5_loss_formulas(record_property):
    rng = np.random.default_rng(5)
    worst = 0.0
    with precision("float64"):
        for _ in range(100):
            b, u = int(rng.integers(1, 5)), int(rng.integers(2, 11))
            logits = rng.normal(scale=3, size=(b, u))
            labels = rng.integers(0, u, b)
            p_t = _probs(rng, (b, u))
            tau = float(rng.uniform(1, 5))

            ce = losses.cross_entropy_loss(logits, labels).item()
            ce_ref = sum(_ce_scalar(list(logits[i]), labels[i]) for i in range(b)) / b
            kd = losses.kd_loss(p_t, ops.softmax_temperature(logits, tau), tau).item()
            kd_ref = sum(_kd_scalar(list(p_t[i]), list(logits[i]), tau) for i in range(b)) / b
            a, c = rng.normal(size=(b, u)), rng.normal(size=(b, u))
            mae = losses.mae_loss(a, c).item()
            mae_ref = sum(abs(x - y) for x, y in zip(a.ravel(), c.ravel())) / a.size
            for got, ref in ((ce, ce_ref), (kd, kd_ref), (mae, mae_ref)):
                worst = max(worst, abs(got - ref))
                assert abs(got - ref) < 1e-6

        for trial in range(100):
            xm = _tiny_xmodel(trial)
            x = rng.uniform(0, 1, size=(3, 1, 8, 8))
            y = rng.integers(0, 4, 3)
            p_t = _probs(rng, (3, 4))
            alpha, tau, lam = float(rng.uniform()), float(rng.uniform(1, 4)), float(rng.uniform(0, 0.1))
            total, parts, logits = student_objective(xm, x, y, p_t, alpha, tau, lam)
            z = logits.data
            ce_ref = sum(_ce_scalar(list(z[i]), y[i]) for i in range(3)) / 3
            kd_ref = sum(_kd_scalar(list(p_t[i]), list(z[i]), tau) for i in range(3)) / 3
            c = xm.params["concat.weight"].data
            fr_ref = lam * sum(v * v for v in c.ravel())
            ref = ce_ref + (1 - alpha) * kd_ref + fr_ref
            worst = max(worst, abs(total.item() - ref))
            assert abs(total.item() - ref) < 1e-6
            assert abs(parts["loss_fr"] - fr_ref) < 1e-6
    record_property("max_abs_error", f"{worst:.1e}")


# ---------------------------------------------------------------- 6: SLIC

def _four_connected(mask):
    """Breadth-first flood fill: True when the pixels of ``mask`` form one 4-connected component."""
    pts = list(zip(*np.nonzero(mask)))
    if not pts:
        return False
    seen = {pts[0]}
    frontier = [pts[0]]
    while frontier:
        i, j = frontier.pop()
        for ni, nj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1] and mask[ni, nj] and (ni, nj) not in seen:
                seen.add((ni, nj))
                frontier.append((ni, nj))
    return len(seen) == len(pts)


@criterion(6, "SLIC labels every pixel with connected patches and finds a two-region boundary")
def test_criterion_6_slic(record_property):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    counts = []
    for _ in range(100):
        image = rng.uniform(0, 1, size=(3, 32, 32))
        seg = slic_segment(image, k=19)
        labels = seg.labels
        assert labels.shape == (32, 32)
        assert set(np.unique(labels)) == set(range(seg.n_patches))
        assert 10 <= seg.n_patches <= 28
        for p in range(seg.n_patches):
            assert _four_connected(labels == p)
        counts.append(seg.n_patches)
    seconds = time.perf_counter() - start

    image = np.zeros((3, 32, 32))
    image[:, :, 13:] = [[[0.9]], [[0.2]], [[0.6]]]
    seg = slic_segment(image, k=2, force=True)
    assert seg.n_patches == 2
    for row in seg.labels:
        assert abs(int(np.argmax(row != row[0])) - 13) <= 1
    record_property("patch_counts", f"{min(counts)}-{max(counts)}")
    record_property("seconds", round(seconds, 1))
    assert seconds < 30


# ---------------------------------------------------------------- 7, 9: synthetic phase-2 runs

@pytest.fixture(scope="module")
def synthetic_pipeline():
    """Teacher and frozen CAE on the synthetic seven-segment digits (an MNIST stand-in)."""
    train = synthetic_digits(2000, seed=0)
    test = synthetic_digits(500, seed=1, split="test")
    teacher, _ = train_teacher(train, build_teacher_mnist(0), TrainConfig(epochs=6, batch_size=64))
    expl = build_explanation_dataset(teacher, train, k=19, seed=0, limit=150)
    cae, _ = train_cae(expl, build_cae("small", seed=2),
                       TrainConfig(epochs=10, batch_size=32, lr_schedule=((0, 1e-2),)))
    return {"train": train, "test": test, "teacher": teacher, "cae": cae}


@criterion(7, "frozen CAE is untouched by phase-2 training and gradient leaks abort")
def test_criterion_7_frozen_cae(synthetic_pipeline, tmp_path, record_property):
    p = synthetic_pipeline
    xm = build_xmodel(build_student_mnist(1), p["cae"], 10, seed=3)
    before = xm.cae.weights_hash()
    cfg = TrainConfig(epochs=3, batch_size=64, lam=5e-4)
    xm, record = train_student_xdistill(p["teacher"], xm, p["train"], cfg)
    assert xm.cae.weights_hash() == before
    assert len(record.epochs) == 3
    record_property("student_acc", round(evaluate_accuracy(xm, p["test"]), 1))

    leaky = build_xmodel(build_student_mnist(1), _file_copy(p["cae"], tmp_path / "cae.xmdl"), 10, seed=3)
    frozen_hash = leaky.cae.weights_hash()
    forward = leaky.cae.forward

    def leaking_forward(x, *args, **kwargs):
        # re-enable gradients on one CAE tensor after the pre-flight check, as a bug would
        leaky.cae.parameters()[0].requires_grad = True
        return forward(x, *args, **kwargs)

    leaky.cae.forward = leaking_forward
    with pytest.raises(InvariantViolation):
        train_student_xdistill(p["teacher"], leaky, p["train"].subset(128), cfg)
    assert leaky.cae.weights_hash() == frozen_hash


def _file_copy(model, path):
    """Independent copy of a model through its file format."""
    save_model(model, path)
    return load_model(path)


@criterion(8, "small CAE is at least 50x smaller than a dense autoencoder and bounded in [-1, 1]")
def test_criterion_8_cae_compactness(record_property):
    cae = build_cae("small", seed=0)
    width = cae_bottleneck_width(cae)
    dense_ae = build_dense_autoencoder(cae.input_shape, width)
    small, big = count_parameters(cae), count_parameters(dense_ae)
    record_property("small", small)
    record_property("dense", big)
    record_property("ratio", round(big / small, 1))
    assert big >= 50 * small
    rng = np.random.default_rng(8)
    x = np.concatenate([rng.uniform(0, 1, (16, 1, 28, 28)), np.ones((1, 1, 28, 28)), np.zeros((1, 1, 28, 28)),
                        rng.normal(scale=50, size=(4, 1, 28, 28))])
    out = cae(x).data
    assert out.shape == (len(x), 1, 28, 28)
    assert out.min() >= -1.0 and out.max() <= 1.0


@criterion(9, "lambda sweep: curves written, CNN-branch norm of c non-increasing, no NaN")
def test_criterion_9_lambda_sweep(synthetic_pipeline, tmp_path, record_property):
    p = synthetic_pipeline
    norms = []
    for lam in (0.0, 5e-4, 5e-2):
        xm = build_xmodel(build_student_mnist(1), p["cae"], 10, seed=3)
        xm, record = train_student_xdistill(p["teacher"], xm, p["train"],
                                            TrainConfig(epochs=4, batch_size=64, lam=lam))
        path = tmp_path / f"curve_lambda_{lam:g}.csv"
        record.write_csv(path)
        assert path.read_text().splitlines()[0] == "epoch,loss_cls,loss_kd,loss_fr,total,acc"
        assert len(path.read_text().splitlines()) == 5
        assert np.all(np.isfinite(record.column("total")))
        assert np.all(np.isfinite(xm.concat_weight.data))
        norms.append(float(np.linalg.norm(xm.concat_weight.data[:, xm.cnn_columns])))
    record_property("cnn_column_norms", [round(v, 4) for v in norms])
    assert norms[0] >= norms[1] >= norms[2]


# ---------------------------------------------------------------- 10: formats

def _flip(raw, pos):
    out = bytearray(raw)
    out[pos] ^= 0xFF
    return bytes(out)


@criterion(10, "byte-exact round trips and corruption rejection for every file format")
def test_criterion_10_xdt(tmp_path):
    rng = np.random.default_rng(10)
    for shape in [(), (0,), (3,), (2, 3, 4), (1, 1, 28, 28)]:
        a = rng.normal(size=shape).astype(np.float32)
        raw = encode_tensor(a)
        back, end = decode_tensor(raw)
        assert end == len(raw) and back.shape == a.shape
        assert encode_tensor(back) == raw
        save_tensor(tmp_path / "t.xdt", a)
        assert (tmp_path / "t.xdt").read_bytes() == raw
        np.testing.assert_array_equal(load_tensor(tmp_path / "t.xdt"), a)
    raw = encode_tensor(np.ones((2, 2)))
    for bad in (_flip(raw, 0), raw[:-1], raw[:6]):
        with pytest.raises(FormatError):
            decode_tensor(bad)
    (tmp_path / "t.xdt").write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        load_tensor(tmp_path / "t.xdt")


@criterion(10, "byte-exact round trips and corruption rejection for every file format")
@pytest.mark.parametrize("builder", [build_teacher_mnist, build_student_mnist, lambda seed: build_cae(seed=seed)])
def test_criterion_10_models(tmp_path, builder):
    model = builder(seed=4)
    a, b = tmp_path / "a.xmdl", tmp_path / "b.xmdl"
    save_model(model, a)
    save_model(load_model(a), b)
    assert a.read_bytes() == b.read_bytes()
    raw = a.read_bytes()
    for bad in (raw[: len(raw) // 2], raw[:-3], raw.replace(b"XMDL", b"XMDX", 1)):
        b.write_bytes(bad)
        with pytest.raises(FormatError):
            load_model(b)


@criterion(10, "byte-exact round trips and corruption rejection for every file format")
def test_criterion_10_mnist(tmp_path):
    ds = synthetic_digits(30, seed=3)
    # IDX stores bytes, so quantise first; the round trip is then byte-exact
    ds = Dataset(np.round(ds.images * 255) / 255, ds.labels)
    img, lab = tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte"
    save_mnist(ds, img, lab)
    back = load_mnist(img, lab)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_allclose(back.images, ds.images, atol=1e-7)
    assert encode_idx_images(np.round(back.images[:, 0] * 255).astype(np.uint8)) == img.read_bytes()
    assert encode_idx_labels(back.labels) == lab.read_bytes()
    raw = img.read_bytes()
    for bad, offset in ((_flip(raw, 0), 0), (raw[:-5], len(raw) - 5), (raw + b"\0", len(raw))):
        with pytest.raises(FormatError) as info:
            decode_idx_images(bad)
        assert info.value.offset == offset


@criterion(10, "byte-exact round trips and corruption rejection for every file format")
def test_criterion_10_cifar(tmp_path):
    rng = np.random.default_rng(11)
    pixels = rng.integers(0, 256, size=(7, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, 7)
    raw = encode_cifar_records(pixels, labels)
    assert len(raw) == 7 * 3073
    (tmp_path / "data_batch_1.bin").write_bytes(raw)
    ds = load_cifar10([tmp_path / "data_batch_1.bin"])
    save_cifar10(ds, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == raw
    with pytest.raises(FormatError):
        decode_cifar_records(raw[:-1])
    bad = bytearray(raw)
    bad[3073] = 10
    with pytest.raises(FormatError):
        decode_cifar_records(bytes(bad))


@criterion(10, "byte-exact round trips and corruption rejection for every file format")
def test_criterion_10_config():
    text = "seed = 7\ntrain.alpha = 0.5\ntrain.lr_schedule = 0:0.1,150:0.01,250:0.001\nslic.k = 12\n"
    cfg = parse_config_text(text)
    echoed = "\n".join(cfg.echo_lines()) + "\n"
    again = parse_config_text(echoed)
    assert again.echo_lines() == cfg.echo_lines() and again.digest() == cfg.digest()
    for bad in ("train.alpha = 1.5\n", "bogus.key = 1\n", "slic.k = many\n", "seed 7\n"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-rs"]))
