"""Declarative network architectures and the XMDL model file format.

A :class:`Model` is an ordered list of :class:`LayerSpec` plus named
parameter tensors. Builders exist for the MNIST teacher (LeNet5), the
compact student, the two convolutional autoencoders and a reduced VGG
family for CIFAR-scale runs. :class:`XModel` fuses a student CNN branch
with a frozen CAE branch through a single concatenation dense layer.

Model file layout::

    b"XMDL" | u32 version | u32 descriptor length | UTF-8 descriptor | XDT1 tensors...

The descriptor is a canonical line-oriented text; tensors follow in the
order its ``param`` lines list them.
"""

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from xdistill.errors import DimensionError, FormatError, ParameterError
from xdistill.tensor import ops
from xdistill.tensor.core import Tensor, get_default_dtype, no_grad
from xdistill.tensor.xdt import decode_tensor, encode_tensor

MODEL_MAGIC = b"XMDL"
MODEL_VERSION = 1

LAYER_KINDS = ("conv", "convT", "maxpool", "dense", "activation", "flatten", "reshape")

# (conv width, ...) of the two autoencoders; chosen so the parameter counts
# land on 1,077 and 198,796 for single-channel and RGB inputs respectively.
SMALL_CAE_WIDTHS = (16, 4, 16)
LARGE_CAE_WIDTHS = (12, 24, 56, 81)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    fn: str = ""
    shape: tuple = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")

    def param_shapes(self):
        if self.kind == "conv":
            return {"weight": (self.out_channels, self.in_channels, self.kernel, self.kernel),
                    "bias": (self.out_channels,)}
        if self.kind == "convT":
            return {"weight": (self.in_channels, self.out_channels, self.kernel, self.kernel),
                    "bias": (self.out_channels,)}
        if self.kind == "dense":
            return {"weight": (self.out_channels, self.in_channels), "bias": (self.out_channels,)}
        return {}

    def to_text(self):
        if self.kind in ("conv", "convT"):
            return (f"{self.kind} in={self.in_channels} out={self.out_channels} "
                    f"k={self.kernel} s={self.stride} p={self.padding}")
        if self.kind == "maxpool":
            return f"maxpool k={self.kernel} s={self.stride}"
        if self.kind == "dense":
            return f"dense in={self.in_channels} out={self.out_channels}"
        if self.kind == "activation":
            return f"activation fn={self.fn}"
        if self.kind == "reshape":
            return "reshape shape=" + ",".join(str(d) for d in self.shape)
        return "flatten"

    @classmethod
    def from_text(cls, text):
        kind, *fields = text.split()
        kw = {}
        for item in fields:
            key, _, value = item.partition("=")
            if key == "fn":
                kw["fn"] = value
            elif key == "shape":
                kw["shape"] = tuple(int(v) for v in value.split(","))
            else:
                name = {"in": "in_channels", "out": "out_channels", "k": "kernel",
                        "s": "stride", "p": "padding"}[key]
                kw[name] = int(value)
        return cls(kind, **kw)


def conv(cin, cout, k, stride=1, padding=0):
    return LayerSpec("conv", cin, cout, k, stride, padding)


def convT(cin, cout, k, stride=1, padding=0):
    return LayerSpec("convT", cin, cout, k, stride, padding)


def pool(k=2, stride=2):
    return LayerSpec("maxpool", kernel=k, stride=stride)


def dense(fin, fout):
    return LayerSpec("dense", fin, fout)


def act(fn):
    return LayerSpec("activation", fn=fn)


FLATTEN = LayerSpec("flatten")


def output_shape(spec, shape):
    """Shape of one sample after ``spec``; raises DimensionError if incompatible."""
    if spec.kind in ("conv", "convT", "maxpool"):
        if len(shape) != 3:
            raise DimensionError(f"{spec.to_text()} needs (C,H,W) input, got {shape}")
        c, h, w = shape
    if spec.kind == "conv":
        if c != spec.in_channels:
            raise DimensionError(f"{spec.to_text()} got {c} input channels")
        ho = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
        wo = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
        if ho <= 0 or wo <= 0:
            raise DimensionError(f"{spec.to_text()} on {shape} gives empty output")
        return (spec.out_channels, ho, wo)
    if spec.kind == "convT":
        if c != spec.in_channels:
            raise DimensionError(f"{spec.to_text()} got {c} input channels")
        ho = (h - 1) * spec.stride - 2 * spec.padding + spec.kernel
        wo = (w - 1) * spec.stride - 2 * spec.padding + spec.kernel
        if ho <= 0 or wo <= 0:
            raise DimensionError(f"{spec.to_text()} on {shape} gives empty output")
        return (spec.out_channels, ho, wo)
    if spec.kind == "maxpool":
        if spec.kernel > h or spec.kernel > w:
            raise DimensionError(f"pool window {spec.kernel} larger than {h}x{w}")
        return (c, (h - spec.kernel) // spec.stride + 1, (w - spec.kernel) // spec.stride + 1)
    if spec.kind == "dense":
        if shape != (spec.in_channels,):
            raise DimensionError(f"{spec.to_text()} got input shape {shape}")
        return (spec.out_channels,)
    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    if spec.kind == "reshape":
        if int(np.prod(shape)) != int(np.prod(spec.shape)):
            raise DimensionError(f"cannot reshape {shape} to {spec.shape}")
        return tuple(spec.shape)
    return shape


class Model:
    """Sequential network: ordered layer specs with named parameters (``"<idx>.weight"``)."""

    def __init__(self, name, input_shape, layers, num_classes=0, seed=0, init=True):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.num_classes = num_classes
        self.seed = seed
        self.frozen = False
        self.params = {}
        self.shape_trace()
        if init:
            self.init_params(seed)

    def shape_trace(self, input_shape=None):
        """Symbolic shape pass; returns per-layer output shapes."""
        shape = tuple(input_shape or self.input_shape)
        shapes = []
        for spec in self.layers:
            shape = output_shape(spec, shape)
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self):
        return self.shape_trace()[-1]

    def init_params(self, seed):
        """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        rng = np.random.default_rng(seed)
        dtype = get_default_dtype()
        self.params = {}
        for idx, spec in enumerate(self.layers):
            shapes = spec.param_shapes()
            if not shapes:
                continue
            w_shape = shapes["weight"]
            fan_in = int(np.prod(w_shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            for pname, shape in shapes.items():
                data = rng.uniform(-bound, bound, size=shape).astype(dtype)
                self.params[f"{idx}.{pname}"] = Tensor(data, requires_grad=True, name=f"{idx}.{pname}")

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def freeze(self):
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def weights_hash(self):
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def check_input(self, shape):
        if tuple(shape) != self.input_shape:
            self.shape_trace(shape)

    def forward(self, x, trace=False):
        """Run the network on ``(N, C, H, W)`` input (or one ``(C, H, W)`` image).

        With ``trace=True`` also returns the list of every layer's output tensor.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        single = x.ndim == len(self.input_shape)
        if single:
            x = ops.reshape(x, (1,) + x.shape)
        outputs = []
        for idx, spec in enumerate(self.layers):
            x = self._apply(idx, spec, x)
            outputs.append(x)
        if single:
            x = ops.reshape(x, x.shape[1:])
        return (x, outputs) if trace else x

    __call__ = forward

    def _apply(self, idx, spec, x):
        kind = spec.kind
        if kind == "conv":
            return ops.conv2d(x, self.params[f"{idx}.weight"], self.params[f"{idx}.bias"],
                              spec.stride, spec.padding)
        if kind == "convT":
            return ops.conv2d_transpose(x, self.params[f"{idx}.weight"], self.params[f"{idx}.bias"],
                                        spec.stride, spec.padding)
        if kind == "maxpool":
            return ops.maxpool2d(x, spec.kernel, spec.stride)
        if kind == "dense":
            return ops.dense(x, self.params[f"{idx}.weight"], self.params[f"{idx}.bias"])
        if kind == "activation":
            return ops.activation(x, spec.fn)
        if kind == "flatten":
            return ops.flatten(x)
        return ops.reshape(x, (x.shape[0],) + tuple(spec.shape))

    def last_conv_index(self):
        """Index of the layer whose output GradCAM reads (activation after the last conv, if any)."""
        conv_idx = [i for i, s in enumerate(self.layers) if s.kind == "conv"]
        if not conv_idx:
            return None
        i = conv_idx[-1]
        if i + 1 < len(self.layers) and self.layers[i + 1].kind == "activation":
            return i + 1
        return i

    def predict_proba(self, images, batch_size=256, tau=1.0):
        """Class probabilities for a batch of images, without recording a graph."""
        images = np.asarray(images)
        out = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                logits = self.forward(images[start:start + batch_size])
                out.append(ops.softmax_temperature(logits, tau).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.num_classes))

    def predict(self, images, batch_size=256):
        return self.predict_proba(images, batch_size).argmax(axis=1)

    def descriptor_lines(self):
        lines = [
            "kind model",
            f"name {self.name}",
            "input " + " ".join(str(d) for d in self.input_shape),
            f"classes {self.num_classes}",
            f"seed {self.seed}",
            f"frozen {int(self.frozen)}",
        ]
        lines += ["layer " + spec.to_text() for spec in self.layers]
        lines += [f"param {n} " + " ".join(str(d) for d in p.shape) for n, p in self.params.items()]
        return lines

    def __repr__(self):
        return f"Model({self.name!r}, input={self.input_shape}, params={count_parameters(self)})"


class XModel:
    """Student CNN branch and frozen CAE branch fused by one concatenation layer.

    ``forward(x) = head(c(cat(flatten(cnn(x)), flatten(cae(x)))))``.
    ``c`` is the concatenation dense layer; its first ``cnn_width`` columns
    read the CNN branch and the rest read the CAE branch.
    """

    def __init__(self, cnn, cae, hidden_width, num_classes=10, seed=0, init=True):
        if cnn.input_shape != cae.input_shape:
            raise DimensionError(f"branch input shapes differ: {cnn.input_shape} vs {cae.input_shape}")
        self.name = "xmodel"
        self.cnn = cnn
        self.cae = cae
        self.hidden_width = hidden_width
        self.num_classes = num_classes
        self.seed = seed
        self.input_shape = cnn.input_shape
        self.cnn_width = int(np.prod(cnn.output_shape))
        self.cae_width = int(np.prod(cae.output_shape))
        self.params = {}
        if init:
            rng = np.random.default_rng(seed)
            dtype = get_default_dtype()
            shapes = [("concat.weight", (hidden_width, self.concat_width)), ("concat.bias", (hidden_width,)),
                      ("head.weight", (num_classes, hidden_width)), ("head.bias", (num_classes,))]
            for name, shape in shapes:
                fan_in = self.concat_width if name.startswith("concat") else hidden_width
                bound = 1.0 / np.sqrt(fan_in)
                self.params[name] = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                                           requires_grad=True, name=name)

    @property
    def concat_width(self):
        return self.cnn_width + self.cae_width

    @property
    def cnn_columns(self):
        return slice(0, self.cnn_width)

    @property
    def cae_columns(self):
        return slice(self.cnn_width, self.concat_width)

    @property
    def concat_weight(self):
        return self.params["concat.weight"]

    def parameters(self):
        """Trainable parameters: CNN branch and fusion head (the CAE is excluded)."""
        return self.cnn.parameters() + list(self.params.values())

    def all_parameters(self):
        return self.cnn.parameters() + self.cae.parameters() + list(self.params.values())

    @property
    def layers(self):
        return self.cnn.layers

    def features(self, x):
        f = ops.flatten(self.cnn.forward(x))
        e = ops.flatten(self.cae.forward(x))
        return ops.concat([f, e], axis=1)

    def forward(self, x, trace=False):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        single = x.ndim == len(self.input_shape)
        if single:
            x = ops.reshape(x, (1,) + x.shape)
        f, outputs = self.cnn.forward(x, trace=True)
        e = ops.flatten(self.cae.forward(x))
        z = ops.concat([ops.flatten(f), e], axis=1)
        h = ops.dense(z, self.params["concat.weight"], self.params["concat.bias"])
        logits = ops.dense(h, self.params["head.weight"], self.params["head.bias"])
        if single:
            logits = ops.reshape(logits, logits.shape[1:])
        return (logits, outputs) if trace else logits

    __call__ = forward

    def last_conv_index(self):
        return self.cnn.last_conv_index()

    predict_proba = Model.predict_proba
    predict = Model.predict

    def weights_hash(self):
        h = hashlib.sha256()
        for p in self.all_parameters():
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def descriptor_lines(self):
        lines = ["kind xmodel", f"hidden {self.hidden_width}", f"classes {self.num_classes}",
                 f"seed {self.seed}", "begin cnn"]
        lines += self.cnn.descriptor_lines()
        lines += ["end cnn", "begin cae"]
        lines += self.cae.descriptor_lines()
        lines += ["end cae"]
        lines += [f"param {n} " + " ".join(str(d) for d in p.shape) for n, p in self.params.items()]
        return lines

    def __repr__(self):
        return (f"XModel(cnn={self.cnn.name!r}, cae={self.cae.name!r}, hidden={self.hidden_width}, "
                f"params={count_parameters(self, include_frozen=False)}+{count_parameters(self.cae)} frozen)")


def count_parameters(model, include_frozen=True):
    """Scalar parameter count; for an XModel ``include_frozen`` toggles the CAE branch."""
    if isinstance(model, XModel):
        params = model.all_parameters() if include_frozen else model.parameters()
    else:
        params = model.parameters()
    return int(sum(p.data.size for p in params))


def layer_parameter_count(spec):
    """Per-layer arithmetic, independent of any instantiated tensors."""
    k = spec.kernel
    if spec.kind in ("conv", "convT"):
        return spec.in_channels * spec.out_channels * k * k + spec.out_channels
    if spec.kind == "dense":
        return spec.in_channels * spec.out_channels + spec.out_channels
    return 0


# ---------------------------------------------------------------- builders

def build_teacher_mnist(seed=0):
    """LeNet5 for 1x28x28 digits (padded first conv, 61,706 parameters)."""
    layers = [conv(1, 6, 5, padding=2), act("relu"), pool(),
              conv(6, 16, 5), act("relu"), pool(), FLATTEN,
              dense(400, 120), act("relu"), dense(120, 84), act("relu"), dense(84, 10)]
    return Model("lenet5", (1, 28, 28), layers, num_classes=10, seed=seed)


def build_student_mnist(seed=0):
    """Compact "Net" student: two 3x3 convs and one classifier layer, 8,298 parameters."""
    layers = [conv(1, 15, 3, padding=1), act("relu"), pool(),
              conv(15, 13, 3, padding=1), act("relu"), pool(), FLATTEN,
              dense(13 * 7 * 7, 10)]
    return Model("net", (1, 28, 28), layers, num_classes=10, seed=seed)


def build_vgg(widths, input_shape=(3, 32, 32), num_classes=10, hidden=(), seed=0, name="vgg"):
    """VGG-style stack; ``widths`` mixes conv channel counts with ``"M"`` for 2x2 max-pooling."""
    layers = []
    c, h, w = input_shape
    for item in widths:
        if item == "M":
            layers.append(pool())
            h, w = h // 2, w // 2
        else:
            layers += [conv(c, int(item), 3, padding=1), act("relu")]
            c = int(item)
    layers.append(FLATTEN)
    width = c * h * w
    for units in hidden:
        layers += [dense(width, units), act("relu")]
        width = units
    layers.append(dense(width, num_classes))
    return Model(name, input_shape, layers, num_classes=num_classes, seed=seed)


VGG16_WIDTHS = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def build_teacher_cifar(seed=0, widths=(32, 32, "M", 64, 64, "M", 128, "M")):
    """Reduced VGG teacher for desk-scale CIFAR runs; pass ``VGG16_WIDTHS`` for the full network."""
    return build_vgg(widths, seed=seed, name="vgg-teacher")


def build_student_cifar(seed=0, widths=(16, "M", 32, "M", 64, "M")):
    return build_vgg(widths, seed=seed, name="vgg-student")


def build_cae(variant="small", in_channels=1, out_channels=1, input_size=None, seed=0):
    """Fully convolutional autoencoder mapping an image to a same-size map in [-1, 1].

    ``small``: two 3x3 conv + 2x2 pool stages, two stride-2 transposed convs.
    ``large``: four 4x4 stride-2 convs mirrored by four transposed convs.
    ``input_size`` is ``(H, W)``; it defaults to 28x28 (small) or 32x32 (large).
    """
    if variant == "small":
        a, b, c = SMALL_CAE_WIDTHS
        layers = [conv(in_channels, a, 3, padding=1), act("tanh"), pool(),
                  conv(a, b, 3, padding=1), act("tanh"), pool(),
                  convT(b, c, 2, stride=2), act("tanh"),
                  convT(c, out_channels, 2, stride=2), act("tanh")]
        factor, default = 4, (28, 28)
    elif variant == "large":
        w1, w2, w3, w4 = LARGE_CAE_WIDTHS
        chans = [in_channels, w1, w2, w3, w4]
        layers = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [conv(cin, cout, 4, stride=2, padding=1), act("tanh")]
        back = [w4, w3, w2, w1, out_channels]
        for cin, cout in zip(back[:-1], back[1:]):
            layers += [convT(cin, cout, 4, stride=2, padding=1), act("tanh")]
        factor, default = 16, (32, 32)
    else:
        raise ParameterError(f"unknown CAE variant {variant!r}; use 'small' or 'large'")
    h, w = input_size or default
    if h % factor or w % factor:
        raise DimensionError(f"{variant} CAE needs input size divisible by {factor}, got {h}x{w}")
    return Model(f"{variant}_cae", (in_channels, h, w), layers, num_classes=0, seed=seed)


def cae_bottleneck_width(cae):
    """Number of scalars at the narrowest point of an autoencoder."""
    return min(int(np.prod(s)) for s in cae.shape_trace())


def build_dense_autoencoder(input_shape, bottleneck, seed=0):
    """Fully connected autoencoder with the given bottleneck, for size comparisons."""
    d = int(np.prod(input_shape))
    layers = [FLATTEN, dense(d, bottleneck), act("tanh"), dense(bottleneck, d), act("tanh"),
              LayerSpec("reshape", shape=tuple(input_shape))]
    return Model("dense_ae", input_shape, layers, seed=seed)


def build_xmodel(student, cae, hidden_width=10, seed=0):
    """Fuse ``student``'s convolutional feature extractor with a frozen ``cae``.

    The CNN branch keeps the student's layers up to its first dense layer,
    with the student's current weights copied over.
    """
    if student.input_shape != cae.input_shape:
        raise DimensionError(f"student input {student.input_shape} vs CAE input {cae.input_shape}")
    cut = next((i for i, s in enumerate(student.layers) if s.kind == "dense"), len(student.layers))
    cnn = Model(f"{student.name}-features", student.input_shape, student.layers[:cut], seed=student.seed,
                init=False)
    for name, p in student.params.items():
        if int(name.split(".")[0]) < cut:
            cnn.params[name] = Tensor(p.data.copy(), requires_grad=True, name=name)
    if not cae.frozen:
        cae.freeze()
    return XModel(cnn, cae, hidden_width, num_classes=student.num_classes, seed=seed)


# ---------------------------------------------------------------- serialization

def _encode(model):
    desc = "\n".join(model.descriptor_lines()).encode("utf-8")
    params = model.all_parameters() if isinstance(model, XModel) else model.parameters()
    blob = MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(desc)) + desc
    return blob + b"".join(encode_tensor(p.data) for p in params)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(_encode(model))


def _parse_model(lines, init=False):
    header = {}
    layers = []
    param_names = []
    for line in lines:
        key, _, rest = line.partition(" ")
        if key == "layer":
            layers.append(LayerSpec.from_text(rest))
        elif key == "param":
            param_names.append((rest.split()[0], tuple(int(v) for v in rest.split()[1:])))
        else:
            header[key] = rest
    model = Model(header["name"], tuple(int(v) for v in header["input"].split()), layers,
                  num_classes=int(header["classes"]), seed=int(header["seed"]), init=False)
    model.frozen = header.get("frozen", "0") == "1"
    return model, param_names


def _section(lines, name):
    start = lines.index(f"begin {name}")
    end = lines.index(f"end {name}")
    return lines[start + 1:end], lines[:start] + lines[end + 1:]


def load_model(path, dtype=None):
    """Read a model file written by :func:`save_model`.

    ``dtype=np.float64`` widens the stored float32 values losslessly.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic", 0)
    if len(buf) < 12:
        raise FormatError("truncated model header", len(buf))
    version, dlen = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"model file version {version}, expected {MODEL_VERSION}", 4)
    if len(buf) < 12 + dlen:
        raise FormatError("truncated architecture descriptor", 12)
    try:
        lines = buf[12:12 + dlen].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(f"descriptor is not UTF-8: {exc}", 12) from None
    offset = 12 + dlen
    dtype = dtype or np.float32

    def read_params(target, names, trainable):
        nonlocal offset
        for name, shape in names:
            arr, offset = decode_tensor(buf, offset)
            if arr.shape != shape:
                raise FormatError(f"parameter {name} has shape {arr.shape}, descriptor says {shape}", offset)
            target[name] = Tensor(arr.astype(dtype), requires_grad=trainable, name=name)

    try:
        if lines[0] == "kind model":
            model, names = _parse_model(lines)
            read_params(model.params, names, not model.frozen)
        elif lines[0] == "kind xmodel":
            cnn_lines, rest = _section(lines, "cnn")
            cae_lines, rest = _section(rest, "cae")
            cnn, cnn_names = _parse_model(cnn_lines)
            cae, cae_names = _parse_model(cae_lines)
            header = dict(line.partition(" ")[::2] for line in rest if not line.startswith("param"))
            model = XModel(cnn, cae, int(header["hidden"]), num_classes=int(header["classes"]),
                           seed=int(header["seed"]), init=False)
            head_names = [(l.split()[1], tuple(int(v) for v in l.split()[2:])) for l in rest
                          if l.startswith("param")]
            read_params(cnn.params, cnn_names, True)
            read_params(cae.params, cae_names, False)
            cae.frozen = True
            read_params(model.params, head_names, True)
        else:
            raise FormatError(f"unknown model kind line {lines[0]!r}", 12)
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed descriptor: {exc}", 12) from None
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes", offset)
    return model
