"""Model zoo: three small classifiers and the convolutional autoencoder.

Parameters live in frozen dataclasses as ordered (name, Tensor) pairs; the
order is canonical per architecture and everything downstream (gradient
vectors, serialization, fingerprints) relies on it.  All tensors are leaf
variables so any forward pass can be differentiated with respect to them.

Classifier architectures:
  dense1   flatten -> fc                                  [w, b]
  mlp2     flatten -> fc+relu -> fc+relu -> fc            [w1, b1, w2, b2, w3, b3]
  convnet  3 x (conv k3 s2 p1 + relu) -> flatten -> fc    [conv{i}_w, conv{i}_b, fc_w, fc_b]

Autoencoder (input spatial dims must be divisible by 4):
  encoder  conv k3 s2 p1 + relu, twice        C -> widths[0] -> widths[1]
  decoder  2 x (nearest-upsample x2 + conv k3 s1 p1), relu between, sigmoid out
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tt
from .errors import ArgumentError, DimensionError
from .tensor import Tensor

CLASSIFIER_ARCHS = ("dense1", "mlp2", "convnet")


@dataclass(frozen=True)
class InitScheme:
    """How to draw initial weights.

    kind 'kaiming_uniform' draws U(+-sqrt(6/fan_in)); 'normal' draws
    N(0, sigma^2).  Biases start at zero either way.  The seed here is the
    default; init functions may override it per call.
    """

    kind: str = "kaiming_uniform"
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("kaiming_uniform", "normal"):
            raise ArgumentError(f"unknown init kind '{self.kind}'")
        if self.sigma < 0:
            raise ArgumentError("init sigma must be >= 0")


def _draw(rng, scheme: InitScheme, fan_in: int, shape) -> np.ndarray:
    if scheme.kind == "normal":
        return rng.normal(0.0, scheme.sigma, shape)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


class _ParamOps:
    """Shared helpers for the parameter dataclasses."""

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.items)

    @property
    def tensors(self) -> tuple[Tensor, ...]:
        return tuple(t for _, t in self.items)

    def tensor(self, name: str) -> Tensor:
        for n, t in self.items:
            if n == name:
                return t
        raise ArgumentError(f"no parameter named '{name}'")

    @property
    def param_count(self) -> int:
        return sum(t.size for _, t in self.items)

    def to_arrays(self) -> list[np.ndarray]:
        return [t.data.copy() for _, t in self.items]

    def with_values(self, arrays):
        """Same structure, new values (used by optimizers and loaders)."""
        arrays = list(arrays)
        if len(arrays) != len(self.items):
            raise ArgumentError(f"expected {len(self.items)} arrays, got {len(arrays)}")
        new_items = []
        for (name, old), arr in zip(self.items, arrays):
            arr = np.asarray(arr)
            if arr.shape != old.shape:
                raise DimensionError(f"parameter '{name}': shape {arr.shape} "
                                     f"does not match {old.shape}")
            new_items.append((name, tt.variable(arr, dtype=old.dtype)))
        return replace(self, items=tuple(new_items))


@dataclass(frozen=True)
class ClassifierParams(_ParamOps):
    arch: str
    in_shape: tuple[int, int, int]
    num_classes: int
    items: tuple[tuple[str, Tensor], ...]


@dataclass(frozen=True)
class AutoEncoderParams(_ParamOps):
    in_channels: int
    widths: tuple[int, int]
    items: tuple[tuple[str, Tensor], ...]


def _conv_out(h: int, k: int, s: int, p: int) -> int:
    return (h + 2 * p - k) // s + 1


def init_classifier(arch: str,
                    in_shape: tuple[int, int, int] = (3, 32, 32),
                    num_classes: int = 10,
                    seed: int | None = None,
                    scheme: InitScheme = InitScheme(),
                    hidden: int = 64,
                    channels: tuple[int, int, int] = (8, 16, 32)) -> ClassifierParams:
    """Build a classifier with freshly drawn parameters.

    Same (arch, shapes, seed, scheme) always yields bit-identical values:
    a single generator is consumed in canonical parameter order.
    """
    if arch not in CLASSIFIER_ARCHS:
        raise ArgumentError(f"unknown architecture '{arch}', expected one of {CLASSIFIER_ARCHS}")
    c, h, w = (int(v) for v in in_shape)
    if c < 1 or h < 1 or w < 1 or num_classes < 2:
        raise ArgumentError(f"bad model geometry: in_shape={in_shape}, classes={num_classes}")
    rng = np.random.default_rng(scheme.seed if seed is None else seed)
    d = c * h * w
    items: list[tuple[str, Tensor]] = []

    def fc(name, n_out, n_in):
        items.append((f"{name}_w", tt.variable(_draw(rng, scheme, n_in, (n_out, n_in)))))
        items.append((f"{name}_b", tt.variable(np.zeros(n_out))))

    if arch == "dense1":
        fc("fc", num_classes, d)
    elif arch == "mlp2":
        fc("fc1", hidden, d)
        fc("fc2", hidden, hidden)
        fc("fc3", num_classes, hidden)
    else:
        c_in = c
        hh, ww = h, w
        for i, c_out in enumerate(channels, start=1):
            fan = c_in * 9
            items.append((f"conv{i}_w",
                          tt.variable(_draw(rng, scheme, fan, (c_out, c_in, 3, 3)))))
            items.append((f"conv{i}_b", tt.variable(np.zeros(c_out))))
            hh, ww = _conv_out(hh, 3, 2, 1), _conv_out(ww, 3, 2, 1)
            if hh < 1 or ww < 1:
                raise DimensionError(f"input {in_shape} too small for convnet stage {i}")
            c_in = c_out
        fc("fc", num_classes, c_in * hh * ww)

    return ClassifierParams(arch=arch, in_shape=(c, h, w), num_classes=num_classes,
                            items=tuple(items))


def _check_images(images: Tensor, in_shape) -> None:
    if not isinstance(images, Tensor):
        raise ArgumentError("images must be a Tensor")
    if images.ndim != 4:
        raise DimensionError(f"images must be NCHW, got rank {images.ndim}")
    if tuple(images.shape[1:]) != tuple(in_shape):
        raise DimensionError(f"images {images.shape} do not match model input {in_shape}")
    if images.shape[0] < 1:
        raise DimensionError("empty batch")


def _fc_apply(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    n = x.shape[0]
    k = w.shape[0]
    z = tt.matmul(x, tt.transpose(w))
    return z + tt.broadcast_to(tt.reshape(b, (1, k)), (n, k))


def _conv_apply(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int) -> Tensor:
    z = tt.conv2d(x, w, stride=stride, padding=padding)
    o = w.shape[0]
    return z + tt.broadcast_to(tt.reshape(b, (1, o, 1, 1)), z.shape)


def forward_classifier(params: ClassifierParams, images: Tensor) -> Tensor:
    """Logits [N, num_classes] for a batch of images."""
    _check_images(images, params.in_shape)
    n = images.shape[0]
    d = images.size // n
    if params.arch == "dense1":
        x = tt.reshape(images, (n, d))
        return _fc_apply(x, params.tensor("fc_w"), params.tensor("fc_b"))
    if params.arch == "mlp2":
        x = tt.reshape(images, (n, d))
        x = tt.relu(_fc_apply(x, params.tensor("fc1_w"), params.tensor("fc1_b")))
        x = tt.relu(_fc_apply(x, params.tensor("fc2_w"), params.tensor("fc2_b")))
        return _fc_apply(x, params.tensor("fc3_w"), params.tensor("fc3_b"))
    x = images
    for i in (1, 2, 3):
        x = tt.relu(_conv_apply(x, params.tensor(f"conv{i}_w"),
                                params.tensor(f"conv{i}_b"), stride=2, padding=1))
    x = tt.reshape(x, (n, x.size // n))
    return _fc_apply(x, params.tensor("fc_w"), params.tensor("fc_b"))


def init_autoencoder(in_channels: int = 3,
                     seed: int | None = None,
                     scheme: InitScheme = InitScheme(),
                     widths: tuple[int, int] = (16, 32)) -> AutoEncoderParams:
    """Build the reconstruction autoencoder with fresh parameters."""
    if in_channels < 1:
        raise ArgumentError(f"in_channels must be positive, got {in_channels}")
    w1, w2 = (int(v) for v in widths)
    if w1 < 1 or w2 < 1:
        raise ArgumentError(f"widths must be positive, got {widths}")
    rng = np.random.default_rng(scheme.seed if seed is None else seed)
    items: list[tuple[str, Tensor]] = []

    def conv(name, c_out, c_in):
        items.append((f"{name}_w", tt.variable(_draw(rng, scheme, c_in * 9, (c_out, c_in, 3, 3)))))
        items.append((f"{name}_b", tt.variable(np.zeros(c_out))))

    conv("enc1", w1, in_channels)
    conv("enc2", w2, w1)
    conv("dec1", w1, w2)
    conv("dec2", in_channels, w1)
    return AutoEncoderParams(in_channels=in_channels, widths=(w1, w2), items=tuple(items))


def _upsample2(x: Tensor) -> Tensor:
    # nearest-neighbor x2: expand each pixel into a 2x2 block via reshape
    # to rank 6, broadcast along the two repeat axes, reshape back
    n, c, h, w = x.shape
    z = tt.reshape(x, (n, c, h, 1, w, 1))
    z = tt.broadcast_to(z, (n, c, h, 2, w, 2))
    return tt.reshape(z, (n, c, 2 * h, 2 * w))


def forward_autoencoder(params: AutoEncoderParams, images: Tensor) -> Tensor:
    """Reconstruction of the batch, same shape as input, values in (0, 1)."""
    if not isinstance(images, Tensor):
        raise ArgumentError("images must be a Tensor")
    if images.ndim != 4:
        raise DimensionError(f"images must be NCHW, got rank {images.ndim}")
    n, c, h, w = images.shape
    if c != params.in_channels:
        raise DimensionError(f"autoencoder expects {params.in_channels} channels, got {c}")
    if h % 4 != 0 or w % 4 != 0:
        raise DimensionError(f"autoencoder needs spatial dims divisible by 4, got {h}x{w}")
    x = tt.relu(_conv_apply(images, params.tensor("enc1_w"), params.tensor("enc1_b"), 2, 1))
    x = tt.relu(_conv_apply(x, params.tensor("enc2_w"), params.tensor("enc2_b"), 2, 1))
    x = _upsample2(x)
    x = tt.relu(_conv_apply(x, params.tensor("dec1_w"), params.tensor("dec1_b"), 1, 1))
    x = _upsample2(x)
    x = _conv_apply(x, params.tensor("dec2_w"), params.tensor("dec2_b"), 1, 1)
    return tt.sigmoid(x)


def flatten_params(params) -> np.ndarray:
    """All parameter values as one 1-d vector, canonical order."""
    arrays = [t.data.ravel() for _, t in params.items]
    if not arrays:
        return np.zeros(0)
    return np.concatenate(arrays)


def unflatten_params(params, vec: np.ndarray):
    """Inverse of flatten_params against the same structure, bit-exact."""
    vec = np.asarray(vec)
    if vec.ndim != 1:
        raise ArgumentError(f"expected a flat vector, got rank {vec.ndim}")
    if vec.size != params.param_count:
        raise DimensionError(f"vector length {vec.size} does not match "
                             f"parameter count {params.param_count}")
    arrays = []
    pos = 0
    for _, t in params.items:
        arrays.append(vec[pos:pos + t.size].reshape(t.shape))
        pos += t.size
    return params.with_values(arrays)
