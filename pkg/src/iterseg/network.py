"""
A small 3D U-shaped network with label and completeness heads, written
directly in numpy with hand-derived backpropagation.

Input is a two-channel patch (image, memory). The segmentation path is a
compression/expansion U with skip connections; both recognition heads
continue the compression path from the bottleneck::

    image+memory -> [conv,conv] -> pool -> ... -> bottleneck -> up/concat/[conv,conv] -> 1x1 -> sigmoid  (S)
                                                  bottleneck -> conv -> flatten -> dense -> ReLU       (L)
                                                  bottleneck -> conv -> flatten -> dense -> sigmoid    (C)
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .loss import LossGradients

MAGIC = b"ITSEGNET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SegmentorConfig:
    channels: int = 8
    depth: int = 2
    patch_size: tuple[int, int, int] = (32, 32, 32)
    head_width: int = 8
    # "instance": zero-mean/unit-variance per patch; "fixed": (x - shift) / scale
    input_norm: str = "instance"
    input_shift: float = 0.0
    input_scale: float = 1.0
    # L = relu(label_scale * (w.f + b)); the bias starts mid-range so early outputs are plausible labels
    label_scale: float = 1.0
    label_bias_init: float = 12.0
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patch_size", tuple(int(s) for s in self.patch_size))
        if self.depth < 0 or self.channels < 1 or self.head_width < 1:
            raise ValueError("depth must be >= 0, channels and head_width >= 1")
        if any(s % (2 ** self.depth) for s in self.patch_size):
            raise ValueError(f"patch size {self.patch_size} must be divisible by 2**depth")
        if self.input_norm not in ("instance", "fixed"):
            raise ValueError(f"unknown input normalisation {self.input_norm!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")


# ---------------------------------------------------------------------------
# layer primitives; activations are (channels, x, y, z)
# ---------------------------------------------------------------------------

def _im2col(x):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))  # (c, X, Y, Z, 3, 3, 3)
    c, X, Y, Z = x.shape
    cols = win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * 27, X * Y * Z)
    return cols


def conv3d(x, w, b):
    """Same-padded 3x3x3 convolution (cross-correlation)."""
    co = w.shape[0]
    out = w.reshape(co, -1) @ _im2col(x)
    out = out.reshape((co,) + x.shape[1:])
    out += b[:, None, None, None]
    return out


def conv3d_backward(dout, x, w):
    co = w.shape[0]
    d2 = dout.reshape(co, -1)
    dw = (d2 @ _im2col(x).T).reshape(w.shape)
    db = d2.sum(axis=1)
    wt = np.flip(w, axis=(2, 3, 4)).transpose(1, 0, 2, 3, 4)
    dx = conv3d(dout, np.ascontiguousarray(wt), np.zeros(wt.shape[0], dtype=dout.dtype))
    return dx, dw, db


def maxpool2(x):
    c, X, Y, Z = x.shape
    blocks = x.reshape(c, X // 2, 2, Y // 2, 2, Z // 2, 2).transpose(0, 1, 3, 5, 2, 4, 6)
    blocks = blocks.reshape(c, X // 2, Y // 2, Z // 2, 8)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout, idx, shape):
    c, X, Y, Z = shape
    blocks = np.zeros(dout.shape + (8,), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(c, X // 2, Y // 2, Z // 2, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6)
    return blocks.reshape(shape)


def upsample2(x):
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dout):
    c, X, Y, Z = dout.shape
    return dout.reshape(c, X // 2, 2, Y // 2, 2, Z // 2, 2).sum(axis=(2, 4, 6))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------


@dataclass
class Prediction:
    S: np.ndarray
    L: float
    C: float


class TinyFCN:
    """The patch segmentor network. Parameters live in ``self.params`` in declaration order."""

    def __init__(self, config: SegmentorConfig = SegmentorConfig()):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(config.seed)
        for name, shape in self.param_shapes():
            if name.endswith(".b"):
                value = np.zeros(shape)
                if name == "label.dense.b":
                    value[:] = config.label_bias_init
            else:
                fan_in = int(np.prod(shape[1:]))
                value = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            self.params[name] = value.astype(self.dtype)

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        c, h, depth = self.config.channels, self.config.head_width, self.config.depth
        shapes = []

        def conv(name, cin, cout, k=3):
            shapes.append((f"{name}.w", (cout, cin, k, k, k)))
            shapes.append((f"{name}.b", (cout,)))

        for level in range(depth + 1):
            conv(f"enc{level}.0", 2 if level == 0 else c, c)
            conv(f"enc{level}.1", c, c)
        for level in reversed(range(depth)):
            conv(f"dec{level}.0", 2 * c, c)
            conv(f"dec{level}.1", c, c)
        conv("seg.out", c, 1, k=1)
        for head in ("label", "complete"):
            conv(f"{head}.conv", c, h)
            shapes.append((f"{head}.dense.w", (1, h * self.bottleneck_voxels)))
            shapes.append((f"{head}.dense.b", (1,)))
        return shapes

    @property
    def bottleneck_voxels(self) -> int:
        return int(np.prod(self.config.patch_size)) // 8 ** self.config.depth

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward / backward -------------------------------------------------

    def _normalise(self, image):
        image = np.asarray(image, dtype=np.float64)
        if self.config.input_norm == "instance":
            return (image - image.mean()) / (image.std() + 1e-6)
        return (image - self.config.input_shift) / self.config.input_scale

    def forward(self, image_patch, memory_patch):
        """Run the network; returns ``(Prediction, cache)`` with ``cache`` for :meth:`backward`."""
        image_patch = np.asarray(image_patch)
        memory_patch = np.asarray(memory_patch)
        if image_patch.shape != memory_patch.shape:
            raise ValueError(f"image {image_patch.shape} and memory {memory_patch.shape} differ")
        if image_patch.shape != self.config.patch_size:
            raise ValueError(f"patch shape {image_patch.shape} != {self.config.patch_size}")
        P = self.params
        x = np.stack([self._normalise(image_patch), memory_patch.astype(np.float64)])
        x = x.astype(self.dtype)
        cache = {"input": x}
        skips = []
        h = x
        depth = self.config.depth
        for level in range(depth + 1):
            for j in range(2):
                name = f"enc{level}.{j}"
                cache[name + ".in"] = h
                h = np.maximum(conv3d(h, P[name + ".w"], P[name + ".b"]), 0)
                cache[name + ".out"] = h
            if level < depth:
                skips.append(h)
                cache[f"pool{level}.shape"] = h.shape
                h, cache[f"pool{level}.idx"] = maxpool2(h)
        bottleneck = h
        for level in reversed(range(depth)):
            h = np.concatenate([upsample2(h), skips[level]], axis=0)
            for j in range(2):
                name = f"dec{level}.{j}"
                cache[name + ".in"] = h
                h = np.maximum(conv3d(h, P[name + ".w"], P[name + ".b"]), 0)
                cache[name + ".out"] = h
        cache["seg.out.in"] = h
        z = conv3d_1x1(h, P["seg.out.w"], P["seg.out.b"])[0]
        S = _sigmoid(z)
        cache["S"] = S

        cache["bottleneck"] = bottleneck
        heads = {}
        for head in ("label", "complete"):
            f = np.maximum(conv3d(bottleneck, P[f"{head}.conv.w"], P[f"{head}.conv.b"]), 0)
            a = float(P[f"{head}.dense.w"][0] @ f.ravel() + P[f"{head}.dense.b"][0])
            cache[f"{head}.f"], cache[f"{head}.a"] = f, a
            heads[head] = a
        scale = self.config.label_scale
        L = max(0.0, scale * heads["label"])
        C = float(_sigmoid(heads["complete"]))
        cache["C"] = C
        return Prediction(S, L, C), cache

    def predict(self, image_patch, memory_patch) -> Prediction:
        return self.forward(image_patch, memory_patch)[0]

    def backward(self, cache, grads: LossGradients) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(S, L, C)."""
        P = self.params
        G = {name: np.zeros_like(p) for name, p in self.params.items()}
        depth = self.config.depth

        # heads
        d_bottleneck = np.zeros_like(cache["bottleneck"])
        scale = self.config.label_scale
        head_grads = {
            "label": grads.L * scale if cache["label.a"] * scale > 0 else 0.0,
            "complete": grads.C * cache["C"] * (1.0 - cache["C"]),
        }
        for head, da in head_grads.items():
            f = cache[f"{head}.f"]
            G[f"{head}.dense.w"][0] = da * f.ravel()
            G[f"{head}.dense.b"][0] = da
            df = da * P[f"{head}.dense.w"][0].reshape(f.shape) * (f > 0)
            dx, G[f"{head}.conv.w"], G[f"{head}.conv.b"] = conv3d_backward(
                df.astype(self.dtype), cache["bottleneck"], P[f"{head}.conv.w"])
            d_bottleneck += dx

        # segmentation output
        S = cache["S"]
        dz = (np.asarray(grads.S) * S * (1.0 - S)).astype(self.dtype)[None]
        h_in = cache["seg.out.in"]
        G["seg.out.w"] = np.tensordot(dz, h_in, axes=([1, 2, 3], [1, 2, 3])).reshape(
            P["seg.out.w"].shape)
        G["seg.out.b"] = dz.sum(axis=(1, 2, 3))
        dh = np.tensordot(P["seg.out.w"].reshape(1, -1), dz, axes=([0], [0]))

        c = self.config.channels
        d_skips = [None] * depth
        for level in range(depth):
            for j in (1, 0):
                name = f"dec{level}.{j}"
                dh = dh * (cache[name + ".out"] > 0)
                dh, G[name + ".w"], G[name + ".b"] = conv3d_backward(
                    dh, cache[name + ".in"], P[name + ".w"])
            d_skips[level] = dh[c:]
            dh = upsample2_backward(dh[:c])
        dh = dh + d_bottleneck
        for level in reversed(range(depth + 1)):
            if level < depth:
                dh = maxpool2_backward(dh, cache[f"pool{level}.idx"], cache[f"pool{level}.shape"])
                dh = dh + d_skips[level]
            for j in (1, 0):
                name = f"enc{level}.{j}"
                dh = dh * (cache[name + ".out"] > 0)
                dh, G[name + ".w"], G[name + ".b"] = conv3d_backward(
                    dh, cache[name + ".in"], P[name + ".w"])
        return G

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        """Binary format: magic, u32 version, u32 config length, JSON config, float32 tensors."""
        blob = json.dumps(asdict(self.config), sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for name, _ in self.param_shapes():
                fh.write(self.params[name].astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> TinyFCN:
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != MAGIC:
            raise ValueError(f"{path}: not a network parameter file")
        version, n = struct.unpack("<II", data[8:16])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        cfg = json.loads(data[16:16 + n].decode("utf-8"))
        net = cls(SegmentorConfig(**cfg))
        offset = 16 + n
        for name, shape in net.param_shapes():
            count = int(np.prod(shape))
            raw = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            net.params[name] = raw.reshape(shape).astype(net.dtype)
            offset += 4 * count
        if offset != len(data):
            raise ValueError(f"{path}: trailing or missing parameter data")
        return net


def conv3d_1x1(x, w, b):
    co = w.shape[0]
    out = w.reshape(co, -1) @ x.reshape(x.shape[0], -1)
    return out.reshape((co,) + x.shape[1:]) + b[:, None, None, None]


class Adam:
    """Adam with bias correction; ``step`` updates parameters in place."""

    def __init__(self, lr=0.001, beta1=0.99, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)
