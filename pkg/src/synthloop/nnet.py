"""Minimal numpy CNN with exact analytic gradients.

Layout is NHWC throughout.  Convolutions are stride-1 same-size (downsampling
happens in pooling layers), which lets the input gradient be computed as a
convolution with the spatially flipped, channel-swapped kernel instead of a
slow scatter-add.  Everything is deterministic for a fixed seed and dtype.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(B,H,W,C) -> (B*H*W, k*k*C) patch matrix for stride-1 same convolution."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    s = xp.strides
    win = as_strided(xp, (b, h, w, k, k, c), (s[0], s[1], s[2], s[1], s[2], s[3]))
    return win.reshape(b * h * w, k * k * c)


class Conv2D:
    def __init__(self, cin, cout, k, rng, dtype, scale=None):
        self.cin, self.cout, self.k = cin, cout, k
        self.pad = k // 2
        if scale is None:
            scale = np.sqrt(2.0 / (k * k * cin))
        self.W = rng.normal(0.0, scale, (k * k * cin, cout)).astype(dtype)
        self.b = np.zeros(cout, dtype=dtype)
        self.dW = None
        self.db = None

    def forward(self, x):
        self._shape = x.shape
        self._cols = im2col(x, self.k, self.pad)
        out = self._cols @ self.W + self.b
        b, h, w, _ = x.shape
        return out.reshape(b, h, w, self.cout)

    def backward(self, dout):
        b, h, w, _ = self._shape
        dflat = dout.reshape(-1, self.cout)
        self.dW = self._cols.T @ dflat
        self.db = dflat.sum(axis=0)
        w4 = self.W.reshape(self.k, self.k, self.cin, self.cout)
        w_flip = w4[::-1, ::-1].transpose(0, 1, 3, 2).reshape(self.k * self.k * self.cout, self.cin)
        dx = im2col(dout, self.k, self.pad) @ w_flip
        return dx.reshape(b, h, w, self.cin)

    def params(self):
        return [("W", self), ("b", self)]


class LeakyReLU:
    """Leaky rectifier; the small negative slope keeps dead units trainable."""

    def __init__(self, alpha=0.1):
        self.alpha = alpha

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, self.alpha * x)

    def backward(self, dout):
        return np.where(self._mask, dout, self.alpha * dout)

    def params(self):
        return []


class MaxPool2:
    def forward(self, x):
        b, h, w, c = x.shape
        xr = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        cand = xr.reshape(b, h // 2, w // 2, c, 4)
        self._arg = cand.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(cand, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        b, h, w, c = self._shape
        onehot = self._arg[..., None] == np.arange(4)
        g = (dout[..., None] * onehot).reshape(b, h // 2, w // 2, c, 2, 2)
        return g.transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)

    def params(self):
        return []


class AvgPool:
    def __init__(self, k):
        self.k = k

    def forward(self, x):
        b, h, w, c = x.shape
        k = self.k
        self._shape = x.shape
        return x.reshape(b, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def backward(self, dout):
        b, h, w, c = self._shape
        k = self.k
        g = dout / (k * k)
        return np.repeat(np.repeat(g, k, axis=1), k, axis=2)

    def params(self):
        return []


class Flatten:
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def params(self):
        return []


class MomentPool:
    """Per-channel spatial moments of |activation|: mass, first and second
    raw moments in x and y on a [-1, 1] grid.  Gives the box head linearly
    decodable position and extent information."""

    FEATURES = 5  # per channel

    def forward(self, x):
        b, h, w, c = x.shape
        self._x = x
        m = np.abs(x)
        gy = np.linspace(-1.0, 1.0, h, dtype=x.dtype)[None, :, None, None]
        gx = np.linspace(-1.0, 1.0, w, dtype=x.dtype)[None, None, :, None]
        self._gy, self._gx = gy, gx
        s = m.sum(axis=(1, 2))
        self._s = s
        self._denom = s + 1e-6
        m0 = s / (h * w)
        m1x = (m * gx).sum(axis=(1, 2)) / self._denom
        m1y = (m * gy).sum(axis=(1, 2)) / self._denom
        m2x = (m * gx * gx).sum(axis=(1, 2)) / self._denom
        m2y = (m * gy * gy).sum(axis=(1, 2)) / self._denom
        self._m = (m0, m1x, m1y, m2x, m2y)
        return np.concatenate([m0, m1x, m1y, m2x, m2y], axis=1)

    def backward(self, dout):
        b, h, w, c = self._x.shape
        d0, d1x, d1y, d2x, d2y = np.split(dout, 5, axis=1)
        m0, m1x, m1y, m2x, m2y = self._m
        gx, gy = self._gx, self._gy
        inv = 1.0 / self._denom
        dm = (
            d0[:, None, None, :] / (h * w)
            + (d1x * inv)[:, None, None, :] * (gx - m1x[:, None, None, :])
            + (d1y * inv)[:, None, None, :] * (gy - m1y[:, None, None, :])
            + (d2x * inv)[:, None, None, :] * (gx * gx - m2x[:, None, None, :])
            + (d2y * inv)[:, None, None, :] * (gy * gy - m2y[:, None, None, :])
        )
        return dm * np.sign(self._x)

    def params(self):
        return []


class Dense:
    def __init__(self, nin, nout, rng, dtype, zero_init=False):
        if zero_init:
            self.W = np.zeros((nin, nout), dtype=dtype)
        else:
            self.W = rng.normal(0.0, np.sqrt(2.0 / nin), (nin, nout)).astype(dtype)
        self.b = np.zeros(nout, dtype=dtype)
        self.dW = None
        self.db = None

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, dout):
        self.dW = self._x.T @ dout
        self.db = dout.sum(axis=0)
        return dout @ self.W.T

    def params(self):
        return [("W", self), ("b", self)]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over the batch and the gradient wrt logits."""
    p = softmax(logits)
    n = logits.shape[0]
    eps = np.finfo(p.dtype).tiny
    loss = -np.log(np.maximum(p[np.arange(n), labels], eps)).mean()
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def smooth_l1(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Masked smooth-L1 (Huber, delta=1) averaged over the masked rows."""
    n_pos = int(mask.sum())
    grad = np.zeros_like(pred)
    if n_pos == 0:
        return 0.0, grad
    d = (pred - target)[mask]
    a = np.abs(d)
    quad = a < 1.0
    loss = np.where(quad, 0.5 * d * d, a - 0.5).sum() / n_pos
    g = np.where(quad, d, np.sign(d)) / n_pos
    grad[mask] = g
    return float(loss), grad


class DetectorNet:
    """Three conv stages on a downsampled input, class and box heads.

    Head features combine the flattened last conv map with per-channel
    spatial moments of two stages, so a linear layer can read out position
    and extent directly.
    """

    STEM_POOL = 8
    CHANNELS = (8, 16, 32)
    KERNELS = (5, 3, 3)
    HIDDEN = 128

    def __init__(self, n_classes: int, seed: int = 0, dtype: str = "float32"):
        self.n_classes = n_classes  # vehicle classes; heads emit n_classes + 1
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = self.CHANNELS
        k1, k2, k3 = self.KERNELS
        h0, w0 = 128 // self.STEM_POOL, 256 // self.STEM_POOL
        self.stem_pool = AvgPool(self.STEM_POOL)
        self.conv1, self.act1, self.pool1 = Conv2D(1, c1, k1, rng, self.dtype), LeakyReLU(), MaxPool2()
        self.conv2, self.act2, self.pool2 = Conv2D(c1, c2, k2, rng, self.dtype), LeakyReLU(), MaxPool2()
        self.conv3, self.act3 = Conv2D(c2, c3, k3, rng, self.dtype), LeakyReLU()
        self.moments1 = MomentPool()
        self.moments2 = MomentPool()
        self.moments3 = MomentPool()
        self.flatten = Flatten()
        self._flat_dim = (h0 // 4) * (w0 // 4) * c3
        feat = self._flat_dim + MomentPool.FEATURES * (c1 + c2 + c3)
        self.hidden = Dense(feat, self.HIDDEN, rng, self.dtype)
        self.hidden_act = LeakyReLU()
        self.class_head = Dense(self.HIDDEN, n_classes + 1, rng, self.dtype, zero_init=True)
        # The box is close to a linear function of the pooled features, so its
        # head reads them directly rather than through the hidden bottleneck.
        self.box_head = Dense(feat, 4, rng, self.dtype, zero_init=True)

    def descriptor(self) -> dict:
        return {
            "stem_pool": self.STEM_POOL,
            "channels": list(self.CHANNELS),
            "kernels": list(self.KERNELS),
            "hidden": self.HIDDEN,
            "moments": ["act1", "act2", "act3"],
            "input": [128, 256],
            "n_classes": self.n_classes,
            "heads": ["class", "box"],
        }

    def parameters(self) -> list[tuple[str, object, str]]:
        out = []
        for tag, layer in (
            ("conv1", self.conv1),
            ("conv2", self.conv2),
            ("conv3", self.conv3),
            ("hidden", self.hidden),
            ("class", self.class_head),
            ("box", self.box_head),
        ):
            for name, owner in layer.params():
                out.append((f"{tag}.{name}", owner, name))
        return out

    def stem(self, x: np.ndarray) -> np.ndarray:
        """Parameter-free downsampling stage; may be precomputed per dataset."""
        return self.stem_pool.forward(x)

    def forward_body(self, pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a1 = self.act1.forward(self.conv1.forward(pooled))
        a2 = self.act2.forward(self.conv2.forward(self.pool1.forward(a1)))
        a3 = self.act3.forward(self.conv3.forward(self.pool2.forward(a2)))
        feats = np.concatenate(
            [
                self.flatten.forward(a3),
                self.moments1.forward(a1),
                self.moments2.forward(a2),
                self.moments3.forward(a3),
            ],
            axis=1,
        )
        h = self.hidden_act.forward(self.hidden.forward(feats))
        return self.class_head.forward(h), self.box_head.forward(feats)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.forward_body(self.stem(x))

    def backward_body(self, dlogits: np.ndarray, dbox: np.ndarray) -> None:
        dh = self.class_head.backward(dlogits)
        # Stop-gradient at the box read-out: localization is linearly solvable
        # from the pooled features, and keeping its (fast) updates out of the
        # trunk stabilizes training; the representation is shaped by the
        # classification loss alone.
        self.box_head.backward(dbox)
        dfeats = self.hidden.backward(self.hidden_act.backward(dh))
        c1, c2, c3 = self.CHANNELS
        n_m1 = MomentPool.FEATURES * c1
        n_m2 = MomentPool.FEATURES * c2
        i0 = self._flat_dim
        dflat = dfeats[:, :i0]
        dm1 = dfeats[:, i0 : i0 + n_m1]
        dm2 = dfeats[:, i0 + n_m1 : i0 + n_m1 + n_m2]
        dm3 = dfeats[:, i0 + n_m1 + n_m2 :]
        da3 = self.flatten.backward(dflat) + self.moments3.backward(dm3)
        da2 = self.pool2.backward(self.conv3.backward(self.act3.backward(da3)))
        da2 = da2 + self.moments2.backward(dm2)
        da1 = self.pool1.backward(self.conv2.backward(self.act2.backward(da2)))
        da1 = da1 + self.moments1.backward(dm1)
        self.conv1.backward(self.act1.backward(da1))

    def loss_and_grads(self, pooled, labels, boxes, box_mask, box_weight=1.0):
        """Loss and parameter gradients from stem-pooled inputs."""
        logits, box_pred = self.forward_body(pooled)
        closs, dlogits = cross_entropy(logits, labels)
        bloss, dbox = smooth_l1(box_pred, boxes, box_mask)
        self.backward_body(dlogits.astype(self.dtype), (box_weight * dbox).astype(self.dtype))
        return closs, bloss


class SGD:
    """Plain SGD with momentum; per-layer rate multipliers supported."""

    def __init__(self, net: DetectorNet, lr: float, momentum: float = 0.9, lr_multipliers=None):
        self.net = net
        self.lr = lr
        self.momentum = momentum
        self.lr_multipliers = dict(lr_multipliers or {})
        self.velocity = {name: np.zeros_like(getattr(owner, attr)) for name, owner, attr in net.parameters()}

    def _rate(self, name: str) -> float:
        for prefix, mult in self.lr_multipliers.items():
            if name.startswith(prefix):
                return self.lr * mult
        return self.lr

    def step(self) -> None:
        for name, owner, attr in self.net.parameters():
            grad = getattr(owner, "d" + attr)
            v = self.velocity[name]
            v *= self.momentum
            v -= self._rate(name) * grad
            setattr(owner, attr, getattr(owner, attr) + v)
