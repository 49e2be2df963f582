"""Invertible flow over R^m: affine coupling blocks plus learned linear mixing.

Each of the n blocks transforms its input x = [u1, u2] (halves of the m
even dimensions) through two coupled affine half-steps,

    v1 = u1 * exp(s2(u2)) + t2(u2)
    v2 = u2 * exp(s1(v1)) + t1(v1)

followed by multiplication with an invertible m x m matrix W. The scale and
translation heads (s, t) of each half-step are the two halves of one MLP
output; log-scales are bounded to (-alpha, alpha) by alpha*tanh(raw/alpha),
which keeps every parameter setting invertible. The per-sample log-det of
the Jacobian is sum(s2) + sum(s1) per block plus log|det W| per block, and
log-density under a standard-normal base follows from the change of
variables formula.

An optional per-dimension input shift/scale (fit from training data) is the
zeroth layer of the bijection; its log-det contribution -sum(log scale) is
included so log_prob always refers to the raw input density.

All compute is float64. Parameters live in one flat vector; per-layer
arrays are views into it, in the documented checkpoint order: for each
block, net_a layer weights/biases, then net_b, then the mixing matrix W
(row-major). Gradients are computed by a hand-rolled reverse pass that
mirrors the forward exactly, supports per-sample upstream weights, and only
touches the rows whose upstream weight is nonzero.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    DivergenceError,
    MissingCacheError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .seeding import STREAM_INIT, stream

LOG_2PI = math.log(2.0 * math.pi)

MODEL_MAGIC = b"QODM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIIIIId")

TRAINING = "training"
INFERENCE = "inference"


def clamp_scale(raw, alpha: float):
    """Bound raw log-scales to (-alpha, alpha) via alpha*tanh(raw/alpha).

    Odd, strictly monotone, slope 1 at 0, saturating at +-alpha.
    """
    if alpha <= 0:
        raise ValueError(f"clamp must be positive, got {alpha}")
    return alpha * np.tanh(np.asarray(raw, dtype=np.float64) / alpha)


def _mlp_widths(dim: int, fc_layers: int, fc_neurons: int) -> list[int]:
    # input is one half; output carries both the scale and translation head
    return [dim // 2] + [fc_neurons] * fc_layers + [dim]


def _mlp_param_count(widths: list[int]) -> int:
    return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


def param_count(dim: int, blocks: int, fc_layers: int, fc_neurons: int) -> int:
    """Total flat-parameter count for the given meta-architecture."""
    per_mlp = _mlp_param_count(_mlp_widths(dim, fc_layers, fc_neurons))
    return blocks * (2 * per_mlp + dim * dim)


class _Mlp:
    """Weight/bias views for one coupling MLP (shared scale+translation head)."""

    def __init__(self, weights, biases):
        self.weights = weights  # list of (in, out) views
        self.biases = biases  # list of (out,) views


@dataclass
class _BlockCache:
    u1: np.ndarray
    u2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    y: np.ndarray
    mlp_a: tuple
    mlp_b: tuple
    w_inv_t: np.ndarray | None = None


@dataclass
class _ForwardCache:
    raw: np.ndarray
    z: np.ndarray
    blocks: list[_BlockCache] = field(default_factory=list)


class FlowModel:
    """Stack of n (coupling + linear mixing) blocks with exact densities."""

    def __init__(self, dim, blocks, fc_layers, fc_neurons, clamp, dropout_rate=0.0):
        if dim < 2 or dim % 2 != 0:
            raise ShapeMismatchError(f"flow dimension must be even and >= 2, got {dim}")
        if blocks < 1 or fc_layers < 1 or fc_neurons < 1:
            raise ValueError("blocks, fc_layers, and fc_neurons must all be >= 1")
        if clamp <= 0:
            raise ValueError(f"clamp must be positive, got {clamp}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {dropout_rate}")
        self.dim = int(dim)
        self.n_blocks = int(blocks)
        self.fc_layers = int(fc_layers)
        self.fc_neurons = int(fc_neurons)
        self.clamp = float(clamp)
        self.dropout_rate = float(dropout_rate)
        self.mode = INFERENCE
        self.input_shift = np.zeros(self.dim)
        self.input_scale = np.ones(self.dim)
        self.params = np.zeros(param_count(dim, blocks, fc_layers, fc_neurons))
        self._grad = np.zeros_like(self.params)
        self._blocks = self._build_views(self.params)
        self._grad_blocks = self._build_views(self._grad)
        self._cache: _ForwardCache | None = None

    # ---- construction --------------------------------------------------

    def _build_views(self, flat: np.ndarray):
        widths = _mlp_widths(self.dim, self.fc_layers, self.fc_neurons)
        blocks = []
        off = 0

        def take(shape):
            nonlocal off
            size = int(np.prod(shape))
            view = flat[off : off + size].reshape(shape)
            off += size
            return view

        for _ in range(self.n_blocks):
            nets = []
            for _ in range(2):
                ws, bs = [], []
                for i in range(len(widths) - 1):
                    ws.append(take((widths[i], widths[i + 1])))
                    bs.append(take((widths[i + 1],)))
                nets.append(_Mlp(ws, bs))
            wmix = take((self.dim, self.dim))
            blocks.append((nets[0], nets[1], wmix))
        assert off == flat.shape[0]
        return blocks

    @classmethod
    def create(cls, dim, blocks, fc_layers, fc_neurons, clamp, dropout_rate=0.0, seed=0):
        """Identity-initialized model: zero final MLP layers, orthogonal W."""
        model = cls(dim, blocks, fc_layers, fc_neurons, clamp, dropout_rate)
        rng = stream(seed, STREAM_INIT)
        for net_a, net_b, wmix in model._blocks:
            for net in (net_a, net_b):
                for i, w in enumerate(net.weights):
                    if i < len(net.weights) - 1:
                        fan_in = w.shape[0]
                        w[:] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=w.shape)
                    # final layer stays zero so the block starts as identity
            q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
            wmix[:] = q * np.sign(np.diag(r))
        model.check_mixing_invertible()
        return model

    def check_mixing_invertible(self):
        """Raise if any mixing matrix has |det W| == 0 or non-finite entries."""
        for j, (_, _, wmix) in enumerate(self._blocks):
            sign, _ = np.linalg.slogdet(wmix)
            if sign == 0 or not np.isfinite(wmix).all():
                raise DivergenceError(f"mixing matrix of block {j} is singular")

    def mixing_matrices(self):
        return [wmix for (_, _, wmix) in self._blocks]

    # ---- forward / inverse ----------------------------------------------

    def _check_input(self, r) -> tuple[np.ndarray, bool]:
        x = np.asarray(r, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeMismatchError(
                f"expected inputs of dimension {self.dim}, got shape {np.shape(r)}"
            )
        if not np.isfinite(x).all():
            raise NonFiniteValueError("flow input contains NaN or infinity")
        return x, single

    def _mlp_forward(self, net: _Mlp, x, rng, caching):
        training = self.mode == TRAINING
        inputs = [] if caching else None
        derivs = [] if caching else None
        h = x
        last = len(net.weights) - 1
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            if caching:
                inputs.append(h)
            pre = h @ w
            pre += b
            if i == last:
                h = pre
                continue
            if training and self.dropout_rate > 0.0:
                # rectifier and inverted dropout share one multiplicative factor
                live = (pre > 0.0) & (rng.random(pre.shape) >= self.dropout_rate)
                deriv = np.where(live, 1.0 / (1.0 - self.dropout_rate), 0.0)
                h = pre * deriv
            elif caching:
                deriv = (pre > 0.0).astype(np.float64)
                h = pre * deriv
            else:
                h = np.maximum(pre, 0.0, out=pre)
                deriv = None
            if caching:
                derivs.append(deriv)
        return h, (inputs, derivs)

    def forward(self, r, rng=None, retain=None):
        """Map inputs to latent z; returns (z, per-sample log-det).

        In training mode the pass is cached for backward() and, when
        dropout is active, `rng` must supply the dropout stream.
        """
        x, single = self._check_input(r)
        training = self.mode == TRAINING
        if training and self.dropout_rate > 0.0 and rng is None:
            raise ValueError("training-mode forward with dropout requires an rng")
        caching = training if retain is None else retain

        half = self.dim // 2
        raw = x
        x = (x - self.input_shift) / self.input_scale
        log_det = np.full(x.shape[0], -np.log(self.input_scale).sum())
        cache = _ForwardCache(raw=raw, z=x) if caching else None

        for j, (net_a, net_b, wmix) in enumerate(self._blocks):
            u1, u2 = x[:, :half], x[:, half:]
            a_out, cache_a = self._mlp_forward(net_a, u2, rng, caching)
            s2 = clamp_scale(a_out[:, :half], self.clamp)
            v1 = u1 * np.exp(s2) + a_out[:, half:]
            b_out, cache_b = self._mlp_forward(net_b, v1, rng, caching)
            s1 = clamp_scale(b_out[:, :half], self.clamp)
            v2 = u2 * np.exp(s1) + b_out[:, half:]
            y = np.concatenate([v1, v2], axis=1)
            sign, labs = np.linalg.slogdet(wmix)
            if sign == 0 or not np.isfinite(labs):
                raise DivergenceError(f"mixing matrix of block {j} is singular")
            z = y @ wmix.T
            if not np.isfinite(z).all():
                raise NonFiniteValueError(f"non-finite intermediate in block {j}")
            log_det += s2.sum(axis=1) + s1.sum(axis=1) + labs
            if caching:
                cache.blocks.append(
                    _BlockCache(u1=u1, u2=u2, s1=s1, s2=s2, y=y, mlp_a=cache_a, mlp_b=cache_b)
                )
            x = z

        if caching:
            cache.z = x
            self._cache = cache
        if single:
            return x[0], float(log_det[0])
        return x, log_det

    def inverse(self, z):
        """Exact inverse of forward(); inference mode only."""
        if self.mode != INFERENCE:
            raise RuntimeError("inverse() requires inference mode (dropout breaks bijectivity)")
        x, single = self._check_input(z)
        half = self.dim // 2
        for j in reversed(range(self.n_blocks)):
            net_a, net_b, wmix = self._blocks[j]
            try:
                y = np.linalg.solve(wmix, x.T).T
            except np.linalg.LinAlgError as exc:
                raise DivergenceError(f"mixing matrix of block {j} is singular") from exc
            v1, v2 = y[:, :half], y[:, half:]
            b_out, _ = self._mlp_forward(net_b, v1, None, False)
            s1 = clamp_scale(b_out[:, :half], self.clamp)
            u2 = (v2 - b_out[:, half:]) * np.exp(-s1)
            a_out, _ = self._mlp_forward(net_a, u2, None, False)
            s2 = clamp_scale(a_out[:, :half], self.clamp)
            u1 = (v1 - a_out[:, half:]) * np.exp(-s2)
            x = np.concatenate([u1, u2], axis=1)
            if not np.isfinite(x).all():
                raise NonFiniteValueError(f"non-finite intermediate inverting block {j}")
        x = x * self.input_scale + self.input_shift
        return x[0] if single else x

    def log_prob(self, r, rng=None):
        """Exact log-density under the flow with a standard-normal base."""
        z, log_det = self.forward(r, rng=rng)
        zz = np.atleast_2d(z)
        ll = -0.5 * (self.dim * LOG_2PI + (zz * zz).sum(axis=1)) + log_det
        return float(ll[0]) if np.ndim(r) == 1 else ll

    # ---- reverse mode ----------------------------------------------------

    def _mlp_backward(self, net: _Mlp, grad_net: _Mlp, g, mlp_cache, rows):
        # every weight/bias gradient is produced exactly once per backward,
        # so write instead of accumulate (grads buffer is never pre-zeroed)
        inputs, derivs = mlp_cache
        for i in reversed(range(len(net.weights))):
            x_in = inputs[i][rows]
            np.matmul(x_in.T, g, out=grad_net.weights[i])
            np.sum(g, axis=0, out=grad_net.biases[i])
            g = g @ net.weights[i].T
            if i > 0:
                g = g * derivs[i - 1][rows]
        return g

    def backward(self, r, upstream):
        """Gradient of sum_i upstream_i * log_prob(r_i) w.r.t. all parameters.

        Requires the cache left by the latest training-mode (or retained)
        forward pass over the same inputs. Rows with zero upstream weight
        are skipped; they shaped the loss only through quantile selection,
        which carries no gradient. Returns the flat gradient buffer (valid
        until the next backward call).
        """
        cache = self._cache
        if cache is None:
            raise MissingCacheError("no cached forward pass; run forward() in training mode")
        x, _ = self._check_input(r)
        if x is not cache.raw and not (
            x.shape == cache.raw.shape and np.array_equal(cache.raw, x)
        ):
            raise MissingCacheError("cached forward pass does not match these inputs")
        up = np.asarray(upstream, dtype=np.float64)
        if up.shape != (cache.raw.shape[0],):
            raise ShapeMismatchError(
                f"upstream weights must have shape ({cache.raw.shape[0]},), got {up.shape}"
            )
        if not np.isfinite(up).all():
            raise NonFiniteValueError("upstream weights contain NaN or infinity")

        half = self.dim // 2
        alpha = self.clamp
        rows = np.flatnonzero(up)
        up_total = up.sum()
        up_col = up[rows, None]

        gz = -up_col * cache.z[rows]
        for j in reversed(range(self.n_blocks)):
            net_a, net_b, wmix = self._blocks[j]
            grad_a, grad_b, grad_w = self._grad_blocks[j]
            blk = cache.blocks[j]

            gy = gz @ wmix
            np.matmul(gz.T, blk.y[rows], out=grad_w)
            if up_total != 0.0:
                # d(log|det W|)/dW summed over samples with their weights
                grad_w += up_total * np.linalg.inv(wmix).T
            gv1 = gy[:, :half]
            gv2 = gy[:, half:]

            s1 = blk.s1[rows]
            e1 = np.exp(s1)
            gs1 = gv2 * blk.u2[rows] * e1 + up_col
            gu2 = gv2 * e1
            gs1_raw = gs1 * (1.0 - (s1 / alpha) ** 2)
            gv1 = gv1 + self._mlp_backward(
                net_b, grad_b, np.concatenate([gs1_raw, gv2], axis=1), blk.mlp_b, rows
            )

            s2 = blk.s2[rows]
            e2 = np.exp(s2)
            gs2 = gv1 * blk.u1[rows] * e2 + up_col
            gu1 = gv1 * e2
            gs2_raw = gs2 * (1.0 - (s2 / alpha) ** 2)
            gu2 = gu2 + self._mlp_backward(
                net_a, grad_a, np.concatenate([gs2_raw, gv1], axis=1), blk.mlp_a, rows
            )
            gz = np.concatenate([gu1, gu2], axis=1)
        # the input shift/scale layer holds no trainable parameters
        return self._grad

    # ---- persistence ------------------------------------------------------

    def save(self, path) -> None:
        """Write the QODM v1 checkpoint; load() restores it bit-for-bit."""
        with open(path, "wb") as fh:
            fh.write(
                _MODEL_HEADER.pack(
                    MODEL_MAGIC,
                    MODEL_VERSION,
                    self.dim,
                    self.n_blocks,
                    self.fc_layers,
                    self.fc_neurons,
                    self.clamp,
                )
            )
            fh.write(np.ascontiguousarray(self.input_shift, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.input_scale, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.params, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "FlowModel":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _MODEL_HEADER.size:
            raise TruncatedPayloadError(f"{path}: file shorter than the model header")
        magic, version, dim, blocks, fc_layers, fc_neurons, clamp = _MODEL_HEADER.unpack(
            raw[: _MODEL_HEADER.size]
        )
        if magic != MODEL_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        if version != MODEL_VERSION:
            raise UnsupportedVersionError(f"{path}: unsupported model version {version}")
        model = cls(dim, blocks, fc_layers, fc_neurons, clamp)
        body = raw[_MODEL_HEADER.size :]
        need = (2 * dim + model.params.shape[0]) * 8
        if len(body) < need:
            raise TruncatedPayloadError(
                f"{path}: payload has {len(body)} bytes, header implies {need}"
            )
        if len(body) > need:
            raise TruncatedPayloadError(f"{path}: {len(body) - need} trailing bytes")
        values = np.frombuffer(body, dtype="<f8")
        if not np.isfinite(values).all():
            raise NonFiniteValueError(f"{path}: checkpoint contains non-finite values")
        model.input_shift = values[:dim].copy()
        model.input_scale = values[dim : 2 * dim].copy()
        if np.any(model.input_scale <= 0):
            raise NonFiniteValueError(f"{path}: non-positive input scale")
        model.params[:] = values[2 * dim :]
        model.check_mixing_invertible()
        return model
