"""Vector-variant Glow flow: invertible blocks with exact log-determinants.

A model is an ordered stack of blocks over feature dimension D with a
standard-normal base. Each Glow block is (ActNorm, invertible linear in
PLU form, affine coupling); RealNVP mode keeps only the couplings. The
change-of-variables identity gives exact densities:

    log p(x) = log N(f(x); 0, I) + sum of per-layer log|det J|

Gradients of the mean negative log-likelihood are hand-derived per layer
(see each ``backward``), so training needs no autodiff framework.
Parameters are float32; log-det and loss reductions run in float64.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu, solve_triangular

from . import metrics
from .errors import FormatError, NonFiniteError, ShapeError, ValidationError
from .features import l2_normalize
from .numerics import AdamState, LinearLayer, adam_step, check_matrix, relu, relu_backward

LOG_2PI = math.log(2.0 * math.pi)

# couplings predict s = SCALE_BOUND * tanh(raw); keeps early log-dets bounded
SCALE_BOUND = 2.0

MODEL_MAGIC = b"FLOD"
MODEL_VERSION = 1
FLAG_NORMALIZED = 1
FLAG_REALNVP = 2


class ActNorm:
    """Per-dimension affine ``y = exp(log_scale) * x + bias``.

    Parameters come from data-dependent initialization: after
    ``init_from_batch`` the init batch maps to zero mean, unit variance per
    dimension. Log-det is ``sum(log_scale)``, exact.
    """

    def __init__(self, dim: int, dtype=np.float32):
        self.dim = dim
        self.log_scale = np.zeros(dim, dtype=dtype)
        self.bias = np.zeros(dim, dtype=dtype)
        self.grad_log_scale = np.zeros_like(self.log_scale)
        self.grad_bias = np.zeros_like(self.bias)
        self.initialized = False

    def init_from_batch(self, x: np.ndarray) -> None:
        if x.shape[0] < 2:
            raise ValidationError(f"actnorm init needs >= 2 rows, got {x.shape[0]}")
        mean = x.mean(axis=0, dtype=np.float64)
        std = x.std(axis=0, dtype=np.float64)
        dead = np.flatnonzero(std == 0)
        if dead.size:
            raise ValidationError(
                f"actnorm init: zero variance in dimension {int(dead[0])}"
            )
        self.log_scale = (-np.log(std)).astype(self.log_scale.dtype)
        self.bias = (-mean / std).astype(self.bias.dtype)
        self.grad_log_scale = np.zeros_like(self.log_scale)
        self.grad_bias = np.zeros_like(self.bias)
        self.initialized = True

    def forward(self, x: np.ndarray):
        if not self.initialized:
            raise ValidationError("actnorm used before data-dependent initialization")
        y = x * np.exp(self.log_scale) + self.bias
        ld = np.full(x.shape[0], float(np.sum(self.log_scale, dtype=np.float64)))
        return y, ld, x

    def inverse(self, y: np.ndarray) -> np.ndarray:
        if not self.initialized:
            raise ValidationError("actnorm used before data-dependent initialization")
        return (y - self.bias) * np.exp(-self.log_scale)

    def backward(self, cache: np.ndarray, grad_y: np.ndarray, ld_coeff: float) -> np.ndarray:
        x = cache
        scale = np.exp(self.log_scale)
        self.grad_bias += grad_y.sum(axis=0)
        self.grad_log_scale += (grad_y * x).sum(axis=0) * scale + ld_coeff * x.shape[0]
        return grad_y * scale

    def zero_grad(self) -> None:
        self.grad_log_scale[...] = 0
        self.grad_bias[...] = 0

    def params(self, prefix: str):
        return [
            (f"{prefix}.log_scale", self.log_scale, self.grad_log_scale),
            (f"{prefix}.bias", self.bias, self.grad_bias),
        ]


class InvertibleLinear:
    """Dense invertible map ``y = W x`` with W = P L U.

    P is a fixed permutation, L unit lower triangular, U upper triangular
    with its diagonal stored as sign and log-magnitude, so W is invertible
    by construction and ``log|det W| = sum(log_diag)`` in O(D). Initialized
    from the PLU factorization of a seeded random orthogonal matrix
    (log-det 0); identity when no generator is given.
    """

    def __init__(self, dim: int, rng: np.random.Generator | None = None, dtype=np.float32):
        self.dim = dim
        if rng is None:
            self.perm = np.arange(dim, dtype=np.int64)
            self.lower = np.zeros((dim, dim), dtype=dtype)
            self.upper = np.zeros((dim, dim), dtype=dtype)
            self.log_diag = np.zeros(dim, dtype=dtype)
            self.sign_diag = np.ones(dim, dtype=dtype)
        else:
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            p_mat, l_mat, u_mat = lu(q)
            self.perm = np.argmax(p_mat, axis=1).astype(np.int64)
            self.lower = np.tril(l_mat, -1).astype(dtype)
            self.upper = np.triu(u_mat, 1).astype(dtype)
            diag = np.diag(u_mat)
            self.sign_diag = np.sign(diag).astype(dtype)
            self.log_diag = np.log(np.abs(diag)).astype(dtype)
        self.inv_perm = np.argsort(self.perm)
        self.grad_lower = np.zeros_like(self.lower)
        self.grad_upper = np.zeros_like(self.upper)
        self.grad_log_diag = np.zeros_like(self.log_diag)

    def _factors(self):
        # factor math runs in float64 regardless of storage precision so
        # forward/inverse agree to well below the float32 output rounding
        eye = np.eye(self.dim)
        l_eff = np.tril(self.lower.astype(np.float64), -1) + eye
        u_eff = np.triu(self.upper.astype(np.float64), 1) + np.diag(
            self.sign_diag.astype(np.float64) * np.exp(self.log_diag.astype(np.float64))
        )
        return l_eff, u_eff

    def weight(self) -> np.ndarray:
        l_eff, u_eff = self._factors()
        return (l_eff @ u_eff)[self.perm]  # row i of W is row perm[i] of L@U

    def forward(self, x: np.ndarray):
        y = (x.astype(np.float64) @ self.weight().T).astype(x.dtype)
        ld = np.full(x.shape[0], float(np.sum(self.log_diag, dtype=np.float64)))
        return y, ld, x

    def inverse(self, y: np.ndarray) -> np.ndarray:
        l_eff, u_eff = self._factors()
        rhs = y.T.astype(np.float64)[self.inv_perm]  # P^T y
        w = solve_triangular(l_eff, rhs, lower=True, unit_diagonal=True)
        return solve_triangular(u_eff, w, lower=False).T.astype(y.dtype)

    def backward(self, cache: np.ndarray, grad_y: np.ndarray, ld_coeff: float) -> np.ndarray:
        x = cache
        l_eff, u_eff = self._factors()
        grad_w = grad_y.T.astype(np.float64) @ x.astype(np.float64)
        m = grad_w[self.inv_perm]  # P^T grad_w
        self.grad_lower += np.tril(m @ u_eff.T, -1)
        du = l_eff.T @ m
        self.grad_upper += np.triu(du, 1)
        self.grad_log_diag += np.diag(du) * np.diag(u_eff) + ld_coeff * x.shape[0]
        return (grad_y.astype(np.float64) @ self.weight()).astype(grad_y.dtype)

    def zero_grad(self) -> None:
        self.grad_lower[...] = 0
        self.grad_upper[...] = 0
        self.grad_log_diag[...] = 0

    def params(self, prefix: str):
        return [
            (f"{prefix}.lower", self.lower, self.grad_lower),
            (f"{prefix}.upper", self.upper, self.grad_upper),
            (f"{prefix}.log_diag", self.log_diag, self.grad_log_diag),
        ]


class Coupling:
    """Affine coupling: half the coordinates scale/shift the other half.

    The vector splits into contiguous halves at a fixed point (the first
    segment gets ceil(D/2)); which half passes through unchanged alternates
    with ``parity``, so two consecutive blocks between them transform every
    coordinate. One two-layer ReLU MLP maps the pass half to (raw_s, t);
    the scale is bounded, s = SCALE_BOUND * tanh(raw_s), and the output
    layer starts at zero so a fresh coupling is the identity. Log-det is
    sum(s).
    """

    def __init__(
        self,
        dim: int,
        hidden_width: int,
        parity: int,
        rng: np.random.Generator | None,
        dtype=np.float32,
    ):
        if dim < 2:
            raise ShapeError(f"coupling needs dim >= 2, got {dim}")
        self.dim = dim
        self.parity = parity % 2
        cut = (dim + 1) // 2
        if self.parity == 0:
            self.pass_slice = slice(0, cut)
            self.trans_slice = slice(cut, dim)
        else:
            self.pass_slice = slice(cut, dim)
            self.trans_slice = slice(0, cut)
        self.n_pass = self.pass_slice.stop - self.pass_slice.start
        self.n_trans = dim - self.n_pass
        self.w1 = LinearLayer(self.n_pass, hidden_width, rng=rng, dtype=dtype)
        self.w2 = LinearLayer(hidden_width, 2 * self.n_trans, zero_init=True, dtype=dtype)

    def _scale_translate(self, x_pass: np.ndarray):
        h_pre = self.w1.forward(x_pass)
        h = relu(h_pre)
        raw = self.w2.forward(h)
        tanh_rs = np.tanh(raw[:, : self.n_trans])
        s = SCALE_BOUND * tanh_rs
        t = raw[:, self.n_trans :]
        return h_pre, h, tanh_rs, s, t

    def forward(self, x: np.ndarray):
        x_pass = x[:, self.pass_slice]
        x_trans = x[:, self.trans_slice]
        h_pre, h, tanh_rs, s, t = self._scale_translate(x_pass)
        exp_s = np.exp(s)
        y = np.empty_like(x)
        y[:, self.pass_slice] = x_pass
        y[:, self.trans_slice] = x_trans * exp_s + t
        ld = s.sum(axis=1, dtype=np.float64)
        cache = (x_pass, x_trans, h_pre, h, tanh_rs, exp_s)
        return y, ld, cache

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y_pass = y[:, self.pass_slice]
        _, _, _, s, t = self._scale_translate(y_pass)
        x = np.empty_like(y)
        x[:, self.pass_slice] = y_pass
        x[:, self.trans_slice] = (y[:, self.trans_slice] - t) * np.exp(-s)
        return x

    def backward(self, cache, grad_y: np.ndarray, ld_coeff: float) -> np.ndarray:
        x_pass, x_trans, h_pre, h, tanh_rs, exp_s = cache
        gy_pass = grad_y[:, self.pass_slice]
        gy_trans = grad_y[:, self.trans_slice]
        ds = gy_trans * x_trans * exp_s + ld_coeff
        dt = gy_trans
        draw_s = ds * (SCALE_BOUND * (1.0 - tanh_rs * tanh_rs))
        draw = np.concatenate([draw_s, dt], axis=1)
        dh = self.w2.backward(h, draw)
        dh_pre = relu_backward(h_pre, dh)
        dx_pass_mlp = self.w1.backward(x_pass, dh_pre)
        grad_x = np.empty_like(grad_y)
        grad_x[:, self.trans_slice] = gy_trans * exp_s
        grad_x[:, self.pass_slice] = gy_pass + dx_pass_mlp
        return grad_x

    def zero_grad(self) -> None:
        self.w1.zero_grad()
        self.w2.zero_grad()

    def params(self, prefix: str):
        return self.w1.params(f"{prefix}.net1") + self.w2.params(f"{prefix}.net2")


class FlowModel:
    """Ordered invertible stack with a standard-normal base distribution."""

    def __init__(
        self,
        dim: int,
        layers: list,
        block_count: int,
        hidden_width: int,
        realnvp: bool = False,
        normalized: bool = False,
        dtype=np.float32,
    ):
        self.dim = dim
        self.layers = layers
        self.block_count = block_count
        self.hidden_width = hidden_width
        self.realnvp = realnvp
        self.normalized = normalized
        self.dtype = np.dtype(dtype)

    @classmethod
    def create(
        cls,
        dim: int,
        blocks: int,
        hidden_width: int,
        rng: np.random.Generator | None = None,
        realnvp: bool = False,
        identity: bool = False,
        dtype=np.float32,
    ) -> "FlowModel":
        """Build a fresh model; couplings start as the identity.

        With ``identity=True`` the linear layers are identity and ActNorms
        count as initialized, so the whole model is the identity map.
        """
        if dim < 2:
            raise ShapeError(f"flow dim must be >= 2, got {dim}")
        if blocks < 1:
            raise ValidationError(f"blocks must be >= 1, got {blocks}")
        layers: list = []
        for b in range(blocks):
            if not realnvp:
                actnorm = ActNorm(dim, dtype=dtype)
                if identity:
                    actnorm.initialized = True
                layers.append(actnorm)
                layers.append(InvertibleLinear(dim, rng=None if identity else rng, dtype=dtype))
            layers.append(Coupling(dim, hidden_width, parity=b, rng=rng, dtype=dtype))
        return cls(dim, layers, blocks, hidden_width, realnvp=realnvp, dtype=dtype)

    # -- inference -----------------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map data to base space; returns (z, per-sample log|det J|)."""
        z, log_det, _ = self._forward_cached(x, keep=False)
        return z, log_det

    def _forward_cached(self, x: np.ndarray, keep: bool):
        z = np.ascontiguousarray(check_matrix("flow input", x, cols=self.dim), dtype=self.dtype)
        log_det = np.zeros(z.shape[0], dtype=np.float64)
        caches = []
        for layer in self.layers:
            z, ld, cache = layer.forward(z)
            log_det += ld
            if keep:
                caches.append(cache)
        return z, log_det, caches

    def inverse(self, z: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(check_matrix("flow input", z, cols=self.dim), dtype=self.dtype)
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        return x

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        """Per-sample log density under the change-of-variables identity."""
        z, log_det = self.forward(x)
        z64 = z.astype(np.float64)
        base = -0.5 * self.dim * LOG_2PI - 0.5 * np.sum(z64 * z64, axis=1)
        return base + log_det

    def sample(self, n: int, seed: int) -> np.ndarray:
        if n < 1:
            raise ValidationError(f"sample: n must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        if self.dtype == np.float32:
            z = rng.standard_normal((n, self.dim), dtype=np.float32)
        else:
            z = rng.standard_normal((n, self.dim)).astype(self.dtype)
        return self.inverse(z)

    # -- training ------------------------------------------------------------

    def actnorm_init(self, batch: np.ndarray) -> None:
        """Sequential data-dependent init: each ActNorm standardizes its input."""
        x = np.ascontiguousarray(check_matrix("actnorm batch", batch, cols=self.dim), dtype=self.dtype)
        for layer in self.layers:
            if isinstance(layer, ActNorm):
                layer.init_from_batch(x)
            x, _, _ = layer.forward(x)

    def nll_backward(self, x: np.ndarray) -> float:
        """Mean NLL of the batch (nats/sample); accumulates parameter grads."""
        z, log_det, caches = self._forward_cached(x, keep=True)
        n = z.shape[0]
        z64 = z.astype(np.float64)
        loss = (
            0.5 * float(np.sum(z64 * z64)) / n
            + 0.5 * self.dim * LOG_2PI
            - float(np.mean(log_det))
        )
        grad = (z64 / n).astype(self.dtype)
        ld_coeff = -1.0 / n
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(cache, grad, ld_coeff)
        return loss

    def mean_nll(self, x: np.ndarray) -> float:
        return -float(np.mean(self.log_prob(x)))

    def parameters(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.params(f"layer{i}.{type(layer).__name__}"))
        return out

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()


# -- training loop -----------------------------------------------------------


@dataclass
class TrainConfig:
    """Hyperparameters for flow training. Defaults follow the one-epoch recipe."""

    blocks: int = 10
    hidden_width: int = 2048
    learning_rate: float = 1e-4
    epochs: int = 1
    batch_size: int = 256
    seed: int = 0
    normalize_features: bool = True
    eval_every: int = 1
    arch: str = "glow"

    def validate(self) -> "TrainConfig":
        if self.blocks < 1 or self.hidden_width < 1 or self.batch_size < 1:
            raise ValidationError("blocks, hidden_width, batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.arch not in ("glow", "realnvp"):
            raise ValidationError(f"arch must be 'glow' or 'realnvp', got {self.arch!r}")
        return self


@dataclass
class HistoryEntry:
    epoch: int
    step: int
    train_nll: float
    val_nll: float
    ood_nll: float | None = None
    auroc: float | None = None


@dataclass
class TrainHistory:
    """Per-evaluation training record; NLL values are nats per dimension."""

    entries: list[HistoryEntry] = field(default_factory=list)

    CSV_HEADER = "epoch,step,train_nll,val_nll,ood_nll,auroc"

    def to_csv(self, path: str | Path) -> None:
        lines = [self.CSV_HEADER]
        for e in self.entries:
            ood = "" if e.ood_nll is None else f"{e.ood_nll:.6f}"
            auroc = "" if e.auroc is None else f"{e.auroc:.6f}"
            lines.append(f"{e.epoch},{e.step},{e.train_nll:.6f},{e.val_nll:.6f},{ood},{auroc}")
        Path(path).write_text("\n".join(lines) + "\n")

    def by_epoch(self, epoch: int) -> HistoryEntry:
        for e in self.entries:
            if e.epoch == epoch:
                return e
        raise KeyError(f"no history entry for epoch {epoch}")


def train(
    features_train: np.ndarray,
    features_val: np.ndarray,
    ood_probe: np.ndarray | None,
    config: TrainConfig,
) -> tuple[FlowModel, TrainHistory]:
    """Minimize mean NLL over shuffled mini-batches; deterministic per seed.

    History records the state at initialization (epoch 0) and then every
    ``eval_every`` epochs (always including the last): mean train/validation
    NLL in nats per dimension and, when an OOD probe is given, its NLL and
    the validation-vs-probe AUROC of the log-likelihood score.
    """
    config.validate()
    x_train = check_matrix("features_train", features_train)
    if x_train.shape[0] < 2:
        raise ValidationError(f"training set needs >= 2 rows, got {x_train.shape[0]}")
    dim = x_train.shape[1]
    x_val = check_matrix("features_val", features_val, cols=dim)
    x_ood = None if ood_probe is None else check_matrix("ood_probe", ood_probe, cols=dim)

    if config.normalize_features:
        x_train, _ = l2_normalize(x_train)
        x_val, _ = l2_normalize(x_val)
        if x_ood is not None:
            x_ood, _ = l2_normalize(x_ood)

    rng = np.random.default_rng(config.seed)
    model = FlowModel.create(
        dim,
        blocks=config.blocks,
        hidden_width=config.hidden_width,
        rng=rng,
        realnvp=config.arch == "realnvp",
    )
    model.normalized = config.normalize_features

    n = x_train.shape[0]
    first_order = rng.permutation(n)
    model.actnorm_init(x_train[first_order[: config.batch_size]])

    named = model.parameters()
    names = [name for name, _, _ in named]
    params = [p for _, p, _ in named]
    grads = [g for _, _, g in named]
    state = AdamState.for_params(params)

    history = TrainHistory()

    def record(epoch: int, step: int, train_nll: float) -> None:
        val_nll = model.mean_nll(x_val) / dim
        ood_nll = auroc = None
        if x_ood is not None:
            val_scores = model.log_prob(x_val)
            ood_scores = model.log_prob(x_ood)
            ood_nll = -float(np.mean(ood_scores)) / dim
            auroc = metrics.auroc(val_scores, ood_scores)
        history.entries.append(
            HistoryEntry(epoch, step, train_nll, val_nll, ood_nll, auroc)
        )

    record(0, 0, model.mean_nll(x_train) / dim)

    step = 0
    for epoch in range(1, config.epochs + 1):
        order = first_order if epoch == 1 else rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = x_train[order[start : start + config.batch_size]]
            model.zero_grad()
            loss = model.nll_backward(batch)
            step += 1
            if not math.isfinite(loss):
                raise NonFiniteError(f"training loss diverged at step {step}")
            adam_step(params, grads, state, config.learning_rate, names=names)
            loss_sum += loss * batch.shape[0]
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record(epoch, step, loss_sum / n / dim)

    return model, history


# -- serialization -----------------------------------------------------------


def serialize(model: FlowModel) -> bytes:
    """Little-endian binary model image; see deserialize for the layout."""
    flags = (FLAG_NORMALIZED if model.normalized else 0) | (
        FLAG_REALNVP if model.realnvp else 0
    )
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(
        struct.pack(
            "<IIIII", MODEL_VERSION, model.dim, model.block_count, model.hidden_width, flags
        )
    )
    d = model.dim

    def write_f32(arr: np.ndarray) -> None:
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    for layer in model.layers:
        if isinstance(layer, ActNorm):
            if not layer.initialized:
                raise ValidationError("cannot serialize a model with uninitialized actnorm")
            write_f32(layer.log_scale)
            write_f32(layer.bias)
        elif isinstance(layer, InvertibleLinear):
            buf.write(layer.perm.astype("<u4").tobytes())
            tril_i, tril_j = np.tril_indices(d, -1)
            write_f32(layer.lower[tril_i, tril_j])
            triu_i, triu_j = np.triu_indices(d, 1)
            write_f32(layer.upper[triu_i, triu_j])
            for i in range(d):
                buf.write(struct.pack("<bf", int(layer.sign_diag[i]), float(layer.log_diag[i])))
        else:
            for lin in (layer.w1, layer.w2):
                write_f32(lin.weight)
                write_f32(lin.bias)
    return buf.getvalue()


def deserialize(data: bytes) -> FlowModel:
    """Parse a model image: 4-byte magic, u32 version/D/blocks/hidden/flags,
    then per block ActNorm (log_scale, bias), permutation (u32), strictly-lower
    L entries, strictly-upper U entries, diagonal (sign i8, log-magnitude f32)
    pairs, and the coupling MLP weights/biases row-major — all f32. RealNVP-mode
    files (flag bit 1) carry couplings only.
    """
    cursor = 0

    def take(n: int) -> bytes:
        nonlocal cursor
        if cursor + n > len(data):
            raise FormatError(
                f"model file truncated: needed {cursor + n} bytes, have {len(data)}"
            )
        out = data[cursor : cursor + n]
        cursor += n
        return out

    if take(4) != MODEL_MAGIC:
        raise FormatError(f"bad model magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    version, dim, block_count, hidden_width, flags = struct.unpack("<IIIII", take(20))
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    if dim < 2 or block_count < 1 or hidden_width < 1:
        raise FormatError(
            f"model header disagrees with itself: D={dim}, blocks={block_count}, "
            f"hidden={hidden_width}"
        )
    realnvp = bool(flags & FLAG_REALNVP)

    def read_f32(count: int, shape=None) -> np.ndarray:
        arr = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32)
        return arr if shape is None else arr.reshape(shape)

    layers: list = []
    for b in range(block_count):
        if not realnvp:
            actnorm = ActNorm(dim)
            actnorm.log_scale = read_f32(dim)
            actnorm.bias = read_f32(dim)
            actnorm.grad_log_scale = np.zeros_like(actnorm.log_scale)
            actnorm.grad_bias = np.zeros_like(actnorm.bias)
            actnorm.initialized = True
            layers.append(actnorm)

            linear = InvertibleLinear(dim)
            perm = np.frombuffer(take(4 * dim), dtype="<u4").astype(np.int64)
            if sorted(perm.tolist()) != list(range(dim)):
                raise FormatError(f"block {b}: stored permutation is not a permutation of 0..{dim - 1}")
            linear.perm = perm
            linear.inv_perm = np.argsort(perm)
            tril_i, tril_j = np.tril_indices(dim, -1)
            linear.lower = np.zeros((dim, dim), dtype=np.float32)
            linear.lower[tril_i, tril_j] = read_f32(tril_i.size)
            triu_i, triu_j = np.triu_indices(dim, 1)
            linear.upper = np.zeros((dim, dim), dtype=np.float32)
            linear.upper[triu_i, triu_j] = read_f32(triu_i.size)
            signs = np.empty(dim, dtype=np.float32)
            logmags = np.empty(dim, dtype=np.float32)
            for i in range(dim):
                s, r = struct.unpack("<bf", take(5))
                if s not in (-1, 1):
                    raise FormatError(f"block {b}: diagonal sign must be +-1, got {s}")
                signs[i], logmags[i] = s, r
            linear.sign_diag = signs
            linear.log_diag = logmags
            linear.grad_lower = np.zeros_like(linear.lower)
            linear.grad_upper = np.zeros_like(linear.upper)
            linear.grad_log_diag = np.zeros_like(linear.log_diag)
            layers.append(linear)

        coupling = Coupling(dim, hidden_width, parity=b, rng=None)
        coupling.w1.weight = read_f32(hidden_width * coupling.n_pass, (hidden_width, coupling.n_pass))
        coupling.w1.bias = read_f32(hidden_width)
        coupling.w2.weight = read_f32(2 * coupling.n_trans * hidden_width, (2 * coupling.n_trans, hidden_width))
        coupling.w2.bias = read_f32(2 * coupling.n_trans)
        coupling.w1.grad_weight = np.zeros_like(coupling.w1.weight)
        coupling.w1.grad_bias = np.zeros_like(coupling.w1.bias)
        coupling.w2.grad_weight = np.zeros_like(coupling.w2.weight)
        coupling.w2.grad_bias = np.zeros_like(coupling.w2.bias)
        layers.append(coupling)

    if cursor != len(data):
        raise FormatError(
            f"model file has {len(data) - cursor} trailing bytes; header dimensions "
            "disagree with the payload"
        )
    return FlowModel(
        dim,
        layers,
        block_count,
        hidden_width,
        realnvp=realnvp,
        normalized=bool(flags & FLAG_NORMALIZED),
    )


def save_model(path: str | Path, model: FlowModel) -> None:
    Path(path).write_bytes(serialize(model))


def load_model(path: str | Path) -> FlowModel:
    return deserialize(Path(path).read_bytes())
