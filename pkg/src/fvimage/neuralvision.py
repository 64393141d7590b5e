"""Convolutional networks mapping dispersion images (or wavefields) to Vs images.

Layers, backpropagation, and the Adam/MAE trainer are implemented directly on
numpy; convolutions go through im2col so the heavy lifting is a BLAS matmul.
Two presets reproduce the frequency-velocity and time-distance architectures
layer for layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError, ValidationError


# ---------------------------------------------------------------------------
# architecture description


@dataclass(frozen=True)
class Conv2D:
    kernel_h: int
    kernel_w: int
    channels: int
    activation: str = "relu"  # relu | linear


@dataclass(frozen=True)
class MaxPool2D:
    pool_h: int
    pool_w: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "linear"


@dataclass(frozen=True)
class Reshape:
    rows: int
    cols: int


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple  # (H, W, C)
    layers: tuple

    def output_shapes(self) -> list:
        """Shape after every layer; raises if any layer is infeasible."""
        shapes = []
        shape = tuple(self.input_shape)
        for li, layer in enumerate(self.layers):
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise ValidationError(f"layer {li}: conv2d needs a 3D input, got {shape}")
                h, w, _ = shape
                if h < layer.kernel_h or w < layer.kernel_w:
                    raise ValidationError(f"layer {li}: kernel larger than input {shape}")
                shape = (h - layer.kernel_h + 1, w - layer.kernel_w + 1, layer.channels)
            elif isinstance(layer, MaxPool2D):
                h, w, c = shape
                if h < layer.pool_h or w < layer.pool_w:
                    raise ValidationError(f"layer {li}: pool larger than input {shape}")
                shape = (h // layer.pool_h, w // layer.pool_w, c)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ValidationError(f"layer {li}: dense needs a flat input, got {shape}")
                shape = (layer.units,)
            elif isinstance(layer, Reshape):
                if int(np.prod(shape)) != layer.rows * layer.cols:
                    raise ValidationError(
                        f"layer {li}: cannot reshape {shape} to {layer.rows}x{layer.cols}"
                    )
                shape = (layer.rows, layer.cols)
            else:
                raise ValidationError(f"layer {li}: unknown layer {layer!r}")
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self) -> tuple:
        return self.output_shapes()[-1]

    def to_dict(self) -> dict:
        entries = []
        for layer in self.layers:
            d = {"type": type(layer).__name__.lower()}
            d.update(vars(layer))
            entries.append(d)
        return {"input_shape": list(self.input_shape), "layers": entries}

    @staticmethod
    def from_dict(d: dict) -> "Architecture":
        kinds = {"conv2d": Conv2D, "maxpool2d": MaxPool2D, "flatten": Flatten,
                 "dense": Dense, "reshape": Reshape}
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            cls = kinds[entry.pop("type")]
            layers.append(cls(**entry))
        return Architecture(tuple(d["input_shape"]), tuple(layers))


def freq_velocity_architecture() -> Architecture:
    """400x76 dispersion image in, 24x48 normalized Vs image out."""
    return Architecture(
        input_shape=(400, 76, 1),
        layers=(
            Conv2D(3, 1, 32), MaxPool2D(3, 1),
            Conv2D(3, 1, 32), MaxPool2D(3, 1),
            Conv2D(3, 1, 64), MaxPool2D(1, 3),
            Conv2D(3, 3, 128), MaxPool2D(3, 3),
            Conv2D(3, 3, 128),
            Flatten(), Dense(1152), Reshape(24, 48),
        ),
    )


def time_distance_architecture() -> Architecture:
    """48x800 wavefield in, 24x48 normalized Vs image out."""
    return Architecture(
        input_shape=(48, 800, 1),
        layers=(
            Conv2D(1, 3, 32), MaxPool2D(1, 3),
            Conv2D(1, 3, 32), MaxPool2D(1, 3),
            Conv2D(1, 3, 64), MaxPool2D(2, 3),
            Conv2D(3, 3, 128), MaxPool2D(2, 2),
            Conv2D(3, 3, 128),
            Flatten(), Dense(1152), Reshape(24, 48),
        ),
    )


PRESETS = {
    "freq_velocity": freq_velocity_architecture,
    "time_distance": time_distance_architecture,
}


# ---------------------------------------------------------------------------
# network and forward/backward passes


@dataclass
class Network:
    architecture: Architecture
    params: list  # per layer: {} or {"kernel","bias"} / {"weight","bias"}
    dtype: str = "float32"
    metadata: dict = field(default_factory=dict)

    def astype(self, dtype) -> "Network":
        dt = np.dtype(dtype)
        params = [{k: v.astype(dt) for k, v in p.items()} for p in self.params]
        return Network(self.architecture, params, dt.name, dict(self.metadata))

    def n_parameters(self) -> int:
        return sum(int(v.size) for p in self.params for v in p.values())


def init_network(arch: Architecture, seed: int = 0, dtype="float32") -> Network:
    """Glorot-uniform kernels/weights, zero biases, per-layer seeded draws."""
    arch.output_shapes()  # validates feasibility
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xC0FFEE], dtype=np.uint64)))
    dt = np.dtype(dtype)
    params = []
    shape = tuple(arch.input_shape)
    for layer in arch.layers:
        if isinstance(layer, Conv2D):
            cin = shape[2]
            fan_in = layer.kernel_h * layer.kernel_w * cin
            fan_out = layer.kernel_h * layer.kernel_w * layer.channels
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            kernel = rng.uniform(-limit, limit,
                                 (layer.kernel_h, layer.kernel_w, cin, layer.channels))
            params.append({"kernel": kernel.astype(dt),
                           "bias": np.zeros(layer.channels, dt)})
            shape = (shape[0] - layer.kernel_h + 1, shape[1] - layer.kernel_w + 1,
                     layer.channels)
        elif isinstance(layer, Dense):
            fan_in = shape[0]
            limit = np.sqrt(6.0 / (fan_in + layer.units))
            weight = rng.uniform(-limit, limit, (fan_in, layer.units))
            params.append({"weight": weight.astype(dt),
                           "bias": np.zeros(layer.units, dt)})
            shape = (layer.units,)
        else:
            params.append({})
            if isinstance(layer, MaxPool2D):
                shape = (shape[0] // layer.pool_h, shape[1] // layer.pool_w, shape[2])
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Reshape):
                shape = (layer.rows, layer.cols)
    return Network(arch, params, dt.name, {"epochs_seen": 0, "seed": seed})


def _activate(y, activation):
    if activation == "relu":
        return np.maximum(y, 0.0)
    if activation == "linear":
        return y
    raise ValidationError(f"unknown activation {activation!r}")


def _conv_forward(x, kernel, bias):
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    # (n, ho, wo, cin, kh, kw) -> columns (n*ho*wo, kh*kw*cin)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n * ho * wo, kh * kw * cin)
    y = cols @ kernel.reshape(kh * kw * cin, cout)
    y += bias
    return y.reshape(n, ho, wo, cout), cols


def _conv_backward(grad_y, cols, kernel, x_shape):
    n, h, w, cin = x_shape
    kh, kw, _, cout = kernel.shape
    ho, wo = h - kh + 1, w - kw + 1
    g = grad_y.reshape(n * ho * wo, cout)
    grad_kernel = (cols.T @ g).reshape(kernel.shape)
    grad_bias = g.sum(axis=0)
    grad_cols = g @ kernel.reshape(kh * kw * cin, cout).T
    grad_cols = grad_cols.reshape(n, ho, wo, kh, kw, cin)
    grad_x = np.zeros(x_shape, dtype=grad_y.dtype)
    for dj in range(kh):  # col2im scatter-add over the small kernel footprint
        for di in range(kw):
            grad_x[:, dj:dj + ho, di:di + wo, :] += grad_cols[:, :, :, dj, di, :]
    return grad_x, grad_kernel, grad_bias


def _pool_forward(x, ph, pw):
    n, h, w, c = x.shape
    ho, wo = h // ph, w // pw
    cropped = x[:, :ho * ph, :wo * pw, :]
    blocks = cropped.reshape(n, ho, ph, wo, pw, c).transpose(0, 1, 3, 5, 2, 4)
    flat = blocks.reshape(n, ho, wo, c, ph * pw)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(grad_y, idx, x_shape, ph, pw):
    n, h, w, c = x_shape
    ho, wo = h // ph, w // pw
    flat = np.zeros((n, ho, wo, c, ph * pw), dtype=grad_y.dtype)
    np.put_along_axis(flat, idx[..., None], grad_y[..., None], axis=-1)
    blocks = flat.reshape(n, ho, wo, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
    grad_x = np.zeros(x_shape, dtype=grad_y.dtype)
    grad_x[:, :ho * ph, :wo * pw, :] = blocks.reshape(n, ho * ph, wo * pw, c)
    return grad_x


def _forward_batch(net: Network, x: np.ndarray, keep_caches: bool):
    """Run a (N, H, W, C) batch; optionally keep caches for backprop."""
    caches = []
    for layer, p in zip(net.architecture.layers, net.params):
        if isinstance(layer, Conv2D):
            y, cols = _conv_forward(x, p["kernel"], p["bias"])
            act = _activate(y, layer.activation)
            caches.append(("conv", cols, x.shape, y if layer.activation == "relu" else None))
            x = act
        elif isinstance(layer, MaxPool2D):
            y, idx = _pool_forward(x, layer.pool_h, layer.pool_w)
            caches.append(("pool", idx, x.shape))
            x = y
        elif isinstance(layer, Flatten):
            caches.append(("reshape", x.shape))
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dense):
            y = x @ p["weight"] + p["bias"]
            act = _activate(y, layer.activation)
            caches.append(("dense", x, y if layer.activation == "relu" else None))
            x = act
        elif isinstance(layer, Reshape):
            caches.append(("reshape", x.shape))
            x = x.reshape(x.shape[0], layer.rows, layer.cols)
        if not keep_caches:
            caches[-1] = None
    return x, caches


def _backward_batch(net: Network, caches, grad):
    grads = [None] * len(net.params)
    for li in range(len(net.architecture.layers) - 1, -1, -1):
        layer = net.architecture.layers[li]
        cache = caches[li]
        if isinstance(layer, Conv2D):
            _, cols, x_shape, pre = cache
            if pre is not None:
                grad = grad * (pre > 0)
            grad, gk, gb = _conv_backward(grad, cols, net.params[li]["kernel"], x_shape)
            grads[li] = {"kernel": gk, "bias": gb}
        elif isinstance(layer, MaxPool2D):
            _, idx, x_shape = cache
            grad = _pool_backward(grad, idx, x_shape, layer.pool_h, layer.pool_w)
        elif isinstance(layer, Dense):
            _, x, pre = cache
            if pre is not None:
                grad = grad * (pre > 0)
            grads[li] = {"weight": x.T @ grad, "bias": grad.sum(axis=0)}
            grad = grad @ net.params[li]["weight"].T
        else:
            grad = grad.reshape(cache[1])
    return grads


def _as_batch(net: Network, x: np.ndarray) -> np.ndarray:
    expected = tuple(net.architecture.input_shape)
    x = np.asarray(x, dtype=net.dtype)
    if x.shape == expected[:2]:
        x = x[None, :, :, None]
    elif x.shape == expected:
        x = x[None]
    elif x.shape[1:] == expected[:2]:
        x = x[:, :, :, None]
    elif x.shape[1:] != expected:
        raise ValidationError(
            f"input shape {x.shape} does not match architecture input {expected}"
        )
    return x


@dataclass
class VsImagePrediction:
    """Normalized network output plus its physical-unit rescaling."""

    normalized: np.ndarray
    vs_norm_max: float
    provenance: dict = field(default_factory=dict)

    @property
    def denormalized(self) -> np.ndarray:
        return self.normalized * self.vs_norm_max


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Raw network output; accepts a single input or a batch."""
    xb = _as_batch(net, x)
    single = np.asarray(x).ndim <= len(net.architecture.input_shape)
    out, _ = _forward_batch(net, xb, keep_caches=False)
    return out[0] if single else out


def predict(net: Network, x: np.ndarray, vs_norm_max: float | None = None,
            provenance: dict | None = None) -> VsImagePrediction:
    scale = vs_norm_max if vs_norm_max is not None else net.metadata.get("vs_norm_max")
    if scale is None or scale <= 0:
        raise ValidationError("vs_norm_max unknown; train the network or pass it explicitly")
    return VsImagePrediction(forward(net, x), float(scale), provenance or {})


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 16
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    split: tuple = (0.7, 0.1, 0.2)
    vs_norm_max: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValidationError(f"split fractions must sum to 1, got {self.split}")
        if self.vs_norm_max <= 0:
            raise ValidationError("vs_norm_max must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")


@dataclass
class TrainResult:
    network: Network
    train_mae: list
    val_mae: list
    val_mape: list
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def split_indices(n: int, split, seed: int):
    """Deterministic shuffled train/val/test partition."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 11], dtype=np.uint64)))
    order = rng.permutation(n)
    n_train = round(split[0] * n)
    n_val = round(split[1] * n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def mae_loss_and_grad(pred, target):
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad.astype(pred.dtype)


class AdamState:
    def __init__(self, params, config: TrainConfig):
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.t = 0
        self.config = config

    def update(self, params, grads):
        cfg = self.config
        self.t += 1
        b1t = 1.0 - cfg.beta1**self.t
        b2t = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g is None:
                continue
            for k in p:
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k]
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] ** 2
                p[k] -= (cfg.learning_rate * (m[k] / b1t)
                         / (np.sqrt(v[k] / b2t) + cfg.epsilon)).astype(p[k].dtype)


def evaluate_mae(net: Network, inputs, targets, batch_size=32) -> float:
    total, count = 0.0, 0
    for s in range(0, len(inputs), batch_size):
        xb = _as_batch(net, inputs[s:s + batch_size])
        out, _ = _forward_batch(net, xb, keep_caches=False)
        tb = np.asarray(targets[s:s + batch_size], dtype=out.dtype)
        total += float(np.sum(np.abs(out - tb)))
        count += tb.size
    return total / count


def evaluate_mape(net: Network, inputs, targets_norm, vs_norm_max, batch_size=32) -> float:
    """Physical-unit MAPE of denormalized predictions against true images."""
    total, count = 0.0, 0
    for s in range(0, len(inputs), batch_size):
        xb = _as_batch(net, inputs[s:s + batch_size])
        out, _ = _forward_batch(net, xb, keep_caches=False)
        pred = out * vs_norm_max
        true = np.asarray(targets_norm[s:s + batch_size], dtype=out.dtype) * vs_norm_max
        total += float(np.sum(np.abs(pred - true) / true))
        count += true.size
    return 100.0 * total / count


def train(inputs, targets, config: TrainConfig,
          architecture: Architecture | None = None,
          network: Network | None = None) -> TrainResult:
    """Minibatch Adam on MAE with a deterministic shuffle schedule.

    ``targets`` must already be normalized by config.vs_norm_max. Returns the
    trained network plus per-epoch training/validation curves; the test split
    is untouched and reported by index.
    """
    config.validate()
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if len(inputs) == 0:
        raise ValidationError("empty dataset")
    if len(inputs) != len(targets):
        raise ValidationError(f"{len(inputs)} inputs vs {len(targets)} targets")
    if network is None:
        if architecture is None:
            raise ValidationError("pass an architecture or a network to train")
        network = init_network(architecture, seed=config.seed)
    net = network
    if tuple(targets.shape[1:]) != tuple(net.architecture.output_shape):
        raise ValidationError(
            f"target shape {targets.shape[1:]} does not match network output "
            f"{net.architecture.output_shape}"
        )

    tr_idx, va_idx, te_idx = split_indices(len(inputs), config.split, config.seed)
    if len(tr_idx) == 0:
        raise ValidationError("training split is empty")
    adam = AdamState(net.params, config)
    train_mae, val_mae, val_mape = [], [], []

    for epoch in range(config.epochs):
        shuffle_rng = np.random.Generator(
            np.random.Philox(key=np.array([config.seed, 1000 + epoch], dtype=np.uint64)))
        order = tr_idx[shuffle_rng.permutation(len(tr_idx))]
        epoch_abs, epoch_n = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            batch = order[s:s + config.batch_size]
            xb = _as_batch(net, inputs[batch])
            tb = np.asarray(targets[batch], dtype=net.dtype)
            out, caches = _forward_batch(net, xb, keep_caches=True)
            loss, grad = mae_loss_and_grad(out, tb)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {s // config.batch_size}"
                )
            grads = _backward_batch(net, caches, grad)
            adam.update(net.params, grads)
            epoch_abs += loss * tb.size
            epoch_n += tb.size
        train_mae.append(epoch_abs / epoch_n)
        if len(va_idx):
            val_mae.append(evaluate_mae(net, inputs[va_idx], targets[va_idx]))
            val_mape.append(evaluate_mape(net, inputs[va_idx], targets[va_idx],
                                          config.vs_norm_max))
        net.metadata["epochs_seen"] = net.metadata.get("epochs_seen", 0) + 1
    net.metadata["vs_norm_max"] = config.vs_norm_max
    return TrainResult(net, train_mae, val_mae, val_mape, tr_idx, va_idx, te_idx)


# ---------------------------------------------------------------------------
# gradient verification


def _forward_signature(net: Network, x, target):
    """Activation pattern fingerprint: relu signs, pool argmaxes, loss signs."""
    sig = []
    out, caches = _forward_batch(net, x, keep_caches=True)
    for cache in caches:
        if cache[0] == "conv" and cache[3] is not None:
            sig.append((cache[3] > 0).ravel())
        elif cache[0] == "pool":
            sig.append(cache[1].ravel())
        elif cache[0] == "dense" and cache[2] is not None:
            sig.append((cache[2] > 0).ravel())
    sig.append(np.sign(out - target).ravel())
    loss = float(np.mean(np.abs(out - target)))
    return loss, np.concatenate([s.astype(np.int8) for s in sig])


def gradient_check(net: Network, x, target, n_samples_per_param: int = 8,
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Evaluates in float64. Parameter entries whose +/- step evaluations cross a
    ReLU kink, change a pooling argmax, or flip an MAE sign are skipped, as
    the loss is not differentiable there.
    """
    net = net.astype(np.float64)
    xb = _as_batch(net, np.asarray(x, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == len(net.architecture.output_shape):
        target = target[None]

    out, caches = _forward_batch(net, xb, keep_caches=True)
    _, grad = mae_loss_and_grad(out, target)
    grads = _backward_batch(net, caches, grad)

    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 23], dtype=np.uint64)))
    worst = 0.0
    for p, g in zip(net.params, grads):
        if g is None:
            continue
        for key in p:
            flat = p[key].ravel()
            gflat = g[key].ravel()
            k = min(n_samples_per_param, flat.size)
            picks = rng.choice(flat.size, size=k, replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + step
                lp, sig_p = _forward_signature(net, xb, target)
                flat[j] = orig - step
                lm, sig_m = _forward_signature(net, xb, target)
                flat[j] = orig
                if not np.array_equal(sig_p, sig_m):
                    continue  # crossed a kink or argmax tie
                fd = (lp - lm) / (2.0 * step)
                denom = max(abs(fd), abs(gflat[j]))
                if denom < 1e-10:
                    continue
                worst = max(worst, abs(fd - gflat[j]) / denom)
    return worst


def linear_variant(arch: Architecture) -> Architecture:
    """Same structure with every activation linear (for gradient checks)."""
    layers = tuple(
        replace(l, activation="linear") if isinstance(l, (Conv2D, Dense)) else l
        for l in arch.layers
    )
    return Architecture(arch.input_shape, layers)
