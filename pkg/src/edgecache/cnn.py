"""Per-request convolutional classifiers, implemented from scratch.

Each flow row of the feature image gets its own small network (the
multi-label problem is decomposed into independent per-request
classifiers).  Every network sees the whole image and outputs a
probability distribution over |E|+1 classes: one per EC plus an
explicit "uncached" class, since the optimum often leaves a flow
unplaced.

Architecture: three conv stages (16, 32, 64 filters of 3x3, stride 1,
same padding, each followed by batch normalization and ReLU), then a
dense layer to class logits and softmax.  No pooling; spatial size is
preserved until the dense layer.  Training is mini-batch gradient
descent with adaptive per-parameter steps (Adam) on the cross-entropy.

Everything is float64 numpy.  All randomness flows from explicit seeds,
so training and inference are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .encoder import FeatureImage

MODEL_FORMAT_VERSION = 1


class CnnError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSample:
    """A labelled image: per-flow optimal classes (|E| means uncached)."""

    image: FeatureImage
    labels: tuple[int, ...]


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch.

    Returns (loss, probabilities, dloss/dlogits).  The logit gradient is
    the closed form (probabilities - one_hot) / batch_size.
    """
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, probs, grad / n


class Conv3x3:
    """3x3 convolution, stride 1, same padding (via zero pad of 1)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        limit = 1.0 / np.sqrt(9 * in_channels)
        self.params = {
            "w": rng.uniform(-limit, limit, size=(3, 3, in_channels, out_channels)),
            "b": np.zeros(out_channels),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def _im2col(self, x: np.ndarray) -> np.ndarray:
        n, h, w, cin = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = np.empty((n, h, w, 9 * cin))
        idx = 0
        for di in range(3):
            for dj in range(3):
                cols[..., idx * cin : (idx + 1) * cin] = xp[:, di : di + h, dj : dj + w, :]
                idx += 1
        return cols

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        n, h, w, cin = x.shape
        cols = self._im2col(x)
        wmat = self.params["w"].reshape(9 * cin, -1)
        out = cols.reshape(-1, 9 * cin) @ wmat + self.params["b"]
        self._cache = (cols, x.shape)
        return out.reshape(n, h, w, -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cols, (n, h, w, cin) = self._cache
        cout = dout.shape[-1]
        dflat = dout.reshape(-1, cout)
        cols2 = cols.reshape(-1, 9 * cin)
        self.grads["w"][...] = (cols2.T @ dflat).reshape(self.params["w"].shape)
        self.grads["b"][...] = dflat.sum(axis=0)
        dcols = (dflat @ self.params["w"].reshape(9 * cin, cout).T).reshape(n, h, w, 9 * cin)
        dxp = np.zeros((n, h + 2, w + 2, cin))
        idx = 0
        for di in range(3):
            for dj in range(3):
                dxp[:, di : di + h, dj : dj + w, :] += dcols[
                    ..., idx * cin : (idx + 1) * cin
                ]
                idx += 1
        return dxp[:, 1 : h + 1, 1 : w + 1, :]


class BatchNorm:
    """Per-channel normalization over the batch and spatial axes."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.params = {"scale": np.ones(channels), "shift": np.zeros(channels)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self._cache = None
        self._train_mode = False

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._train_mode = train
        if train:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * ivar
        self._cache = (xhat, ivar, x.shape)
        return self.params["scale"] * xhat + self.params["shift"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, ivar, shape = self._cache
        self.grads["scale"][...] = (dout * xhat).sum(axis=(0, 1, 2))
        self.grads["shift"][...] = dout.sum(axis=(0, 1, 2))
        dxhat = dout * self.params["scale"]
        if not self._train_mode:
            return dxhat * ivar
        n_eff = shape[0] * shape[1] * shape[2]
        sum_dxhat = dxhat.sum(axis=(0, 1, 2))
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 1, 2))
        return (ivar / n_eff) * (n_eff * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class ReLU:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._mask = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class Dense:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        limit = 1.0 / np.sqrt(in_features)
        self.params = {
            "w": rng.uniform(-limit, limit, size=(in_features, out_features)),
            "b": np.zeros(out_features),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        flat = x.reshape(x.shape[0], -1)
        self._cache = (flat, x.shape)
        return flat @ self.params["w"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        flat, shape = self._cache
        self.grads["w"][...] = flat.T @ dout
        self.grads["b"][...] = dout.sum(axis=0)
        return (dout @ self.params["w"].T).reshape(shape)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    request_index: int = 0
    num_classes: int = 0  # |E| + 1; required
    filters: tuple[int, ...] = (16, 32, 64)


class CnnModel:
    """One per-request classifier: image in, class probabilities out."""

    def __init__(
        self,
        input_shape: tuple[int, int],
        num_classes: int,
        request_index: int = 0,
        filters: tuple[int, ...] = (16, 32, 64),
        seed: int = 0,
        norm_digest: str = "",
    ):
        if num_classes < 2:
            raise CnnError("need at least two output classes")
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.request_index = request_index
        self.filters = tuple(filters)
        self.seed = seed
        self.norm_digest = norm_digest
        rng = np.random.default_rng([seed, 0])
        h, w = self.input_shape
        self.layers: list = []
        cin = 1
        for cout in self.filters:
            self.layers.append(Conv3x3(cin, cout, rng))
            self.layers.append(BatchNorm(cout))
            self.layers.append(ReLU())
            cin = cout
        self.layers.append(Dense(h * w * cin, num_classes, rng))

    def logits(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def param_items(self):
        for li, layer in enumerate(self.layers):
            for key in layer.params:
                yield li, key, layer.params[key], layer.grads[key]

    def _as_batch(self, img) -> np.ndarray:
        matrix = img.matrix if isinstance(img, FeatureImage) else np.asarray(img)
        if matrix.ndim == 2:
            matrix = matrix[None]
        if matrix.shape[1:] != self.input_shape:
            raise CnnError(
                f"input shape {matrix.shape[1:]} != model input {self.input_shape}"
            )
        return matrix[..., None].astype(np.float64)


def forward(m: CnnModel, img) -> np.ndarray:
    """Inference: class probabilities for one image (batch norm uses the
    running statistics, so repeated calls are bit-identical)."""
    x = m._as_batch(img)
    return softmax(m.logits(x, train=False))[0]


def _stack_samples(samples, request_index: int):
    images = np.stack([s.image.matrix for s in samples])[..., None]
    labels = np.array([int(s.labels[request_index]) for s in samples])
    return images, labels


def train(samples, cfg: TrainConfig):
    """Fit one per-request model; returns (model, per-epoch loss trace)."""
    if not samples:
        raise CnnError("training needs at least one sample")
    shapes = {s.image.matrix.shape for s in samples}
    if len(shapes) != 1:
        raise CnnError(f"images disagree on shape: {sorted(shapes)}")
    if cfg.num_classes < 2:
        raise CnnError("cfg.num_classes must be set to |E| + 1")
    images, labels = _stack_samples(samples, cfg.request_index)
    if (labels < 0).any() or (labels >= cfg.num_classes).any():
        raise CnnError("a label falls outside the configured class range")

    model = CnnModel(
        input_shape=images.shape[1:3],
        num_classes=cfg.num_classes,
        request_index=cfg.request_index,
        filters=cfg.filters,
        seed=cfg.seed,
        norm_digest=samples[0].image.norm_meta.digest(),
    )
    opt = Adam(model, cfg.learning_rate)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    n = images.shape[0]
    losses = []
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits = model.logits(images[idx], train=True)
            loss, _, dlogits = softmax_cross_entropy(logits, labels[idx])
            model.backward(dlogits)
            opt.step()
            epoch_loss += loss
            batches += 1
        mean_loss = epoch_loss / batches
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(epoch)
        losses.append(mean_loss)
    return model, losses


class Adam:
    """Adaptive moment estimation over all model parameters."""

    def __init__(self, model: CnnModel, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.model = model
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {
            (li, key): np.zeros_like(p) for li, key, p, _ in model.param_items()
        }
        self.v = {
            (li, key): np.zeros_like(p) for li, key, p, _ in model.param_items()
        }

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for li, key, param, grad in self.model.param_items():
            m = self.m[(li, key)]
            v = self.v[(li, key)]
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            param -= self.lr * correction * m / (np.sqrt(v) + self.eps)


def gradient_check(
    m: CnnModel,
    img,
    label,
    train_mode: bool = False,
    sample_fraction: float = 0.01,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference grads.

    Accepts a single image (spec case, checked in inference mode by
    default) or a batch; train_mode=True exercises the batch-statistics
    path of batch norm, which needs a batch of more than one image to be
    meaningful.  A random subset of parameters is probed.
    """
    if isinstance(img, FeatureImage) or (hasattr(img, "ndim") and img.ndim == 2):
        x = m._as_batch(img)
        labels = np.array([int(label)])
    else:
        x = np.asarray(img, dtype=np.float64)
        if x.ndim == 3:
            x = x[..., None]
        labels = np.asarray(label, dtype=int)

    relus = [layer for layer in m.layers if isinstance(layer, ReLU)]

    def loss_and_masks():
        logits = m.logits(x, train=train_mode)
        loss, _, _ = softmax_cross_entropy(logits, labels)
        return loss, [r._mask for r in relus]

    logits = m.logits(x, train=train_mode)
    _, _, dlogits = softmax_cross_entropy(logits, labels)
    m.backward(dlogits)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, _, param, grad in m.param_items():
        size = param.size
        take = max(1, int(np.ceil(size * sample_fraction)))
        take = min(take, size)
        picks = rng.choice(size, size=take, replace=False)
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for j in picks:
            orig = flat_p[j]
            flat_p[j] = orig + step
            up, masks_up = loss_and_masks()
            up_masks = [mk.copy() for mk in masks_up]
            flat_p[j] = orig - step
            down, masks_down = loss_and_masks()
            flat_p[j] = orig
            # The loss is piecewise smooth; a probe that flips a ReLU
            # sign straddles a kink where the derivative is undefined,
            # so the comparison is only meaningful elsewhere.
            if any(
                not np.array_equal(a, b) for a, b in zip(up_masks, masks_down)
            ):
                continue
            numeric = (up - down) / (2 * step)
            analytic = flat_g[j]
            denom = max(abs(numeric), abs(analytic))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def predict_all(models: list[CnnModel], img) -> np.ndarray:
    """Stack per-request predictions into the probability matrix O.

    Row k comes from models[k]; the models are independent, so rows are
    unaffected by one another.
    """
    matrix = img.matrix if isinstance(img, FeatureImage) else np.asarray(img)
    if len(models) != matrix.shape[0]:
        raise CnnError(
            f"{len(models)} models for {matrix.shape[0]} flow rows"
        )
    return np.stack([forward(model, matrix) for model in models])


def save_model(m: CnnModel, path) -> None:
    """Versioned binary weights plus a small text manifest."""
    arrays = {}
    for li, key, param, _ in m.param_items():
        arrays[f"layer{li}_{key}"] = param
    for li, layer in enumerate(m.layers):
        if isinstance(layer, BatchNorm):
            arrays[f"layer{li}_running_mean"] = layer.running_mean
            arrays[f"layer{li}_running_var"] = layer.running_var
    np.savez(path, **arrays)
    manifest = {
        "format": "edgecache-cnn",
        "version": MODEL_FORMAT_VERSION,
        "input_shape": list(m.input_shape),
        "num_classes": m.num_classes,
        "request_index": m.request_index,
        "filters": list(m.filters),
        "seed": m.seed,
        "norm_digest": m.norm_digest,
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_model(path) -> CnnModel:
    with open(str(path) + ".manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "edgecache-cnn":
        raise CnnError(f"{path}: not a model file")
    if manifest.get("version") != MODEL_FORMAT_VERSION:
        raise CnnError(f"{path}: unsupported version")
    m = CnnModel(
        input_shape=tuple(manifest["input_shape"]),
        num_classes=manifest["num_classes"],
        request_index=manifest["request_index"],
        filters=tuple(manifest["filters"]),
        seed=manifest["seed"],
        norm_digest=manifest.get("norm_digest", ""),
    )
    npz_path = str(path) if str(path).endswith(".npz") else str(path) + ".npz"
    with np.load(npz_path) as data:
        for li, key, param, _ in m.param_items():
            param[...] = data[f"layer{li}_{key}"]
        for li, layer in enumerate(m.layers):
            if isinstance(layer, BatchNorm):
                layer.running_mean = data[f"layer{li}_running_mean"].copy()
                layer.running_var = data[f"layer{li}_running_var"].copy()
    return m
