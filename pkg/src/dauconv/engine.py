"""Network assembly and SGD training.

A network is an ordered stack of layer objects built from a declarative
NetworkSpec. Training is plain momentum SGD with weight decay, a step
learning-rate schedule, and one deliberate exception: displacement
parameters never receive weight decay (decay would drag every unit back
to the filter center, which is a different prior than shrinking weights)
unless explicitly enabled. Displacements are clamped to the layer's
radius after every step.

Everything is deterministic given (seed, thread count): shuffling and
mirroring draw from a generator seeded by (seed, epoch), so training can
resume from a checkpoint mid-run and reproduce the uninterrupted
trajectory bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dau, layers
from .errors import ConfigError, TrainingError
from .gaussian import build_bank


@dataclass
class LayerSpec:
    kind: str  # 'dau' | 'conv' | 'fc'
    features: int
    units: int = 4
    sigma: float = 0.5
    rd: float = 4.0
    ksize: int = 3
    pool: bool = False
    bn: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("kind", "features", "units", "sigma", "rd", "ksize", "pool", "bn")}

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(**d)


@dataclass
class NetworkSpec:
    input_shape: tuple[int, int, int]  # (C, H, W)
    classes: int
    layers: list[LayerSpec]

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if any(d < 1 for d in self.input_shape):
            raise ConfigError(f"bad input shape {self.input_shape}")
        for i, ls in enumerate(self.layers):
            if ls.kind not in ("dau", "conv", "fc"):
                raise ConfigError(f"layer {i + 1}: unknown kind {ls.kind!r}")
            if ls.features < 1:
                raise ConfigError(f"layer {i + 1}: features must be >= 1")
            if ls.kind == "fc" and i != len(self.layers) - 1:
                raise ConfigError("fc is only supported as the final (loss head) layer")
        if self.layers[-1].kind != "fc":
            raise ConfigError("last layer must be the fc loss head")
        if self.layers[-1].features != self.classes:
            raise ConfigError("fc head features must equal the class count")

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "classes": self.classes,
                "layers": [ls.to_dict() for ls in self.layers]}

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(tuple(d["input_shape"]), d["classes"],
                           [LayerSpec.from_dict(ld) for ld in d["layers"]])


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    base_lr: float = 0.01
    lr_steps: dict = field(default_factory=dict)  # epoch -> lr from that epoch on
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    dmu_mode: str = "analytic"
    decay_on_displacements: bool = False
    mu_lr_mult: float = 1.0
    mirror: bool = False
    eval_batch: int = 256

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be > 0")
        if not (0 <= self.momentum < 1):
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.dmu_mode not in ("analytic", "interp"):
            raise ConfigError(f"dmu_mode must be analytic or interp, got {self.dmu_mode!r}")
        if self.epochs < 0 or self.weight_decay < 0 or self.mu_lr_mult <= 0:
            raise ConfigError("bad epochs/weight_decay/mu_lr_mult")

    def lr_at(self, epoch: int) -> float:
        lr = self.base_lr
        for step in sorted(self.lr_steps):
            if epoch >= step:
                lr = self.lr_steps[step]
        return lr


# layer wrappers: forward/backward plus (kind, value, grad) triples for the
# optimizer and (name, array) pairs for persistence


class DauConvLayer:
    kind = "dau"

    def __init__(self, params: dau.DauLayerParams, is_first: bool = False):
        self.p = params
        self.bank = build_bank(params.sigma)
        self.dmu_mode = "analytic"
        self.is_first = is_first
        self._cache = None
        self._grads = None

    def forward(self, x, training):
        y, cache = dau.dau_forward(x, self.p, self.bank)
        self._cache = cache if training else None
        return y

    def backward(self, dldy):
        self._grads = dau.dau_backward(dldy, self._cache, self.p, self.bank, self.dmu_mode,
                                       need_input_grad=not self.is_first)
        return self._grads.dinput

    def param_items(self):
        g = self._grads
        return [("weight", self.p.w, None if g is None else g.dw),
                ("mu", self.p.mu, None if g is None else g.dmu),
                ("bias", self.p.bias, None if g is None else g.dbias)]

    def state_arrays(self, prefix):
        return [(f"{prefix}.w", self.p.w), (f"{prefix}.mu", self.p.mu),
                (f"{prefix}.bias", self.p.bias), (f"{prefix}.active", self.p.active)]

    def clamp(self):
        np.clip(self.p.mu, -self.p.max_displacement, self.p.max_displacement, out=self.p.mu)


class ConvLayer:
    kind = "conv"

    def __init__(self, params: layers.ConvParams, is_first: bool = False):
        self.p = params
        self.is_first = is_first
        self._x = None
        self._grads = None

    def forward(self, x, training):
        y, xc = layers.conv_forward(x, self.p)
        self._x = xc if training else None
        return y

    def backward(self, dldy):
        dw, dbias, dx = layers.conv_backward(dldy, self._x, self.p,
                                             need_input_grad=not self.is_first)
        self._grads = (dw, dbias)
        return dx

    def param_items(self):
        g = self._grads or (None, None)
        return [("weight", self.p.weights, g[0]), ("bias", self.p.bias, g[1])]

    def state_arrays(self, prefix):
        return [(f"{prefix}.weights", self.p.weights), (f"{prefix}.bias", self.p.bias)]


class BatchNormLayer:
    kind = "batchnorm"

    def __init__(self, state: layers.BatchNormState):
        self.st = state
        self._cache = None
        self._grads = None

    def forward(self, x, training):
        y, cache = layers.batchnorm_forward(x, self.st, training)
        self._cache = cache if training else None
        return y

    def backward(self, dldy):
        dscale, dshift, dx = layers.batchnorm_backward(dldy, self._cache, self.st)
        self._grads = (dscale, dshift)
        return dx

    def param_items(self):
        g = self._grads or (None, None)
        return [("bn_scale", self.st.scale, g[0]), ("bn_shift", self.st.shift, g[1])]

    def state_arrays(self, prefix):
        return [(f"{prefix}.scale", self.st.scale), (f"{prefix}.shift", self.st.shift),
                (f"{prefix}.running_mean", self.st.running_mean),
                (f"{prefix}.running_var", self.st.running_var)]


class ReluLayer:
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x, training):
        y, mask = layers.relu_forward(x)
        self._mask = mask if training else None
        return y

    def backward(self, dldy):
        return layers.relu_backward(dldy, self._mask)

    def param_items(self):
        return []

    def state_arrays(self, prefix):
        return []


class MaxPoolLayer:
    kind = "maxpool"

    def __init__(self):
        self._cache = None

    def forward(self, x, training):
        y, cache = layers.maxpool2_forward(x)
        self._cache = cache
        return y

    def backward(self, dldy):
        return layers.maxpool2_backward(dldy, self._cache)

    def param_items(self):
        return []

    def state_arrays(self, prefix):
        return []


class FlattenLayer:
    kind = "flatten"

    def __init__(self):
        self._shape = None

    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dldy):
        return dldy.reshape(self._shape)

    def param_items(self):
        return []

    def state_arrays(self, prefix):
        return []


class LinearLayer:
    kind = "fc"

    def __init__(self, weights, bias):
        self.weights = weights
        self.bias = bias
        self._x = None
        self._grads = None

    def forward(self, x, training):
        self._x = x if training else None
        return layers.fc_forward(x, self.weights, self.bias)

    def backward(self, dldy):
        dw, dbias, dx = layers.fc_backward(dldy, self._x, self.weights)
        self._grads = (dw, dbias)
        return dx

    def param_items(self):
        g = self._grads or (None, None)
        return [("weight", self.weights, g[0]), ("bias", self.bias, g[1])]

    def state_arrays(self, prefix):
        return [(f"{prefix}.weights", self.weights), (f"{prefix}.bias", self.bias)]


class Model:
    """Layer stack plus optimizer/persistence state."""

    def __init__(self, spec: NetworkSpec, stack: list):
        self.spec = spec
        self.stack = stack
        self.epoch = 0
        self.seed = 0
        self.velocities = [np.zeros_like(value) for _, value, _ in self.param_iter()]

    def param_iter(self):
        for layer in self.stack:
            yield from layer.param_items()

    def forward(self, x, training=False):
        for layer in self.stack:
            x = layer.forward(x, training)
        return x

    def backward(self, dlogits):
        g = dlogits
        for layer in reversed(self.stack):
            g = layer.backward(g)
        return g

    def dau_layers(self):
        return [l for l in self.stack if l.kind == "dau"]

    def set_dmu_mode(self, mode: str):
        for l in self.dau_layers():
            l.dmu_mode = mode

    def state_arrays(self):
        out = []
        for i, layer in enumerate(self.stack):
            out.extend(layer.state_arrays(f"layer{i}"))
        for i, v in enumerate(self.velocities):
            out.append((f"velocity{i}", v))
        return out

    def clone(self) -> "Model":
        other = build_network(self.spec, self.seed)
        other.epoch = self.epoch
        for (_, dst), (_, src) in zip(other.state_arrays(), self.state_arrays()):
            dst[...] = src
        return other


def build_network(spec: NetworkSpec, seed: int) -> Model:
    """Deterministically initialize a model from its declarative spec."""
    spec.validate()
    rng = np.random.default_rng(seed)
    c, h, w = spec.input_shape
    stack = []
    for ls in spec.layers:
        if ls.kind == "dau":
            p = dau.init_params(ls.features, c, ls.units, ls.sigma, ls.rd, rng)
            stack.append(DauConvLayer(p, is_first=not stack))
            c = ls.features
        elif ls.kind == "conv":
            if ls.ksize % 2 == 0:
                raise ConfigError("conv ksize must be odd")
            fan_in = c * ls.ksize * ls.ksize
            fan_out = ls.features * ls.ksize * ls.ksize
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights = rng.uniform(-limit, limit,
                                  size=(ls.features, c, ls.ksize, ls.ksize)).astype(np.float32)
            stack.append(ConvLayer(layers.ConvParams(weights, np.zeros(ls.features, np.float32),
                                                     padding=ls.ksize // 2), is_first=not stack))
            c = ls.features
        elif ls.kind == "fc":
            dim = c * h * w
            limit = math.sqrt(6.0 / (dim + ls.features))
            weights = rng.uniform(-limit, limit, size=(ls.features, dim)).astype(np.float32)
            stack.append(FlattenLayer())
            stack.append(LinearLayer(weights, np.zeros(ls.features, np.float32)))
            continue
        if ls.bn:
            stack.append(BatchNormLayer(layers.BatchNormState.create(c)))
        stack.append(ReluLayer())
        if ls.pool:
            stack.append(MaxPoolLayer())
            h, w = (h + 1) // 2, (w + 1) // 2
    model = Model(spec, stack)
    model.seed = seed
    return model


def parameter_count(model: Model) -> int:
    """Learnable scalars, counting each active displaced unit as 3."""
    total = 0
    for layer in model.stack:
        if layer.kind == "dau":
            total += 3 * int(layer.p.active.sum()) + layer.p.bias.size
        else:
            total += sum(v.size for _, v, _ in layer.param_items())
    return total


def sgd_step(model: Model, cfg: TrainConfig, lr: float) -> None:
    """One momentum/decay update over every parameter, then the
    displacement clamp. Aborts loudly on non-finite gradients."""
    items = list(model.param_iter())
    if len(items) != len(model.velocities):
        raise TrainingError("optimizer state out of sync with parameters")
    for (kind, value, grad), vel in zip(items, model.velocities):
        if grad is None:
            raise TrainingError("missing gradient: run backward before sgd_step")
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient in parameter class {kind!r}")
        is_mu = kind == "mu"
        decay = cfg.weight_decay if (not is_mu or cfg.decay_on_displacements) else 0.0
        step_lr = lr * (cfg.mu_lr_mult if is_mu else 1.0)
        g = grad.astype(value.dtype, copy=False)
        vel *= cfg.momentum
        vel -= step_lr * (g + decay * value)
        value += vel
    for layer in model.dau_layers():
        layer.clamp()


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train(model: Model, train_split, cfg: TrainConfig, eval_split=None, on_epoch=None):
    """Run epochs model.epoch .. cfg.epochs; returns (model, metric records).

    Records carry epoch (1-based after completion), cumulative iteration
    count, mean train loss, eval accuracy (None without an eval split)
    and the learning rate used.
    """
    cfg.validate()
    n = len(train_split.labels)
    if n == 0:
        raise TrainingError("empty training set")
    model.set_dmu_mode(cfg.dmu_mode)
    records = []
    iteration = model.epoch * math.ceil(n / cfg.batch_size)
    for epoch in range(model.epoch, cfg.epochs):
        lr = cfg.lr_at(epoch)
        rng = _epoch_rng(cfg.seed, epoch)
        perm = rng.permutation(n)
        mirror_mask = rng.random(n) < 0.5 if cfg.mirror else None
        loss_sum, seen = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            x = train_split.images[idx]
            labels = train_split.labels[idx]
            if mirror_mask is not None:
                flip = mirror_mask[idx]
                x = x.copy()
                x[flip] = x[flip][..., ::-1]
            logits = model.forward(x, training=True)
            loss, dlogits = layers.softmax_xent(logits, labels)
            model.backward(dlogits)
            sgd_step(model, cfg, lr)
            loss_sum += loss * len(idx)
            seen += len(idx)
            iteration += 1
        model.epoch = epoch + 1
        acc = evaluate(model, eval_split, cfg.eval_batch) if eval_split is not None else None
        records.append({"epoch": model.epoch, "iter": iteration,
                        "train_loss": loss_sum / seen, "eval_acc": acc, "lr": lr})
        if on_epoch is not None:
            on_epoch(model, records[-1])
    return model, records


def evaluate(model: Model, split, batch_size: int = 256) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    n = len(split.labels)
    correct = 0
    for lo in range(0, n, batch_size):
        logits = model.forward(split.images[lo : lo + batch_size], training=False)
        correct += int((logits.argmax(axis=1) == split.labels[lo : lo + batch_size]).sum())
    return correct / n


def metrics_to_csv(records: list) -> str:
    lines = ["epoch,iter,train_loss,eval_acc,lr"]
    for r in records:
        acc = "" if r["eval_acc"] is None else repr(float(r["eval_acc"]))
        lines.append(f"{r['epoch']},{r['iter']},{float(r['train_loss'])!r},{acc},{float(r['lr'])!r}")
    return "\n".join(lines) + "\n"
