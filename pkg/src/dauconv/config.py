"""Flat key=value run configuration.

The config file is plain text: one `section.key=value` per line, `#`
comments, blank lines ignored. Network layers are numbered from 1
(`net.layer1.kind=dau`). Unknown keys are errors, not warnings, so typos
cannot silently change an experiment. Command-line overrides use the
same keys and win over the file.

Example:

    net.input=3x32x32
    net.classes=10
    net.layer1.kind=dau
    net.layer1.features=32
    net.layer1.units=4
    net.layer1.sigma=0.5
    net.layer1.pool=true
    net.layer2.kind=fc
    net.layer2.features=10
    train.epochs=20
    train.lr=0.01
    train.lr_steps=15:0.001
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .engine import LayerSpec, NetworkSpec, TrainConfig
from .errors import ConfigError

_NET_KEYS = {"input", "classes"}
_LAYER_KEYS = {"kind", "features", "units", "sigma", "rd", "ksize", "pool", "bn"}
_TRAIN_KEYS = {
    "epochs", "batch_size", "lr", "lr_steps", "momentum", "weight_decay", "seed",
    "dmu_mode", "decay_on_displacements", "mirror", "mu_lr_mult",
    "train_subset", "eval_subset", "checkpoint_every",
}
_LAYER_RE = re.compile(r"^layer(\d+)\.(\w+)$")


@dataclass
class RunSettings:
    net: NetworkSpec
    train: TrainConfig
    train_subset: int = 0  # 0 = use everything
    eval_subset: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _parse_bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_num(key: str, value: str, conv):
    try:
        return conv(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _parse_lr_steps(value: str) -> dict[int, float]:
    steps: dict[int, float] = {}
    if not value:
        return steps
    for part in value.split(","):
        if ":" not in part:
            raise ConfigError(f"train.lr_steps: expected epoch:lr pairs, got {part!r}")
        e, lr = part.split(":", 1)
        steps[_parse_num("train.lr_steps", e.strip(), int)] = _parse_num("train.lr_steps", lr.strip(), float)
    return steps


def settings_from_kv(kv: dict[str, str]) -> RunSettings:
    """Validate every key and assemble the run settings."""
    layers: dict[int, dict[str, str]] = {}
    net: dict[str, str] = {}
    train: dict[str, str] = {}
    for key, value in kv.items():
        if key.startswith("net."):
            sub = key[4:]
            m = _LAYER_RE.match(sub)
            if m:
                idx, lkey = int(m.group(1)), m.group(2)
                if lkey not in _LAYER_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                layers.setdefault(idx, {})[lkey] = value
            elif sub in _NET_KEYS:
                net[sub] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif key.startswith("train."):
            sub = key[6:]
            if sub not in _TRAIN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            train[sub] = value
        else:
            raise ConfigError(f"unknown config key {key!r} (sections: net, train)")

    if "input" not in net:
        raise ConfigError("missing net.input (e.g. 3x32x32)")
    if "classes" not in net:
        raise ConfigError("missing net.classes")
    dims = net["input"].lower().split("x")
    if len(dims) != 3:
        raise ConfigError(f"net.input must be CxHxW, got {net['input']!r}")
    input_shape = tuple(_parse_num("net.input", d, int) for d in dims)
    classes = _parse_num("net.classes", net["classes"], int)

    if not layers:
        raise ConfigError("no net.layerN.* entries")
    indices = sorted(layers)
    if indices != list(range(1, len(indices) + 1)):
        raise ConfigError(f"layer numbers must be consecutive from 1, got {indices}")
    specs = []
    for idx in indices:
        ld = layers[idx]
        if "kind" not in ld:
            raise ConfigError(f"net.layer{idx}.kind is required")
        ls = LayerSpec(kind=ld["kind"], features=0)
        for lkey, value in ld.items():
            if lkey == "kind":
                continue
            if lkey in ("pool", "bn"):
                setattr(ls, lkey, _parse_bool(f"net.layer{idx}.{lkey}", value))
            elif lkey in ("features", "units", "ksize"):
                setattr(ls, lkey, _parse_num(f"net.layer{idx}.{lkey}", value, int))
            else:
                setattr(ls, lkey, _parse_num(f"net.layer{idx}.{lkey}", value, float))
        if ls.features < 1:
            raise ConfigError(f"net.layer{idx}.features is required")
        specs.append(ls)
    spec = NetworkSpec(input_shape, classes, specs)
    spec.validate()

    cfg = TrainConfig()
    extras = {"train_subset": 0, "eval_subset": 0, "checkpoint_every": 0}
    for sub, value in train.items():
        full = f"train.{sub}"
        if sub == "lr":
            cfg.base_lr = _parse_num(full, value, float)
        elif sub == "lr_steps":
            cfg.lr_steps = _parse_lr_steps(value)
        elif sub in ("decay_on_displacements", "mirror"):
            setattr(cfg, sub, _parse_bool(full, value))
        elif sub == "dmu_mode":
            cfg.dmu_mode = value
        elif sub in ("momentum", "weight_decay", "mu_lr_mult"):
            setattr(cfg, sub, _parse_num(full, value, float))
        elif sub in ("epochs", "batch_size", "seed"):
            setattr(cfg, sub, _parse_num(full, value, int))
        else:
            extras[sub] = _parse_num(full, value, int)
    cfg.validate()
    return RunSettings(spec, cfg, **extras)


def load_settings(path: str, overrides: dict[str, str] | None = None) -> RunSettings:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            kv = parse_kv_text(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    if overrides:
        kv.update(overrides)
    return settings_from_kv(kv)


def resolved_text(settings: RunSettings) -> str:
    """Canonical key=value dump of fully resolved settings."""
    lines = [
        f"net.input={'x'.join(str(d) for d in settings.net.input_shape)}",
        f"net.classes={settings.net.classes}",
    ]
    for i, ls in enumerate(settings.net.layers, 1):
        lines.append(f"net.layer{i}.kind={ls.kind}")
        lines.append(f"net.layer{i}.features={ls.features}")
        if ls.kind == "dau":
            lines.append(f"net.layer{i}.units={ls.units}")
            lines.append(f"net.layer{i}.sigma={ls.sigma!r}")
            lines.append(f"net.layer{i}.rd={ls.rd!r}")
        if ls.kind == "conv":
            lines.append(f"net.layer{i}.ksize={ls.ksize}")
        if ls.kind != "fc":
            lines.append(f"net.layer{i}.pool={str(ls.pool).lower()}")
            lines.append(f"net.layer{i}.bn={str(ls.bn).lower()}")
    cfg = settings.train
    steps = ",".join(f"{e}:{cfg.lr_steps[e]!r}" for e in sorted(cfg.lr_steps))
    lines += [
        f"train.epochs={cfg.epochs}",
        f"train.batch_size={cfg.batch_size}",
        f"train.lr={cfg.base_lr!r}",
        f"train.lr_steps={steps}",
        f"train.momentum={cfg.momentum!r}",
        f"train.weight_decay={cfg.weight_decay!r}",
        f"train.seed={cfg.seed}",
        f"train.dmu_mode={cfg.dmu_mode}",
        f"train.decay_on_displacements={str(cfg.decay_on_displacements).lower()}",
        f"train.mirror={str(cfg.mirror).lower()}",
        f"train.mu_lr_mult={cfg.mu_lr_mult!r}",
        f"train.train_subset={settings.train_subset}",
        f"train.eval_subset={settings.eval_subset}",
        f"train.checkpoint_every={settings.checkpoint_every}",
    ]
    return "\n".join(lines) + "\n"
