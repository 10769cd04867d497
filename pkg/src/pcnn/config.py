"""Flat key = value run configuration with two built-in profiles.

A run is described by one UTF-8 text file, one ``key = value`` pair per
line, ``#`` starting a comment.  Every key has a default; the ``profile``
key chooses between the small ``desk`` setup and the ``paper`` setup
(12 views at 224 px, 512 channels, lr 4e-5, batch 16, 30 epochs).
Unknown and duplicate keys are rejected rather than ignored, and the
effective configuration can be rendered back to text so each run can
record exactly what it used.
"""

from __future__ import annotations

from .backbone import ConfigError
from .losses import VIEW_MODES
from .model import ModelConfig
from .training import TrainConfig

PROFILES = ("desk", "paper")

# key -> (type tag, desk default, paper default)
SCHEMA = {
    "profile": ("str", "desk", "paper"),
    "data.dir": ("str", "data", "data"),
    "out.dir": ("str", "out", "out"),
    "dataset.classes": ("str", "sphere,box,cylinder,pyramid",
                        "sphere,box,cylinder,pyramid"),
    "dataset.per_class": ("int", 40, 40),
    "dataset.test_per_class": ("int", 20, 20),
    "dataset.views": ("int", 6, 12),
    "dataset.res": ("int", 32, 224),
    "dataset.seed": ("int", 7, 7),
    "backbone.levels": ("int", 3, 5),
    "backbone.dim": ("int", 32, 512),
    "patchconv.enabled": ("bool", True, True),
    "patchconv.k": ("int", 12, 12),
    "patchconv.use_coords": ("bool", True, True),
    "patchconv.leaky_slope": ("float", 0.2, 0.2),
    "patchconv.metric": ("str", "euclidean", "euclidean"),
    "awv.enabled": ("bool", True, True),
    "loss.beta": ("float", 0.5, 0.5),
    "loss.gamma": ("float", 0.5, 0.5),
    "loss.view_mode": ("str", "wvl", "wvl"),
    "train.lr": ("float", 1e-3, 4e-5),
    "train.epochs": ("int", 20, 30),
    "train.batch": ("int", 8, 16),
    "train.clip": ("float", 0.01, 0.01),
    "train.adam_beta1": ("float", 0.9, 0.9),
    "train.adam_beta2": ("float", 0.999, 0.999),
    "train.adam_eps": ("float", 1e-8, 1e-8),
    "train.seed": ("int", 0, 0),
    "retrieval.metric": ("str", "cosine", "cosine"),
    # reranking by predicted class is part of the evaluation protocol
    "retrieval.rerank": ("bool", True, True),
}

_CHOICES = {
    "profile": PROFILES,
    "loss.view_mode": VIEW_MODES,
    "patchconv.metric": ("euclidean", "cosine"),
    "retrieval.metric": ("cosine", "euclidean"),
}


def _parse_value(key: str, text: str):
    kind = SCHEMA[key][0]
    try:
        if kind == "int":
            return int(text, 10)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError
            return text == "true"
        return text
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {text!r}") from None


def _render_value(key: str, value) -> str:
    kind = SCHEMA[key][0]
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(value)
    return str(value)


def _parse_pairs(text: str):
    pairs = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        pairs.append((key, _parse_value(key, value)))
    return pairs


class RunConfig:
    """Fully resolved configuration: profile defaults plus overrides."""

    def __init__(self, pairs=()):
        pairs = list(pairs)
        profile = dict(pairs).get("profile", "desk")
        self._check_choice("profile", profile)
        column = 1 if profile == "desk" else 2
        self._values = {key: spec[column] for key, spec in SCHEMA.items()}
        self._values["profile"] = profile
        for key, value in pairs:
            self.set(key, value)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(_parse_pairs(text))

    @classmethod
    def from_file(cls, path=None) -> "RunConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())

    @staticmethod
    def _check_choice(key: str, value):
        allowed = _CHOICES.get(key)
        if allowed is not None and value not in allowed:
            raise ConfigError(
                f"{key} must be one of {', '.join(allowed)}, got {value!r}"
            )

    def __getitem__(self, key: str):
        return self._values[key]

    def set(self, key: str, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        self._check_choice(key, value)
        self._values[key] = value

    def render(self) -> str:
        return "".join(
            f"{key} = {_render_value(key, self._values[key])}\n"
            for key in sorted(self._values)
        )

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.render())

    def classes(self) -> tuple:
        return tuple(
            name.strip() for name in self["dataset.classes"].split(",")
            if name.strip()
        )

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_classes=num_classes,
            backbone_levels=self["backbone.levels"],
            backbone_dim=self["backbone.dim"],
            patchconv=self["patchconv.enabled"],
            k=self["patchconv.k"],
            use_coords=self["patchconv.use_coords"],
            leaky_slope=self["patchconv.leaky_slope"],
            metric=self["patchconv.metric"],
            awv=self["awv.enabled"],
            view_mode=self["loss.view_mode"],
            beta=self["loss.beta"],
            gamma=self["loss.gamma"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self["train.lr"],
            adam_beta1=self["train.adam_beta1"],
            adam_beta2=self["train.adam_beta2"],
            adam_eps=self["train.adam_eps"],
            clip=self["train.clip"],
            epochs=self["train.epochs"],
            batch_size=self["train.batch"],
            seed=self["train.seed"],
        )
