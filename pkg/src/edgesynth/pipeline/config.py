"""Flat ``key = value`` pipeline settings with typed defaults."""

from ..exceptions import ConfigError

DEFAULTS = {
    "seed": 0,
    # toy data
    "toy.count": 12,
    "toy.holdout": 4,
    "toy.size": 64,
    "toy.min_fg": 0.15,
    "toy.max_fg": 0.35,
    "toy.radius_min": 3.0,
    "toy.radius_max": 8.0,
    "toy.texture": 12.0,
    # tiling and split
    "prepare.block": 64,
    "split.test_fraction": 0.05,
    # edges
    "canny.method": "canny",
    "canny.sigma": 1.0,
    "canny.high_quantile": 0.9,
    "canny.low_ratio": 0.4,
    # GAN; iterations = 0 means "run gan.epochs full passes"
    "gan.lambda_l1": 100.0,
    "gan.iterations": 200,
    "gan.epochs": 1,
    "gan.batch_size": 1,
    "gan.lr": 2e-4,
    "gan.beta1": 0.5,
    "gan.base_width": 16,
    "gan.image_size": 64,
    "gan.smoothing_window": 50,
    # shape augmentation
    "augment.upscale_max": 1.25,
    "augment.edge_to_roi": False,
    # segmentation; class_weights is "auto" or comma-separated floats
    "seg.input_size": 64,
    "seg.depth": 2,
    "seg.base_width": 8,
    "seg.epochs": 30,
    "seg.batch_size": 4,
    "seg.lr": 1e-3,
    "seg.beta1": 0.9,
    "seg.class_weights": "auto",
    # evaluation; 0 picks 0.75% of the diagonal
    "eval.bf_tolerance": 0,
    "eval.architecture": "toy-unet",
}


def _coerce(key, raw, default):
    if isinstance(raw, type(default)) and not (isinstance(raw, bool) and not isinstance(default, bool)):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {type(default).__name__}") from None
    return text


class PipelineConfig:
    """Settings lookup where unknown keys are errors, never silently ignored."""

    def __init__(self, overrides=None):
        self._values = dict(DEFAULTS)
        for key, value in (overrides or {}).items():
            self.set(key, value)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = _coerce(key, value, DEFAULTS[key])

    def __getitem__(self, key):
        if key not in self._values:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def as_dict(self):
        return dict(self._values)

    @classmethod
    def parse(cls, text):
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls(values)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read())

    def dump(self):
        return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in self._values.items())
