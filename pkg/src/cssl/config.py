"""Experiment configuration dataclasses and the flat key=value file format.

Config files are line-oriented ``section.key=value`` pairs (``#`` comments),
chosen so sweep diffs stay one-line.  Tuples are comma-separated, booleans are
``true``/``false``.  Unknown keys are rejected with the accepted alternatives.
"""

from __future__ import annotations


from dataclasses import dataclass, field, fields

from .errors import ConfigurationError

METHODS = ("ft", "fd", "ewc", "pfr", "cj")
SSL_VARIANTS = ("barlow", "simclr", "simsiam")
DATA_KINDS = ("synthetic", "cifar10", "cifar100", "tensor_file")
METHOD_LAMBDA_KEY = {"fd": "train.lambda_fd", "pfr": "train.lambda_pfr",
                     "ewc": "train.lambda_ewc"}


@dataclass
class DataConfig:
    kind: str = "synthetic"
    n_classes: int = 8
    dim: int = 32
    per_class: int = 100
    per_class_test: int = 25
    sigma: float = 0.5
    n_tasks: int = 4
    val_fraction: float = 0.05
    shuffle_classes: bool = True
    train_path: str = ""
    test_path: str = ""


@dataclass
class AugConfig:
    noise_sigma: float = 0.1
    dropout_frac: float = 0.2
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    crop_lo: float = 0.6
    crop_hi: float = 1.0
    hflip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    channel_jitter: float = 0.2
    grayscale_p: float = 0.1


@dataclass
class ArchConfig:
    hidden: tuple[int, ...] = (256, 256)
    feature_dim: int = 128
    proj_hidden: int = 256
    proj_dim: int = 128
    temporal_hidden: int = 256
    encoder_batchnorm: bool = True


@dataclass
class TrainConfig:
    method: str = "ft"
    ssl_variant: str = "barlow"
    lambda_bt: float = 5e-3
    lambda_fd: float = 0.0
    lambda_pfr: float = 0.0
    lambda_ewc: float = 0.0
    epochs_per_task: int = 200
    anneal_epochs: int = 150
    batch_size: int = 128
    lr: float = 0.06
    lr_floor: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    projector_decay: float = 0.8
    backbone_decay: float = 0.4
    fisher_batches: int = 32
    temperature: float = 0.5
    fd_squared: bool = False
    temporal_warmup_epochs: int = 5
    precision: str = "float64"


@dataclass
class SeedConfig:
    data: int = 0
    init: int = 0
    augment: int = 0
    probe: int = 0


@dataclass
class ProbeSettings:
    lr: float = 2e-2
    epochs: int = 100
    batch_size: int = 128
    patience: int = 5
    decay_factor: float = 0.3
    max_decays: int = 3
    weight_decay: float = 0.0


@dataclass
class EvalConfig:
    agnostic: bool = True
    aware: bool = False
    future_data: bool = False
    cka: bool = False
    cka_max_samples: int = 1024


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)
    deterministic: bool = True

    def method_lambda(self) -> float:
        return {"ft": 0.0, "cj": 0.0, "fd": self.train.lambda_fd,
                "pfr": self.train.lambda_pfr,
                "ewc": self.train.lambda_ewc}[self.train.method]

    def set_all_seeds(self, seed: int) -> None:
        self.seeds = SeedConfig(data=seed, init=seed, augment=seed, probe=seed)


_SECTIONS = {
    "data": DataConfig, "aug": AugConfig, "arch": ArchConfig,
    "train": TrainConfig, "seeds": SeedConfig, "probe": ProbeSettings,
    "eval": EvalConfig,
}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, ftype, key: str):
    raw = raw.strip()
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"key '{key}': expected true/false, got '{raw}'")
    if ftype is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"key '{key}': expected int, got '{raw}'") from exc
    if ftype is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"key '{key}': expected float, got '{raw}'") from exc
    if ftype == tuple[int, ...]:
        if not raw:
            return ()
        try:
            return tuple(int(x) for x in raw.split(","))
        except ValueError as exc:
            raise ConfigurationError(f"key '{key}': expected ints, got '{raw}'") from exc
    return raw


def config_to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    flat = {"deterministic": _format_value(cfg.deterministic)}
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            flat[f"{section}.{f.name}"] = _format_value(getattr(obj, f.name))
    return dict(sorted(flat.items()))


def config_to_text(cfg: ExperimentConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in config_to_flat(cfg).items())


def parse_flat_text(text: str) -> dict[str, str]:
    """Raw key=value pairs from a flat config file."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected key=value, got '{stripped}'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_from_flat(pairs: dict[str, str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = set(config_to_flat(cfg))
    for key, raw in pairs.items():
        if key.startswith("sweep."):
            continue
        if key not in known:
            near = sorted(k for k in known if k.split(".")[0] == key.split(".")[0])
            raise ConfigurationError(
                f"unknown config key '{key}'; accepted keys in that section: "
                f"{', '.join(near) if near else ', '.join(sorted(known))}")
        if key == "deterministic":
            cfg.deterministic = _parse_value(raw, bool, key)
            continue
        section, name = key.split(".", 1)
        obj = getattr(cfg, section)
        ftype = next(f.type for f in fields(obj) if f.name == name)
        ftype = {"bool": bool, "int": int, "float": float, "str": str,
                 "tuple[int, ...]": tuple[int, ...]}.get(ftype, ftype)
        setattr(obj, name, _parse_value(raw, ftype, key))
    validate_config(cfg, provided=set(pairs))
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_flat(parse_flat_text(fh.read()))


def validate_config(cfg: ExperimentConfig, provided: set[str] | None = None) -> None:
    t = cfg.train
    if t.method not in METHODS:
        raise ConfigurationError(
            f"unknown method '{t.method}'; accepted values: {', '.join(METHODS)}")
    if t.ssl_variant not in SSL_VARIANTS:
        raise ConfigurationError(
            f"unknown ssl_variant '{t.ssl_variant}'; accepted values: "
            f"{', '.join(SSL_VARIANTS)}")
    if cfg.data.kind not in DATA_KINDS:
        raise ConfigurationError(
            f"unknown data kind '{cfg.data.kind}'; accepted values: "
            f"{', '.join(DATA_KINDS)}")
    if t.precision not in ("float64", "float32"):
        raise ConfigurationError("precision must be float64 or float32")
    if provided is not None and t.method in METHOD_LAMBDA_KEY:
        need = METHOD_LAMBDA_KEY[t.method]
        if need not in provided:
            raise ConfigurationError(
                f"method '{t.method}' requires key '{need}' to be set explicitly")
    for name in ("lambda_bt", "lambda_fd", "lambda_pfr", "lambda_ewc"):
        if getattr(t, name) < 0:
            raise ConfigurationError(f"train.{name} must be >= 0")
    if t.batch_size < 2:
        raise ConfigurationError("train.batch_size must be at least 2")
    if cfg.data.kind == "synthetic" and cfg.data.n_classes % cfg.data.n_tasks:
        raise ConfigurationError(
            f"{cfg.data.n_classes} classes do not divide into "
            f"{cfg.data.n_tasks} equal tasks")
