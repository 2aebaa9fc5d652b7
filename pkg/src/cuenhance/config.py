"""Run configuration: sectioned key=value text files with lossless round-trip."""

import configparser
from dataclasses import dataclass, field, fields


@dataclass
class DataSection:
    n_hq: int = 200
    n_lq: int = 200
    n_test: int = 24
    size: int = 64


@dataclass
class PretrainSection:
    epochs: int = 2
    lr: float = 1e-4
    ssim_weight: float = 1.0
    include_lq: bool = True
    batch_size: int = 4
    base_width: int = 16
    cue_dim: int = 64


@dataclass
class TrainSection:
    steps: int = 1200
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    batch_size: int = 4
    base_width: int = 16
    guidance: str = "hq_vector"
    integration: str = "adalin"
    lambda1: float = 10.0
    lambda2: float = 1.0
    alternate_d_every: int = 1
    augment: bool = True
    vy_dim: int = 16


@dataclass
class CoopSection:
    lambda3: float = 5.0
    unet_width: int = 8
    freeze_downstream: bool = False
    downstream_lr: float = 3e-3


@dataclass
class EvalSection:
    snr_radius: int = 3
    threshold: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "32"
    device: str = "cpu"
    deterministic: bool = False
    data_root: str = "data"
    data: DataSection = field(default_factory=DataSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    train: TrainSection = field(default_factory=TrainSection)
    coop: CoopSection = field(default_factory=CoopSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.precision not in ("32", "64"):
            raise ValueError("precision must be '32' or '64'")
        if self.train.guidance not in ("hq_vector", "learnable_tensor", "none"):
            raise ValueError("unknown guidance mode %r" % self.train.guidance)


_SECTIONS = {
    "data": DataSection,
    "pretrain": PretrainSection,
    "train": TrainSection,
    "coop": CoopSection,
    "eval": EvalSection,
}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text, ftype):
    if ftype is bool:
        lowered = text.strip().lower()
        if lowered not in ("true", "false"):
            raise ValueError("expected true/false, got %r" % text)
        return lowered == "true"
    return ftype(text)


def serialize_config(cfg):
    """Render a RunConfig as sectioned key=value text."""
    lines = ["[run]"]
    for f in fields(RunConfig):
        if f.name in _SECTIONS:
            continue
        lines.append("%s = %s" % (f.name, _format_value(getattr(cfg, f.name))))
    for name, cls in _SECTIONS.items():
        lines.append("")
        lines.append("[%s]" % name)
        sec = getattr(cfg, name)
        for f in fields(cls):
            lines.append("%s = %s" % (f.name, _format_value(getattr(sec, f.name))))
    return "\n".join(lines) + "\n"


def parse_config(text):
    """Parse sectioned key=value text into a RunConfig. Unknown keys are errors."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    kwargs = {}
    run_fields = {f.name: f for f in fields(RunConfig)}
    for section in cp.sections():
        if section == "run":
            for key, raw in cp.items("run"):
                if key not in run_fields or key in _SECTIONS:
                    raise ValueError("unknown key %r in [run]" % key)
                kwargs[key] = _parse_value(raw, _field_type(RunConfig, key))
        elif section in _SECTIONS:
            cls = _SECTIONS[section]
            sec_fields = {f.name: f for f in fields(cls)}
            sec_kwargs = {}
            for key, raw in cp.items(section):
                if key not in sec_fields:
                    raise ValueError("unknown key %r in [%s]" % (key, section))
                sec_kwargs[key] = _parse_value(raw, _field_type(cls, key))
            kwargs[section] = cls(**sec_kwargs)
        else:
            raise ValueError("unknown section [%s]" % section)
    return RunConfig(**kwargs)


def _field_type(cls, name):
    for f in fields(cls):
        if f.name == name:
            t = f.type
            if isinstance(t, str):
                return {"int": int, "float": float, "bool": bool, "str": str}[t]
            return t
    raise KeyError(name)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
