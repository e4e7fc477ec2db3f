"""Experiment configuration files.

Configs are INI files whose ``[training]`` section uses the column names of a
training-setup table (``train for``, ``batch``, ``opt``, ``rate``,
``grad clip``, ``lr decay schedule``), e.g.::

    [training]
    train for = 200 epochs
    batch = 256
    opt = SGD
    rate = 0.1
    grad clip = 5.0
    lr decay schedule = 10x drop at 100, 150 epochs

Epoch quantities are converted to steps once the dataset size is known.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .activations import get_activation
from .models import LOSSES, SCHEMES, Architecture
from .train import OptimizerConfig, epochs_to_steps

KINDS = ("train-compare", "theory-scaling", "ablation-width", "ablation-lr-param")
SOURCES = ("synthetic-blobs", "synthetic-sphere", "idx-files")


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _floats(text: str) -> tuple:
    return tuple(parse_rate(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _join(values) -> str:
    return ", ".join(_num(v) for v in values)


def _num(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_rate(text: str) -> float:
    """Plain floats, or ``1e-1.5`` style fractional exponents (``10**-1.5``)."""
    text = str(text).strip()
    m = re.fullmatch(r"1e([+-]?\d+\.\d+)", text)
    if m:
        return 10.0 ** float(m.group(1))
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_duration(text: str) -> tuple:
    """``"200 epochs"`` -> ``(200.0, "epochs")``; ``"2000 steps"`` -> ``(2000.0, "steps")``."""
    m = re.fullmatch(r"\s*([0-9.]+)\s*(epochs?|steps?)\s*", text)
    if not m:
        raise ConfigError(f"cannot parse duration {text!r}; use 'N epochs' or 'N steps'")
    unit = "epochs" if m.group(2).startswith("epoch") else "steps"
    return float(m.group(1)), unit


def parse_schedule(text: str) -> tuple:
    """``"10x drop at 100, 150 epochs"`` -> ``(0.1, (100.0, 150.0), "epochs")``."""
    text = text.strip()
    if text.lower() in ("", "none", "constant"):
        return 1.0, (), "steps"
    m = re.fullmatch(r"([0-9.]+)x\s+drop\s+at\s+([0-9.,\s]+?)\s*(epochs?|steps?)", text, re.I)
    if not m:
        raise ConfigError(f"cannot parse schedule {text!r}; use 'Fx drop at a, b epochs|steps'")
    factor = float(m.group(1))
    if factor < 1:
        raise ConfigError("drop factor must be >= 1")
    at = tuple(float(t) for t in re.split(r"[,\s]+", m.group(2).strip()) if t)
    unit = "epochs" if m.group(3).lower().startswith("epoch") else "steps"
    return 1.0 / factor, at, unit


@dataclass(frozen=True)
class ExperimentSection:
    kind: str = "train-compare"
    seeds: tuple = (0,)
    orders: tuple = (1, 2, 3, 4)
    output: str = "runs/experiment"
    threads: int = 1


@dataclass(frozen=True)
class ArchitectureSection:
    kind: str = "mlp"
    dims: tuple = (32, 64, 64, 2)
    activation: str = "softplus(1)"
    scheme: str = "standard"
    depth: int = 4
    channels: int = 16
    kernel: int = 3
    image_shape: tuple = ()
    classes: int = 10


@dataclass(frozen=True)
class TrainingSection:
    train_for: str = "2000 steps"
    batch: int = 64
    opt: str = "SGD"
    rate: str = "0.05"
    grad_clip: str = "5.0"
    lr_decay_schedule: str = "none"
    loss: str = "cross_entropy"
    checkpoint_every: int = 0     # 0 -> 1/100 of total steps


@dataclass(frozen=True)
class DatasetSection:
    source: str = "synthetic-blobs"
    n_train: int = 2048
    n_test: int = 512
    standardize: bool = True
    classes: int = 2
    dim: int = 32
    clusters_per_class: int = 8
    informative: int = 8
    separation: float = 2.0
    spread: float = 1.0
    seed: int = 0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""


@dataclass(frozen=True)
class TheorySection:
    widths: tuple = (64, 256, 1024, 4096)
    n: int = 16
    d: int = 16
    activation: str = "tanh"
    eta0: float = 1.0
    h: float = 0.1
    record_every: int = 10
    t0: str = "auto"
    data_seed: int = 0


@dataclass(frozen=True)
class AblationSection:
    widths: tuple = (32, 128)
    high_rate: float = 0.1
    low_rate: float = 0.01
    ntk_rate: float = 0.1


_SECTIONS = {
    "experiment": ExperimentSection,
    "architecture": ArchitectureSection,
    "training": TrainingSection,
    "dataset": DatasetSection,
    "theory": TheorySection,
    "ablation": AblationSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    architecture: ArchitectureSection = field(default_factory=ArchitectureSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    theory: TheorySection = field(default_factory=TheorySection)
    ablation: AblationSection = field(default_factory=AblationSection)

    # -------------------------------------------------------------- derived

    def build_architecture(self, dims: tuple | None = None) -> Architecture:
        a = self.architecture
        if a.kind == "mlp":
            return Architecture("mlp", tuple(dims or a.dims), a.activation)
        return Architecture("cnn", activation=a.activation, depth=a.depth, channels=a.channels,
                            kernel=a.kernel, image_shape=tuple(a.image_shape), classes=a.classes)

    def optimizer(self, n_train: int, rate: float | None = None) -> OptimizerConfig:
        """Effective optimizer settings, with epochs converted to steps."""
        t = self.training
        amount, unit = parse_duration(t.train_for)
        to_steps = (lambda v: epochs_to_steps(v, n_train, t.batch)) if unit == "epochs" else int
        steps = to_steps(amount)
        mult, at, s_unit = parse_schedule(t.lr_decay_schedule)
        s_steps = (lambda v: epochs_to_steps(v, n_train, t.batch)) if s_unit == "epochs" else int
        schedule = tuple((s_steps(v), mult) for v in at)
        clip = None if t.grad_clip.strip().lower() in ("none", "") else parse_rate(t.grad_clip)
        return OptimizerConfig(lr=parse_rate(t.rate) if rate is None else rate, schedule=schedule,
                               clip=clip, batch_size=t.batch, steps=steps, loss=t.loss,
                               checkpoint_every=t.checkpoint_every or None)

    def validate(self) -> "ExperimentConfig":
        e, a, t, d = self.experiment, self.architecture, self.training, self.dataset
        if e.kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}")
        if not e.seeds:
            raise ConfigError("at least one seed is required")
        if any(not 1 <= k <= 8 for k in e.orders):
            raise ConfigError("orders must lie in 1..8")
        if a.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        try:
            get_activation(a.activation)
            get_activation(self.theory.activation)
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if t.opt.upper() != "SGD":
            raise ConfigError("only plain SGD is supported")
        if t.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        parse_duration(t.train_for)
        parse_schedule(t.lr_decay_schedule)
        parse_rate(t.rate)
        if d.source not in SOURCES:
            raise ConfigError(f"dataset source must be one of {SOURCES}")
        if d.source == "idx-files" and not all((d.train_images, d.train_labels, d.test_images, d.test_labels)):
            raise ConfigError("idx-files needs train_images, train_labels, test_images, test_labels")
        if e.kind != "theory-scaling":
            try:
                self.build_architecture()
                self.optimizer(max(d.n_train, 1))
            except ValueError as err:
                raise ConfigError(str(err)) from None
        th = self.theory
        if e.kind == "theory-scaling":
            w = sorted(th.widths)
            if len(w) < 4 or w[0] < 1 or w[-1] < 16 * w[0]:
                raise ConfigError("theory widths need >= 4 values spanning >= 16x")
        if th.t0 != "auto":
            parse_rate(th.t0)
        return self

    # -------------------------------------------------------- (de)serialize

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec, cls in _SECTIONS.items():
            obj = getattr(self, sec)
            cp[sec] = {}
            for f in fields(cls):
                v = getattr(obj, f.name)
                key = f.name.replace("_", " ") if sec == "training" else f.name
                if isinstance(v, tuple):
                    cp[sec][key] = _join(v)
                elif isinstance(v, bool):
                    cp[sec][key] = "true" if v else "false"
                else:
                    cp[sec][key] = _num(v)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def canonical(self) -> "ExperimentConfig":
        """Copy with run-location fields cleared; these never change results."""
        return replace(self, experiment=replace(self.experiment, output="", threads=1))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().to_text().encode()).hexdigest()


def _coerce(cls, name: str, raw: str):
    default = next(f.default for f in fields(cls) if f.name == name)
    try:
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return parse_rate(raw)
        if isinstance(default, tuple):
            if name in ("seeds", "orders", "widths", "dims", "image_shape"):
                return _ints(raw)
            return _floats(raw)
        return raw.strip()
    except ValueError as err:
        raise ConfigError(f"bad value for {name}: {raw!r} ({err})") from None


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(str(err)) from None
    sections = {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        cls = _SECTIONS[sec]
        names = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp[sec].items():
            name = re.sub(r"[\s-]+", "_", key.strip().lower())
            if name not in names:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            values[name] = _coerce(cls, name, raw)
        sections[sec] = cls(**values)
    return ExperimentConfig(**sections).validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, threads: int | None = None,
                   output: str | None = None) -> ExperimentConfig:
    e = cfg.experiment
    e = replace(e, seeds=(seed,) if seed is not None else e.seeds,
                threads=threads if threads is not None else e.threads,
                output=output if output is not None else e.output)
    return replace(cfg, experiment=e)
