"""Experiment configuration: YAML files, named presets and fingerprints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import InvalidInputError
from .optimize import OptimizerConfig
from .sde import ProcessParams


@dataclass
class LiftingConfig:
    M: int = 4
    bounds: list | None = None
    dx: float | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.M < 2:
            raise InvalidInputError("lifted dimension M must be at least 2")
        if self.bounds is not None:
            if len(self.bounds) != 2 or not self.bounds[0] < self.bounds[1]:
                raise InvalidInputError("lifting bounds must be [lo, hi] with lo < hi")
            self.bounds = [float(b) for b in self.bounds]


@dataclass
class TrackingConfig:
    dt: float = 1e-3
    delta: float = 0.1
    T: float = 100.0
    sigma_y: float = 0.25
    sigma_true: float = 1.0
    sigma_model: float = 1.0
    n_trials: int = 40
    base_seed: int = 0
    prior_var: float = 0.1
    pf_particles: int = 2000
    workers: int = 1
    # initial state of the overlay trajectories; None draws from the density
    overlay_x0: float | None = None

    def __post_init__(self):
        if self.n_trials < 1:
            raise InvalidInputError("n_trials must be at least 1")
        if not (self.T > self.delta > self.dt > 0):
            raise InvalidInputError("need T > delta > dt > 0")
        if self.sigma_y < 0 or self.sigma_true < 0 or self.sigma_model <= 0:
            raise InvalidInputError("noise levels must be non-negative (sigma_model positive)")
        if self.workers < 1:
            raise InvalidInputError("workers must be at least 1")


@dataclass
class OutputConfig:
    directory: str | None = None
    formats: list = field(default_factory=lambda: ["csv", "png"])


@dataclass
class ExperimentConfig:
    name: str
    process: ProcessParams
    lifting: LiftingConfig = field(default_factory=LiftingConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical(self) -> str:
        """Sorted-key JSON of every field that affects results."""
        doc = self.to_dict()
        doc.pop("name")
        doc.pop("output")
        doc["tracking"].pop("workers")
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def lift_model(self):
        return self.process.build(self.tracking.sigma_model)

    def true_model(self):
        return self.process.build(self.tracking.sigma_true)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise InvalidInputError(f"section {where!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InvalidInputError(f"unknown keys in {where!r}: {', '.join(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise InvalidInputError(f"bad section {where!r}: {exc}") from exc


def from_dict(doc: dict, name: str = "custom") -> ExperimentConfig:
    if not isinstance(doc, dict) or "process" not in doc:
        raise InvalidInputError("config needs a 'process' section")
    top = set(doc) - {"name", "process", "lifting", "tracking", "output"}
    if top:
        raise InvalidInputError(f"unknown top-level keys: {', '.join(sorted(top))}")
    proc = doc["process"]
    if isinstance(proc, str):
        proc = {"process": proc}
    lifting = dict(doc.get("lifting") or {})
    opt = _build(OptimizerConfig, lifting.pop("optimizer", None), "lifting.optimizer")
    return ExperimentConfig(
        name=str(doc.get("name", name)),
        process=_build(ProcessParams, proc, "process"),
        lifting=LiftingConfig(optimizer=opt, **lifting) if lifting else LiftingConfig(optimizer=opt),
        tracking=_build(TrackingConfig, doc.get("tracking"), "tracking"),
        output=_build(OutputConfig, doc.get("output"), "output"),
    )


def preset_names() -> list[str]:
    root = resources.files("itolift") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(source: str | Path) -> ExperimentConfig:
    """Load a config from a YAML path or a bundled preset name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
        name = path.stem
    else:
        preset = resources.files("itolift") / "presets" / f"{source}.yaml"
        if not preset.is_file():
            raise InvalidInputError(
                f"no config file or preset named {source!r}; presets: {', '.join(preset_names())}")
        text = preset.read_text()
        name = str(source)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidInputError(f"could not parse {source}: {exc}") from exc
    return from_dict(doc, name)
