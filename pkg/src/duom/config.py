"""Run configuration file (TOML or JSON) and run manifests.

One config file drives every command; command-line flags override file
values.  All randomness flows from the single top-level seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .rng import check_seed
from .samplers import SAMPLER_KINDS, SamplerConfig, canonical_json, make_sampler
from .training import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "SamplerSection",
    "ProblemSection",
    "TrainingSection",
    "BenchmarkSection",
    "OutputSection",
    "RunConfig",
    "load_config",
    "config_digest",
    "write_manifest",
]


class ConfigError(Exception):
    pass


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{where}] section: {e}") from e


@dataclass(frozen=True)
class SamplerSection:
    kind: str = "mh"
    beta: float = 1.0
    trotter: int = 4
    num_reads: int = 100
    sweeps: int = 1000
    gamma_start: float = 10.0
    gamma_end: float = 0.1
    endpoint: str = ""
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote sampler requires an endpoint")

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(
            beta=float(self.beta),
            num_reads=int(self.num_reads),
            sweeps_per_read=int(self.sweeps),
            trotter=int(self.trotter),
            gamma_start=float(self.gamma_start),
            gamma_end=float(self.gamma_end),
            seed=seed,
        )

    def build(self, seed: int):
        return make_sampler(
            self.kind, self.sampler_config(seed), self.endpoint or None, self.timeout
        )


@dataclass(frozen=True)
class ProblemSection:
    lam: float = 1.0
    instance: str = ""
    schedule: str = ""

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")


@dataclass(frozen=True)
class TrainingSection:
    T: int = 30
    eta_init: float = 1e-2
    epochs: int = 12
    minibatches_per_epoch: int = 20
    minibatch_size: int = 4
    lr_init: float = 5e-2
    lr_decay: float = 0.8
    incremental: bool = True
    dataset: str = ""


@dataclass(frozen=True)
class BenchmarkSection:
    width: int = 15
    height: int = 15
    m_ratio: float = 0.6
    count: int = 50
    ground_truth: str = ""
    eta_candidates: tuple = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    methods: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "eta_candidates", tuple(float(x) for x in self.eta_candidates))
        methods = []
        for m in self.methods:
            if not isinstance(m, dict) or "label" not in m:
                raise ValueError("each benchmark method needs at least a label")
            if ("schedule" in m) == ("eta" in m):
                raise ValueError(
                    f"method {m.get('label')!r} must give exactly one of schedule or eta"
                )
            methods.append(dict(m))
        object.__setattr__(self, "methods", tuple(methods))


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"


_SECTIONS = {
    "problem": ProblemSection,
    "sampler": SamplerSection,
    "training": TrainingSection,
    "benchmark": BenchmarkSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    problem: ProblemSection = field(default_factory=ProblemSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        check_seed(self.seed)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a table")
        unknown = set(data) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        sections = {
            name: _build(klass, data.get(name, {}), name) for name, klass in _SECTIONS.items()
        }
        try:
            return cls(seed=int(data.get("seed", 0)), **sections)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed}
        for name in _SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            for k, v in section.items():
                if isinstance(v, tuple):
                    section[k] = list(v)
            out[name] = section
        return out

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(
            T=t.T,
            epochs=t.epochs,
            sampler_kind=self.sampler.kind,
            sampler_config=self.sampler.sampler_config(self.seed),
            eta_init=t.eta_init,
            lam=self.problem.lam,
            minibatches_per_epoch=t.minibatches_per_epoch,
            minibatch_size=t.minibatch_size,
            lr_init=t.lr_init,
            lr_decay=t.lr_decay,
            incremental=t.incremental,
            seed=self.seed,
            endpoint=self.sampler.endpoint or None,
        )

    def with_overrides(self, assignments: dict[str, object]) -> "RunConfig":
        """Apply dotted-path overrides ("sampler.kind" -> value)."""
        data = self.to_dict()
        for path, value in assignments.items():
            parts = path.split(".")
            node = data
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config path {path!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config path {path!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        if p.suffix == ".json":
            data = json.loads(p.read_text())
        else:
            data = tomllib.loads(p.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    return RunConfig.from_dict(data)


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, out_dir: Path, files: list[str]) -> Path:
    from . import __version__

    manifest = {
        "config_digest": config_digest(cfg),
        "version": __version__,
        "seed": cfg.seed,
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "files": sorted(files),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path
