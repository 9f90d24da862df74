"""Run configuration stored as an INI file."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .evaluation import ExperimentConfig, param_grid
from .gbt import BoostParams
from .resample import ResamplePlan
from .stats import SelectionConfig


@dataclass(frozen=True)
class SynthSettings:
    n_participants: int = 500
    frame_rate_hz: float = 30.0
    planted: bool = True
    beta: float = 0.05
    rho: float = 0.98
    jitter_concentration: float = 100.0
    video_missing: float = 0.0
    format: str = "jsonl"


@dataclass(frozen=True)
class RunConfig:
    # [paths]; empty means "use the synth stage output under out"
    frames: str = ""
    traits: str = ""
    out: str = "out"
    # [run]
    seed: int = 0
    mode: str = "leak_free"
    binning: str = "tercile"
    aggregation: str = "mean"
    holdout_fraction: float = 0.1
    n_folds: int = 10
    workers: int = 1
    top_k: int = 20
    # [resample]
    strategy: str = "smote"
    k_neighbors: int = 5
    # [boost]
    rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    grid_search: bool = False
    # [selection]
    vif_max: float = 5.0
    epsilon: float = 0.005
    # [synth]
    synth: SynthSettings = field(default_factory=SynthSettings)

    SECTIONS = {
        "paths": ("frames", "traits", "out"),
        "run": ("seed", "mode", "binning", "aggregation", "holdout_fraction", "n_folds", "workers", "top_k"),
        "resample": ("strategy", "k_neighbors"),
        "boost": ("rounds", "learning_rate", "max_depth", "reg_lambda", "gamma", "min_child_weight", "grid_search"),
        "selection": ("vif_max", "epsilon"),
    }

    def __post_init__(self):
        # building the experiment config validates mode, binning, strategy and boost settings
        self.experiment

    @property
    def boost(self) -> BoostParams:
        return BoostParams(
            rounds=self.rounds,
            learning_rate=self.learning_rate,
            max_depth=self.max_depth,
            reg_lambda=self.reg_lambda,
            gamma=self.gamma,
            min_child_weight=self.min_child_weight,
            seed=self.seed,
        )

    @property
    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            seed=self.seed,
            mode=self.mode,
            binning=self.binning,
            holdout_fraction=self.holdout_fraction,
            n_folds=self.n_folds,
            resample=ResamplePlan(self.strategy, self.k_neighbors, self.seed),
            boost=self.boost,
            boost_grid=param_grid(self.boost) if self.grid_search else (),
        )

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(vif_max=self.vif_max, epsilon=self.epsilon)

    def analysis_dict(self) -> dict:
        """Settings that determine artifact contents (paths and worker count excluded)."""
        d = asdict(self)
        for k in ("frames", "traits", "out", "workers"):
            d.pop(k)
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.analysis_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, keys in self.SECTIONS.items():
            cp[section] = {k: _fmt(getattr(self, k)) for k in keys}
        cp["synth"] = {f.name: _fmt(getattr(self.synth, f.name)) for f in fields(SynthSettings)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.read_string(text)
        kwargs = {}
        defaults = cls()
        for section, keys in cls.SECTIONS.items():
            if section not in cp:
                continue
            for key, raw in cp[section].items():
                if key not in keys:
                    raise ValueError(f"unknown key {key!r} in [{section}]")
                kwargs[key] = _parse(raw, type(getattr(defaults, key)))
        if "synth" in cp:
            sd = SynthSettings()
            skw = {}
            for key, raw in cp["synth"].items():
                if not hasattr(sd, key):
                    raise ValueError(f"unknown key {key!r} in [synth]")
                skw[key] = _parse(raw, type(getattr(sd, key)))
            kwargs["synth"] = replace(sd, **skw)
        unknown = set(cp.sections()) - set(cls.SECTIONS) - {"synth"}
        if unknown:
            raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, kind: type):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw.strip()
