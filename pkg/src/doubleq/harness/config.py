"""Experiment configuration, validated with pydantic so every error names its field."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..learners import ALGORITHMS, EXPLORATION_KINDS
from ..mdp import Mdp, chain_mdp, fanout_mdp, load_mdp, random_mdp

CHECK_NAMES = (
    "boundedness", "drift", "sandwich", "envelope-g", "envelope-sigma-d", "envelope-d",
    "containment", "final-error", "update-split", "update-blocks", "covering",
)


class ConfigError(ValueError):
    """Raised for unreadable or invalid experiment configs."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RandomMdpSpec(_Strict):
    kind: Literal["random"] = "random"
    n_states: int = Field(4, ge=1)
    n_actions: int = Field(2, ge=1)
    seed: int = 0
    gamma: float = Field(0.5, gt=0, lt=1)
    r_max: float = Field(1.0, gt=0)
    noise_halfwidth: float = Field(0.5, ge=0)

    def build(self) -> Mdp:
        return random_mdp(self.n_states, self.n_actions, seed=self.seed, gamma=self.gamma,
                          r_max=self.r_max, noise_halfwidth=self.noise_halfwidth)


class ChainMdpSpec(_Strict):
    kind: Literal["chain"]
    n_states: int = Field(5, ge=2)
    gamma: float = Field(0.9, gt=0, lt=1)
    slip: float = Field(0.0, ge=0, le=1)
    r_max: float = Field(1.0, gt=0)
    noise_halfwidth: float = Field(0.0, ge=0)

    def build(self) -> Mdp:
        return chain_mdp(self.n_states, gamma=self.gamma, slip=self.slip, r_max=self.r_max,
                         noise_halfwidth=self.noise_halfwidth)


class FanoutMdpSpec(_Strict):
    kind: Literal["fanout"]
    n_arms: int = Field(8, ge=1)
    gamma: float = Field(0.9, gt=0, lt=1)
    noise_halfwidth: float = Field(1.0, ge=0)

    def build(self) -> Mdp:
        return fanout_mdp(self.n_arms, gamma=self.gamma, noise_halfwidth=self.noise_halfwidth)


class FileMdpSpec(_Strict):
    kind: Literal["file"]
    path: str

    def build(self) -> Mdp:
        return load_mdp(self.path)


MdpSpec = Annotated[Union[RandomMdpSpec, ChainMdpSpec, FanoutMdpSpec, FileMdpSpec],
                    Field(discriminator="kind")]


class ScheduleSpec(_Strict):
    """Epoch schedule. ``c`` defaults to ``c_factor`` times the admissible c_min.

    In schedule mode the horizon is the schedule end minus one, where the block
    count is ``n_blocks`` or else m* for epsilon, cut down to fit
    ``max_iterations`` when that is set.
    """

    tau_1: int = Field(200, ge=1)
    c: Optional[float] = Field(None, gt=0)
    c_factor: float = Field(1.05, ge=1)
    kappa: float = Field(0.8, gt=0, lt=1)
    delta_slack: float = Field(0.1, gt=0)
    covering_l: int = Field(1, ge=1)
    n_blocks: Optional[int] = Field(None, ge=1)
    max_iterations: Optional[int] = Field(None, ge=1)

    @property
    def fixes_horizon(self) -> bool:
        return self.n_blocks is not None or self.max_iterations is not None


class ExplorationSpec(_Strict):
    kind: Literal[EXPLORATION_KINDS] = "uniform"
    epsilon: float = Field(0.1, ge=0, le=1)
    start_state: int = Field(0, ge=0)


class ExperimentConfig(_Strict):
    mdp: MdpSpec = Field(default_factory=RandomMdpSpec)
    algorithm: Literal[ALGORITHMS] = "sync-double"
    omega: float = Field(0.8, gt=0, lt=1)
    horizon: Optional[int] = Field(None, ge=0)
    schedule: Optional[ScheduleSpec] = None
    epsilon: float = Field(0.5, gt=0)
    delta: float = Field(0.05, gt=0, lt=1)
    seeds: Optional[list[int]] = None
    base_seed: int = 0
    n_seeds: int = Field(1, ge=1)
    q_init: float = 0.0
    exploration: ExplorationSpec = Field(default_factory=ExplorationSpec)
    trackers: bool = False
    stride: Optional[int] = Field(None, ge=1)
    trace_csv: bool = False
    out_dir: Optional[str] = None
    parallel: int = Field(1, ge=1)
    checks: Optional[list[Literal[CHECK_NAMES]]] = None
    oracle_tol: float = Field(1e-12, gt=0)

    @model_validator(mode="after")
    def _one_horizon(self):
        by_schedule = self.schedule is not None and self.schedule.fixes_horizon
        if self.horizon is None and self.schedule is None:
            raise ValueError("set either 'horizon' or 'schedule'")
        if self.horizon is not None and by_schedule:
            raise ValueError(
                "'horizon' and schedule.n_blocks/max_iterations both fix the run length; keep one")
        return self

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return list(range(self.base_seed, self.base_seed + self.n_seeds))

    def with_updates(self, **changes) -> "ExperimentConfig":
        doc = self.model_dump(mode="json")
        doc.update(changes)
        return ExperimentConfig.model_validate(doc)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{where}: {e['msg']}")
    return "invalid experiment config:\n  " + "\n  ".join(lines)


def parse_config(doc) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def parse_json_text(text: str, source: str = "<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{source}: JSON parse error at line {err.lineno}, column {err.colno}: "
                          f"{err.msg}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(parse_json_text(text, str(path)))
