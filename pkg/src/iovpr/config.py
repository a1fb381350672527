"""Pipeline configuration: one JSON file, echoed into every report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .augment import LayoutKind
from .evaluation import SMALL_K, EvalConfig
from .training import LossConfig


@dataclass
class PipelineConfig:
    seed: int = 0
    layout_kind: str = LayoutKind.REAL.value
    window_threshold: float = 0.20
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layout_kind = LayoutKind(self.layout_kind).value
        if not 0.0 <= self.window_threshold < 1.0:
            raise ValueError("window_threshold must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"]["k_values"] = list(self.eval.k_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        loss = LossConfig(**d.pop("loss", {}))
        ev = d.pop("eval", {})
        ev = EvalConfig(ev.get("radius", 25.0), tuple(ev.get("k_values", SMALL_K)))
        return cls(loss=loss, eval=ev, **d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())
