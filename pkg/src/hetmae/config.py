"""Run configuration: one flat dataclass backing config.json."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

VALID_SPLITS = (20, 40, 60)
VALID_STRATEGIES = ("none", "random", "degree", "attention")


@dataclass
class TrainConfig:
    # optimization
    epochs: int = 200
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # masking
    mask_strategy: str = "degree"
    mask_rate: float = 0.5
    node_mask_rate: float = 0.3
    attr_mask_rate: float = 0.1
    inverse_softmax_c: float = 0.0
    # model
    hidden_dim: int = 64
    encoder_layers: int = 2
    semantic_dim: int = 64
    attn_slope: float = 0.2
    residual: bool = True
    enhancement: bool = True
    self_loops: bool = False
    # loss
    gamma1: float = 2.0
    gamma2: float = 2.0
    lambda_feat: float = 1.0
    lambda_mp: float = 1.0
    loss_scope: str = "all"  # or "masked_only"
    # evaluation
    eval_splits: tuple = (20, 40, 60)
    probe_lr: float = 0.01
    probe_l2: float = 1e-4
    probe_steps: int = 300
    probe_seeds: int = 10

    def validate(self):
        problems = []
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.mask_strategy not in VALID_STRATEGIES:
            problems.append(f"unknown mask strategy '{self.mask_strategy}'")
        for name in ("mask_rate", "node_mask_rate", "attr_mask_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                problems.append(f"{name} must be in [0, 1), got {v}")
        if not set(self.eval_splits) <= set(VALID_SPLITS):
            problems.append(f"eval splits must be among {VALID_SPLITS}, got {self.eval_splits}")
        if self.gamma1 < 1 or self.gamma2 < 1:
            problems.append("scaling factors gamma1/gamma2 must be >= 1")
        if self.lambda_feat < 0 or self.lambda_mp < 0:
            problems.append("loss weights must be nonnegative")
        if self.loss_scope not in ("all", "masked_only"):
            problems.append(f"unknown loss scope '{self.loss_scope}'")
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))
        return self

    def to_json(self) -> str:
        raw = dataclasses.asdict(self)
        raw["eval_splits"] = list(self.eval_splits)
        return json.dumps(raw, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "eval_splits" in raw:
            raw["eval_splits"] = tuple(raw["eval_splits"])
        return cls(**raw).validate()

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)
