"""Run configuration: defaults, key=value files, and conversion to library parameters."""

from __future__ import annotations

import math
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .density import Bandwidths
from .transfer import TransferParams


@dataclass(frozen=True)
class RunConfig:
    # bandwidths: object features, task features, contact model
    sigma_p_object: float = 0.01
    kappa_object: float = 100.0
    sigma_r_object: float = 10.0
    sigma_p_task: float = 0.05
    kappa_task: float = 100.0
    sigma_r_task: float = 10.0
    sigma_p_contact: float = 0.01
    kappa_contact: float = 100.0
    sigma_r_contact: float = 10.0
    # learning
    n_o: int = 500
    n_t: int = 50
    n_c: int = 500
    alpha: float = 10.0
    rot_weight: float = 1.0
    config_frame: str = "anchored"
    contact_radius: float = 0.05
    k_neighbors: int = 30
    # inference
    n_i: int = 500
    n_j: int = 5
    n_q: int = 1000
    t0: float = 1.0
    cooling: float = 0.97
    steps: int = 2000
    refine_steps: int = 400
    reanchor_prob: float = 0.25
    formation_prob: float = 0.5
    pos_scale: typing.Optional[float] = None
    rot_scale: float = 0.1
    region_radius: typing.Optional[float] = None
    chains: typing.Optional[int] = None
    ablate_task: bool = False
    max_tilt_deg: float = 90.0
    min_separation: float = 0.02
    k: int = 5
    seed: int = 0
    threads: int = 1

    def bandwidths(self, which: str) -> Bandwidths:
        return Bandwidths(getattr(self, f"sigma_p_{which}"), getattr(self, f"kappa_{which}"),
                          getattr(self, f"sigma_r_{which}"))

    def learn_kwargs(self) -> dict:
        return dict(n_o=self.n_o, n_t=self.n_t, n_c=self.n_c, bw_object=self.bandwidths("object"),
                    bw_task=self.bandwidths("task"), bw_contact=self.bandwidths("contact"),
                    contact_radius=self.contact_radius, k=self.k_neighbors, alpha=self.alpha,
                    rot_weight=self.rot_weight, config_frame=self.config_frame, seed=self.seed)

    def transfer_params(self) -> TransferParams:
        return TransferParams(
            n_i=self.n_i, n_j=self.n_j, n_q=self.n_q, t0=self.t0, cooling=self.cooling, steps=self.steps,
            refine_steps=self.refine_steps,
            reanchor_prob=self.reanchor_prob, formation_prob=self.formation_prob, pos_scale=self.pos_scale,
            rot_scale=self.rot_scale, region_radius=self.region_radius, chains=self.chains, seed=self.seed,
            ablate_task=self.ablate_task, k_neighbors=self.k_neighbors, threads=self.threads)

    @property
    def max_tilt(self) -> float:
        return math.radians(self.max_tilt_deg)


_HINTS = typing.get_type_hints(RunConfig)


def field_type(name: str):
    """Base scalar type of a config field (``Optional`` unwrapped)."""
    t = _HINTS[name]
    args = [a for a in typing.get_args(t) if a is not type(None)]
    return args[0] if args else t


def is_optional(name: str) -> bool:
    return type(None) in typing.get_args(_HINTS[name])


def parse_value(name: str, text: str):
    text = text.strip()
    if is_optional(name) and text.lower() in ("none", ""):
        return None
    t = field_type(name)
    if t is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    try:
        return t(text)
    except ValueError:
        raise ValueError(f"{name}: expected {t.__name__}, got {text!r}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        updates[key] = parse_value(key, value)
    return replace(base or RunConfig(), **updates)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(), base)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
