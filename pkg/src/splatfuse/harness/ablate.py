"""Component and neighborhood-range ablations over identical scenes and seeds."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

from .config import ConfigError, RunConfig
from .scene import Scene
from .train import train

DEFAULT_VARIANTS = ("fixed_k=1", "dynamic_k", "+rgb", "+pc")


def variant_config(cfg: RunConfig, name: str) -> RunConfig:
    """Map a variant name onto a config.

    ``fixed_k=N`` and ``dynamic_k`` train occupancy only; ``+rgb`` adds the
    photometric phase; ``+pc`` (alias ``full``) adds parameter consistency;
    ``dynamic=1-M`` is the full model with candidates ``1..M``.
    """
    rep = dataclasses.replace
    if name.startswith("fixed_k="):
        k = int(name.split("=", 1)[1])
        return rep(cfg, fixed_k=k, candidates=tuple(range(1, max(k, max(cfg.candidates)) + 1)),
                   use_rgb=False, use_pc=False)
    if name == "dynamic_k":
        return rep(cfg, fixed_k=0, use_rgb=False, use_pc=False)
    if name == "+rgb":
        return rep(cfg, fixed_k=0, use_rgb=True, use_pc=False)
    if name in ("+pc", "full"):
        return rep(cfg, fixed_k=0, use_rgb=True, use_pc=True)
    if name.startswith("dynamic="):
        lo, hi = (int(x) for x in name.split("=", 1)[1].split("-"))
        if lo != 1 or hi < 1:
            raise ConfigError(f"dynamic ranges start at 1: {name!r}")
        return rep(cfg, fixed_k=0, candidates=tuple(range(1, hi + 1)), use_rgb=True, use_pc=True)
    raise ConfigError(f"unknown variant {name!r}")


@dataclass
class AblationRow:
    variant: str
    iou: float
    miou: float
    latency: float
    seeds: int


def ablate(cfg: RunConfig, scene: Scene, variants: Sequence[str] = DEFAULT_VARIANTS,
           seeds: Sequence[int] | None = None) -> list[AblationRow]:
    """One training run per (variant, seed); rows hold seed-averaged metrics."""
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    rows = []
    for name in variants:
        vcfg = variant_config(cfg, name)
        ious, mious, lats = [], [], []
        for s in seeds:
            rep = train(dataclasses.replace(vcfg, seed=s), scene)
            ious.append(rep.metrics.iou)
            mious.append(rep.metrics.miou)
            lats.append(rep.latency)
        n = len(seeds)
        rows.append(AblationRow(name, sum(ious) / n, sum(mious) / n, sum(lats) / n, n))
    return rows


def format_table(rows: Sequence[AblationRow]) -> str:
    w = max([len("variant")] + [len(r.variant) for r in rows])
    lines = [f"{'variant':<{w}}  {'IoU':>7}  {'mIoU':>7}  {'latency(s)':>10}  seeds"]
    for r in rows:
        lines.append(f"{r.variant:<{w}}  {100 * r.iou:7.2f}  {100 * r.miou:7.2f}  {r.latency:10.4f}  {r.seeds:5d}")
    return "\n".join(lines) + "\n"
