"""Two-phase training: photometric refinement of Gaussians, then occupancy and consistency."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore import ops
from ..diffcore.optim import AdamW, cosine_lr
from ..diffcore.rng import RngStream
from ..diffcore.tape import Parameter, Tape, Var
from ..fusion import FusionOutput, FusionParams, FusionPlan, KSelectorParams, fuse_modalities, write_k_decisions
from ..gaussians import FIELDS, AnchorSet, GaussianField, InitNetParams, collect_anchors, densify, init_parameters, save_field
from ..losses import LossReport, occupancy_loss, param_consistency, photometric_loss, total_loss
from ..occupancy import HeadParams, Metrics, iou_miou, occupancy_head, predict, save_grid
from ..render.camera import Image, save_cameras, write_ppm
from ..render.rasterize import rasterize, render
from ..sparse_voxel import SparseVoxelTensor, range_filter, unproject_image_features, voxelize
from .config import ConfigError, RunConfig, format_config
from .scene import Scene
from .stats import KTable, k_table

# substream indices under the run seed
_NETS, _PHASE2, _EVAL, _FIELD = 0, 1, 2, 3


@dataclass
class Networks:
    kp: KSelectorParams
    fp_il: FusionParams
    fp_li: FusionParams
    init: InitNetParams
    head: HeadParams

    @classmethod
    def create(cls, cfg: RunConfig, n_classes: int, rng: RngStream) -> "Networks":
        C, kmax = cfg.channels, max(cfg.candidates)
        return cls(KSelectorParams.create(C, rng.substream(0, 2), cfg.candidates, cfg.tau),
                   FusionParams.create(C, kmax, rng.substream(1, 2), "fuse_il"),
                   FusionParams.create(C, kmax, rng.substream(2, 2), "fuse_li"),
                   InitNetParams.create(4 * C, rng.substream(3, 2), cfg.init_hidden, cfg.init_head_scale),
                   HeadParams.create(4 * C, n_classes, rng.substream(4, 2), cfg.head_hidden))

    def fusion_parameters(self) -> list[Parameter]:
        return self.kp.parameters() + self.fp_il.parameters() + self.fp_li.parameters()

    def parameters(self) -> list[Parameter]:
        return self.fusion_parameters() + self.init.parameters() + self.head.parameters()


@dataclass
class Inputs:
    """Everything fixed by the scene: sensor tensors, neighbor tables, targets."""

    F_I: SparseVoxelTensor
    F_L: SparseVoxelTensor
    plan: FusionPlan
    pointcloud: object
    labels: np.ndarray
    images: list[Image]
    cameras: list
    background: np.ndarray


def prepare_inputs(cfg: RunConfig, scene: Scene) -> Inputs:
    grid = cfg.grid
    if grid != scene.spec.grid:
        raise ConfigError(f"run grid {grid} differs from scene grid {scene.spec.grid}")
    pc = range_filter(scene.pointcloud, (grid.lo, grid.hi), cfg.filter_min_neighbors, cfg.filter_radius)
    F_L = voxelize(pc, grid, cfg.channels)
    F_I = unproject_image_features(scene.images, scene.depths, scene.cameras, grid, cfg.channels)
    plan = FusionPlan.build(F_I, F_L, max(cfg.candidates))
    return Inputs(F_I, F_L, plan, pc, scene.gt.labels, scene.images, scene.cameras,
                  np.asarray(scene.spec.background, dtype=np.float64))


def fuse(inputs: Inputs, nets: Networks, cfg: RunConfig, rng: RngStream) -> FusionOutput:
    return fuse_modalities(inputs.F_I, inputs.F_L, nets.kp, nets.fp_il, nets.fp_li, rng, plan=inputs.plan,
                           fixed_k=cfg.fixed_k or None)


def rgb_loss(params: dict[str, Var], inputs: Inputs, lam: float):
    """Photometric loss averaged over views: ``(l_rgb, l1, dssim)``."""
    n = len(inputs.cameras)
    tot = l1s = dss = None
    for cam, target in zip(inputs.cameras, inputs.images):
        img, _ = render(*(params[f] for f in FIELDS), cam, inputs.background)
        l, l1, ds = photometric_loss(img, target.pixels, lam)
        tot = l if tot is None else ops.add(tot, l)
        l1s = l1 if l1s is None else ops.add(l1s, l1)
        dss = ds if dss is None else ops.add(dss, ds)
    return ops.scale(tot, 1.0 / n), ops.scale(l1s, 1.0 / n), ops.scale(dss, 1.0 / n)


def after_loss(inputs: Inputs, nets: Networks, cfg: RunConfig, rng: RngStream, anchors: AnchorSet,
               final: dict[str, np.ndarray], anchor_rows: np.ndarray):
    """Occupancy plus parameter-consistency objective; returns ``(report, total, fusion)``."""
    out = fuse(inputs, nets, cfg, rng)
    logits = occupancy_head(out.fused, nets.head)
    l_occ, ce, lv = occupancy_loss(logits, inputs.labels)
    comps: dict[str, object] = {"l_occ": l_occ, "l_ce": ce, "l_lovasz": lv}
    lam = cfg.lam
    if cfg.use_pc and len(anchor_rows):
        theta = init_parameters(out.fused, anchors, nets.init).theta
        theta0 = {f: ops.take_rows(theta[f], anchor_rows) for f in FIELDS}
        comps["l_pc"] = param_consistency(final, theta0)
    else:
        comps["l_pc"] = 0.0
        lam = 0.0
    report, total = total_loss("after_iteration", comps, lam)
    return report, total, out


@dataclass
class MetricsReport:
    losses: list[tuple[int, LossReport]]
    metrics: Metrics
    k_table: KTable
    n_gaussians: int
    wall_clock: float
    latency: float
    outer_loops: int
    decisions: list = field(default_factory=list, repr=False)
    field: GaussianField | None = field(default=None, repr=False)

    def csv(self) -> str:
        rows = [LossReport.CSV_HEADER] + [r.csv_row(s) for s, r in self.losses]
        return "\n".join(rows) + "\n"

    def summary(self) -> str:
        m = self.metrics
        cls = " ".join("nan" if np.isnan(v) else f"{v:.4f}" for v in m.per_class)
        return (f"iou = {m.iou:.6f}\nmiou = {m.miou:.6f}\nper_class_iou = {cls}\n"
                f"gaussians = {self.n_gaussians}\nouter_loops = {self.outer_loops}\n"
                f"{self.k_table.format()}")


def _gauss_optimizer(params: dict[str, Parameter], cfg: RunConfig) -> AdamW:
    rates = {"mu": cfg.lr_mu, "log_scale": cfg.lr_log_scale, "rot": cfg.lr_rot,
             "opacity_logit": cfg.lr_opacity, "color": cfg.lr_color}
    return AdamW(list(params.values()), lr0=1.0, weight_decay=0.0, beta1=cfg.beta1, beta2=cfg.beta2,
                 eps=cfg.adam_eps, lr_scale={params[f].name: rates[f] for f in FIELDS})


def _phase1(gf: GaussianField, inputs: Inputs, cfg: RunConfig, step: int, log: list):
    params = gf.parameters()
    opt = _gauss_optimizer(params, cfg)
    n = cfg.phase1_iters
    for it in range(n):
        opt.zero_grad()
        with Tape() as tape:
            l_rgb, l1, ds = rgb_loss(params, inputs, cfg.lam)
            report, total = total_loss("during_iteration", {"l_rgb": l_rgb, "l1": l1, "dssim": ds}, cfg.lam)
        report.check_finite(step)
        log.append((step, report))
        tape.backward(total)
        opt.step(cosine_lr(it, n, 1.0))
        params["rot"].value = params["rot"].value / np.linalg.norm(params["rot"].value, axis=1, keepdims=True)
        step += 1
        if (it + 1) % cfg.densify_every == 0 and it + 1 < n:
            gf.load_parameters(params)
            gf, src = densify(gf, params["mu"].grad, cfg.densify_grad_threshold,
                              cfg.densify_scale_threshold, cfg.voxel_size)
            params = gf.parameters()
            opt.replace(params.values(), {p.name: src for p in params.values()})
    gf.load_parameters(params)
    return gf, step


def train(cfg: RunConfig, scene: Scene, out_dir=None) -> MetricsReport:
    """Run the full pipeline; writes CSV, checkpoint, renders and grids when ``out_dir`` is set."""
    t0 = time.perf_counter()
    root = RngStream(cfg.seed)
    inputs = prepare_inputs(cfg, scene)
    nets = Networks.create(cfg, scene.spec.n_classes, root.substream(_NETS, 3))
    net_opt = AdamW(nets.parameters(), lr0=cfg.lr, weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                    beta2=cfg.beta2, eps=cfg.adam_eps)
    log: list[tuple[int, LossReport]] = []
    step = 0
    gf = None
    for loop in range(cfg.outer_loops):
        out = fuse(inputs, nets, cfg, root.substream(_FIELD, 3).substream(loop, 2))
        anchors = collect_anchors(inputs.pointcloud, out.fused, cfg.norm_threshold)
        gf = init_parameters(out.fused, anchors, nets.init).field()
        if cfg.use_rgb:
            gf, step = _phase1(gf, inputs, cfg, step, log)
        rows = np.flatnonzero(gf.anchor_id >= 0)
        final = {f: getattr(gf, f)[rows].copy() for f in FIELDS}
        ids = gf.anchor_id[rows]
        stream = root.substream(_PHASE2, 3).substream(loop, 2)
        n2 = cfg.phase2_iters
        for it in range(n2):
            net_opt.zero_grad()
            with Tape() as tape:
                report, total, _ = after_loss(inputs, nets, cfg, stream.substream(it, 1), anchors, final, ids)
            report.check_finite(step)
            log.append((step, report))
            tape.backward(total)
            net_opt.step(cosine_lr(it, n2, cfg.lr))
            step += 1

    t1 = time.perf_counter()
    out = fuse(inputs, nets, cfg, root.substream(_EVAL, 3))
    logits = occupancy_head(out.fused, nets.head)
    latency = time.perf_counter() - t1
    pred = predict(logits, cfg.grid)
    metrics = iou_miou(pred, scene.gt, scene.spec.n_classes)
    decisions = out.decisions
    table = k_table([d.k for d in decisions], cfg.candidates)
    report = MetricsReport(log, metrics, table, len(gf), time.perf_counter() - t0, latency,
                           cfg.outer_loops, decisions, gf)
    if out_dir is not None:
        write_outputs(Path(out_dir), cfg, scene, report, pred)
    return report


def write_outputs(out: Path, cfg: RunConfig, scene: Scene, report: MetricsReport, pred) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    (out / "losses.csv").write_text(report.csv())
    write_k_decisions(out / "k_decisions.csv", report.decisions, cfg.candidates)
    save_field(out / "field.txt", report.field)
    save_cameras(out / "cameras.txt", scene.cameras)
    save_grid(out / "pred_grid.txt", pred)
    (out / "metrics.txt").write_text(report.summary())
    for i, cam in enumerate(scene.cameras):
        img, _ = rasterize(report.field, cam, scene.spec.background)
        write_ppm(out / f"render_{i}.ppm", img)
