"""Two-phase training on procedural shapes, plus evaluation.

Phase 1 minimizes the offsets loss on full clouds; phase 2 adds the
plane-parameter loss and switches to the configured input type (full or
partial views).  Updates are Adam-style moment estimates.  Everything is
seeded: sample recipes, per-epoch rotation augmentation, viewpoints, and
evaluation draws, so single-threaded runs are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from .data import (
    ManifestEntry,
    ShapeRecipe,
    Viewpoint,
    default_manifest,
    gen_shape,
    partial_view,
    random_rotation,
)
from .errors import EigengapTooSmall, NonFiniteLoss
from .geometry import Plane, Rotation, offset_target, signed_distance, transform_plane
from .grid import GridSpec, anchor_grid_coords, normalize_cloud, voxelize
from .metrics import GroundTruth, MetricRow, angular_error, gte, gte_loss, offsets_loss, sde
from .network import (
    STRIDE_FACTOR,
    ModelConfig,
    ModelParams,
    config_from_dict,
    config_to_dict,
    init_params,
    plane_from_offsets,
    predict_offsets_batch,
)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs_phase1: int = 30
    epochs_phase2: int = 30
    batch_size: int = 8
    gte_weight: float = 1.0
    partial: bool = False
    image_size: int = 64
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    point_count: int = 2048
    noise_sigma: float = 0.005
    sde_samples: int = 1000
    seed: int = 0


_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"model"}
_MODEL_KEYS = {
    "H", "D", "W", "N", "K", "enc_channels", "gru_layers", "gru_hidden",
    "gru_kernel", "decoder_channels",
}


def run_config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - _RUN_KEYS - _MODEL_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    model_d = {k: v for k, v in d.items() if k in _MODEL_KEYS}
    model_d["seed"] = d.get("seed", 0)
    run_d = {k: v for k, v in d.items() if k in _RUN_KEYS}
    return RunConfig(model=config_from_dict(model_d), **run_d)


def run_config_to_dict(rc: RunConfig) -> dict:
    out = config_to_dict(rc.model)
    for f in fields(RunConfig):
        if f.name == "model":
            continue
        out[f.name] = getattr(rc, f.name)
    return out


def load_run_config(path) -> RunConfig:
    with open(path) as f:
        return run_config_from_dict(json.load(f))


def _subseed(*parts: int) -> int:
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h ^ (p & 0xFFFFFFFFFFFFFFFF)) * 0xBF58476D1CE4E5B9 % (1 << 64)
    return h % (1 << 63)


@dataclass
class Sample:
    grid: np.ndarray  # H x D x W float
    target: np.ndarray  # N x 3 x Dq x Wq offsets to the nearest gt plane
    gt: GroundTruth  # planes + full object points, in the network input frame
    entry: ManifestEntry


def _closest_plane(planes: list[Plane], anchor_pts: np.ndarray) -> Plane:
    """The gt plane with the smallest mean |signed distance| over the anchors."""
    best, best_p = math.inf, planes[0]
    for p in planes:
        v = float(np.mean(np.abs(signed_distance(anchor_pts, p))))
        if v < best:
            best, best_p = v, p
    return best_p


def prepare_sample(
    entry: ManifestEntry,
    cfg: ModelConfig,
    rc: RunConfig,
    rotation_seed: int,
    partial: bool,
) -> Sample:
    recipe = ShapeRecipe(entry.family, rc.point_count, rc.noise_sigma, entry.seed)
    cloud, gt = gen_shape(recipe)
    rot = random_rotation(rotation_seed)
    pts = rot.apply(cloud.points)
    planes = [transform_plane(p, rot, np.zeros(3), 1.0) for p in gt.planes]
    cloud = type(cloud)(pts, kind=cloud.kind)
    norm_cloud, rec = normalize_cloud(cloud)
    planes = [
        transform_plane(p, Rotation.identity(), -rec.center / rec.scale, 1.0 / rec.scale)
        for p in planes
    ]
    object_points = rec.apply(pts)
    if partial:
        rng = np.random.default_rng(_subseed(rotation_seed, 0xB1E55))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        vp = Viewpoint(eye=2.0 * direction, image_size=rc.image_size)
        part = partial_view(norm_cloud, vp)
        norm_cloud, rec2 = normalize_cloud(part)
        planes = [
            transform_plane(p, Rotation.identity(), -rec2.center / rec2.scale, 1.0 / rec2.scale)
            for p in planes
        ]
        object_points = rec2.apply(object_points)
    grid = voxelize(norm_cloud, cfg.grid)
    anchors = anchor_grid_coords(cfg.grid, STRIDE_FACTOR)  # N x Dq x Wq x 3
    flat = anchors.reshape(-1, 3)
    plane = _closest_plane(planes, flat)
    target = offset_target(flat, plane).reshape(anchors.shape)
    target = np.ascontiguousarray(np.transpose(target, (0, 3, 1, 2)))
    return Sample(
        grid=grid.values.astype(np.float64),
        target=target,
        gt=GroundTruth(planes=planes, object_points=object_points),
        entry=entry,
    )


class Adam:
    def __init__(self, params: ModelParams, rc: RunConfig):
        self.params = params
        self.rc = rc
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        rc = self.rc
        self.t += 1
        bc1 = 1.0 - rc.beta1**self.t
        bc2 = 1.0 - rc.beta2**self.t
        for name, t in self.params.items():
            if t.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= rc.beta1
            m += (1.0 - rc.beta1) * t.grad
            v *= rc.beta2
            v += (1.0 - rc.beta2) * t.grad * t.grad
            t.data -= rc.step_size * (m / bc1) / (np.sqrt(v / bc2) + rc.epsilon)


def _direct_plane(offsets: np.ndarray, spec: GridSpec):
    """Plane from raw offset values by a direct eigensolve (no autograd)."""
    anchors = anchor_grid_coords(spec, STRIDE_FACTOR)
    pts = np.transpose(anchors, (0, 3, 1, 2)) + offsets
    flat = np.transpose(pts, (0, 2, 3, 1)).reshape(-1, 3)
    a = np.concatenate([flat, np.ones((flat.shape[0], 1))], axis=1)
    m = a.T @ a
    vals, vecs = np.linalg.eigh(m)
    beta = vecs[:, 0]
    from .geometry import plane_from_homogeneous

    return plane_from_homogeneous(beta), float(vals[1] - vals[0])


@dataclass
class EpochStats:
    epoch: int
    split: str
    offsets_loss: float
    gte: float
    sde: float
    angular_error: float


def write_log(rows: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "split", "offsets_loss", "gte", "sde", "angular_error"])
        for r in rows:
            wr.writerow(
                [
                    r.epoch,
                    r.split,
                    repr(float(r.offsets_loss)),
                    repr(float(r.gte)),
                    repr(float(r.sde)),
                    repr(float(r.angular_error)),
                ]
            )


def evaluate(
    params: ModelParams,
    cfg: ModelConfig,
    rc: RunConfig,
    entries: list[ManifestEntry],
    partial: bool,
) -> list[MetricRow]:
    """Per-object metrics with fixed (seeded) rotations and viewpoints."""
    rows = []
    bs = rc.batch_size
    for lo in range(0, len(entries), bs):
        chunk = entries[lo : lo + bs]
        samples = [
            prepare_sample(e, cfg, rc, _subseed(rc.seed, e.seed), partial) for e in chunk
        ]
        grids = np.stack([s.grid for s in samples])
        offsets = predict_offsets_batch(grids, params, cfg)
        for i, s in enumerate(samples):
            off = offsets.data[i]
            try:
                plane, gap = _direct_plane(off, cfg.grid)
                rows.append(
                    MetricRow(
                        object_id=s.entry.id,
                        gte=gte(plane, s.gt),
                        sde=sde(plane, s.gt, rc.sde_samples, seed=_subseed(rc.seed, s.entry.seed, 7)),
                        angular_error_deg=angular_error(plane, s.gt),
                        eigengap=gap,
                    )
                )
            except Exception as e:  # degenerate fits are reported, not fatal
                rows.append(MetricRow(s.entry.id, math.nan, math.nan, math.nan, 0.0, type(e).__name__))
    return rows


def noise_floor_sde(rc: RunConfig, entries: list[ManifestEntry], partial: bool, cfg: ModelConfig) -> list[float]:
    """SDE of the ground-truth plane on each (noisy) evaluation cloud."""
    out = []
    for e in entries:
        s = prepare_sample(e, cfg, rc, _subseed(rc.seed, e.seed), partial)
        best = min(
            sde(p, s.gt, rc.sde_samples, seed=_subseed(rc.seed, e.seed, 7)) for p in s.gt.planes
        )
        out.append(best)
    return out


def train(
    rc: RunConfig,
    log_path=None,
    manifest: list[ManifestEntry] | None = None,
    progress=None,
) -> tuple[ModelParams, list[EpochStats]]:
    cfg = replace(rc.model, seed=rc.seed)
    params = init_params(cfg)
    opt = Adam(params, rc)
    if manifest is None:
        manifest = default_manifest(rc.seed, rc.n_train, rc.n_val, rc.n_test)
    train_entries = [e for e in manifest if e.split == "train"]
    val_entries = [e for e in manifest if e.split == "val"]
    stats: list[EpochStats] = []
    total_epochs = rc.epochs_phase1 + rc.epochs_phase2
    for epoch in range(total_epochs):
        phase2 = epoch >= rc.epochs_phase1
        partial = rc.partial and phase2
        order = np.random.default_rng(_subseed(rc.seed, 0x0DDE, epoch)).permutation(len(train_entries))
        ep_off, ep_gte, ep_sde, ep_ang, n_batches = 0.0, 0.0, 0.0, 0.0, 0
        n_gte = 0
        for lo in range(0, len(order), rc.batch_size):
            idxs = order[lo : lo + rc.batch_size]
            samples = [
                prepare_sample(
                    train_entries[i], cfg, rc,
                    _subseed(rc.seed, train_entries[i].seed, epoch + 1), partial,
                )
                for i in idxs
            ]
            grids = np.stack([s.grid for s in samples])
            targets = np.stack([s.target for s in samples])
            offsets = predict_offsets_batch(grids, params, cfg)
            loss = offsets_loss(offsets, ag.Tensor(targets))
            batch_off = loss.item()
            batch_gte = 0.0
            if phase2 and rc.gte_weight != 0.0:
                terms = [loss]
                for i, s in enumerate(samples):
                    try:
                        beta, _, _, _ = plane_from_offsets(ag.select(offsets, i), cfg)
                        g = ag.scalar_mul(gte_loss(beta, s.gt), rc.gte_weight / len(samples))
                        terms.append(g)
                        batch_gte += g.item() / rc.gte_weight * len(samples)
                        n_gte += 1
                    except EigengapTooSmall:
                        # skip the plane term for this sample; offsets loss still applies
                        continue
                total = terms[0]
                for t in terms[1:]:
                    total = ag.add(total, t)
                loss = total
            if not math.isfinite(loss.item()):
                raise NonFiniteLoss(f"epoch {epoch} batch {lo // rc.batch_size}")
            params.zero_grads()
            loss.backward()
            opt.step()
            # training-row metrics from this batch's own predictions
            for i, s in enumerate(samples):
                try:
                    plane, _ = _direct_plane(offsets.data[i], cfg.grid)
                    ep_ang += angular_error(plane, s.gt)
                    ep_sde += sde(plane, s.gt, min(rc.sde_samples, 256), seed=_subseed(rc.seed, 5, epoch))
                except Exception:
                    ep_ang += 90.0
                    ep_sde += math.nan
            ep_off += batch_off
            ep_gte += batch_gte
            n_batches += 1
        n_seen = len(train_entries)
        stats.append(
            EpochStats(
                epoch,
                "train",
                ep_off / max(1, n_batches),
                ep_gte / max(1, n_gte) if n_gte else 0.0,
                ep_sde / n_seen,
                ep_ang / n_seen,
            )
        )
        if val_entries:
            rows = evaluate(params, cfg, rc, val_entries, rc.partial)
            ok = [r for r in rows if r.status == "ok"]
            stats.append(
                EpochStats(
                    epoch,
                    "val",
                    math.nan,
                    float(np.mean([r.gte for r in ok])) if ok else math.nan,
                    float(np.mean([r.sde for r in ok])) if ok else math.nan,
                    float(np.mean([r.angular_error_deg for r in ok])) if ok else math.nan,
                )
            )
        if progress is not None:
            progress(epoch, stats)
        if log_path is not None:
            write_log(stats, log_path)
    return params, stats
