"""Two-phase training: warm-up, then on-the-fly streaming optimization.

Warm-up fits a learnable texture, illumination coefficients, and a vertex
displacement against the first frames, then freezes all three; the texture
and illumination are baked into per-point colors. The online phase trains
one new frame per iteration plus replayed frames, accumulates positional
and motion statistics, and fires an adapt event (clone/prune + mask-based
simplification) on a fixed iteration cadence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .adapt import (AdaptConfig, AdaptEvent, GradAccumulator, accumulate_step,
                    clone_prune, compute_idx, simplify_small, straight_through)
from .anchors import (AnchorMesh, CanonicalReference, MeshFrame,
                      accumulate_motion, point_to_surface, sample_uv_anchors,
                      vertex_normals)
from .camera import Camera
from .cloud import GaussianCloud, make_cloud
from .errors import PhaseError
from .losses import loss_dssim, loss_l1, loss_normal_consistency, loss_dark_channel
from .mathutil import SH_C0, as_f32, as_f64, sh_basis_deg2, sigmoid
from .metrics import psnr
from .optim import Adam, LearningRates
from .pipeline import (ParamGrads, derive_cloud_state, render_cloud,
                       render_cloud_backward)
from .scene import FrameSample


@dataclass
class LossWeights:
    l1: float = 1.0
    dssim: float = 0.1
    surface: float = 0.01
    dark: float = 10.0     # warm-up only
    normal: float = 0.1    # warm-up only

    def validate(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0")
        return self


@dataclass
class TrainConfig:
    seed: int = 0
    iters: int = 20_000
    n_points_init: int = 2500
    replay_frames: int = 3
    replay_capacity: int = 512
    warmup_iters: int = 2000
    warmup_window: int = 40
    warmup_batch: int = 1
    texture_resolution: int = 128
    displacement_cap: float = 0.05     # fraction of mesh bounding radius
    mask_logit_init: float = -4.0
    opacity_init: float = 0.8
    checkpoint_every: int = 1500
    enable_warmup: bool = True
    enable_simplify: bool = True
    enable_anchor: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    rates: LearningRates = field(default_factory=LearningRates)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)


@dataclass
class WarmupState:
    """Learnable warm-up parameters; frozen once the online phase starts."""

    texture: np.ndarray        # (T, T, 3) float32
    sh: np.ndarray             # (3, 9) float32 illumination coefficients
    displacement: np.ndarray   # (V, 3) float32
    frozen: bool = False
    aborted: bool = False

    @staticmethod
    def initial(tex_resolution: int, vertex_count: int) -> "WarmupState":
        tex = np.full((tex_resolution, tex_resolution, 3), 0.5, dtype=np.float32)
        sh = np.zeros((3, 9), dtype=np.float32)
        sh[:, 0] = 1.0 / SH_C0   # unit irradiance
        disp = np.zeros((vertex_count, 3), dtype=np.float32)
        return WarmupState(texture=tex, sh=sh, displacement=disp)


class ReplayBuffer:
    """Ring buffer of observed frames with uniform replay sampling."""

    def __init__(self, capacity: int = 512):
        self.capacity = capacity
        self.frames: List[FrameSample] = []

    def __len__(self):
        return len(self.frames)

    def append(self, frame: FrameSample):
        self.frames.append(frame)
        if len(self.frames) > self.capacity:
            self.frames.pop(0)

    def sample(self, rng: np.random.Generator, k: int) -> List[FrameSample]:
        if not self.frames or k <= 0:
            return []
        idx = rng.integers(0, len(self.frames), size=k)
        return [self.frames[i] for i in idx]


def _bilinear_sample(tex, uv):
    T0, T1 = tex.shape[0], tex.shape[1]
    x = np.clip(as_f64(uv[:, 0]), 0.0, 1.0) * (T1 - 1)
    y = np.clip(as_f64(uv[:, 1]), 0.0, 1.0) * (T0 - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, T1 - 1)
    y1 = np.minimum(y0 + 1, T0 - 1)
    wx = (x - x0)[:, None]
    wy = (y - y0)[:, None]
    val = (tex[y0, x0] * (1 - wx) * (1 - wy) + tex[y0, x1] * wx * (1 - wy)
           + tex[y1, x0] * (1 - wx) * wy + tex[y1, x1] * wx * wy)
    return val, (y0, x0, y1, x1, wx, wy)


def _bilinear_scatter(grad_vals, info, shape):
    y0, x0, y1, x1, wx, wy = info
    out = np.zeros(shape)
    np.add.at(out, (y0, x0), grad_vals * (1 - wx) * (1 - wy))
    np.add.at(out, (y0, x1), grad_vals * wx * (1 - wy))
    np.add.at(out, (y1, x0), grad_vals * (1 - wx) * wy)
    np.add.at(out, (y1, x1), grad_vals * wx * wy)
    return out


def binding_uv(mesh: AnchorMesh, bindings) -> np.ndarray:
    """UV coordinate of each binding (barycentric over vertex UVs)."""
    tri_uv = mesh.uv[mesh.faces[bindings.face]]
    return np.einsum("nk,nkd->nd", as_f64(bindings.bary), tri_uv)


METRICS_HEADER = ("iteration,wall_time,loss_total,loss_l1,loss_dssim,"
                  "loss_surface,psnr,points,adapt_event,points_before,"
                  "cloned,pruned,simplified,budget_dropped,spared")


@dataclass
class MetricsRow:
    iteration: int
    wall_time: float
    loss_total: float
    loss_l1: float
    loss_dssim: float
    loss_surface: float
    psnr: float
    points: int
    adapt_event: int = 0
    points_before: int = 0
    cloned: int = 0
    pruned: int = 0
    simplified: int = 0
    budget_dropped: int = 0
    spared: int = 0

    def to_csv(self) -> str:
        return (f"{self.iteration},{self.wall_time!r},{self.loss_total!r},"
                f"{self.loss_l1!r},{self.loss_dssim!r},{self.loss_surface!r},"
                f"{self.psnr!r},{self.points},{self.adapt_event},"
                f"{self.points_before},{self.cloned},{self.pruned},"
                f"{self.simplified},{self.budget_dropped},{self.spared}")


class Trainer:
    """Runs warm-up and the online streaming loop over a scene."""

    def __init__(self, scene, config: TrainConfig,
                 adapt_callback: Optional[Callable] = None,
                 frame_callback: Optional[Callable] = None):
        self.scene = scene
        self.config = config
        self.mesh: AnchorMesh = scene.mesh
        self.camera: Camera = scene.camera
        bg = getattr(scene, "background", None)
        if bg is None:
            bg = scene.config.background
        self.background = as_f64(bg)
        self.rng = np.random.default_rng(config.seed)
        self.adapt_callback = adapt_callback
        self.frame_callback = frame_callback

        self.train_indices = list(scene.train_indices)
        self.iteration = 0
        self.metrics: List[MetricsRow] = []
        self.warmup_metrics: List[dict] = []
        self.events: List[AdaptEvent] = []
        self.skipped_groups: List[str] = []
        self.clock = 0.0

        self.warmup = WarmupState.initial(config.texture_resolution,
                                          self.mesh.vertex_count)
        self.optimizer = Adam()
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.cloud: Optional[GaussianCloud] = None
        self.reference: Optional[CanonicalReference] = None
        self.accumulator: Optional[GradAccumulator] = None
        self._start = time.perf_counter()
        self._frame0 = self._get_frame(self.train_indices[0])
        radius = self.mesh.bounding_radius()
        self.config.adapt.motion_scale = 1.0 / radius
        self._displacement_limit = config.displacement_cap * radius

    # -- scene access -------------------------------------------------------

    def _get_frame(self, index: int) -> FrameSample:
        if hasattr(self.scene, "frames"):
            return self.scene.frames[index]
        return self.scene.load_frame(index)

    def _effective_frame(self, sample: FrameSample) -> MeshFrame:
        """Tracked frame plus the frozen warm-up displacement."""
        mf = sample.mesh_frame
        disp = as_f64(self.warmup.displacement)
        return MeshFrame(mesh=self.mesh, vertices=mf.vertices + disp,
                         pose_rotation=mf.pose_rotation,
                         pose_translation=mf.pose_translation,
                         timestamp=mf.timestamp)

    # -- warm-up phase ------------------------------------------------------

    def run_warmup(self):
        """Optimize texture, illumination, and vertex displacement; freeze."""
        cfg = self.config
        if not cfg.enable_warmup or cfg.warmup_iters <= 0:
            self.warmup.frozen = True
            return self.warmup
        window = [self._get_frame(i) for i in
                  self.train_indices[:max(1, min(cfg.warmup_window,
                                                 len(self.train_indices)))]]
        bindings = sample_uv_anchors(self.mesh, cfg.n_points_init, seed=cfg.seed)
        uv = binding_uv(self.mesh, bindings)
        ref0 = CanonicalReference.from_bindings(self.mesh, bindings,
                                                canonical_vertices=self.mesh.vertices)
        basis = sh_basis_deg2(ref0.anchor_normals)   # (n, 9), frozen normals

        wu_cloud = make_cloud(bindings, log_scale_init=self._init_log_scales(ref0),
                              opacity_logit=float(np.log(cfg.opacity_init /
                                                         (1 - cfg.opacity_init))),
                              mask_logit=10.0)
        adam = Adam()
        lrs = {"texture": cfg.rates.texture, "illumination": cfg.rates.illumination,
               "vertex": cfg.rates.vertex, "scale": cfg.rates.scale,
               "opacity": cfg.rates.opacity}
        snapshot = (self.warmup.texture.copy(), self.warmup.sh.copy(),
                    self.warmup.displacement.copy())
        pairs = None
        for it in range(cfg.warmup_iters):
            sample = window[it % len(window)]
            tex = as_f64(self.warmup.texture)
            sh = as_f64(self.warmup.sh)
            disp = as_f64(self.warmup.displacement)

            albedo, bil_info = _bilinear_sample(tex, uv)
            irr = basis @ sh.T                         # (n, 3)
            color_raw = albedo * irr
            colors = np.clip(color_raw, 0.0, 1.0)
            wu_cloud.color_dc = as_f32((colors - 0.5) / SH_C0)

            frame = MeshFrame(mesh=self.mesh,
                              vertices=sample.mesh_frame.vertices + disp,
                              pose_rotation=sample.mesh_frame.pose_rotation,
                              pose_translation=sample.mesh_frame.pose_translation)
            ctx = render_cloud(wu_cloud, frame, sample.camera, self.background)
            target = as_f64(sample.image)
            l1, g_l1 = loss_l1(ctx.image, target, with_grad=True)
            dssim, g_ds = loss_dssim(ctx.image, target, with_grad=True)
            dark, g_dark = loss_dark_channel(tex, with_grad=True)
            canon = self.mesh.vertices + disp
            normal, g_norm = loss_normal_consistency(canon, self.mesh.faces,
                                                     pairs=pairs, with_grad=True)
            if pairs is None:
                from .anchors import face_adjacency
                pairs = face_adjacency(self.mesh.faces)

            w = cfg.weights
            total = w.l1 * l1 + w.dssim * dssim + w.dark * dark + w.normal * normal
            if not np.isfinite(total):
                self.warmup.texture, self.warmup.sh, self.warmup.displacement = snapshot
                self.warmup.aborted = True
                break

            grad_image = w.l1 * g_l1 + w.dssim * g_ds
            grads = render_cloud_backward(ctx, grad_image)

            # color chain: dc gradient back to albedo/irradiance, then
            # texture (bilinear adjoint) and SH (basis-weighted)
            g_colors = grads.color_dc / SH_C0
            g_albedo = g_colors * irr
            g_irr = g_colors * albedo
            g_tex = _bilinear_scatter(g_albedo, bil_info, tex.shape)
            g_tex += w.dark * g_dark
            g_sh = g_irr.T @ basis                     # (3, 9)

            # vertex chain: anchor positions only (frame rotation held fixed)
            g_anchor = grads.mean_world @ frame.pose_rotation
            g_disp = np.zeros_like(disp)
            bary = as_f64(bindings.bary)
            for k in range(3):
                np.add.at(g_disp, self.mesh.faces[bindings.face, k],
                          bary[:, k:k + 1] * g_anchor)
            g_disp += w.normal * g_norm

            params = {"texture": self.warmup.texture, "illumination": self.warmup.sh,
                      "vertex": self.warmup.displacement,
                      "scale": wu_cloud.log_scale, "opacity": wu_cloud.opacity_logit}
            gradd = {"texture": g_tex, "illumination": g_sh, "vertex": g_disp,
                     "scale": grads.log_scale, "opacity": grads.opacity_logit}
            adam.step(params, gradd, lrs)

            norms = np.linalg.norm(as_f64(self.warmup.displacement), axis=1)
            over = norms > self._displacement_limit
            if np.any(over):
                scalef = self._displacement_limit / norms[over]
                self.warmup.displacement[over] = as_f32(
                    as_f64(self.warmup.displacement[over]) * scalef[:, None])

            self.warmup_metrics.append(
                {"iteration": it, "loss": float(total), "l1": float(l1),
                 "dssim": float(dssim), "dark": float(dark),
                 "normal": float(normal)})
        self.warmup.frozen = True
        return self.warmup

    # -- cloud initialization ----------------------------------------------

    def _init_log_scales(self, ref: CanonicalReference):
        pos = ref.anchor_positions
        if pos.shape[0] < 5:
            return np.log(np.full((pos.shape[0], 3), 0.05))
        tree = cKDTree(pos)
        dist, _ = tree.query(pos, k=4)
        mean = np.sqrt(np.mean(dist[:, 1:] ** 2, axis=1))
        s = np.clip(mean * 0.7, 1e-4, 1.0)
        return np.log(np.repeat(s[:, None], 3, axis=1))

    def init_cloud(self):
        """Sample anchors on the displaced mesh and bake warm-up colors."""
        cfg = self.config
        self.mesh.vertex_displacement = as_f64(self.warmup.displacement)
        bindings = sample_uv_anchors(self.mesh, cfg.n_points_init, seed=cfg.seed)
        frame0 = self._effective_frame(self._frame0)
        self.reference = CanonicalReference.from_bindings(
            self.mesh, bindings, canonical_vertices=frame0.vertices)
        uv = binding_uv(self.mesh, bindings)
        albedo, _ = _bilinear_sample(as_f64(self.warmup.texture), uv)
        irr = sh_basis_deg2(self.reference.anchor_normals) @ as_f64(self.warmup.sh).T
        colors = np.clip(albedo * irr, 0.0, 1.0)
        self.cloud = make_cloud(
            bindings, log_scale_init=self._init_log_scales(self.reference),
            opacity_logit=float(np.log(cfg.opacity_init / (1 - cfg.opacity_init))),
            mask_logit=cfg.mask_logit_init,
            color_dc=(colors - 0.5) / SH_C0)
        self.accumulator = GradAccumulator(self.cloud.count)
        return self.cloud

    # -- online phase -------------------------------------------------------

    def _online_lrs(self):
        r = self.config.rates
        return {"offset": r.offset, "scale": r.scale, "rotation": r.rotation,
                "opacity": r.opacity, "mask": r.mask}

    def online_step(self) -> MetricsRow:
        """One streaming iteration: new frame + replays, losses, adam step,
        accumulator update, and the scheduled adapt event."""
        if self.cloud is None:
            raise PhaseError("online_step before init_cloud")
        cfg = self.config
        w = cfg.weights
        new_index = self.train_indices[self.iteration % len(self.train_indices)]
        new_sample = self._get_frame(new_index)
        replays = self.buffer.sample(self.rng, cfg.replay_frames)
        batch = [new_sample] + replays

        mask_fwd, mask_grad_factor = straight_through(
            self.cloud.mask_logit, cfg.adapt.mask_threshold)
        derived = derive_cloud_state(self.cloud, mask_fwd)

        n = self.cloud.count
        total_grads = ParamGrads.zeros(n)
        l1_sum = 0.0
        dssim_sum = 0.0
        psnr_new = 0.0
        motion_for_frames = []
        for bi, sample in enumerate(batch):
            frame = self._effective_frame(sample)
            ctx = render_cloud(self.cloud, frame, sample.camera,
                               self.background, derived=derived)
            target = as_f64(sample.image)
            l1, g_l1 = loss_l1(ctx.image, target, with_grad=True)
            dssim, g_ds = loss_dssim(ctx.image, target, with_grad=True)
            l1_sum += l1
            dssim_sum += dssim
            if bi == 0:
                psnr_new = psnr(ctx.image, target)
            grad_image = (w.l1 * g_l1 + w.dssim * g_ds) / len(batch)
            total_grads.add_(render_cloud_backward(ctx, grad_image))
            motion_for_frames.append(
                np.linalg.norm(ctx.placement.anchor_pos
                               - self.reference.anchor_positions, axis=1))

        # render-path positional gradient feeds the idx statistic
        accumulate_step(np.linalg.norm(total_grads.offset, axis=1),
                        None, self.accumulator)
        for disp in motion_for_frames:
            self.accumulator.add_motion(disp)

        sd = point_to_surface(self.cloud, self.reference, mask=mask_fwd)
        surface = sd.value
        if cfg.enable_simplify:
            total_grads.offset += w.surface * sd.grad_offset
            g_mask_value = total_grads.mask + w.surface * sd.grad_mask
        else:
            g_mask_value = np.zeros(n)
        g_mask_logit = g_mask_value * mask_grad_factor

        params = {"offset": self.cloud.offset, "scale": self.cloud.log_scale,
                  "rotation": self.cloud.rotation,
                  "opacity": self.cloud.opacity_logit}
        grads = {"offset": total_grads.offset, "scale": total_grads.log_scale,
                 "rotation": total_grads.rotation,
                 "opacity": total_grads.opacity_logit}
        if cfg.enable_simplify:
            params["mask"] = self.cloud.mask_logit
            grads["mask"] = g_mask_logit
        skipped = self.optimizer.step(params, grads, self._online_lrs())
        if skipped:
            self.skipped_groups.append((self.iteration, skipped))
        self.cloud.renormalize_rotations()

        self.buffer.append(new_sample)
        self.iteration += 1

        loss_l1_mean = l1_sum / len(batch)
        loss_ds_mean = dssim_sum / len(batch)
        total = w.l1 * loss_l1_mean + w.dssim * loss_ds_mean \
            + (w.surface * surface if cfg.enable_simplify else 0.0)
        row = MetricsRow(
            iteration=self.iteration,
            wall_time=time.perf_counter() - self._start,
            loss_total=float(total), loss_l1=float(loss_l1_mean),
            loss_dssim=float(loss_ds_mean),
            loss_surface=float(surface if cfg.enable_simplify else 0.0),
            psnr=float(psnr_new), points=self.cloud.count)

        if (cfg.enable_anchor or cfg.enable_simplify) \
                and self.iteration % cfg.adapt.interval == 0:
            event = self.run_adapt_event()
            row.adapt_event = 1
            row.points_before = event.before
            row.cloned = event.cloned
            row.pruned = event.pruned
            row.simplified = event.simplified
            row.budget_dropped = event.budget_dropped
            row.spared = event.spared
            row.points = self.cloud.count

        self.metrics.append(row)
        if self.frame_callback is not None:
            self.frame_callback(self, row)
        return row

    def run_adapt_event(self) -> AdaptEvent:
        """compute_idx -> clone_prune -> simplify_small, then state resync."""
        cfg = self.config
        before = self.cloud.count
        prev_cloud = self.cloud
        idx = None
        if cfg.enable_anchor:
            idx = compute_idx(self.accumulator, cfg.adapt.threshold,
                              cfg.adapt.motion_scale)
            new_cloud, event, parent_map, clone_flag = clone_prune(
                self.cloud, idx, cfg.adapt, self.accumulator, self.rng)
            self.cloud = new_cloud
            for name in ("offset", "scale", "rotation", "opacity", "mask"):
                self.optimizer.remap(name, parent_map, clone_flag)
        else:
            event = AdaptEvent(before=before, cloned=0, pruned=0, simplified=0,
                               budget_dropped=0, spared=0, after=before)
        if cfg.enable_simplify:
            self.cloud, removed, keep = simplify_small(
                self.cloud, cfg.adapt.mask_threshold)
            event.simplified = removed
            if removed:
                identity = np.zeros(keep.shape[0], dtype=bool)
                for name in ("offset", "scale", "rotation", "opacity", "mask"):
                    self.optimizer.remap(name, keep, identity)
        event.after = self.cloud.count

        frame0 = self._effective_frame(self._frame0)
        self.reference = CanonicalReference.from_bindings(
            self.mesh, self.cloud.anchor, canonical_vertices=frame0.vertices)
        self.accumulator.reset(self.cloud.count)
        self.events.append(event)
        if self.adapt_callback is not None:
            self.adapt_callback(self, event, idx, prev_cloud)
        return event

    # -- orchestration ------------------------------------------------------

    def fit(self, iters: Optional[int] = None,
            checkpoint_callback: Optional[Callable] = None):
        """Complete run: warm-up (unless disabled), init, online loop."""
        if self.cloud is None:
            self.run_warmup()
            self.init_cloud()
        target = self.config.iters if iters is None else iters
        while self.iteration < target:
            self.online_step()
            if checkpoint_callback is not None \
                    and self.iteration % self.config.checkpoint_every == 0:
                checkpoint_callback(self)
        return self

    def render_frame(self, sample: FrameSample):
        mask_fwd, _ = straight_through(self.cloud.mask_logit,
                                       self.config.adapt.mask_threshold)
        frame = self._effective_frame(sample)
        ctx = render_cloud(self.cloud, frame, sample.camera, self.background,
                           mask=mask_fwd)
        return ctx.image

    def metrics_csv(self) -> str:
        lines = [METRICS_HEADER]
        lines += [row.to_csv() for row in self.metrics]
        return "\n".join(lines) + "\n"


def evaluate(trainer: Trainer, indices) -> List[dict]:
    """PSNR/MSE/DSSIM rows over the given frame indices."""
    from .metrics import mse as mse_fn
    rows = []
    for i in indices:
        sample = trainer._get_frame(i)
        image = trainer.render_frame(sample)
        target = as_f64(sample.image)
        rows.append({
            "frame": i,
            "psnr": psnr(image, target),
            "mse": mse_fn(image, target),
            "dssim": loss_dssim(image, target),
        })
    return rows


# ---------------------------------------------------------------------------
# Checkpointing


def _config_to_dict(config: TrainConfig) -> dict:
    from dataclasses import asdict
    return asdict(config)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    d["rates"] = LearningRates(**d["rates"])
    d["adapt"] = AdaptConfig(**d["adapt"])
    return TrainConfig(**d)


def trainer_checkpoint_bytes(trainer: Trainer) -> bytes:
    """Serialize the complete training state, bit-exact."""
    from .storage import cloud_arrays, save_checkpoint_bytes
    arrays = dict(cloud_arrays(trainer.cloud))
    arrays.update(trainer.optimizer.state_arrays())
    arrays["acc_grad_sum"] = trainer.accumulator.grad_sum
    arrays["acc_motion_sum"] = trainer.accumulator.motion_sum
    arrays["warm_texture"] = trainer.warmup.texture
    arrays["warm_sh"] = trainer.warmup.sh
    arrays["warm_displacement"] = trainer.warmup.displacement
    scalars = {
        "iteration": trainer.iteration,
        "adam_t": trainer.optimizer.t,
        "acc_grad_count": trainer.accumulator.grad_count,
        "acc_motion_count": trainer.accumulator.motion_count,
        "acc_iterations": trainer.accumulator.iterations,
        "rng_state": trainer.rng.bit_generator.state,
        "warm_frozen": trainer.warmup.frozen,
        "warm_aborted": trainer.warmup.aborted,
        "config": _config_to_dict(trainer.config),
    }
    return save_checkpoint_bytes(arrays, scalars, trainer.cloud.count)


def trainer_from_checkpoint(data: bytes, scene,
                            config: Optional[TrainConfig] = None,
                            adapt_callback=None, frame_callback=None) -> Trainer:
    """Rebuild a trainer mid-run; resumed training is bit-identical.

    The replay buffer is reconstructed from the scene stream (its contents
    are a deterministic function of the iteration counter), so frames are
    never persisted in the checkpoint.
    """
    from .storage import cloud_from_arrays, load_checkpoint_bytes
    arrays, scalars, _count = load_checkpoint_bytes(data)
    if config is None:
        config = config_from_dict(scalars["config"])
    trainer = Trainer(scene, config, adapt_callback=adapt_callback,
                      frame_callback=frame_callback)
    trainer.warmup = WarmupState(
        texture=arrays["warm_texture"].astype(np.float32),
        sh=arrays["warm_sh"].astype(np.float32),
        displacement=arrays["warm_displacement"].astype(np.float32),
        frozen=bool(scalars["warm_frozen"]),
        aborted=bool(scalars["warm_aborted"]))
    trainer.mesh.vertex_displacement = as_f64(trainer.warmup.displacement)
    trainer.cloud = cloud_from_arrays(arrays)
    trainer.iteration = int(scalars["iteration"])
    trainer.optimizer.load_state_arrays(arrays, scalars["adam_t"])
    acc = GradAccumulator(trainer.cloud.count)
    acc.grad_sum = arrays["acc_grad_sum"].astype(np.float64)
    acc.motion_sum = arrays["acc_motion_sum"].astype(np.float64)
    acc.grad_count = int(scalars["acc_grad_count"])
    acc.motion_count = int(scalars["acc_motion_count"])
    acc.iterations = int(scalars["acc_iterations"])
    trainer.accumulator = acc
    state = scalars["rng_state"]
    trainer.rng.bit_generator.state = state
    frame0 = trainer._effective_frame(trainer._frame0)
    trainer.reference = CanonicalReference.from_bindings(
        trainer.mesh, trainer.cloud.anchor, canonical_vertices=frame0.vertices)
    n_train = len(trainer.train_indices)
    first = max(0, trainer.iteration - config.replay_capacity)
    for j in range(first, trainer.iteration):
        trainer.buffer.append(trainer._get_frame(
            trainer.train_indices[j % n_train]))
    return trainer
