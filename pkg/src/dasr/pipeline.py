"""Two-stage training, checkpointing glue, and evaluation runs.

Stage 1 learns the LR -> HR infrared mapping from paired IR crops (pixel
MAE, optionally adversarial). Stage 2 starts from the stage-1 generator and
adapts on visible/IR pairs: the texture discriminator trains against the
prior loss while the generator trains on MAE plus the noise repulsion term
(plus the adversarial term when enabled).

Everything is deterministic per (seed, config, manifest): identical runs
produce byte-identical checkpoints and logs.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import losses, tensor as T
from .checkpoint import Checkpoint
from .imaging import (Image, add_gaussian_noise, bicubic_resize,
                      random_paired_crop, save_image, to_luma)
from .losses import LossBreakdown, LossWeights
from .metrics import BenchRow, evaluate_set
from .models import (DiscSpre, DiscTrans, FeatureExtractor, Generator,
                     PRIOR_DEPTHS, desk_generator_config,
                     paper_scale_generator_config)
from .optim import AdamState, adam_step, clip_grad_norm
from .rng import derive_seed, generator
from .synth import DatasetManifest
from .tensor import Tensor

PRESETS = ("desk", "paper-scale")


@dataclass
class TrainConfig:
    scale: int = 2
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 4
    lr_crop: int = 64
    steps_stage1: int = 1000
    steps_stage2: int = 1000
    alpha: float = 0.1
    beta: float = 1.0
    prior_depth: str = "middle"
    trans_mode: str = "prior-branch"
    noise_sigma: float = 0.1
    adv_enabled: bool = True
    seed: int = 0
    preset: str = "desk"
    prior_blocks: int = 2
    grad_clip: float = 1.0
    ir_replay: bool = True
    init_trans_from_spre: bool = False
    feature_weights: Optional[list[float]] = None

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, "
                             f"got {self.preset!r}")
        if self.prior_depth not in PRIOR_DEPTHS:
            raise ValueError(f"prior_depth must be one of {PRIOR_DEPTHS}, "
                             f"got {self.prior_depth!r}")
        if self.trans_mode not in losses.TRANS_MODES:
            raise ValueError(
                f"trans_mode must be one of {losses.TRANS_MODES}, "
                f"got {self.trans_mode!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.batch < 1 or self.lr_crop < 1:
            raise ValueError("batch and lr_crop must be >= 1")
        if self.steps_stage1 < 0 or self.steps_stage2 < 0:
            raise ValueError("step counts must be >= 0")

    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta)

    def hr_crop(self) -> int:
        return self.scale * self.lr_crop

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
        return TrainConfig(**doc)


def build_generator(config: TrainConfig) -> Generator:
    gen_cfg = (paper_scale_generator_config(config.scale)
               if config.preset == "paper-scale"
               else desk_generator_config(config.scale))
    return Generator(gen_cfg, seed=derive_seed(config.seed, "init.gen"))


def build_disc_spre(config: TrainConfig) -> DiscSpre:
    return DiscSpre(in_hw=config.hr_crop(),
                    seed=derive_seed(config.seed, "init.dspre"))


def build_disc_trans(config: TrainConfig) -> DiscTrans:
    return DiscTrans(in_hw=config.hr_crop(),
                     seed=derive_seed(config.seed, "init.dtrans"),
                     prior_blocks=config.prior_blocks)


def build_feature_extractor(config: TrainConfig) -> FeatureExtractor:
    return FeatureExtractor(tap_depth=config.prior_depth)


def noise_feature_weights(config: TrainConfig,
                          fe: FeatureExtractor) -> list[float]:
    if config.feature_weights is not None:
        w = [float(v) for v in config.feature_weights]
        if len(w) != fe.K:
            raise ValueError(
                f"feature_weights needs {fe.K} entries, got {len(w)}")
        return w
    return fe.tap_weights()


# ---------------------------------------------------------------------------
# dataset access
# ---------------------------------------------------------------------------

@dataclass
class _Sample:
    hr_ir: Image
    lr_ir: Image
    vis_hr: Optional[Image]
    lr_vis_luma: Optional[Image]


def _load_samples(manifest: DatasetManifest, need_vis: bool) -> list[_Sample]:
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    samples = []
    for i in range(len(manifest.entries)):
        hr_ir, vis_hr = manifest.load_hr_pair(i)
        if need_vis and vis_hr is None:
            raise ValueError(
                f"entry {i}: stage 2 needs a visible image for every pair")
        lr_ir = manifest.lr_for(hr_ir, i, "ir-noise")
        lr_vis = None
        if vis_hr is not None:
            lr_vis = to_luma(manifest.lr_for(vis_hr, i, "vis-noise"))
        samples.append(_Sample(hr_ir=hr_ir, lr_ir=lr_ir, vis_hr=vis_hr,
                               lr_vis_luma=lr_vis))
    return samples


def _to_nchw(imgs: list[Image]) -> Tensor:
    arr = np.stack([im.array.transpose(2, 0, 1) for im in imgs])
    return Tensor(arr.astype(np.float32))


def _batch(samples: list[_Sample], rng: np.random.Generator,
           config: TrainConfig, use_vis: bool) -> tuple[Tensor, Tensor, list]:
    """(lr batch, hr-IR batch, crop seeds); LR comes from the visible or IR
    stream depending on the stage."""
    idxs = rng.integers(0, len(samples), size=config.batch)
    lr_list, hr_list, seeds = [], [], []
    for i in idxs:
        s = samples[int(i)]
        lr_img = s.lr_vis_luma if use_vis else s.lr_ir
        seed = int(rng.integers(0, 2 ** 62))
        lr_c, hr_c = random_paired_crop(lr_img, s.hr_ir, config.lr_crop,
                                        config.scale, seed)
        lr_list.append(lr_c)
        hr_list.append(hr_c)
        seeds.append(seed)
    return _to_nchw(lr_list), _to_nchw(hr_list), seeds


class _LossLog:
    def __init__(self, path: Optional[str]):
        self.path = path
        self.rows: list[str] = [LossBreakdown.csv_header()]
        self.last: Optional[LossBreakdown] = None

    def add(self, step: int, lb: LossBreakdown) -> None:
        self.rows.append(lb.csv_row(step))
        self.last = lb

    def flush(self) -> None:
        if self.path:
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(self.rows) + "\n")


def _checkpoint(stage: str, config: TrainConfig, gen: Generator,
                disc=None, disc_prefix: str = "") -> Checkpoint:
    tensors = {f"gen.{k}": v.copy() for k, v in gen.named_tensors()}
    if disc is not None:
        tensors.update({f"{disc_prefix}.{k}": v.copy()
                        for k, v in disc.named_tensors()})
    return Checkpoint(stage=stage, config=config.to_dict(), tensors=tensors)


def _load_model_tensors(model, ckpt: Checkpoint, prefix: str) -> None:
    sub = {k[len(prefix) + 1:]: v for k, v in ckpt.tensors.items()
           if k.startswith(prefix + ".")}
    model.load_named_tensors(sub)


def generator_from_checkpoint(ckpt: Checkpoint) -> tuple[Generator,
                                                         TrainConfig]:
    config = TrainConfig.from_dict(ckpt.config)
    gen = build_generator(config)
    _load_model_tensors(gen, ckpt, "gen")
    return gen, config


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

def train_stage1(manifest: DatasetManifest, config: TrainConfig,
                 log_path: Optional[str] = None) -> Checkpoint:
    """Alternating discriminator/generator steps on IR pairs.

    The discriminator minimizes the real/fake cross-entropy; the generator
    minimizes pixel MAE (plus the adversarial term when enabled). With the
    adversarial path disabled the discriminator is left untouched.
    """
    if manifest.scale != config.scale:
        raise ValueError(f"manifest scale {manifest.scale} != config scale "
                         f"{config.scale}")
    samples = _load_samples(manifest, need_vis=False)
    gen = build_generator(config)
    dspre = build_disc_spre(config)
    g_state, d_state = AdamState(), AdamState()
    rng = generator(config.seed, "stage1.batches")
    log = _LossLog(log_path)

    for step in range(config.steps_stage1):
        lr_t, hr_t, _ = _batch(samples, rng, config, use_vis=False)
        lb = LossBreakdown()

        sr_fake = gen(lr_t)

        if config.adv_enabled:
            dspre.zero_grad()
            d_loss = losses.l_adversarial_d(dspre(hr_t),
                                            dspre(sr_fake.detach()))
            T.backward(d_loss)
            clip_grad_norm(dspre.parameters(), config.grad_clip)
            adam_step(dspre.parameters(), d_state, config.lr, config.beta1,
                      config.beta2, config.eps)
            lb.spre = -d_loss.item()
            lb.total_d = d_loss.item()

        gen.zero_grad()
        mae = losses.l_mae(sr_fake, hr_t)
        adv_g = None
        if config.adv_enabled:
            adv_g = losses.l_adversarial_g(dspre(sr_fake))
            lb.adv_g = adv_g.item()
        g_loss = losses.combine_g(mae, None, adv_g, config.weights(),
                                  config.adv_enabled)
        T.backward(g_loss)
        clip_grad_norm(gen.parameters(), config.grad_clip)
        adam_step(gen.parameters(), g_state, config.lr, config.beta1,
                  config.beta2, config.eps)
        lb.mae = mae.item()
        lb.total_g = g_loss.item()
        log.add(step, lb)

    log.flush()
    return _checkpoint("stage1", config, gen, dspre, "dspre")


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

def _noise_image(lr_vis_luma: Image, hr_size: tuple[int, int], sigma: float,
                 seed: int) -> Image:
    """The noise pattern: the visible luma upscaled to HR extents with
    Gaussian noise on top."""
    up = bicubic_resize(lr_vis_luma, hr_size[0], hr_size[1])
    return add_gaussian_noise(up, sigma, seed)


def train_stage2(stage1_ckpt: Checkpoint, manifest: DatasetManifest,
                 config: TrainConfig,
                 log_path: Optional[str] = None) -> Checkpoint:
    """Domain adaptation on visible/IR pairs from a stage-1 generator.

    Per step: the texture discriminator takes one step on
    -(spre + beta * trans); the generator takes one step on
    mae + alpha * noise (+ adv). When ir_replay is on, the generator also
    replays one plain MAE step on an IR batch. The feature extractor and
    all Sobel filter layers stay frozen throughout.
    """
    if stage1_ckpt.stage != "stage1":
        raise ValueError("stage2 requires a stage1 checkpoint, got "
                         f"{stage1_ckpt.stage!r}")
    if manifest.scale != config.scale:
        raise ValueError(f"manifest scale {manifest.scale} != config scale "
                         f"{config.scale}")
    samples = _load_samples(manifest, need_vis=True)

    gen = build_generator(config)
    _load_model_tensors(gen, stage1_ckpt, "gen")
    dtrans = build_disc_trans(config)
    if config.init_trans_from_spre:
        main = {k[len("dspre.main."):]: v for k, v in
                stage1_ckpt.tensors.items() if k.startswith("dspre.main.")}
        for name, arr in main.items():
            full = f"main.{name}"
            p = dtrans._params.get(full)
            if p is None or p.shape != arr.shape:
                raise ValueError(
                    f"cannot seed texture discriminator from stage 1: "
                    f"{full!r} missing or shaped differently")
            p.data = arr.astype(np.float32).copy()
    fe = build_feature_extractor(config)
    w_k = noise_feature_weights(config, fe)
    weights = config.weights()

    g_state, d_state = AdamState(), AdamState()
    rng = generator(config.seed, "stage2.batches")
    log = _LossLog(log_path)
    hr_size = (config.hr_crop(), config.hr_crop())

    for step in range(config.steps_stage2):
        lr_vis_t, hr_t, _ = _batch(samples, rng, config, use_vis=True)
        noise_seed = int(rng.integers(0, 2 ** 62))
        lb = LossBreakdown()

        # generator output on visible luma; graph reused for the G step
        sr_vis = gen(lr_vis_t)
        sr_det = sr_vis.detach()

        # noise pattern features (no gradients anywhere)
        noise_imgs = []
        for bi in range(lr_vis_t.shape[0]):
            lr_img = Image(lr_vis_t.data[bi].transpose(1, 2, 0)
                           .astype(np.float64))
            noise_imgs.append(_noise_image(lr_img, hr_size,
                                           config.noise_sigma,
                                           derive_seed(noise_seed, bi)))
        noise_t = _to_nchw(noise_imgs)
        noise_feats = [f.detach() for f in fe(noise_t)]

        # discriminator step: maximize real/fake separation and the
        # texture-prior distance
        dtrans.zero_grad()
        real_logit, _ = dtrans(hr_t)
        fake_logit, _ = dtrans(sr_det)
        spre_ll = T.scale(losses.l_adversarial_d(real_logit, fake_logit),
                          -1.0)
        trans = losses.l_trans(sr_det, hr_t, dtrans, config.trans_mode)
        d_loss = losses.combine_d(spre_ll, trans, weights)
        T.backward(d_loss)
        clip_grad_norm(dtrans.parameters(), config.grad_clip)
        adam_step(dtrans.parameters(), d_state, config.lr, config.beta1,
                  config.beta2, config.eps)
        lb.spre = spre_ll.item()
        lb.trans = trans.item()
        lb.total_d = d_loss.item()

        # generator step
        gen.zero_grad()
        dtrans.zero_grad()
        mae = losses.l_mae(sr_vis, hr_t)
        noise_l = losses.l_noise(fe(sr_vis), noise_feats, w_k)
        adv_g = None
        if config.adv_enabled:
            fake2, _ = dtrans(sr_vis)
            adv_g = losses.l_adversarial_g(fake2)
            lb.adv_g = adv_g.item()
        g_loss = losses.combine_g(mae, noise_l, adv_g, weights,
                                  config.adv_enabled)
        T.backward(g_loss)
        clip_grad_norm(gen.parameters(), config.grad_clip)
        adam_step(gen.parameters(), g_state, config.lr, config.beta1,
                  config.beta2, config.eps)
        lb.mae = mae.item()
        lb.noise = noise_l.item()
        lb.total_g = g_loss.item()

        # optional IR replay round: one plain MAE step on IR pairs
        if config.ir_replay:
            lr_ir_t, hr_ir_t, _ = _batch(samples, rng, config, use_vis=False)
            gen.zero_grad()
            replay = losses.l_mae(gen(lr_ir_t), hr_ir_t)
            T.backward(replay)
            clip_grad_norm(gen.parameters(), config.grad_clip)
            adam_step(gen.parameters(), g_state, config.lr, config.beta1,
                      config.beta2, config.eps)

        log.add(step, lb)

    log.flush()
    return _checkpoint("stage2", config, gen, dtrans, "dtrans")


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------

def super_resolve(gen: Generator, lr: Image, tile: int = 64,
                  overlap: int = 8) -> Image:
    """Run the generator over a full LR image, tiled with overlap; seams
    are blended by averaging the overlapping predictions."""
    lr = to_luma(lr)
    scale = gen.config.scale
    h, w = lr.height, lr.width
    th = min(tile, h)
    tw = min(tile, w)
    step_h = max(th - overlap, 1)
    step_w = max(tw - overlap, 1)
    ys = sorted(set(list(range(0, max(h - th, 0) + 1, step_h)) + [h - th]))
    xs = sorted(set(list(range(0, max(w - tw, 0) + 1, step_w)) + [w - tw]))
    acc = np.zeros((h * scale, w * scale), dtype=np.float64)
    cnt = np.zeros((h * scale, w * scale), dtype=np.float64)
    for y in ys:
        for x in xs:
            patch = lr.array[y:y + th, x:x + tw, 0]
            out = gen(Tensor(patch[None, None].astype(np.float32)))
            sy, sx = y * scale, x * scale
            acc[sy:sy + th * scale, sx:sx + tw * scale] += out.data[0, 0]
            cnt[sy:sy + th * scale, sx:sx + tw * scale] += 1.0
    sr = acc / cnt
    return Image(np.clip(sr, 0.0, 1.0)[:, :, None])


def evaluate_checkpoint(ckpt: Checkpoint, manifest: DatasetManifest,
                        out_dir: Optional[str] = None, name: str = "eval",
                        tile: int = 64, overlap: int = 8
                        ) -> tuple[BenchRow, BenchRow]:
    """Run the checkpointed generator over the manifest's IR images.

    Returns (model row, bicubic baseline row); SR images are written to
    out_dir when given.
    """
    config = TrainConfig.from_dict(ckpt.config)
    if manifest.scale != config.scale:
        raise ValueError(f"manifest scale {manifest.scale} != checkpoint "
                         f"scale {config.scale}")
    gen, _ = generator_from_checkpoint(ckpt)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    model_pairs, bicubic_pairs = [], []
    for i, entry in enumerate(manifest.entries):
        hr, _ = manifest.load_hr_pair(i)
        hr = to_luma(hr)
        lr = manifest.lr_for(hr, i, "ir-noise")
        sr = super_resolve(gen, lr, tile=tile, overlap=overlap)
        base = bicubic_resize(lr, hr.height, hr.width)
        model_pairs.append((hr, sr))
        bicubic_pairs.append((hr, base))
        if out_dir:
            stem = os.path.splitext(os.path.basename(entry.ir))[0]
            save_image(sr, os.path.join(out_dir, f"{stem}_sr.png"))
    model_row = evaluate_set(model_pairs, name, manifest.scale)
    bicubic_row = evaluate_set(bicubic_pairs, f"{name}-bicubic",
                               manifest.scale)
    return model_row, bicubic_row
