"""Two-stage training loop, checkpointing, and deployment-path inference.

Stage one ("warmup", the first ``warmup_batches`` batches) trains the
generator alone with a plain L1 loss on paired data; the discriminator is
untouched, bit for bit. Stage two alternates one discriminator update with
one generator update per batch, the generator minimising the full weighted
objective over the mixed paired/unpaired batch.

Everything is seeded and the data pipeline is a pure function of the batch
index, so two runs with the same config produce identical loss logs and a
resumed run continues exactly where the uninterrupted one would have been.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import imaging, losses, metrics, models
from .datasets import MixedBatchSampler, SampleBatch, SplitManifest
from .errors import ConfigError, ShapeError, TrainingDivergence

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    warmup_batches: int = 500
    max_batches: int = 20000
    batch_spec: tuple[int, int] = (8, 8)
    hr_size: int = 256
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 1
    eval_every: int = 0  # 0 disables evaluation and early stopping
    eval_n: int = 32
    early_stop_patience: int = 5
    lr_decay_every: int = 0  # 0 keeps the learning rate constant
    lr_decay_factor: float = 0.5
    degradation: imaging.DegradationSpec = field(default_factory=imaging.DegradationSpec)
    generator: models.GeneratorConfig = field(default_factory=models.GeneratorConfig)
    discriminator: models.DiscriminatorConfig = field(default_factory=models.DiscriminatorConfig)
    features: models.FeatureExtractorSpec = field(default_factory=models.FeatureExtractorSpec)
    prefetch_workers: int = 1
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be > 0")
        if self.warmup_batches > self.max_batches:
            raise ConfigError("warmup_batches must be <= max_batches")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.discriminator.input_size != self.hr_size:
            raise ConfigError(
                f"discriminator input_size {self.discriminator.input_size} must equal hr_size {self.hr_size}"
            )
        if self.generator.scale != self.degradation.scale:
            raise ConfigError("generator scale and degradation scale differ")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["batch_spec"] = list(self.batch_spec)
        d["features"] = models.config_dict(self.features)
        return d


@dataclass
class TrainState:
    generator: models.Generator
    discriminator: models.Discriminator
    extractor: models.FeatureExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    batch_idx: int = 0
    warmup_batches: int = 500

    @property
    def stage(self) -> str:
        return "warmup" if self.batch_idx < self.warmup_batches else "adversarial"


def init_state(cfg: TrainConfig) -> TrainState:
    """Seeded model/optimizer construction; same config + seed, same weights."""
    torch.manual_seed(cfg.seed)
    dtype = _DTYPES[cfg.dtype]
    gen = models.Generator(cfg.generator).to(dtype)
    disc = models.Discriminator(cfg.discriminator).to(dtype)
    ext = models.FeatureExtractor(cfg.features).to(dtype)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    return TrainState(
        generator=gen,
        discriminator=disc,
        extractor=ext,
        opt_g=torch.optim.Adam(gen.parameters(), lr=cfg.lr_init, betas=betas),
        opt_d=torch.optim.Adam(disc.parameters(), lr=cfg.lr_init, betas=betas),
        warmup_batches=cfg.warmup_batches,
    )


def _to3(x: torch.Tensor) -> torch.Tensor:
    return models.replicate_channels(x)


def _check_finite(report: losses.LossReport, step: int, dump_dir: Path | None, state: TrainState, batch: SampleBatch):
    bad = [n for n in report.FIELDS if getattr(report, n) is not None and not np.isfinite(getattr(report, n))]
    if not bad:
        return
    dump_path = None
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        dump_path = dump_dir / f"divergence_step{step}.pt"
        torch.save(
            {
                "step": step,
                "report": report.to_record(step, state.stage),
                "gen_state": state.generator.state_dict(),
                "disc_state": state.discriminator.state_dict(),
                "paired_lr": batch.paired_lr,
                "paired_hr": batch.paired_hr,
                "unpaired_lr": batch.unpaired_lr,
            },
            dump_path,
        )
    raise TrainingDivergence(
        f"non-finite loss terms {bad} at step {step}"
        + (f"; diagnostics dumped to {dump_path}" if dump_path else "")
    )


def train_step(
    state: TrainState, batch: SampleBatch, cfg: TrainConfig, dump_dir: Path | None = None
) -> losses.LossReport:
    """One optimization step. Warmup: G on L1 only. Adversarial: D then G."""
    report = losses.LossReport()
    step = state.batch_idx

    if state.stage == "warmup":
        if batch.n_sup == 0:
            raise ConfigError("warmup requires paired samples in every batch")
        sr = state.generator(batch.paired_lr)
        loss = losses.l1_pixel(sr, batch.paired_hr)
        state.opt_g.zero_grad()
        loss.backward()
        state.opt_g.step()
        report.l1_sup = loss.item()
        report.total_g = loss.item()
        _check_finite(report, step, dump_dir, state, batch)
        state.batch_idx += 1
        return report

    # adversarial stage
    if batch.n_sup == 0:
        raise ConfigError("every training batch needs paired samples (unsupervised-only mode is out of scope)")
    sr = state.generator(batch.paired_lr)
    sr_u = state.generator(batch.unpaired_lr) if batch.n_unsup > 0 else None

    # one discriminator update on real HR vs the union of generated outputs
    fakes = sr.detach() if sr_u is None else torch.cat([sr.detach(), sr_u.detach()])
    d_real = state.discriminator(_to3(batch.paired_hr))
    d_fake = state.discriminator(_to3(fakes))
    d_loss = losses.adv_discriminator(d_real, d_fake)
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()

    # one generator update against the freshly updated discriminator
    comp = losses.LossReport()
    comp.l1_sup = losses.l1_pixel(sr, batch.paired_hr)
    comp.percep_sup = losses.perceptual(_to3(sr), _to3(batch.paired_hr), state.extractor)
    comp.adv_g_sup = losses.adv_generator(state.discriminator(_to3(sr)))
    if sr_u is not None:
        cons_l1, cons_percep = losses.consistency(batch.unpaired_lr, sr_u, cfg.degradation, state.extractor)
        comp.cons_l1 = cons_l1
        comp.cons_percep = cons_percep
        comp.adv_g_unsup = losses.adv_generator(state.discriminator(_to3(sr_u)))
    total = losses.total_generator(comp, cfg.weights)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()

    for name in losses.LossReport.FIELDS:
        v = getattr(comp, name)
        if v is not None:
            setattr(report, name, float(v.item()))
    report.total_g = float(total.item())
    report.d_loss = float(d_loss.item())
    _check_finite(report, step, dump_dir, state, batch)
    state.batch_idx += 1
    return report


def evaluate(
    state: TrainState,
    sampler: MixedBatchSampler,
    n: int = 32,
    with_fid: bool = False,
    fid_network: torch.nn.Module | None = None,
) -> dict:
    """Validation L1 (and optionally desk-scale FID) over the test split."""
    batch = sampler.test_batch(n)
    if batch.n_sup == 0:
        raise ConfigError("manifest has no test items to evaluate on")
    state.generator.eval()
    with torch.no_grad():
        sr = state.generator(batch.paired_lr).clamp(0.0, 1.0)
        out = {"val_l1": float(losses.l1_pixel(sr, batch.paired_hr).item()), "n": batch.n_sup}
        if with_fid:
            net = fid_network or metrics.TinyFeatureNetwork()
            size = net.input_size
            real = torch.nn.functional.interpolate(_to3(batch.paired_hr).float(), size=(size, size), mode="bilinear", antialias=True)
            fake = torch.nn.functional.interpolate(_to3(sr).float(), size=(size, size), mode="bilinear", antialias=True)
            st_r = metrics.stats_with_shrinkage(net(real).numpy().astype(np.float64))
            st_f = metrics.stats_with_shrinkage(net(fake).numpy().astype(np.float64))
            out["val_fid"] = metrics.frechet_distance(st_r, st_f)
    state.generator.train()
    return out


def _checkpoint_payload(state: TrainState, cfg: TrainConfig) -> dict:
    return {
        "configs": {
            "generator": models.config_dict(cfg.generator),
            "discriminator": models.config_dict(cfg.discriminator),
            "features": models.config_dict(cfg.features),
            "trainer": cfg.to_dict(),
        },
        "gen_state": state.generator.state_dict(),
        "disc_state": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "batch_idx": state.batch_idx,
        "stage": state.stage,
        "torch_rng": torch.get_rng_state(),
    }


def save_train_checkpoint(path: str | Path, state: TrainState, cfg: TrainConfig) -> None:
    models.save_checkpoint(path, _checkpoint_payload(state, cfg))


def _write_checkpoint_or_dump(path: Path, state: TrainState, cfg: TrainConfig) -> None:
    """Checkpoint write that falls back to tmp space when the disk is full."""
    try:
        save_train_checkpoint(path, state, cfg)
    except OSError as exc:
        import tempfile

        fallback = Path(tempfile.gettempdir()) / path.name
        save_train_checkpoint(fallback, state, cfg)
        raise RuntimeError(
            f"cannot write checkpoint {path} ({exc}); state preserved at {fallback}"
        ) from exc


def load_train_checkpoint(path: str | Path, cfg: TrainConfig, override: bool = False) -> TrainState:
    expected = {
        "generator": models.config_dict(cfg.generator),
        "discriminator": models.config_dict(cfg.discriminator),
        "features": models.config_dict(cfg.features),
    }
    data = models.load_checkpoint(path, expected_configs=expected, override=override)
    state = init_state(cfg)
    state.generator.load_state_dict(data["gen_state"])
    state.discriminator.load_state_dict(data["disc_state"])
    state.opt_g.load_state_dict(data["opt_g"])
    state.opt_d.load_state_dict(data["opt_d"])
    state.batch_idx = data["batch_idx"]
    torch.set_rng_state(data["torch_rng"])
    return state


def fit(
    cfg: TrainConfig,
    manifest: SplitManifest,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    log_hook=None,
) -> TrainState:
    """Run training to ``max_batches`` (or early stop), checkpointing on cadence.

    Writes ``loss_log.jsonl`` (one record per logged step), periodic
    checkpoints, and a final ``ckpt_last.pt`` under ``out_dir``.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        state = load_train_checkpoint(resume, cfg)
    else:
        state = init_state(cfg)

    sampler = MixedBatchSampler(
        manifest,
        batch_spec=cfg.batch_spec,
        seed=cfg.seed,
        hr_size=cfg.hr_size,
        degradation=cfg.degradation,
        dtype=_DTYPES[cfg.dtype],
        prefetch_workers=cfg.prefetch_workers,
    )

    log_fh = None
    if out is not None:
        log_fh = open(out / "loss_log.jsonl", "a" if resume else "w")
    eval_log = []
    best_metric = None
    evals_since_best = 0
    fid_net = None

    try:
        while state.batch_idx < cfg.max_batches:
            k = state.batch_idx
            batch = sampler.batch(k)
            report = train_step(state, batch, cfg, dump_dir=out)
            if k % cfg.log_every == 0:
                rec = report.to_record(k, "warmup" if k < cfg.warmup_batches else "adversarial")
                if log_fh is not None:
                    log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    log_fh.flush()
                if log_hook is not None:
                    log_hook(rec)
            if cfg.lr_decay_every > 0 and state.batch_idx % cfg.lr_decay_every == 0:
                for opt in (state.opt_g, state.opt_d):
                    for group in opt.param_groups:
                        group["lr"] *= cfg.lr_decay_factor
            if out is not None and cfg.checkpoint_every > 0 and state.batch_idx % cfg.checkpoint_every == 0:
                _write_checkpoint_or_dump(out / f"ckpt_{state.batch_idx:06d}.pt", state, cfg)
            if cfg.eval_every > 0 and manifest.test and state.batch_idx % cfg.eval_every == 0:
                if fid_net is None:
                    fid_net = metrics.TinyFeatureNetwork()
                ev = evaluate(state, sampler, n=cfg.eval_n, with_fid=True, fid_network=fid_net)
                ev["step"] = state.batch_idx
                eval_log.append(ev)
                if out is not None:
                    with open(out / "eval_log.jsonl", "a") as fh:
                        fh.write(json.dumps(ev, sort_keys=True) + "\n")
                metric = ev["val_fid"]
                if best_metric is None or metric < best_metric:
                    best_metric = metric
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                if evals_since_best >= cfg.early_stop_patience:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    if out is not None:
        save_train_checkpoint(out / "ckpt_last.pt", state, cfg)
    return state


def infer(
    generator: models.Generator,
    lr: imaging.ImageTensor,
    tile: int = 0,
    tile_overlap: int = 4,
) -> imaging.ImageTensor:
    """Super-resolve one image; tiles with overlap-blending when ``tile`` > 0.

    Tiling bounds memory on large inputs: LR tiles of side ``tile`` overlap by
    ``tile_overlap`` pixels and are feather-blended, so seams stay within
    interpolation noise of the untiled result away from the image border.
    """
    cfg = generator.cfg
    if lr.channels != cfg.img_channels:
        raise ShapeError(
            f"generator expects {cfg.img_channels}-channel input, got {lr.channels}"
        )
    dtype = next(generator.parameters()).dtype
    x = imaging.to_batch([lr], dtype=dtype)
    s = cfg.scale
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            h, w = x.shape[-2:]
            if tile <= 0 or (h <= tile and w <= tile):
                try:
                    y = generator(x)
                except (MemoryError, RuntimeError) as exc:
                    if "memory" not in str(exc).lower():
                        raise
                    raise ConfigError(
                        f"input {h}x{w} exhausted memory; rerun with tiling, e.g. tile=64"
                    ) from exc
            else:
                if tile_overlap >= tile:
                    raise ConfigError("tile_overlap must be smaller than tile")
                y = torch.zeros((1, x.shape[1], h * s, w * s), dtype=dtype)
                weight = torch.zeros_like(y)
                stride = tile - tile_overlap
                starts_r = sorted({min(r, max(h - tile, 0)) for r in range(0, h, stride)})
                starts_c = sorted({min(c, max(w - tile, 0)) for c in range(0, w, stride)})
                ramp = _feather(tile * s, tile_overlap * s, dtype)
                mask = ramp[:, None] * ramp[None, :]
                for r0 in starts_r:
                    for c0 in starts_c:
                        patch = x[..., r0 : r0 + tile, c0 : c0 + tile]
                        out = generator(patch) * mask
                        y[..., r0 * s : (r0 + tile) * s, c0 * s : (c0 + tile) * s] += out
                        weight[..., r0 * s : (r0 + tile) * s, c0 * s : (c0 + tile) * s] += mask
                y = y / weight
            y = y.clamp(0.0, 1.0)
    finally:
        generator.train(was_training)
    return imaging.from_batch(y)[0]


def _feather(size: int, overlap: int, dtype: torch.dtype) -> torch.Tensor:
    w = torch.ones(size, dtype=dtype)
    if overlap > 0:
        ramp = torch.linspace(1.0 / (overlap + 1), 1.0, overlap, dtype=dtype)
        w[:overlap] = ramp
        w[-overlap:] = ramp.flip(0)
    return w
