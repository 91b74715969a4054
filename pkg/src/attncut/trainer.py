"""Objective assembly, alternating D/G updates, checkpoints and the loss log."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .attention import AttentionConfig, PatchSampler
from .contrastive import ProjectionHead, build_heads, identity_patch_nce, patch_nce_loss
from .discriminator import Discriminator, DiscriminatorConfig, build_discriminator
from .generator import Generator, GeneratorConfig, build_generator

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "attncut-checkpoint"
CHECKPOINT_VERSION = 1
CSV_COLUMNS = ("step", "d_loss", "g_gan", "nce_x", "nce_y", "total_g")

PRESETS = {
    "lambda_1_1": {"lambda_x": 1.0, "lambda_y": 1.0},
    "lambda_10_0": {"lambda_x": 10.0, "lambda_y": 0.0},
}


@dataclass(frozen=True)
class TrainConfig:
    lambda_x: float = 1.0
    lambda_y: float = 1.0
    lr: float = 0.002
    betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 1
    epochs: int = 400
    max_steps: int | None = None
    seed: int = 0
    attention: str = "self_attention"
    tau: float = 0.07
    k: int = 256
    image_size: int = 256
    base_channels: int = 64
    n_residual_blocks: int = 9
    disc_layers: int = 3
    disc_channels: int = 64
    mlp_dim: int = 256
    checkpoint_every: int = 100
    lr_decay: bool = False
    random_crop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "attention", AttentionConfig(kind=self.attention).kind)
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("lr and tau must be positive")
        if self.k < 2:
            raise ValueError("k must be >= 2 (each query needs negatives)")
        if self.batch_size < 1 or self.epochs < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size, epochs and checkpoint_every must be positive")

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise KeyError(f"unknown config key(s) {unknown}; valid keys: {', '.join(cls.keys())}")
        return cls(**values)

    def with_preset(self, name: str) -> "TrainConfig":
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return dataclasses.replace(self, **PRESETS[name])

    @property
    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(n_residual_blocks=self.n_residual_blocks, base_channels=self.base_channels)

    @property
    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(n_layers=self.disc_layers, base_channels=self.disc_channels)


@dataclass
class LossReport:
    step: int
    d_loss: float
    g_gan_loss: float
    nce_x: float
    nce_y: float
    total_g: float

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(v) for v in (self.d_loss, self.g_gan_loss, self.nce_x, self.nce_y, self.total_g)]


def lsgan_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((real_scores - 1) ** 2).mean() + 0.5 * (fake_scores**2).mean()


def lsgan_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return ((fake_scores - 1) ** 2).mean()


def total_generator_objective(g_gan, nce_x, nce_y, lambda_x: float, lambda_y: float):
    return g_gan + lambda_x * nce_x + lambda_y * nce_y


@dataclass
class TrainState:
    cfg: TrainConfig
    gen: Generator
    disc: Discriminator
    heads: ProjectionHead
    sampler: PatchSampler
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0

    def generator_side(self) -> list[nn.Module]:
        return [self.gen, self.heads, self.sampler]


def create_state(cfg: TrainConfig) -> TrainState:
    gcfg = cfg.generator_config
    channels = [gcfg.tap_channels(t) for t in gcfg.tap_layers]
    gen = build_generator(gcfg, seed=cfg.seed)
    disc = build_discriminator(cfg.discriminator_config, seed=cfg.seed + 1)
    heads = build_heads(channels, cfg.mlp_dim, seed=cfg.seed + 2)
    sampler = PatchSampler(channels, AttentionConfig(kind=cfg.attention), k=cfg.k, seed=cfg.seed + 3)
    g_params = [p for m in (gen, heads, sampler) for p in m.parameters()]
    opt_g = torch.optim.Adam(g_params, lr=cfg.lr, betas=cfg.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=cfg.betas)
    return TrainState(cfg, gen, disc, heads, sampler, opt_g, opt_d)


def step_seed(base: int, step: int, branch: int) -> int:
    """Sampling seed for one (step, source/identity branch) pair."""
    return base * 1_000_003 + 2 * step + branch


def _finite(name: str, value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"non-finite {name} ({float(value.detach())}) at step {step}")


def train_step(state: TrainState, x: torch.Tensor, y: torch.Tensor) -> LossReport:
    """One discriminator update, then one update of G, heads and attention."""
    cfg, gen, disc = state.cfg, state.gen, state.disc
    step = state.step + 1
    gen.train()
    disc.train()
    fake = gen(x)

    disc.requires_grad_(True)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss = lsgan_d_loss(disc(y), disc(fake.detach()))
    _finite("d_loss", d_loss, step)
    d_loss.backward()
    state.opt_d.step()

    disc.requires_grad_(False)
    state.opt_g.zero_grad(set_to_none=True)
    g_gan = lsgan_g_loss(disc(fake))
    zero = torch.zeros((), dtype=torch.float64)
    nce_x = nce_y = zero
    if cfg.lambda_x > 0:
        nce_x = patch_nce_loss(gen, state.heads, state.sampler, x, fake, cfg.k, cfg.tau, step_seed(cfg.seed, step, 0))
    if cfg.lambda_y > 0:
        nce_y = identity_patch_nce(gen, state.heads, state.sampler, y, cfg.k, cfg.tau, step_seed(cfg.seed, step, 1))
    for name, v in (("g_gan", g_gan), ("nce_x", nce_x), ("nce_y", nce_y)):
        _finite(name, v, step)
    # float64 sum so the logged total recomposes exactly from the logged parts
    total = total_generator_objective(g_gan.double(), nce_x.double(), nce_y.double(), cfg.lambda_x, cfg.lambda_y)
    _finite("total_g", total, step)
    total.backward()
    state.opt_g.step()
    disc.requires_grad_(True)

    state.step = step
    return LossReport(step, d_loss.item(), g_gan.item(), nce_x.item(), nce_y.item(), total.item())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.cfg),
        "step": state.step,
        "generator": state.gen.state_dict(),
        "discriminator": state.disc.state_dict(),
        "heads": state.heads.state_dict(),
        "attention": state.sampler.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed to write checkpoint {path}: {exc}") from exc
    return path


def _read_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an attncut checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {payload.get('version')}, "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    return payload


def load_checkpoint(path) -> TrainState:
    payload = _read_checkpoint(path)
    state = create_state(TrainConfig(**payload["config"]))
    state.gen.load_state_dict(payload["generator"])
    state.disc.load_state_dict(payload["discriminator"])
    state.heads.load_state_dict(payload["heads"])
    state.sampler.load_state_dict(payload["attention"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.step = payload["step"]
    return state


def load_generator(path) -> Generator:
    """Generator weights only, for inference."""
    payload = _read_checkpoint(path)
    cfg = TrainConfig(**payload["config"])
    gen = build_generator(cfg.generator_config, seed=cfg.seed)
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen


# ---------------------------------------------------------------------------
# loop


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def _truncate_csv(path: Path, step: int) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= step]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(kept)


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.lr_decay:
        return cfg.lr
    # constant for the first half, then linear towards zero
    start = cfg.epochs // 2
    return cfg.lr * (1.0 - max(0, epoch - start) / (cfg.epochs - start + 1))


def checkpoint_path(run_dir, step: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"step_{step:06d}.pt"


def total_steps(cfg: TrainConfig, dataset) -> int:
    n = cfg.epochs * dataset.steps_per_epoch(cfg.batch_size)
    return n if cfg.max_steps is None else min(n, cfg.max_steps)


def train(cfg: TrainConfig, dataset, run_dir, resume=None, stop_at: int | None = None, on_checkpoint=None) -> list[Path]:
    """Train from scratch (or from ``resume``) and return the checkpoints written.

    Losses are appended to ``run_dir/losses.csv``; checkpoints go to
    ``run_dir/checkpoints/step_NNNNNN.pt`` every ``checkpoint_every`` steps, at
    step 0 and at the last step. ``stop_at`` ends the run early (after
    checkpointing), which simulates an interruption.
    """
    run_dir = Path(run_dir)
    csv_path = run_dir / "losses.csv"
    written = []
    if resume is not None:
        state = load_checkpoint(resume)
        cfg = state.cfg
        if csv_path.exists():
            _truncate_csv(csv_path, state.step)
        else:
            run_dir.mkdir(parents=True, exist_ok=True)
            with open(csv_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(CSV_COLUMNS)
    else:
        state = create_state(cfg)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(CSV_COLUMNS)
        written.append(save_checkpoint(state, checkpoint_path(run_dir, 0)))
        if on_checkpoint:
            on_checkpoint(state, written[-1])

    last = total_steps(cfg, dataset)
    if stop_at is not None:
        last = min(last, stop_at)
    spe = dataset.steps_per_epoch(cfg.batch_size)
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        while state.step < last:
            epoch, start = divmod(state.step, spe)
            for group in state.opt_g.param_groups + state.opt_d.param_groups:
                group["lr"] = _epoch_lr(cfg, epoch)
            for x, y in dataset.batches(epoch, cfg.batch_size, start):
                report = train_step(state, x, y)
                writer.writerow(report.row())
                fh.flush()
                if report.step % 10 == 0:
                    log.info("step %d d=%.4f g=%.4f nce_x=%.4f nce_y=%.4f", report.step, report.d_loss,
                             report.g_gan_loss, report.nce_x, report.nce_y)
                if state.step % cfg.checkpoint_every == 0 or state.step == last:
                    written.append(save_checkpoint(state, checkpoint_path(run_dir, state.step)))
                    if on_checkpoint:
                        on_checkpoint(state, written[-1])
                if state.step >= last:
                    break
    return written


def check_recomposition(report: LossReport | dict, lambda_x: float, lambda_y: float, tol: float = 1e-6) -> bool:
    if isinstance(report, dict):
        g, nx, ny, t = report["g_gan"], report["nce_x"], report["nce_y"], report["total_g"]
    else:
        g, nx, ny, t = report.g_gan_loss, report.nce_x, report.nce_y, report.total_g
    return math.isclose(t, g + lambda_x * nx + lambda_y * ny, rel_tol=0, abs_tol=tol)
