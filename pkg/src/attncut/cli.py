"""Command-line entry point: ``attncut {train,translate,evaluate,plot}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import data_io, metrics, trainer
from .attention import ALIASES, KINDS

log = logging.getLogger("attncut")

TOY_DEFAULTS = {"image_size": 64, "epochs": 1, "checkpoint_every": 100}
TOY_TRAIN_IMAGES = 200
TOY_TEST_IMAGES = 64


class CommandError(Exception):
    """A user-facing failure; reported on stderr with exit code 1."""


def code_hash() -> str:
    """sha1 over the package sources, hashed as git blobs in path order."""
    root = Path(__file__).parent
    h = hashlib.sha1()
    for path in sorted(root.rglob("*.py")):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        h.update(f"{path.relative_to(root)} {blob}\n".encode())
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args) -> trainer.TrainConfig:
    values: dict = {}
    if args.toy:
        values.update(TOY_DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CommandError(f"config file not found: {path}")
        loaded = json.loads(path.read_text())
        if not isinstance(loaded, dict):
            raise CommandError(f"{path} must hold a flat JSON object")
        values.update(loaded)
    if args.preset:
        if args.preset not in trainer.PRESETS:
            raise CommandError(f"unknown preset {args.preset!r}; choose from {sorted(trainer.PRESETS)}")
        values.update(trainer.PRESETS[args.preset])
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CommandError(f"--set expects key=value, got {item!r}")
        values[key] = _parse_value(raw)
    flags = {
        "attention": args.attention,
        "tau": args.tau,
        "k": args.k,
        "image_size": args.image_size,
        "epochs": args.epochs,
        "seed": args.seed,
        "lr": args.lr,
        "max_steps": args.max_steps,
        "checkpoint_every": args.checkpoint_every,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        return trainer.TrainConfig.from_dict(values)
    except KeyError as exc:
        raise CommandError(exc.args[0]) from exc
    except (TypeError, ValueError) as exc:
        raise CommandError(f"invalid configuration: {exc}") from exc


def _load_folder(folder: Path, size: int | None = None) -> tuple[list[Path], torch.Tensor]:
    paths = data_io.list_images(folder)
    if not paths:
        raise CommandError(f"no PNG/JPEG images in {folder}")
    arrays = [data_io.load_image(p, size) for p in paths]
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise CommandError(f"images in {folder} differ in size {sorted(shapes)}; pass --image-size")
    return paths, torch.stack([data_io.to_tensor(a) for a in arrays])


def _translate_batch(gen, images: torch.Tensor, batch: int = 16) -> torch.Tensor:
    gen.eval()
    with torch.no_grad():
        return torch.cat([gen(images[i : i + batch]) for i in range(0, len(images), batch)])


def _checkpoint_evaluator(run_dir: Path, test_x: Path, test_y: Path, embedder: str, seed: int, size: int):
    _, real_x = _load_folder(test_x, size)
    _, real_y = _load_folder(test_y, size)
    path = run_dir / "metrics.csv"
    if not path.exists():
        path.write_text("step,fid,is_mean,is_std,swd\n")

    def evaluate(state, _ckpt):
        fake = _translate_batch(state.gen, real_x)
        rep = metrics.evaluate(real_y, fake, embedder, seed)
        with open(path, "a") as fh:
            fh.write(f"{state.step},{rep.fid!r},{rep.is_mean!r},{rep.is_std!r},{rep.swd!r}\n")
        log.info("step %d fid=%.3f swd=%.3f", state.step, rep.fid, rep.swd)

    return evaluate


def cmd_train(args) -> Path:
    cfg = build_config(args)
    run_dir = Path(args.run_dir or f"runs/{datetime.now():%Y%m%d-%H%M%S}-{cfg.attention}")
    if args.resume:
        if not Path(args.resume).is_file():
            raise CommandError(f"checkpoint not found: {args.resume}")
        cfg = trainer.load_checkpoint(args.resume).cfg
    if args.toy:
        data_root = run_dir / "data"
        if not (data_root / "trainX").is_dir():
            data_io.write_toy_dataset(data_root, args.toy_size, TOY_TEST_IMAGES, cfg.image_size, cfg.seed)
    else:
        if not args.data_root:
            raise CommandError("--data-root is required unless --toy is given")
        data_root = Path(args.data_root)
        for d in (data_root, *data_io.split_dirs(data_root)):
            if not d.is_dir():
                raise CommandError(f"dataset directory not found: {d}")
    train_x, train_y = data_io.split_dirs(data_root, "train")
    dataset = data_io.load_unpaired_dataset(train_x, train_y, cfg.image_size, cfg.seed, cfg.random_crop)

    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "code_hash": code_hash(),
        "seed": cfg.seed,
        "started": _now(),
        "finished": None,
        "layout": {
            "checkpoints": "checkpoints/step_NNNNNN.pt",
            "losses": "losses.csv",
            "metrics": "metrics.csv",
            "plots": "plots/",
            "data": str(data_root),
        },
    }
    manifest_path = run_dir / "manifest.json"
    if not args.resume:
        manifest_path.write_text(json.dumps(manifest, indent=2))

    hook = None
    test_x, test_y = data_io.split_dirs(data_root, "test")
    if not args.no_eval and test_x.is_dir() and test_y.is_dir():
        hook = _checkpoint_evaluator(run_dir, test_x, test_y, args.embedder, cfg.seed, cfg.image_size)

    trainer.train(cfg, dataset, run_dir, resume=args.resume, stop_at=args.stop_at, on_checkpoint=hook)

    manifest = json.loads(manifest_path.read_text())
    manifest["finished"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2))
    print(run_dir)
    return run_dir


def cmd_translate(args) -> list[Path]:
    try:
        gen = trainer.load_generator(args.checkpoint)
    except FileNotFoundError as exc:
        raise CommandError(f"checkpoint not found: {args.checkpoint}") from exc
    except ValueError as exc:
        raise CommandError(f"incompatible checkpoint: {exc}") from exc
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = data_io.list_images(args.input_dir)
    if not paths:
        raise CommandError(f"no PNG/JPEG images in {args.input_dir}")
    m = gen.size_multiple
    written = []
    for p in paths:
        x = data_io.to_tensor(data_io.load_image(p))[None]
        h, w = x.shape[-2:]
        # reflect-pad up to a multiple of the downsampling factor, crop back after
        ph, pw = -h % m, -w % m
        x = F.pad(x, (0, pw, 0, ph), mode="reflect") if ph or pw else x
        with torch.no_grad():
            y = gen(x)[0, :, :h, :w]
        target = out_dir / f"{p.stem}.png"
        Image.fromarray(data_io.to_uint8(y)).save(target)
        written.append(target)
    print(f"translated {len(written)} images into {out_dir}")
    return written


def cmd_evaluate(args) -> metrics.MetricReport:
    for d in (args.real_dir, args.fake_dir):
        if not Path(d).is_dir():
            raise CommandError(f"image directory not found: {d}")
    _, real = _load_folder(Path(args.real_dir), args.image_size)
    _, fake = _load_folder(Path(args.fake_dir), args.image_size)
    if len(real) < 2 or len(fake) < 2:
        raise CommandError("need at least 2 images in each directory (covariance undefined otherwise)")
    try:
        report = metrics.evaluate(real, fake, args.embedder, args.seed, args.n_projections, args.splits)
    except FileNotFoundError as exc:
        raise CommandError(str(exc)) from exc
    line = report.to_json()
    print(line)
    Path(args.output).write_text(line + "\n")
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["fid", "is_mean", "is_std", "swd", "n_real", "n_fake", "embedder", "seed"])
            w.writerow([report.fid, report.is_mean, report.is_std, report.swd, report.counts["real"],
                        report.counts["fake"], report.embedder, report.seed])
    return report


def _plot_columns(table: dict[str, np.ndarray], x_key: str, out_dir: Path, prefix: str = "") -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for name, values in table.items():
        if name == x_key:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(table[x_key], values, lw=1)
        ax.set_xlabel(x_key)
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        target = out_dir / f"{prefix}{name}.png"
        fig.savefig(target, dpi=100)
        plt.close(fig)
        written.append(target)
    return written


def _read_table(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CommandError(f"{path} has no data rows")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def cmd_plot(args) -> list[Path]:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise CommandError(f"run directory not found: {run_dir}")
    losses = run_dir / "losses.csv"
    if not losses.is_file():
        raise CommandError(f"loss log not found: {losses}")
    out_dir = run_dir / "plots"
    out_dir.mkdir(exist_ok=True)
    written = _plot_columns(_read_table(losses), "step", out_dir)
    metric_csv = run_dir / "metrics.csv"
    if metric_csv.is_file() and metric_csv.stat().st_size:
        try:
            written += _plot_columns(_read_table(metric_csv), "step", out_dir, prefix="metric_")
        except CommandError:
            pass
    print(f"wrote {len(written)} plots to {out_dir}")
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attncut", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model (writes a run directory)")
    p.add_argument("--config", help="flat JSON object of TrainConfig keys")
    p.add_argument("--attention", choices=list(KINDS) + list(ALIASES))
    p.add_argument("--preset", choices=sorted(trainer.PRESETS))
    p.add_argument("--tau", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--toy", action="store_true", help="generate and train on the synthetic two-domain set")
    p.add_argument("--toy-size", type=int, default=TOY_TRAIN_IMAGES)
    p.add_argument("--data-root", help="folder holding trainX/ and trainY/ (and optionally testX/, testY/)")
    p.add_argument("--run-dir")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop after this global step (simulated interruption)")
    p.add_argument("--embedder", default="toy", choices=["toy", "inception"])
    p.add_argument("--no-eval", action="store_true", help="skip metric evaluation at checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a folder of images with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="FID / IS / SWD between a real and a fake folder")
    p.add_argument("real_dir")
    p.add_argument("fake_dir")
    p.add_argument("--embedder", default="toy", choices=["toy", "inception"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int)
    p.add_argument("--n-projections", type=int, default=128)
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--output", default="metric_report.json")
    p.add_argument("--csv", help="append the report as a CSV row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render loss and metric curves of a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    start = time.time()
    try:
        args.func(args)
    except (CommandError, data_io.EmptyDomainError, data_io.ImageDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    log.info("done in %.1fs", time.time() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
