"""Command-line entry point: synth-data, train, generate, optimize, evaluate.

Every command writes a ``config.json`` snapshot of its resolved settings.
Passing that file back with ``--config`` reproduces the run; explicit flags
override values from the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import NUM_CLASSES, SyntheticDataset, make_dataset
from .diffusion import Denoiser, DenoiserConfig, ZeroDenoiser, eps_mse, make_schedule, train_denoiser
from .embedder import EncoderConfig, JointEncoder, train_encoder
from .errors import ContractError, FormatError, NoSalientRegion, NumericError
from .evalmetrics import RunRecord, alignment_score, compare_methods, parts_alignment_score
from .guidance import GuidanceConfig, optimize_latent
from .ndtensor import io as tio
from .pnm import write_pgm, write_ppm
from .rng import stream
from .sampler import generate, invert, roundtrip_error
from .saliency import detect_spectral_residual, load_external_map, threshold_mask

log = logging.getLogger("sgool")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config

DEFAULTS = {
    "synth-data": {"out": None, "count": 4096, "seed": 0, "size": 16, "channels": 1, "shard_size": 1024},
    "train": {"model": None, "data": None, "out": None, "steps": None, "batch": 128, "lr": None,
              "hidden": None, "layers": 3, "T": 50, "dim": 32, "seed": 0, "heldout": 512},
    "generate": {"denoiser": None, "out": None, "condition": 0, "seed": 0, "p": 0.93, "T": None,
                 "invert": False, "zero_denoiser": False, "shape": "1,16,16"},
    "optimize": {"denoiser": None, "encoder": None, "out": None, "method": "sgool", "seeds": "0",
                 "condition": None, "alpha": 0.5, "lam": 1.0, "opt_steps": 50, "step_size": 0.5,
                 "momentum": 0.9, "renorm": True, "normalize_grad": True, "p": 0.93, "T": None,
                 "distance_form": "root", "mask_k": 1.0, "pad": 1, "external_map": None, "jobs": 1},
    "evaluate": {"runs": None, "out": None},
}


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        loaded = json.loads(path.read_text())
        unknown = set(loaded) - set(cfg) - {"command", "version"}
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k in cfg})
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k in ("out",) if cfg.get(k) is None]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join('--' + m for m in missing)}")
    return cfg


def write_snapshot(out: Path, command: str, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snap = {"command": command, "version": __version__, **cfg}
    (out / "config.json").write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n")


def _require_dir(path, what: str) -> Path:
    p = Path(path) if path is not None else None
    if p is None or not p.exists():
        raise FileNotFoundError(f"{what} {path} does not exist")
    return p


def parse_seeds(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    seeds: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise UsageError(f"no seeds in {text!r}")
    return seeds


# ------------------------------------------------------------- dataset io

def save_dataset(out: Path, data: SyntheticDataset, shard_size: int, cfg: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    shards = []
    for i, start in enumerate(range(0, len(data), shard_size)):
        stop = min(start + shard_size, len(data))
        img_name, lab_name = f"images_{i:03d}.sgt", f"labels_{i:03d}.sgt"
        tio.save(out / img_name, data.images[start:stop])
        tio.save(out / lab_name, data.labels[start:stop].astype(np.float64))
        shards.append({"images": img_name, "labels": lab_name, "count": stop - start})
    counts = np.bincount(data.labels, minlength=NUM_CLASSES) if len(data) else np.zeros(NUM_CLASSES, int)
    manifest = {
        "kind": "dataset", "count": len(data), "seed": cfg["seed"], "size": cfg["size"],
        "channels": cfg["channels"], "num_classes": NUM_CLASSES,
        "class_counts": [int(c) for c in counts], "shards": shards,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory) -> tuple[SyntheticDataset, dict]:
    directory = _require_dir(directory, "dataset directory")
    mpath = directory / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no dataset manifest in {directory}")
    manifest = json.loads(mpath.read_text())
    shape = (manifest["channels"], manifest["size"], manifest["size"])
    images = [tio.load(directory / s["images"]) for s in manifest["shards"]]
    labels = [tio.load(directory / s["labels"]) for s in manifest["shards"]]
    imgs = np.concatenate(images) if images else np.empty((0, *shape))
    labs = np.concatenate(labels).astype(np.int64) if labels else np.empty(0, np.int64)
    return SyntheticDataset(imgs, labs, manifest["seed"], manifest["num_classes"]), manifest


# ---------------------------------------------------------------- commands

def cmd_synth_data(cfg: dict) -> int:
    out = Path(cfg["out"])
    data = make_dataset(cfg["count"], cfg["seed"], cfg["size"], cfg["channels"])
    manifest = save_dataset(out, data, cfg["shard_size"], cfg)
    write_snapshot(out, "synth-data", cfg)
    log.info("wrote %d images in %d shard(s) to %s", manifest["count"], len(manifest["shards"]), out)
    return EXIT_OK


def _write_loss_csv(path: Path, losses) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{v!r}\n")


def cmd_train(cfg: dict) -> int:
    model = cfg["model"]
    if model not in ("denoiser", "encoder"):
        raise UsageError("train needs a model: denoiser or encoder")
    data, dmeta = load_dataset(cfg["data"])
    if len(data) == 0:
        raise ContractError("dataset is empty")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if model == "denoiser":
        dc = DenoiserConfig(seed=cfg["seed"], batch=cfg["batch"], layers=cfg["layers"])
        for key in ("steps", "lr", "hidden"):
            if cfg[key] is not None:
                setattr(dc, key, cfg[key])
        s = make_schedule(cfg["T"])
        result = train_denoiser(data, s, dc)
        mse = eps_mse(result.denoiser, data, s, seed=cfg["seed"])
        summary = {"final_loss": result.final_loss, "heldout_eps_mse": mse, "steps": dc.steps}
        result.denoiser.save(out, s, {"seed": cfg["seed"], "train": vars(dc)})
        log.info("denoiser: final loss %.4f, held-out eps-MSE %.4f", result.final_loss, mse)
    else:
        ec = EncoderConfig(seed=cfg["seed"], batch=cfg["batch"], dim=cfg["dim"])
        for key in ("steps", "lr", "hidden"):
            if cfg[key] is not None:
                setattr(ec, key, cfg[key])
        heldout = make_dataset(cfg["heldout"], dmeta["seed"], dmeta["size"], dmeta["channels"],
                               stream_name="heldout")
        result = train_encoder(data, ec, heldout)
        summary = {"final_loss": result.losses[-1] if result.losses else float("nan"),
                   "retrieval": result.retrieval, "steps": ec.steps}
        result.encoder.save(out, {"seed": cfg["seed"], "train": vars(ec)})
        log.info("encoder: held-out retrieval %.3f", result.retrieval)
    _write_loss_csv(out / "train_loss.csv", result.losses)
    (out / "eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_snapshot(out, "train", cfg)
    return EXIT_OK


def _load_denoiser(cfg: dict):
    if cfg.get("zero_denoiser"):
        shape = tuple(int(v) for v in str(cfg["shape"]).split(","))
        return ZeroDenoiser(shape), cfg["T"] or 50
    d, manifest = Denoiser.load(_require_dir(cfg["denoiser"], "denoiser checkpoint"))
    T = cfg["T"] or manifest.get("schedule", {}).get("T", 50)
    return d, T


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out"])
    d, T = _load_denoiser(cfg)
    s = make_schedule(T)
    x_T = stream(cfg["seed"], "latent").standard_normal(d.latent_shape)
    x0, traj = generate(x_T, cfg["condition"], d, s, cfg["p"])
    out.mkdir(parents=True, exist_ok=True)
    tio.save(out / "latent.sgt", x_T)
    tio.save(out / "x0.sgt", x0.data)
    write_ppm(out / "x0.ppm", x0.data)
    if cfg["invert"]:
        back = invert(traj.final, cfg["condition"], d, s)
        tio.save(out / "latent_recovered.sgt", back.x)
        err = roundtrip_error(x_T, cfg["condition"], d, s, cfg["p"])
        (out / "roundtrip.json").write_text(json.dumps({"max_relative_error": err}, indent=2) + "\n")
        log.info("round-trip max relative error %.3g", err)
    write_snapshot(out, "generate", cfg)
    return EXIT_OK


def _guidance_config(cfg: dict, T: int) -> GuidanceConfig:
    return GuidanceConfig(
        alpha=cfg["alpha"], lam=cfg["lam"], opt_steps=cfg["opt_steps"], step_size=cfg["step_size"],
        momentum=cfg["momentum"], renorm=cfg["renorm"], normalize_grad=cfg["normalize_grad"],
        p=cfg["p"], T=T, distance_form=cfg["distance_form"], method=cfg["method"],
        mask_k=cfg["mask_k"], pad=cfg["pad"],
    )


def run_optimization(cfg: dict, seed: int, out: Path) -> list[dict]:
    """One optimization run written to ``out``; returns its run records."""
    from .plotting import image_strip, loss_curve

    d, T = _load_denoiser(cfg)
    enc, _ = JointEncoder.load(_require_dir(cfg["encoder"], "encoder checkpoint"))
    s = make_schedule(T)
    gcfg = _guidance_config(cfg, T)
    c = cfg["condition"] if cfg["condition"] is not None else seed % enc.num_classes
    external = None
    if cfg["external_map"]:
        external = load_external_map(cfg["external_map"], d.latent_shape[1:])
    x_T = stream(seed, "latent").standard_normal(d.latent_shape)
    x_opt, trace = optimize_latent(x_T, c, d, enc, s, gcfg, external=external)

    out.mkdir(parents=True, exist_ok=True)
    tio.save(out / "latent_before.sgt", x_T)
    tio.save(out / "latent_after.sgt", x_opt)
    for tag, img in (("before", trace.initial_image), ("after", trace.final_image)):
        tio.save(out / f"x0_{tag}.sgt", img)
        write_ppm(out / f"x0_{tag}.ppm", img)
    trace.write_csv(out / "trace.csv")
    smap = detect_spectral_residual(trace.final_image)
    try:
        write_pgm(out / "saliency_mask.pgm", threshold_mask(smap, gcfg.mask_k))
    except NoSalientRegion:
        write_pgm(out / "saliency_mask.pgm", np.zeros_like(smap.values))
    loss_curve(trace, out / "loss.png")
    image_strip([trace.initial_image, trace.final_image, smap.values], ["before", "after", "saliency"],
                out / "images.png")

    records = []
    for method, img in (("unoptimized", trace.initial_image), (cfg["method"], trace.final_image)):
        records.append({
            "method": method, "condition": int(c), "seed": int(seed),
            "alignment_global": alignment_score(enc, img, c),
            "alignment_parts": parts_alignment_score(enc, img, c, gcfg.mask_k, gcfg.pad),
            "trace": "trace.csv",
        })
    manifest = {
        "kind": "optimize-run", "method": cfg["method"], "condition": int(c), "seed": int(seed),
        "initial_loss": trace.records[0].L, "final_loss": trace.records[-1].L,
        "degenerate_steps": trace.degenerate_steps, "records": records,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return records


def _optimize_worker(job):
    cfg, seed, out = job
    return run_optimization(cfg, seed, Path(out))


def cmd_optimize(cfg: dict) -> int:
    if cfg["method"] not in ("sgool", "global-only"):
        raise UsageError(f"method must be sgool or global-only, got {cfg['method']!r}")
    _require_dir(cfg["encoder"], "encoder checkpoint")
    if not cfg.get("zero_denoiser"):
        _require_dir(cfg["denoiser"], "denoiser checkpoint")
    if cfg["external_map"]:
        _require_dir(cfg["external_map"], "external saliency map")
    out = Path(cfg["out"])
    seeds = parse_seeds(cfg["seeds"])
    write_snapshot(out, "optimize", cfg)
    jobs = [(cfg, seed, str(out / f"seed_{seed:04d}")) for seed in seeds]
    if cfg["jobs"] > 1 and len(jobs) > 1:
        with multiprocessing.get_context("spawn").Pool(cfg["jobs"]) as pool:
            results = pool.map(_optimize_worker, jobs)
    else:
        results = [_optimize_worker(j) for j in jobs]
    for seed, recs in zip(seeds, results):
        before, after = recs
        log.info("seed %d: global %.2f -> %.2f, parts %.2f -> %.2f", seed,
                 before["alignment_global"], after["alignment_global"],
                 before["alignment_parts"], after["alignment_parts"])
    return EXIT_OK


def collect_records(run_dirs) -> list[RunRecord]:
    seen: dict[tuple, RunRecord] = {}
    for root in run_dirs:
        for mpath in sorted(Path(root).rglob("manifest.json")):
            manifest = json.loads(mpath.read_text())
            if manifest.get("kind") != "optimize-run":
                continue
            for r in manifest["records"]:
                rec = RunRecord(r["method"], r["condition"], r["seed"], r["alignment_global"],
                                r["alignment_parts"], str(mpath.parent / r["trace"]), r.get("hps"))
                seen.setdefault((rec.method, rec.condition, rec.seed), rec)
    return list(seen.values())


def cmd_evaluate(cfg: dict) -> int:
    from .plotting import bar_plots, box_plots

    runs = cfg["runs"]
    if not runs:
        raise UsageError("evaluate needs at least one --runs directory")
    runs = [runs] if isinstance(runs, str) else list(runs)
    for r in runs:
        _require_dir(r, "run directory")
    records = collect_records(runs)
    if not records:
        raise UsageError(f"no optimization runs found under {', '.join(runs)}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report = compare_methods(records)
    report.write_csv(out / "report.csv")
    text = report.to_text()
    (out / "report.txt").write_text(text)
    box_plots(records, out / "boxplots.png")
    bar_plots(records, out / "barplots.png")
    write_snapshot(out, "evaluate", cfg)
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON snapshot; flags override its values")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth-data", help="render the synthetic shape dataset")
    common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--shard-size", dest="shard_size", type=int)

    p = sub.add_parser("train", help="train the denoiser or the joint encoder")
    common(p)
    p.add_argument("model", nargs="?", choices=["denoiser", "encoder"])
    p.add_argument("--data")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heldout", type=int)

    p = sub.add_parser("generate", help="sample an image through the invertible sampler")
    common(p)
    p.add_argument("--denoiser")
    p.add_argument("--class", dest="condition", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--invert", action="store_true", default=None)
    p.add_argument("--zero-denoiser", dest="zero_denoiser", action="store_true", default=None)
    p.add_argument("--shape", help="latent shape C,H,W for --zero-denoiser")

    p = sub.add_parser("optimize", help="optimize initial latents against the guidance loss")
    common(p)
    p.add_argument("--denoiser")
    p.add_argument("--encoder")
    p.add_argument("--method", choices=["sgool", "global-only"])
    p.add_argument("--seeds", help="e.g. 0-19 or 1,4,7 (overrides --seed)")
    p.add_argument("--class", dest="condition", type=int, help="default: seed mod K")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--opt-steps", dest="opt_steps", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--renorm", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--normalize-grad", dest="normalize_grad", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--p", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--distance-form", dest="distance_form", choices=["root", "squared"])
    p.add_argument("--mask-k", dest="mask_k", type=float)
    p.add_argument("--pad", type=int)
    p.add_argument("--external-map", dest="external_map")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("evaluate", help="compare methods across optimization runs")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--runs", nargs="+")
    return parser


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        if args.command == "optimize" and args.seeds is None and args.seed is not None:
            cfg["seeds"] = str(args.seed)
        return COMMANDS[args.command](cfg)
    except (UsageError, ContractError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
