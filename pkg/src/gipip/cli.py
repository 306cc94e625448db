"""Command-line front end.

Four subcommands over one config format:

  train-prior   fit the autoencoder on the auxiliary split, save the model
  attack        run gradient inversion over sampled targets, write CSV+images
  ablate-as     sweep the anomaly-prior weight over seeds
  evaluate      recompute metrics from images already on disk

Artifacts are deterministic functions of the config and seed: result CSV
bodies and model files are byte-identical across reruns and across
--jobs settings.  Timestamps and wall times live only in the manifest.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, run_attack
from .config import ExperimentConfig, load_config
from .data import Dataset, load_cifar10, load_mnist, save_image, load_image, synthetic_textures
from .errors import ConfigurationError, FormatError, GipipError
from .flsim import SharedGradient, make_partition, simulate_round, verify_disjoint
from .metrics import evaluate_batch, mse, psnr, ssim
from .nn import AutoEncoderParams, ClassifierParams, InitScheme, init_classifier
from .prior import PriorTrainConfig, load_model, save_model, train_autoencoder
from .tensor import GradientVector, constant, variable

# fixed tags keep every derived stream independent of the others
_SEED_DATA = 101
_SEED_PARTITION = 102
_SEED_MODEL = 103
_SEED_PRIOR = 104
_SEED_TARGETS = 105
_SEED_RUN = 106

RESULT_COLUMNS = ("run_id", "method", "dataset", "batch_size", "seed",
                  "lambda_as", "lambda_tv", "iterations", "final_grad_loss",
                  "final_as_loss", "final_tv_loss", "psnr", "ssim", "mse")


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts."""
    ss = np.random.SeedSequence(tuple(int(p) & 0xFFFFFFFFFFFFFFFF for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _fmt(value) -> str:
    """CSV cell formatting; floats keep full round-trip precision."""
    if isinstance(value, float):
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# experiment assembly

def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        return synthetic_textures(cfg.synthetic_count,
                                  seed=derive_seed(cfg.seed, _SEED_DATA))
    if cfg.dataset == "mnist":
        return load_mnist(cfg.path)
    return load_cifar10(cfg.path)


def build_partition(cfg: ExperimentConfig, ds: Dataset):
    part = make_partition(ds, mode=cfg.aux_mode,
                          seed=derive_seed(cfg.seed, _SEED_PARTITION),
                          fraction=cfg.aux_fraction if cfg.aux_mode == "fraction" else None)
    verify_disjoint(part)
    return part


def build_model(cfg: ExperimentConfig, ds: Dataset) -> ClassifierParams:
    num_classes = len(ds.class_names) if ds.class_names else int(ds.labels.max()) + 1
    scheme = InitScheme(kind=cfg.init, sigma=cfg.init_sigma)
    return init_classifier(cfg.arch, in_shape=ds.image_shape, num_classes=num_classes,
                           seed=derive_seed(cfg.seed, _SEED_MODEL), scheme=scheme,
                           hidden=cfg.hidden)


def obtain_prior(cfg: ExperimentConfig, ds: Dataset, part, out_dir: Path,
                 manifest: list[str]) -> AutoEncoderParams | None:
    """Load the prior if a saved model exists, otherwise train and save it."""
    if not cfg.prior_enabled:
        manifest.append("prior.source=none")
        return None
    path = Path(cfg.prior_model_path) if cfg.prior_model_path else out_dir / "prior_model.bin"
    if not path.is_absolute() and cfg.prior_model_path:
        path = out_dir / path
    if path.exists():
        theta_a = load_model(path)
        manifest.append("prior.source=loaded")
        manifest.append(f"prior.path={path}")
        return theta_a
    aux_images = ds.images[part.aux_indices]
    train_cfg = PriorTrainConfig(epochs=cfg.prior_epochs,
                                 learning_rate=cfg.prior_learning_rate,
                                 batch_size=cfg.prior_batch_size,
                                 seed=derive_seed(cfg.seed, _SEED_PRIOR))
    theta_a, trace = train_autoencoder(aux_images, train_cfg)
    save_model(path, theta_a)
    _write_csv(out_dir / "prior_trace.csv", ("epoch", "mean_loss"),
               [(i, v) for i, v in enumerate(trace)])
    manifest.append("prior.source=trained")
    manifest.append(f"prior.path={path}")
    manifest.append(f"prior.epochs={len(trace)}")
    if trace:
        manifest.append(f"prior.first_epoch_loss={_fmt(trace[0])}")
        manifest.append(f"prior.final_epoch_loss={_fmt(trace[-1])}")
    return theta_a


def choose_targets(cfg: ExperimentConfig, part) -> np.ndarray:
    pool = np.asarray(part.target_indices)
    if cfg.num_targets > pool.size:
        raise ConfigurationError(f"num_targets {cfg.num_targets} exceeds the "
                                 f"{pool.size} available target images")
    rng = np.random.default_rng(derive_seed(cfg.seed, _SEED_TARGETS))
    return rng.choice(pool, size=cfg.num_targets, replace=False)


# ---------------------------------------------------------------------------
# parallel attack runs (workers get arrays only, never the ground truth)

def _attack_worker(payload: dict) -> dict:
    try:
        theta_g = ClassifierParams(
            arch=payload["arch"], in_shape=tuple(payload["in_shape"]),
            num_classes=payload["num_classes"],
            items=tuple((n, variable(a)) for n, a in payload["model_items"]))
        theta_a = None
        if payload["prior_items"] is not None:
            theta_a = AutoEncoderParams(
                in_channels=payload["prior_in_channels"],
                widths=tuple(payload["prior_widths"]),
                items=tuple((n, variable(a)) for n, a in payload["prior_items"]))
        gv = GradientVector(tuple(payload["grad_names"]),
                            tuple(constant(a) for a in payload["grad_arrays"]))
        shared = SharedGradient(gradient=gv, batch_size=payload["batch_size"],
                                labels=np.asarray(payload["labels"]),
                                model_fingerprint=payload["fingerprint"])
        config = AttackConfig(**payload["attack_config"])
        result = run_attack(shared, theta_g, config, theta_a=theta_a)
        return {"run_id": payload["run_id"], "error": None,
                "recovered": result.recovered, "trace": result.trace,
                "final_grad_loss": result.final_grad_loss,
                "final_as_loss": result.final_as_loss,
                "final_tv_loss": result.final_tv_loss,
                "best_restart": result.best_restart, "stalled": result.stalled,
                "deviations": result.deviations, "wall_time_s": result.wall_time_s}
    except GipipError as exc:
        return {"run_id": payload["run_id"], "error": f"{type(exc).__name__}: {exc}"}


def _make_payload(run_id: int, cfg: ExperimentConfig, theta_g: ClassifierParams,
                  theta_a: AutoEncoderParams | None, shared: SharedGradient,
                  seed: int) -> dict:
    return {
        "run_id": run_id,
        "arch": theta_g.arch, "in_shape": theta_g.in_shape,
        "num_classes": theta_g.num_classes,
        "model_items": [(n, t.data.copy()) for n, t in theta_g.items],
        "prior_items": None if theta_a is None
        else [(n, t.data.copy()) for n, t in theta_a.items],
        "prior_in_channels": None if theta_a is None else theta_a.in_channels,
        "prior_widths": None if theta_a is None else theta_a.widths,
        "grad_names": shared.gradient.names,
        "grad_arrays": [t.data.copy() for t in shared.gradient.tensors],
        "batch_size": shared.batch_size,
        "labels": shared.labels.copy(),
        "fingerprint": shared.model_fingerprint,
        "attack_config": {
            "method": cfg.method, "learning_rate": cfg.learning_rate,
            "iterations": cfg.iterations, "lambda_as": cfg.lambda_as,
            "lambda_tv": cfg.lambda_tv, "restarts": cfg.restarts,
            "clamp": cfg.clamp, "record_every": cfg.record_every, "seed": seed,
        },
    }


def _run_payloads(payloads: list[dict], jobs: int) -> list[dict]:
    if jobs <= 1 or len(payloads) <= 1:
        return [_attack_worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(jobs, len(payloads))) as pool:
        return list(pool.map(_attack_worker, payloads))


# ---------------------------------------------------------------------------
# subcommands

def _manifest_header(cfg: ExperimentConfig, command: str) -> list[str]:
    lines = ["manifest_version=1",
             f"package=gipip {__version__}",
             f"command={command}",
             f"created={datetime.now(timezone.utc).isoformat()}"]
    lines += [f"config.{key}={value}" for key, value in cfg.items()]
    return lines


def _write_manifest(out_dir: Path, lines: list[str]) -> Path:
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def cmd_train_prior(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Train the prior on the auxiliary split and persist it."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_header(cfg, "train-prior")
    t0 = time.monotonic()
    ds = load_dataset(cfg)
    part = build_partition(cfg, ds)
    manifest.append(f"dataset.count={ds.count}")
    manifest.append(f"partition.provenance={part.provenance}")
    theta_a = obtain_prior(cfg, ds, part, out_dir, manifest)
    if theta_a is None:
        raise ConfigurationError("train-prior needs [prior] enabled=true")
    manifest.append(f"wall_time_total_s={time.monotonic() - t0:.3f}")
    manifest.append("artifact.trace=prior_trace.csv")
    return _write_manifest(out_dir, manifest)


def cmd_attack(cfg: ExperimentConfig, out_dir=None, jobs: int | None = None) -> Path:
    """Full pipeline: data, model, prior, one round, inversion, metrics."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs if jobs is not None else cfg.parallel_runs
    manifest = _manifest_header(cfg, "attack")
    t0 = time.monotonic()

    ds = load_dataset(cfg)
    part = build_partition(cfg, ds)
    theta_g = build_model(cfg, ds)
    theta_a = obtain_prior(cfg, ds, part, out_dir, manifest) \
        if cfg.method == "gipip" else None
    targets = choose_targets(cfg, part)
    shared_list, sealed = simulate_round(theta_g, ds, targets, cfg.batch_size,
                                         partition=part)
    manifest.append(f"dataset.count={ds.count}")
    manifest.append(f"dataset.image_shape={ds.image_shape}")
    manifest.append(f"partition.provenance={part.provenance}")
    manifest.append(f"targets={','.join(str(int(i)) for i in targets)}")

    payloads = []
    for i, shared in enumerate(shared_list):
        seed_i = derive_seed(cfg.seed, _SEED_RUN, i)
        payloads.append(_make_payload(i, cfg, theta_g, theta_a, shared, seed_i))
    outcomes = _run_payloads(payloads, jobs)

    truth_images, _ = sealed.reveal()
    ext = "pgm" if ds.image_shape[0] == 1 else "ppm"
    rows, failures = [], []
    for payload, outcome in zip(payloads, outcomes):
        rid = outcome["run_id"]
        run_seed = payload["attack_config"]["seed"]
        if outcome["error"] is not None:
            failures.append((rid, outcome["error"]))
            manifest.append(f"run.{rid}.status=failed")
            manifest.append(f"run.{rid}.seed={run_seed}")
            manifest.append(f"run.{rid}.error={outcome['error']}")
            continue
        truth = truth_images[rid * cfg.batch_size:(rid + 1) * cfg.batch_size]
        recovered = np.clip(outcome["recovered"], 0.0, 1.0)
        report = evaluate_batch(recovered, truth)
        artifacts = []
        for j in range(cfg.batch_size):
            rec_name = f"run{rid}_img{j}.{ext}"
            tru_name = f"truth_run{rid}_img{j}.{ext}"
            save_image(out_dir / rec_name, recovered[j])
            save_image(out_dir / tru_name, truth[report.pairing[j]])
            artifacts += [rec_name, tru_name]
        trace_name = f"run{rid}_trace.csv"
        _write_csv(out_dir / trace_name,
                   ("iteration", "grad_loss", "as_loss", "tv_loss", "total_loss"),
                   outcome["trace"])
        artifacts.append(trace_name)
        rows.append((rid, cfg.method, cfg.dataset, cfg.batch_size, run_seed,
                     cfg.lambda_as, cfg.lambda_tv, cfg.iterations,
                     outcome["final_grad_loss"], outcome["final_as_loss"],
                     outcome["final_tv_loss"], report.mean_psnr,
                     report.mean_ssim, report.mean_mse))
        manifest.append(f"run.{rid}.status=ok")
        manifest.append(f"run.{rid}.seed={run_seed}")
        manifest.append(f"run.{rid}.wall_time_s={outcome['wall_time_s']:.3f}")
        manifest.append(f"run.{rid}.best_restart={outcome['best_restart']}")
        manifest.append(f"run.{rid}.stalled={outcome['stalled']}")
        manifest.append(f"run.{rid}.psnr_inf_count={report.psnr_inf_count}")
        for dev in outcome["deviations"]:
            manifest.append(f"run.{rid}.deviation={dev}")
        manifest.append(f"run.{rid}.artifacts={';'.join(artifacts)}")

    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)
    manifest.append("artifact.results=results.csv")
    manifest.append(f"runs.total={len(payloads)}")
    manifest.append(f"runs.failed={len(failures)}")
    manifest.append(f"jobs={jobs}")
    manifest.append(f"wall_time_total_s={time.monotonic() - t0:.3f}")
    path = _write_manifest(out_dir, manifest)
    if failures and not rows:
        details = "; ".join(f"run {rid}: {msg}" for rid, msg in failures)
        raise GipipError(f"all {len(failures)} runs failed: {details}")
    return path


def cmd_ablate_as(cfg: ExperimentConfig, out_dir=None, jobs: int | None = None,
                  weights=None, seeds=None) -> Path:
    """Sweep lambda_as over attack seeds with everything else held fixed."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs if jobs is not None else cfg.parallel_runs
    weights = tuple(cfg.ablate_weights if weights is None else weights)
    seeds = tuple(cfg.ablate_seeds if seeds is None else seeds)
    if any(w < 0 for w in weights):
        raise ConfigurationError("ablation weights must be >= 0")
    if cfg.method != "gipip":
        raise ConfigurationError("ablate-as only makes sense for method 'gipip'")
    manifest = _manifest_header(cfg, "ablate-as")
    t0 = time.monotonic()

    ds = load_dataset(cfg)
    part = build_partition(cfg, ds)
    theta_g = build_model(cfg, ds)
    theta_a = obtain_prior(cfg, ds, part, out_dir, manifest)
    targets = choose_targets(cfg, part)
    shared_list, sealed = simulate_round(theta_g, ds, targets, cfg.batch_size,
                                         partition=part)
    manifest.append(f"partition.provenance={part.provenance}")
    manifest.append(f"targets={','.join(str(int(i)) for i in targets)}")
    manifest.append(f"ablate.weights={','.join(_fmt(w) for w in weights)}")
    manifest.append(f"ablate.seeds={','.join(str(s) for s in seeds)}")

    payloads = []
    rid = 0
    for w in weights:
        for s in seeds:
            sub = replace(cfg, lambda_as=float(w))
            for i, shared in enumerate(shared_list):
                seed_i = derive_seed(int(s), _SEED_RUN, i)
                payloads.append(_make_payload(rid, sub, theta_g, theta_a, shared, seed_i))
                payloads[-1]["cell"] = (float(w), int(s), i)
                rid += 1
    outcomes = _run_payloads(payloads, jobs)

    truth_images, _ = sealed.reveal()
    rows, failures = [], []
    for payload, outcome in zip(payloads, outcomes):
        rid = outcome["run_id"]
        w, s, i = payload["cell"]
        if outcome["error"] is not None:
            failures.append((rid, outcome["error"]))
            manifest.append(f"run.{rid}.status=failed")
            manifest.append(f"run.{rid}.error={outcome['error']}")
            continue
        truth = truth_images[i * cfg.batch_size:(i + 1) * cfg.batch_size]
        recovered = np.clip(outcome["recovered"], 0.0, 1.0)
        report = evaluate_batch(recovered, truth)
        rows.append((rid, cfg.method, cfg.dataset, cfg.batch_size,
                     payload["attack_config"]["seed"], w, cfg.lambda_tv,
                     cfg.iterations, outcome["final_grad_loss"],
                     outcome["final_as_loss"], outcome["final_tv_loss"],
                     report.mean_psnr, report.mean_ssim, report.mean_mse))
        manifest.append(f"run.{rid}.status=ok")
        manifest.append(f"run.{rid}.cell=weight={_fmt(w)},seed={s},batch={i}")
        manifest.append(f"run.{rid}.wall_time_s={outcome['wall_time_s']:.3f}")

    _write_csv(out_dir / "ablation.csv", RESULT_COLUMNS, rows)
    manifest.append("artifact.results=ablation.csv")
    manifest.append(f"runs.total={len(payloads)}")
    manifest.append(f"runs.failed={len(failures)}")
    manifest.append(f"wall_time_total_s={time.monotonic() - t0:.3f}")
    path = _write_manifest(out_dir, manifest)
    if failures and not rows:
        raise GipipError(f"all {len(failures)} ablation runs failed")
    return path


def cmd_evaluate(out_dir) -> Path:
    """Re-score recovered images already written by an attack run."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ConfigurationError(f"not a run directory: {out_dir}")
    recovered = sorted(p for p in out_dir.iterdir()
                       if p.suffix in (".ppm", ".pgm") and p.name.startswith("run"))
    if not recovered:
        raise ConfigurationError(f"no recovered images (run*_img*.ppm/pgm) in {out_dir}")
    rows = []
    for rec_path in recovered:
        tru_path = out_dir / f"truth_{rec_path.name}"
        if not tru_path.exists():
            raise ConfigurationError(f"missing paired truth image {tru_path.name}")
        a = load_image(rec_path)
        b = load_image(tru_path)
        rows.append((rec_path.name, tru_path.name, mse(a, b), psnr(a, b), ssim(a, b)))
    path = out_dir / "evaluation.csv"
    _write_csv(path, ("image", "truth", "mse", "psnr", "ssim"), rows)
    return path


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gipip",
        description="gradient inversion laboratory: recover training images "
                    "from shared gradients")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("train-prior", "train the anomaly-score autoencoder"),
                           ("attack", "invert gradients for sampled targets"),
                           ("ablate-as", "sweep the anomaly prior weight")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--output", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--jobs", type=int, help="parallel attack processes")
    p = sub.add_parser("evaluate", help="recompute metrics from written images")
    p.add_argument("--output", required=True, help="run directory to score")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "evaluate":
            cmd_evaluate(args.output)
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigurationError(f"--jobs must be >= 1, got {args.jobs}")
        out_dir = args.output if args.output is not None else None
        if args.command == "train-prior":
            cmd_train_prior(cfg, out_dir)
        elif args.command == "attack":
            cmd_attack(cfg, out_dir, jobs=args.jobs)
        else:
            cmd_ablate_as(cfg, out_dir, jobs=args.jobs)
        return 0
    except GipipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigurationError):
            return 2
        if isinstance(exc, FormatError):
            return 3
        return 1


if __name__ == "__main__":
    sys.exit(main())
