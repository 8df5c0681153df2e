"""Command-line entry point for reproducible file-based runs.

Every command is a pure function of (config, seed, input files): rerunning
it writes byte-identical outputs. stdout carries only progress lines
prefixed with "#"; human-readable errors go to stderr with a stable exit
code per failure family.
"""

import argparse
import configparser
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetCursor, MixtureSampler, idx_read, quantize_to_grid
from .denoiser import (
    HEAD_DUAL,
    HEAD_NOISE,
    ClassConditioning,
    DenoiserArch,
    DenoiserModel,
)
from .errors import (
    BadMagic,
    ConditioningMismatch,
    ConfigError,
    DataExhausted,
    DiffusionLabError,
    DimensionMismatch,
    DimensionOverflow,
    EmptyBatch,
    HeadMismatch,
    InvalidK,
    InvalidPlan,
    LengthMismatch,
    NoCenters,
    NonpositiveEntry,
    NotDualHead,
    OffGridInput,
    OffsetOutOfRange,
    OutOfRange,
    ShapeMismatch,
    SigmaConstraintViolated,
    StepCountTooSmall,
    TooFewSamples,
    TruncatedFile,
)
from .fileio import (
    read_numeric_csv,
    read_pgm,
    to_bytes_image,
    write_csv,
    write_manifest,
    write_pgm,
    write_samples_csv,
)
from .forward import GRID_STEP
from .metrics import (
    discrete_kl,
    fid,
    inception_score,
    load_feature_model,
    psnr,
    ssim,
    PSNR_CAP,
)
from .numerics import RngStream
from .sampler import (
    SampleRequest,
    ddim_sample,
    ddpm_sample,
    guided_sample,
    improved_sample,
)
from .schedule import cosine_schedule, linear_schedule, stride_steps
from .training import (
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    schedule_from_meta,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_HEAD = 5

# stream tag for data-source draws, distinct from the loop's internal tags
_TAG_DATA = 4

_CONFIG_SCHEMA = {
    "dataset": {"kind", "center", "sigma", "radius", "path", "labels"},
    "schedule": {"type", "t", "s"},
    "model": {"hidden", "d_emb", "head", "num_classes"},
    "train": {"variant", "gamma", "batch", "steps", "lambda", "p_uncond", "seed"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class RunConfig:
    dataset_kind: str
    center: tuple[float, ...]
    sigma: float
    radius: float
    data_path: str | None
    labels_path: str | None
    schedule_type: str
    T: int
    s: float
    hidden: tuple[int, ...]
    d_emb: int
    head: str
    num_classes: int
    variant: str
    train_cfg: TrainConfig
    out_dir: str


def _progress(msg: str) -> None:
    print(f"# {msg}")


def load_run_config(path: str) -> RunConfig:
    """Parse and validate the INI run description; unknown keys are fatal."""
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file {path} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None

    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _CONFIG_SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    try:
        kind = get("dataset", "kind", "gaussian")
        if kind not in ("gaussian", "mixture8", "idx"):
            raise ConfigError(f"dataset kind must be gaussian, mixture8, or idx, got {kind!r}")
        center = tuple(float(v) for v in get("dataset", "center", "1.0,-1.0").split(","))
        sigma = float(get("dataset", "sigma", "0.5"))
        radius = float(get("dataset", "radius", "1.0"))
        data_path = get("dataset", "path")
        labels_path = get("dataset", "labels")

        schedule_type = get("schedule", "type", "linear")
        if schedule_type not in ("linear", "cosine"):
            raise ConfigError(f"schedule type must be linear or cosine, got {schedule_type!r}")
        T = int(get("schedule", "t", "50"))
        s = float(get("schedule", "s", "0.008"))

        hidden = tuple(int(v) for v in get("model", "hidden", "32,32").split(","))
        d_emb = int(get("model", "d_emb", "8"))
        head = get("model", "head", HEAD_NOISE)
        if head not in (HEAD_NOISE, HEAD_DUAL):
            raise ConfigError(f"model head must be {HEAD_NOISE!r} or {HEAD_DUAL!r}, got {head!r}")
        num_classes = int(get("model", "num_classes", "0"))

        variant = get("train", "variant", "ddpm")
        train_cfg = TrainConfig(
            gamma=float(get("train", "gamma", "1e-3")),
            J=int(get("train", "batch", "64")),
            N=int(get("train", "steps", "1000")),
            lam=float(get("train", "lambda", "0.001")),
            p_uncond=float(get("train", "p_uncond", "0.1")),
            seed=int(get("train", "seed", "0")),
        )
        out_dir = get("output", "dir", "run-output")
    except ValueError as e:
        raise ConfigError(f"bad value in {path}: {e}") from None

    if kind == "idx":
        if data_path is None:
            raise ConfigError("dataset kind idx needs a path key")
        if not Path(data_path).is_file():
            raise FileNotFoundError(f"dataset file {data_path} not found")
        if labels_path is not None and not Path(labels_path).is_file():
            raise FileNotFoundError(f"labels file {labels_path} not found")
    return RunConfig(kind, center, sigma, radius, data_path, labels_path,
                     schedule_type, T, s, hidden, d_emb, head, num_classes,
                     variant, train_cfg, out_dir)


def build_schedule(kind: str, T: int, s: float):
    if kind == "linear":
        return linear_schedule(T)
    return cosine_schedule(T, s)


class _QuantizingSource:
    """Clip to [-1, 1] and snap onto the byte grid, as the hybrid loss needs."""

    def __init__(self, inner):
        self.inner = inner

    def take(self, k):
        x, labels = self.inner.take(k)
        return quantize_to_grid(np.clip(x, -1.0, 1.0)), labels


def _build_source(rc: RunConfig):
    """Returns (source, d, num_classes_in_data)."""
    rng = RngStream(rc.train_cfg.seed).split(_TAG_DATA)
    if rc.dataset_kind == "gaussian":
        return MixtureSampler([rc.center], rc.sigma, rng), len(rc.center), 1
    if rc.dataset_kind == "mixture8":
        centers = [(rc.radius * math.cos(2 * math.pi * i / 8),
                    rc.radius * math.sin(2 * math.pi * i / 8)) for i in range(8)]
        return MixtureSampler(centers, rc.sigma, rng), 2, 8
    ds = idx_read(rc.data_path, rc.labels_path)
    return DatasetCursor(ds), ds.d, ds.num_classes


def _build_model(rc: RunConfig, d: int) -> DenoiserModel:
    cond = ClassConditioning(rc.num_classes) if rc.num_classes > 0 else None
    arch = DenoiserArch(d, rc.hidden, rc.d_emb, rc.head, cond)
    return DenoiserModel.initialized(arch, rc.train_cfg.seed)


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    sched = build_schedule(rc.schedule_type, rc.T, rc.s)
    source, d, data_classes = _build_source(rc)
    if rc.variant == "improved":
        source = _QuantizingSource(source)
    if rc.variant == "cfg" and rc.num_classes != data_classes:
        raise ConfigError(
            f"model num_classes {rc.num_classes} != dataset classes {data_classes}")
    model = _build_model(rc, d)

    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _progress(f"training variant={rc.variant} steps={rc.train_cfg.N} "
              f"batch={rc.train_cfg.J} schedule={rc.schedule_type} T={rc.T}")
    # divergence is reported through the loss check, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        result = train(model, source, rc.train_cfg, sched, rc.variant)
    if result.losses and not all(math.isfinite(v) for v in result.losses):
        print("error: training loss became non-finite", file=sys.stderr)
        return EXIT_NUMERIC

    ckpt = out / "model.ckpt"
    save_checkpoint(str(ckpt), result.model, sched, rc.train_cfg.N, result.rng_counters)
    write_csv(out / "loss.csv",
              [(i + 1, v) for i, v in enumerate(result.losses)],
              header=("step", "loss"))
    _progress(f"saved {ckpt} and {out / 'loss.csv'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ck)
    sched = schedule_from_meta(ck.schedule)
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    req = SampleRequest(count=args.count, seed=args.seed, variant=args.variant)

    needs_k = args.variant in ("improved", "ddim")
    if needs_k:
        if args.k is None:
            raise ConfigError(f"--variant {args.variant} requires --k")
        if not (2 <= args.k <= sched.T):
            raise ConfigError(f"--k must satisfy 2 <= k <= T={sched.T}, got {args.k}")
    if not (0.0 <= args.eta <= 1.0):
        raise ConfigError(f"--eta must lie in [0, 1], got {args.eta}")
    if args.w < 0.0:
        raise ConfigError(f"--w must be >= 0, got {args.w}")

    onehot = None
    if args.cls is not None:
        if not isinstance(model.arch.conditioning, ClassConditioning):
            raise ConditioningMismatch("checkpoint model is not class-conditional")
        C = model.arch.conditioning.num_classes
        if not (0 <= args.cls < C):
            raise ConfigError(f"--class must lie in 0..{C - 1}, got {args.cls}")
        onehot = np.zeros(C)
        onehot[args.cls] = 1.0

    if args.variant == "ddpm":
        res = ddpm_sample(model, sched, req, cond=onehot)
    elif args.variant == "improved":
        res = improved_sample(model, sched, stride_steps(sched.T, args.k), req)
    elif args.variant == "ddim":
        res = ddim_sample(model, sched, stride_steps(sched.T, args.k), args.eta,
                          req, cond=onehot)
    else:
        if onehot is None:
            raise ConfigError("--variant guided requires --class")
        res = guided_sample(model, sched, args.w, onehot, req)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        target = str(out / "samples.csv")
        write_samples_csv(target, res.samples)
    else:
        d = model.arch.d
        rows = args.rows if args.rows else int(math.isqrt(d))
        if rows < 1 or d % rows != 0:
            raise ConfigError(f"dimension {d} does not tile into {rows}-pixel rows")
        cols = d // rows
        for i in range(res.samples.shape[0]):
            write_pgm(str(out / f"sample_{i:05d}.pgm"),
                      to_bytes_image(res.samples[i], rows, cols))
        target = f"{res.samples.shape[0]} PGM files in {out}"
    write_manifest(str(out / "manifest.json"), {
        "checkpoint": str(args.checkpoint),
        "class": args.cls,
        "count": args.count,
        "eta": args.eta,
        "format": args.format,
        "k": args.k,
        "out": str(args.out),
        "rows": args.rows,
        "seed": args.seed,
        "variant": args.variant,
        "w": args.w,
    })
    _progress(f"wrote {target} and {out / 'manifest.json'}")
    return EXIT_OK


def _pgm_row(path: str) -> np.ndarray:
    # bytes land on the same grid the quantizer uses, b -> -1 + (2/255) b
    return -1.0 + GRID_STEP * read_pgm(path).astype(np.float64).ravel()


def _load_eval_matrix(path: str) -> np.ndarray:
    """Samples as a (count, d) matrix from a CSV/IDX file or a PGM directory."""
    p = Path(path)
    if p.is_dir():
        names = sorted(p.glob("*.pgm"))
        if not names:
            raise FileNotFoundError(f"no PGM files in directory {path}")
        return np.stack([_pgm_row(str(n)) for n in names])
    if not p.is_file():
        raise FileNotFoundError(f"input {path} not found")
    if p.suffix == ".idx":
        return idx_read(path).samples
    if p.suffix == ".pgm":
        return _pgm_row(path).reshape(1, -1)
    return read_numeric_csv(path)


def cmd_eval(args) -> int:
    gen = _load_eval_matrix(args.gen)
    ref = _load_eval_matrix(args.ref)
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if not metric_names:
        raise ConfigError("--metrics must name at least one metric")
    fm = None
    if any(m in ("fid", "is") for m in metric_names):
        if args.features is None:
            raise ConfigError("metrics fid/is require --features <checkpoint>")
        fm = load_feature_model(args.features)

    rows = []
    for name in metric_names:
        if name == "fid":
            value = fid(gen, ref, fm)
            rows.append(("fid", value, gen.shape[0], ref.shape[0], 1, 0.0))
        elif name == "is":
            rep = inception_score(gen, fm, batches=args.batches)
            rows.append(("is", rep.value, rep.k_samples, 0, rep.batches, rep.std))
        elif name == "psnr":
            if gen.shape != ref.shape:
                raise DimensionMismatch(f"psnr needs equal shapes, {gen.shape} vs {ref.shape}")
            vals = [min(psnr(g, r), PSNR_CAP) for g, r in zip(gen, ref)]
            rows.append(("psnr", float(np.mean(vals)), gen.shape[0], ref.shape[0],
                         1, float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0))
        elif name == "ssim":
            side = int(math.isqrt(gen.shape[1]))
            if side * side != gen.shape[1]:
                raise ConfigError(f"ssim needs square images, got width {gen.shape[1]}")
            vals = [ssim(g.reshape(side, side), r.reshape(side, side), window=args.window)
                    for g, r in zip(gen, ref)]
            rows.append(("ssim", float(np.mean(vals)), gen.shape[0], ref.shape[0],
                         1, float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0))
        elif name == "kl":
            rows.append(("kl", discrete_kl(gen.ravel(), ref.ravel()),
                         gen.size, ref.size, 1, 0.0))
        else:
            raise ConfigError(f"unknown metric {name!r}")

    write_csv(args.out, rows,
              header=("metric", "value", "k_samples", "m_samples", "batches", "std"))
    _progress(f"wrote {args.out} with {len(rows)} metric rows")
    return EXIT_OK


def cmd_schedule(args) -> int:
    sched = build_schedule(args.type, args.t, args.s)
    rows = [(t, sched.a(t), sched.abar(t), sched.btilde(t))
            for t in range(1, sched.T + 1)]
    write_csv(args.out, rows, header=("t", "alpha", "alpha_bar", "beta_tilde"))
    _progress(f"wrote {args.out} with {sched.T} schedule rows")
    return EXIT_OK


def cmd_info(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    _progress(f"checkpoint {args.checkpoint}")
    _progress(f"format version {ck.version}")
    _progress(f"schedule {ck.schedule}")
    _progress(f"arch {ck.arch}")
    _progress(f"trained steps {ck.step}")
    _progress(f"parameters {ck.params32.size} (32-bit)")
    _progress(f"rng counters {ck.rng}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="diffusionlab",
        description="Desk-scale diffusion models: train, sample, evaluate, inspect.")
    sub = p.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("train", help="train a model from an INI config")
    pt.add_argument("config", help="path to the run configuration file")
    pt.set_defaults(handler=cmd_train)

    ps = sub.add_parser("sample", help="draw samples from a checkpoint")
    ps.add_argument("checkpoint")
    ps.add_argument("--variant", default="ddpm",
                    choices=("ddpm", "improved", "ddim", "guided"))
    ps.add_argument("--count", type=int, default=16)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--k", type=int, default=None, help="stride count for improved/ddim")
    ps.add_argument("--eta", type=float, default=0.0)
    ps.add_argument("--w", type=float, default=0.0)
    ps.add_argument("--class", dest="cls", type=int, default=None)
    ps.add_argument("--format", default="csv", choices=("csv", "pgm"))
    ps.add_argument("--rows", type=int, default=0, help="image rows for pgm output")
    ps.add_argument("--out", default="samples-out")
    ps.set_defaults(handler=cmd_sample)

    pe = sub.add_parser("eval", help="compute metrics between two sample files")
    pe.add_argument("--gen", required=True)
    pe.add_argument("--ref", required=True)
    pe.add_argument("--metrics", default="fid")
    pe.add_argument("--features", default=None, help="feature-model checkpoint for fid/is")
    pe.add_argument("--batches", type=int, default=1)
    pe.add_argument("--window", type=int, default=4)
    pe.add_argument("--out", default="metrics.csv")
    pe.set_defaults(handler=cmd_eval)

    pc = sub.add_parser("schedule", help="dump a noise schedule as CSV")
    pc.add_argument("--type", default="linear", choices=("linear", "cosine"))
    pc.add_argument("--t", type=int, default=1000)
    pc.add_argument("--s", type=float, default=0.008)
    pc.add_argument("--out", default="schedule.csv")
    pc.set_defaults(handler=cmd_schedule)

    pi = sub.add_parser("info", help="describe a checkpoint")
    pi.add_argument("checkpoint")
    pi.set_defaults(handler=cmd_info)
    return p


_CONFIG_ERRORS = (ConfigError, EmptyBatch, InvalidK, InvalidPlan,
                  OffsetOutOfRange, SigmaConstraintViolated, StepCountTooSmall)
_DATA_ERRORS = (BadMagic, DataExhausted, DimensionMismatch, DimensionOverflow,
                LengthMismatch, NoCenters, NonpositiveEntry, OffGridInput,
                OutOfRange, ShapeMismatch, TooFewSamples, TruncatedFile, OSError)
_HEAD_ERRORS = (ConditioningMismatch, HeadMismatch, NotDualHead)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except _CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _HEAD_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HEAD
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DiffusionLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
