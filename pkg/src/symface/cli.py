"""Command line entry point: ``symface <subcommand> [options]``.

Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .dataman import (
    Manifest,
    ManifestError,
    SourceEntry,
    build_manifest,
    make_item,
    normalize_pixels,
    read_image,
    read_manifest,
    write_image,
    write_manifest,
)
from .evalkit import (
    EvalReport,
    ProtocolError,
    cosine_similarities,
    inter_class_variance,
    make_pairs,
    sym_pair_distance,
    verify_similarities,
)
from .faceloss import MarginConfig
from .facenet import CheckpointError, EmbedderConfig
from .symgeom import Landmarks
from .synthgen import AsymmetryDistribution, PoseDistribution, generate_corpus, write_corpus
from .trainkit import TrainConfig, TrainingDiverged, load_run, save_run, sub_seed, train

log = logging.getLogger("symface")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
RUN_SCHEMA = "symface-run/1"
TABLE5_TAUS = (0.05, 0.1, 0.2, 0.3, 0.4)


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- run config file


@dataclass
class RunConfigFile:
    schema: str = RUN_SCHEMA
    train_manifest: str | None = None
    test_manifest: str | None = None
    out_dir: str = "run"
    train: TrainConfig = field(default_factory=TrainConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    n_pairs: int = 1200
    folds: int = 10

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfigFile":
        if not isinstance(obj, dict):
            raise ConfigError("run config must be a JSON object")
        if obj.get("schema") != RUN_SCHEMA:
            raise ConfigError(f"run config schema must be {RUN_SCHEMA!r}, got {obj.get('schema')!r}")
        _reject_unknown(obj, {f.name for f in fields(cls)}, "run config")
        kw = dict(obj)
        try:
            if "train" in kw:
                t = dict(kw["train"])
                _reject_unknown(t, {f.name for f in fields(TrainConfig)}, "train")
                if "margin" in t:
                    _reject_unknown(t["margin"], {f.name for f in fields(MarginConfig)}, "train.margin")
                kw["train"] = TrainConfig(**t)
            if "embedder" in kw:
                _reject_unknown(kw["embedder"], {f.name for f in fields(EmbedderConfig)}, "embedder")
                kw["embedder"] = EmbedderConfig(**kw["embedder"])
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict:
        return {
            "schema": self.schema,
            "train_manifest": self.train_manifest,
            "test_manifest": self.test_manifest,
            "out_dir": self.out_dir,
            "train": self.train.to_json(),
            "embedder": {"input_dims": list(self.embedder.input_dims), "hidden": list(self.embedder.hidden),
                         "embedding_dim": self.embedder.embedding_dim, "seed": self.embedder.seed},
            "n_pairs": self.n_pairs,
            "folds": self.folds,
        }


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")


def load_run_config(args) -> RunConfigFile:
    """Config file (if any) with command-line flags layered on top."""
    if getattr(args, "config", None):
        try:
            obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg = RunConfigFile.from_json(obj)
    else:
        cfg = RunConfigFile()
    t = cfg.train
    margin = t.margin
    try:
        if args.margin_family or args.scale is not None or args.margin is not None:
            margin = MarginConfig(args.margin_family or margin.family,
                                  margin.scale if args.scale is None else args.scale,
                                  margin.margin if args.margin is None else args.margin)
        overrides = {"margin": margin}
        for name in ("seed", "tau", "p", "epochs"):
            v = getattr(args, name, None)
            if v is not None:
                overrides[name] = v
        if getattr(args, "no_symface", False):
            overrides["symface"] = False
        cfg.train = replace(t, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out_dir:
        cfg.out_dir = args.out_dir
    for name in ("train_manifest", "test_manifest"):
        v = getattr(args, name, None)
        if v:
            setattr(cfg, name, v)
    return cfg


# ---------------------------------------------------------------- helpers


def _read_landmark_sources(path: str) -> list[SourceEntry]:
    base = Path(path).parent
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if "schema" in obj:
                    continue
                p = obj["path"]
                if not Path(p).is_absolute():
                    p = str(base / p)
                lm = Landmarks.from_array(obj["lm"], detected=bool(obj.get("detected", True)))
                out.append(SourceEntry(str(obj["id"]), p, int(obj["label"]), lm))
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed landmark entry ({exc})") from exc
    return out


def _load_images(manifest: Manifest, manifest_path: str) -> dict[str, np.ndarray]:
    base = Path(manifest_path).parent
    images = {}
    for r in manifest:
        p = Path(r.path)
        images[r.id] = read_image(p if p.is_absolute() else base / p)
    return images


def _input_dims(images: dict[str, np.ndarray]) -> tuple[int, int, int]:
    first = next(iter(images.values()))
    return (first.shape[0], first.shape[1], 1 if first.ndim == 2 else first.shape[2])


def corpus_stats(manifest: Manifest, tau: float | None = None) -> dict:
    if tau is not None and tau != manifest.tau:
        manifest = manifest.with_tau(tau)
    n = len(manifest)
    n_sym = manifest.n_sym
    return {
        "tau": manifest.tau,
        "n": n,
        "n_sym": n_sym,
        "n_asym": n - n_sym,
        "n_undetected": sum(not r.landmarks.detected for r in manifest),
        "sym_fraction": n_sym / n if n else 0.0,
        "cross_posed_fraction": (n - n_sym) / n if n else 0.0,
    }


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def evaluate_state(state, manifest: Manifest, images, n_pairs: int, folds: int, pair_seed: int) -> tuple[EvalReport, np.ndarray]:
    x = normalize_pixels(np.stack([images[r.id] for r in manifest]))
    labels = np.array([r.label for r in manifest])
    emb = state.embedder.embed(x)
    pairs = make_pairs(labels, n_pairs, pair_seed)
    sims = cosine_similarities(emb, pairs)
    report = verify_similarities(sims, np.array([p.same_identity for p in pairs]), folds)
    report.inter_class_variance = inter_class_variance(emb, labels)
    sym = [r for r in manifest if r.symmetric]
    report.mean_sym_pair_distance = sym_pair_distance(state.embedder.embed, sym, images) if sym else 0.0
    report.extra = {"n_images": len(manifest), "n_pairs": len(pairs), "n_sym": len(sym)}
    return report, np.array([[p.a, p.b, int(p.same_identity), s] for p, s in zip(pairs, sims)])


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    tau = 0.2 if args.tau is None else args.tau
    corpus = generate_corpus(
        args.num_ids, args.imgs_per_id, (args.size, args.size),
        asymmetry=AsymmetryDistribution(0.0, args.asym_max),
        pose=PoseDistribution(args.frontal_fraction, args.min_pose, args.max_pose),
        seed=sub_seed(seed, "corpus"), noise_sigma=args.noise,
    )
    summary = write_corpus(corpus, args.out_dir or "corpus", tau=tau, holdout_per_id=args.holdout)
    _emit(summary)
    return EXIT_OK


def cmd_score(args) -> int:
    sources = _read_landmark_sources(args.landmarks)
    manifest = build_manifest(sources, 0.2 if args.tau is None else args.tau)
    rhos = np.array([r.rho for r in manifest])
    hist, edges = np.histogram(rhos, bins=10, range=(0.0, 1.0))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            for r in manifest:
                fh.write(json.dumps({"id": r.id, "rho": r.rho, "sym": r.symmetric}) + "\n")
    _emit({
        "n": len(manifest),
        "n_rho_one": int(np.sum(rhos == 1.0)),
        "histogram": [{"lo": float(lo), "hi": float(hi), "count": int(c)} for lo, hi, c in zip(edges[:-1], edges[1:], hist)],
    })
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = read_manifest(args.manifest)
    if args.tau is not None:
        manifest = manifest.with_tau(args.tau)
    out = Path(args.out_dir or "splits")
    out.mkdir(parents=True, exist_ok=True)
    images = _load_images(manifest, args.manifest)
    n = 0
    for r in manifest:
        if not r.symmetric:
            continue
        item = make_item(r, images[r.id], split=True)
        write_image(item.images[0], out / f"{r.id}_left.pgm")
        write_image(item.images[1], out / f"{r.id}_right.pgm")
        n += 1
    _emit({"n_split": n, "out_dir": str(out)})
    return EXIT_OK


def cmd_prepare(args) -> int:
    tau = 0.2 if args.tau is None else args.tau
    sources = _read_landmark_sources(args.landmarks)
    manifest = build_manifest(sources, tau, load_image=read_image)
    write_manifest(manifest, args.out)
    stats = corpus_stats(manifest)
    stats["skipped"] = len(sources) - len(manifest)
    _emit(stats)
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = read_manifest(args.manifest)
    _emit(corpus_stats(manifest, args.tau))
    return EXIT_OK


def _train_run(cfg: RunConfigFile, resume: str | None = None) -> tuple:
    if not cfg.train_manifest:
        raise ConfigError("no train_manifest given (config or --train-manifest)")
    manifest = read_manifest(cfg.train_manifest)
    images = _load_images(manifest, cfg.train_manifest)
    ecfg = replace(cfg.embedder, input_dims=_input_dims(images))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log_path = out / "metrics.jsonl"
    state = None
    if resume:
        state, _ = load_run(resume)
    elif log_path.exists():
        log_path.unlink()
    try:
        state = train(manifest, images, cfg.train, ecfg, state=state, log_path=log_path)
    except TrainingDiverged as exc:
        save_run(exc.state, out / "checkpoint_last_good.bin", cfg.train)
        raise
    save_run(state, out / "checkpoint.bin", cfg.train)
    return state, out


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    state, out = _train_run(cfg, args.resume)
    last = state.metrics[-1] if state.metrics else {}
    _emit({"out_dir": str(out), "epochs": state.epoch, "final": last})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    state, tcfg = load_run(args.checkpoint)
    manifest = read_manifest(args.manifest)
    if args.tau is not None:
        manifest = manifest.with_tau(args.tau)
    images = _load_images(manifest, args.manifest)
    seed = tcfg.seed if args.seed is None else args.seed
    report, rows = evaluate_state(state, manifest, images, args.n_pairs, args.folds, sub_seed(seed, "pairs"))
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.pairs_csv:
        with open(args.pairs_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "b", "same", "cosine"])
            for a, b, same, s in rows:
                w.writerow([int(a), int(b), int(same), repr(float(s))])
    _emit(report.to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    if not cfg.train_manifest:
        raise ConfigError("sweep needs --train-manifest (or a config)")
    taus = [float(t) for t in args.taus.split(",")] if args.taus else list(TABLE5_TAUS)
    ps = [float(v) for v in args.ps.split(",")] if args.ps else [cfg.train.p]
    manifest = read_manifest(cfg.train_manifest)
    rows = []
    for tau in taus:
        stats = corpus_stats(manifest, tau)
        for p in ps:
            row = {"tau": tau, "p": p, "n": stats["n"], "n_sym": stats["n_sym"], "sym_fraction": stats["sym_fraction"],
                   "cross_posed_fraction": stats["cross_posed_fraction"]}
            if args.train:
                if not cfg.test_manifest:
                    raise ConfigError("sweep --train needs a test manifest")
                run = replace(cfg, out_dir=str(Path(cfg.out_dir) / f"tau{tau:g}_p{p:g}"),
                              train=replace(cfg.train, tau=tau, p=p))
                state, _ = _train_run(run)
                test = read_manifest(cfg.test_manifest).with_tau(tau)
                report, _ = evaluate_state(state, test, _load_images(test, cfg.test_manifest), cfg.n_pairs, cfg.folds,
                                           sub_seed(cfg.train.seed, "pairs"))
                row["accuracy"] = report.accuracy
                row["sym_pair_distance"] = report.mean_sym_pair_distance
            rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.csv:
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _read_metrics(run_dir: Path) -> list[dict]:
    path = run_dir / "metrics.jsonl"
    if not path.exists():
        raise ManifestError(f"{path} not found")
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_report(args) -> int:
    csv_rows = []
    for rd in args.run_dirs:
        run_dir = Path(rd)
        metrics = _read_metrics(run_dir)
        if not metrics:
            print(f"{run_dir}: empty metrics log")
            continue
        first, last = metrics[0], metrics[-1]
        print(f"run {run_dir}  epochs={len(metrics)}")
        if "lf_init" in first:
            print(f"  initial weights: lf={first['lf_init']:.6f}")
        print(f"  epoch {first['epoch']:>3}: lf={first['lf']:.6f} lrho={first['lrho']:.6f} pair_dist={first['pair_dist_mean']:.4f}")
        print(f"  epoch {last['epoch']:>3}: lf={last['lf']:.6f} lrho={last['lrho']:.6f} pair_dist={last['pair_dist_mean']:.4f}")
        for m in metrics:
            csv_rows.append({"run": str(run_dir), **m})
    if args.csv and csv_rows:
        keys = ["run"] + list(dict.fromkeys(k for r in csv_rows for k in r if k != "run"))
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n", restval="")
            w.writeheader()
            w.writerows(csv_rows)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(tau_list: bool = False) -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    if tau_list:
        common.add_argument("--tau", dest="taus", help="comma-separated tau grid (default 0.05,0.1,0.2,0.3,0.4)")
    else:
        common.add_argument("--tau", type=float)
    common.add_argument("--p", type=float)
    common.add_argument("--margin-family")
    common.add_argument("--scale", type=float)
    common.add_argument("--margin", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--deterministic", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="symface", description="Hemi-face symmetry loss toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic face corpus")
    s.add_argument("--num-ids", type=int, default=16)
    s.add_argument("--imgs-per-id", type=int, default=40)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--holdout", type=int, default=10, help="held-out images per identity")
    s.add_argument("--frontal-fraction", type=float, default=0.5)
    s.add_argument("--min-pose", type=float, default=2.0)
    s.add_argument("--max-pose", type=float, default=5.0)
    s.add_argument("--asym-max", type=float, default=0.5)
    s.add_argument("--noise", type=float, default=6.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("score", parents=[common], help="frontness coefficient per image")
    s.add_argument("--landmarks", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("split", parents=[common], help="write padded hemi faces of symmetric images")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("prepare", parents=[common], help="build a manifest from landmarks")
    s.add_argument("--landmarks", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("stats", parents=[common], help="symmetric / cross-posed proportions")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", parents=[common], help="train an embedder")
    s.add_argument("--train-manifest")
    s.add_argument("--resume")
    s.add_argument("--no-symface", action="store_true", help="margin loss only (baseline)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="verification report for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--n-pairs", type=int, default=1200)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--out")
    s.add_argument("--pairs-csv")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[_common(tau_list=True)], help="grid over tau (and p)")
    s.add_argument("--train-manifest")
    s.add_argument("--test-manifest")
    s.add_argument("--ps", help="comma-separated p grid")
    s.add_argument("--train", action="store_true", help="train and evaluate at every grid point")
    s.add_argument("--no-symface", action="store_true")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="summarize run directories")
    s.add_argument("run_dirs", nargs="+")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_report)
    return parser


def _thread_cap(deterministic: bool) -> int | None:
    if deterministic:
        return 1
    env = os.environ.get("SYMFACE_THREADS")
    return int(env) if env else None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"symface: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_thread_cap(args.deterministic)):
            return args.func(args)
    except ConfigError as exc:
        print(f"symface: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"symface: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, CheckpointError, ProtocolError, OSError, ValueError) as exc:
        print(f"symface: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
