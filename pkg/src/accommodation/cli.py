"""Command-line front end.

Subcommands: ``gen-corpus``, ``train``, ``matrix``, ``probe``, ``report``.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from .corpus import DEFAULT_V, gen_corpus, gen_inventory, read_corpus, split_sizes, write_corpus
from .models import ModelConfig, load_checkpoint
from .plant import SPEAKER_LAMBDAS, SpeakerPlant, speaker
from .probes import (
    N_BINS,
    OFFSET_MAX,
    CorrectnessCurve,
    probe_articulatory_recovery,
    probe_correctness,
    probe_forward_accuracy,
    write_correctness,
    write_offset_probe,
)
from .rng import RngStream
from .trainer import METRICS_HEADER, TrainConfig, read_metrics, run_training

log = logging.getLogger("accommodation")

EXIT_USAGE = 1
EXIT_RUNTIME = 2
RUN_ARTIFACTS = ("config.json", "metrics.csv", "correctness.csv", "epoch-1.ckpt", "best.ckpt", "final.ckpt")
PROBE_DEFAULTS = {"offset_max": OFFSET_MAX, "bins": N_BINS, "offsets_per_frame": 4, "probe_seed": 0}
# ModelConfig.init_seed follows the training seed unless set explicitly.
MODEL_KEYS = [f.name for f in fields(ModelConfig)]
TRAIN_KEYS = [f.name for f in fields(TrainConfig)]


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_overrides(p: argparse.ArgumentParser, probe: bool = False) -> None:
    g = p.add_argument_group("training and model settings (flags override --config)")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        kind = _bool if f.type in ("bool", bool) else type(f.default)
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None,
                       help=f"default: {f.default}")
    for f in fields(ModelConfig):
        default = "profile width" if f.name == "hidden_width" else ("training seed" if f.name == "init_seed" else f.default)
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=type(f.default), default=None,
                       help=f"default: {default}")
    if probe:
        _add_probe_flags(p)
    p.add_argument("--config", type=Path, help="JSON object of settings; keys as the long flags with underscores")


def _add_probe_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("probe settings")
    g.add_argument("--offset-max", dest="offset_max", type=float, default=None, help=f"default: {OFFSET_MAX}")
    g.add_argument("--bins", type=int, default=None, help=f"default: {N_BINS}")
    g.add_argument("--offsets-per-frame", dest="offsets_per_frame", type=int, default=None,
                   help=f"default: {PROBE_DEFAULTS['offsets_per_frame']}")
    g.add_argument("--probe-seed", dest="probe_seed", type=int, default=None, help="default: 0")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="accommodation", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus for one speaker")
    p.add_argument("--speaker", required=True, help=f"one of {sorted(SPEAKER_LAMBDAS)} or a custom id with --lambda")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="vocal-tract scale for a custom speaker")
    p.add_argument("--n", type=int, required=True, help="number of utterances")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-targets", dest="n_targets", type=int, default=DEFAULT_V, help=f"default: {DEFAULT_V}")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="one accommodation training run")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None, help="default: 0")
    p.add_argument("--agent", default="RS", help="speaker whose plant the learner uses (default: RS)")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--force", action="store_true", help="replace artifacts in a non-empty run directory")
    _add_overrides(p)

    p = sub.add_parser("matrix", help="speakers x seeds experiment matrix")
    p.add_argument("--speakers", nargs="+", default=["RS", "S1", "S2"], help="default: RS S1 S2")
    p.add_argument("--seeds", nargs="+", type=int, default=[1, 2, 3], help="default: 1 2 3")
    p.add_argument("--n", type=int, default=100, help="utterances per corpus (default: 100)")
    p.add_argument("--corpus-seed", dest="corpus_seed", type=int, default=7, help="default: 7")
    p.add_argument("--agent", default="RS", help="default: RS")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default: 1)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true")
    _add_overrides(p, probe=True)

    p = sub.add_parser("probe", help="offset probe and recovery diagnostic for a finished run")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--config", type=Path, help="JSON object of probe settings")
    _add_probe_flags(p)

    p = sub.add_parser("report", help="concatenate run metrics into one table")
    p.add_argument("runs", nargs="*", type=Path, help="run directories")
    p.add_argument("--out", type=Path, help="output CSV (default: stdout)")
    return parser


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------


def _load_config_file(path: Path | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _settings(args, allowed: list[str]) -> dict:
    merged = _load_config_file(getattr(args, "config", None), set(allowed))
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _configs(settings: dict, seed: int) -> tuple[TrainConfig, ModelConfig]:
    train_kw = {k: v for k, v in settings.items() if k in TRAIN_KEYS}
    train_kw["seed"] = seed
    model_kw = {k: v for k, v in settings.items() if k in MODEL_KEYS}
    try:
        tc = TrainConfig(**train_kw)
        model_kw.setdefault("init_seed", seed)
        mc = ModelConfig.for_profile(tc.profile, **{k: v for k, v in model_kw.items() if k != "hidden_width"})
        if "hidden_width" in model_kw:
            mc = ModelConfig(**{**mc.__dict__, "hidden_width": model_kw["hidden_width"]})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return tc, mc


def _probe_settings(settings: dict) -> dict:
    return {k: settings.get(k, v) for k, v in PROBE_DEFAULTS.items()}


def _agent(speaker_id: str) -> SpeakerPlant:
    try:
        return speaker(speaker_id)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _prepare_run_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise RuntimeFailure(f"run directory {path} is not empty (use --force to replace its artifacts)")
        for name in RUN_ARTIFACTS:
            (path / name).unlink(missing_ok=True)
        shutil.rmtree(path / "probes", ignore_errors=True)
    path.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    if args.lam is not None:
        try:
            sp = SpeakerPlant(args.speaker, args.lam)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        sp = _agent(args.speaker)
    n_train, n_val, n_test = split_sizes(args.n)
    if min(n_train, n_val, n_test) < 1:
        raise UsageError(f"split would be empty for --n {args.n} (train/val/test = {n_train}/{n_val}/{n_test})")
    corpus = gen_corpus(sp, args.n, args.seed, n_targets=args.n_targets)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, args.out)
    print(f"wrote {args.out}: speaker={sp.speaker_id} n={args.n} train={n_train} val={n_val} test={n_test}")
    return 0


def train_run(corpus_path: Path, out: Path, seed: int, agent_id: str, settings: dict, force: bool) -> dict:
    """Train one run into ``out``; returns a summary row."""
    tc, mc = _configs(settings, seed)
    agent = _agent(agent_id)
    corpus = read_corpus(corpus_path)
    _prepare_run_dir(out, force)
    inventory = gen_inventory(corpus.seed)
    test = corpus.subset("test")
    curve = CorrectnessCurve(corpus.speaker_id, seed)

    def on_epoch(epoch, f, g):
        curve.add(epoch, probe_correctness(g, agent, test, inventory))

    record = run_training(
        corpus, agent, tc, mc, run_dir=out, on_epoch=on_epoch,
        extra_config={"corpus_path": str(Path(corpus_path).resolve())},
    )
    write_correctness([curve], out / "correctness.csv")
    final = record.final
    return {
        "speaker": corpus.speaker_id, "seed": seed, "epochs": len(record.metrics), "best_epoch": record.best_epoch,
        "rmse_forward": final.rmse_forward, "rmse_inverse": final.rmse_inverse,
        "correctness_untrained": curve.values[0], "correctness_final": curve.values[-1],
    }


def cmd_train(args) -> int:
    settings = _settings(args, TRAIN_KEYS + MODEL_KEYS)
    seed = args.seed if args.seed is not None else settings.pop("seed", 0)
    if not args.corpus.exists():
        raise RuntimeFailure(f"corpus file {args.corpus} not found")
    row = train_run(args.corpus, args.out, seed, args.agent, settings, args.force)
    print(
        f"{args.out}: {row['epochs']} epochs, best {row['best_epoch']}, "
        f"rmse_forward={row['rmse_forward']:.4f} rmse_inverse={row['rmse_inverse']:.4f} "
        f"correctness={row['correctness_final']:.3f}"
    )
    return 0


def run_probes(run_dir: Path, settings: dict) -> dict:
    """Offset probes (epoch-1 and final forward models) and recovery diagnostic."""
    ps = _probe_settings(settings)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise RuntimeFailure(f"{run_dir} has no config.json")
    snapshot = json.loads(cfg_path.read_text())
    missing = [n for n in ("epoch-1.ckpt", "final.ckpt") if not (run_dir / n).exists()]
    if missing:
        raise RuntimeFailure(f"{run_dir} is missing checkpoints: {', '.join(missing)}")
    corpus = read_corpus(snapshot["corpus_path"])
    agent = SpeakerPlant(snapshot["agent"]["speaker"], snapshot["agent"]["lambda"])
    test = corpus.subset("test")
    f1, _, _ = load_checkpoint(run_dir / "epoch-1.ckpt")
    ff, gf, _ = load_checkpoint(run_dir / "final.ckpt")
    results = []
    for tag, f in (("epoch-1", f1), ("final", ff)):
        results.append(probe_forward_accuracy(
            gf, f, agent, test, ps["offsets_per_frame"], RngStream(ps["probe_seed"], "probe"),
            max_offset=ps["offset_max"], n_bins=ps["bins"], epoch_tag=tag,
        ))
    probe_dir = run_dir / "probes"
    probe_dir.mkdir(exist_ok=True)
    write_offset_probe(results, probe_dir / "offset_bins.csv", probe_dir / "offset_raw.csv")
    summary = {
        "spearman_final": results[1].spearman(),
        "nearest_bin_error_epoch1": results[0].nearest_bin_error,
        "nearest_bin_error_final": results[1].nearest_bin_error,
    }
    if corpus.speaker_id == agent.speaker_id and all(u.artic is not None for u in test):
        summary["articulatory_rmse"] = probe_articulatory_recovery(gf, test)
        zero = [u.artic for u in test]
        summary["articulatory_rmse_zero_baseline"] = float(
            (sum(float((a**2).sum()) for a in zero) / sum(a.size for a in zero)) ** 0.5
        )
    (probe_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_probe(args) -> int:
    settings = _settings(args, list(PROBE_DEFAULTS))
    summary = run_probes(args.run, settings)
    print(
        f"{args.run}: spearman(final)={summary['spearman_final']:.3f} "
        f"nearest-bin error epoch-1={summary['nearest_bin_error_epoch1']:.4f} "
        f"final={summary['nearest_bin_error_final']:.4f}"
    )
    return 0


def _matrix_cell(job) -> dict:
    corpus_path, out, seed, agent, settings, force = job
    try:
        row = train_run(corpus_path, out, seed, agent, settings, force)
        row.update(run_probes(out, settings))
        row.pop("articulatory_rmse", None)
        row.pop("articulatory_rmse_zero_baseline", None)
        row["status"] = "ok"
    except Exception as exc:  # reported per cell; the matrix keeps going
        row = {"speaker": Path(corpus_path).stem, "seed": seed, "status": f"failed: {exc}"}
        log.debug("cell failed:\n%s", traceback.format_exc())
    return row


SUMMARY_COLUMNS = [
    "speaker", "seed", "epochs", "best_epoch", "rmse_forward", "rmse_inverse",
    "correctness_untrained", "correctness_final", "spearman_final",
    "nearest_bin_error_epoch1", "nearest_bin_error_final", "status",
]


def cmd_matrix(args) -> int:
    settings = _settings(args, TRAIN_KEYS + MODEL_KEYS + list(PROBE_DEFAULTS))
    _configs(settings, 0)  # validate before doing any work
    for sid in args.speakers + [args.agent]:
        _agent(sid)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    corpora = args.out / "corpora"
    corpora.mkdir(parents=True, exist_ok=True)
    jobs = []
    for sid in args.speakers:
        path = corpora / f"{sid}.corpus"
        if not path.exists():
            write_corpus(gen_corpus(speaker(sid), args.n, args.corpus_seed), path)
        for seed in args.seeds:
            jobs.append((path, args.out / f"{sid}-seed{seed}", seed, args.agent, settings, args.force))
    if args.jobs == 1:
        rows = [_matrix_cell(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_matrix_cell, jobs))
    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    for row in rows:
        if row["status"] == "ok":
            print(f"{row['speaker']:>4} seed {row['seed']}: correctness {row['correctness_final']:.3f} "
                  f"rmse_inverse {row['rmse_inverse']:.4f} ({row['epochs']} epochs)")
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"FAILED {r['speaker']} seed {r['seed']}: {r['status']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else 0


REPORT_COLUMNS = ["speaker", "seed"] + METRICS_HEADER


def cmd_report(args) -> int:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for run in args.runs:
            try:
                snapshot = json.loads((run / "config.json").read_text())
                rows = read_metrics(run / "metrics.csv")
            except OSError as exc:
                raise RuntimeFailure(f"cannot read run {run}: {exc}") from None
            for row in rows:
                w.writerow([snapshot["corpus"]["speaker"], snapshot["train"]["seed"]]
                           + [row["epoch"]] + [f"{row[k]:.17g}" for k in METRICS_HEADER[1:]])
    finally:
        if args.out:
            out.close()
    return 0


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "matrix": cmd_matrix,
    "probe": cmd_probe,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and argument errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"accommodation {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeFailure as exc:
        print(f"accommodation {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"accommodation {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
