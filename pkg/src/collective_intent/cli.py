"""Command-line entry point.

    collective-intent gen-data --config spec.json --seed 1 --out data/
    collective-intent train    --config spec.json --data data/dataset_seed1.npz --out models/
    collective-intent eval     --config spec.json --data data/dataset_seed1.npz --checkpoints models/checkpoints --out eval/
    collective-intent sweep    --config spec.json --out results/ --deterministic
    collective-intent replay   --log results/ --episode 0 --dump-messages

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("collective_intent")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    """Bad flags, missing or malformed config files."""


class UsageParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    version: str
    out_dir: str
    started: float
    finished: float | None = None
    config_hash: str = ""
    outputs: list = field(default_factory=list)

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    def write(self) -> Path:
        path = Path(self.out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")
        return path


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- helpers

def _spec(args):
    from .harness.sweep import ExperimentSpec, SpecError, load_spec

    if args.config is None:
        spec = ExperimentSpec()
    else:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            spec = load_spec(path)
        except SpecError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if args.seed is not None:
        spec = dataclasses.replace(spec, seeds=(args.seed,))
    return spec


def _need_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _single_seed(spec) -> int:
    if len(spec.seeds) != 1:
        raise ConfigError(f"this command takes one seed; config lists {list(spec.seeds)} (use --seed)")
    return spec.seeds[0]


@contextlib.contextmanager
def _threads(deterministic: bool):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, spec, manifest):
    from .harness.dataset import save_dataset
    from .harness.sweep import dataset_for

    out = Path(args.out)
    for seed in spec.seeds:
        ds = dataset_for(spec, seed)
        p = save_dataset(ds, out / f"dataset_seed{seed}.npz")
        manifest.outputs.append(str(p))
        print(f"seed {seed}: {len(ds.episodes)} episodes "
              f"(train {len(ds.train)} / val {len(ds.val)} / test {len(ds.test)}) -> {p}")


def _load_data(args, spec, seed):
    from .harness.dataset import load_dataset
    from .harness.sweep import dataset_for

    if args.data is None:
        return dataset_for(spec, seed)
    return load_dataset(_need_file(args.data, "data"))


def cmd_train(args, spec, manifest):
    from .harness.sweep import save_checkpoints, train_checkpoints

    seed = _single_seed(spec)
    ds = _load_data(args, spec, seed)
    models = train_checkpoints(spec, ds, seed)
    d = Path(args.out) / "checkpoints"
    save_checkpoints(models, d)
    manifest.outputs.extend(str(d / f"{k}.json") for k in sorted(models))
    for k in sorted(models):
        print(f"{k}: temperature {models[k].temperature:.3f}")


def cmd_eval(args, spec, manifest):
    from .harness.sweep import load_checkpoints, run_sweep, write_results

    seed = _single_seed(spec)
    ckpt = load_checkpoints(_need_file(args.checkpoints, "checkpoints"))
    ds = _load_data(args, spec, seed)
    frames = []
    rows = run_sweep(spec, ckpt, {seed: ds}, np.float64 if args.deterministic else None, frames)
    paths = write_results(rows, args.out, frames)
    manifest.outputs.extend(str(p) for p in paths.values())
    _print_rows(rows)


def cmd_sweep(args, spec, manifest):
    from .harness.sweep import run_experiment

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    rows, _, _ = run_experiment(spec, out, deterministic=args.deterministic,
                                save_artifacts=not args.no_artifacts)
    manifest.outputs.extend(str(p) for p in sorted(out.iterdir()))
    _print_rows(rows)


def cmd_replay(args, spec, manifest):
    """Recompute one test episode of a finished sweep and check it against the frame log."""
    import csv

    from .comms import delivery_record
    from .harness.dataset import load_dataset
    from .harness.sweep import ExperimentSpec, evaluate_coordinate, frame_records, frames_used, load_checkpoints

    logdir = _need_file(args.log, "log")
    spec = ExperimentSpec.from_dict(json.loads(_need_file(logdir / "spec.json", "spec.json").read_text()))
    seed = args.seed if args.seed is not None else spec.seeds[0]
    if seed not in spec.seeds:
        raise ConfigError(f"seed {seed} is not part of the logged sweep {list(spec.seeds)}")
    ds = load_dataset(_need_file(logdir / f"test_episodes_seed{seed}.npz", "test episodes"))
    ckpt = load_checkpoints(_need_file(logdir / "checkpoints", "checkpoints"))
    if not 0 <= args.episode < len(ds.test):
        raise ConfigError(f"episode must lie in 0..{len(ds.test) - 1}")
    logged = {}
    with open(_need_file(logdir / "frames.csv", "frames.csv")) as fh:
        for rec in csv.DictReader(fh):
            if int(rec["seed"]) == seed and int(rec["episode"]) == args.episode:
                key = tuple(int(rec[c]) if c != "model" else rec[c] for c in
                            ("scenario", "robots", "obs_frames", "forecast_frames", "subsample", "model",
                             "seed", "episode", "robot", "tick"))
                logged[key] = (int(rec["label"]), int(rec["pred"]))
    swept = json.loads((logdir / "manifest.json").read_text()) if (logdir / "manifest.json").exists() else {}
    dtype = np.float64 if swept.get("config", {}).get("deterministic") else None
    counts = [m for m in spec.robot_counts if args.robots is None or m == args.robots]
    mismatches, total = 0, 0

    def dump(robot, tick, msg):
        if args.dump_messages:
            print("msg " + delivery_record(robot, tick, msg))

    for M in counts:
        for obs, n in spec.horizons:
            for sub in spec.subsamples:
                _, preds = evaluate_coordinate(spec, ds, ckpt, seed, M, obs, n, sub, dtype, dump,
                                               only_episode=args.episode)
                for model, p in sorted(preds.items()):
                    for rec in frame_records(spec.scenario, M, obs, n, frames_used(obs, sub), model, seed, p):
                        total += 1
                        want = logged.get(rec[:10])
                        same = want == rec[10:]
                        mismatches += not same
                        print(f"{model:10s} robots={M} obs={obs} n={n} robot={rec[8] + 1} tick={rec[9]} "
                              f"label={rec[10]} pred={rec[11]}" + ("" if same else f"  MISMATCH logged={want}"))
    manifest.outputs.append(f"{total} frames replayed, {mismatches} mismatches")
    print(f"replayed {total} frames, {mismatches} mismatches")
    if total and mismatches:
        raise RuntimeError(f"{mismatches} of {total} replayed frames differ from the log")


def _print_rows(rows):
    for r in rows:
        extra = "" if r.consensus_acc is None else f" disagreement {r.disagreement_rate:.3f}"
        print(f"scenario {r.scenario} robots {r.robots} obs {r.obs_frames} n {r.forecast_frames} "
              f"frames {r.subsample} seed {r.seed} {r.model:10s} acc_t {r.acc_t:.3f} "
              f"acc_h {r.acc_horizon:.3f}{extra}")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "replay": cmd_replay}


def build_parser() -> argparse.ArgumentParser:
    common = UsageParser(add_help=False)
    common.add_argument("--config", help="experiment spec (JSON, schema_version required)")
    common.add_argument("--seed", type=int, help="replace the spec's seed list with this seed")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS and float64 inference")
    common.add_argument("-v", "--verbose", action="store_true")
    p = UsageParser(prog="collective-intent", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=UsageParser, metavar="COMMAND")
    sub.required = True
    sub.add_parser("gen-data", parents=[common], help="simulate and save datasets")
    t = sub.add_parser("train", parents=[common], help="train every model the spec needs")
    t.add_argument("--data", help="dataset .npz from gen-data (default: simulate)")
    e = sub.add_parser("eval", parents=[common], help="evaluate saved checkpoints")
    e.add_argument("--data", help="dataset .npz from gen-data (default: simulate)")
    e.add_argument("--checkpoints", help="directory of checkpoint files")
    s = sub.add_parser("sweep", parents=[common], help="data, training and evaluation for a full spec")
    s.add_argument("--no-artifacts", action="store_true", help="skip saving checkpoints and test episodes")
    r = sub.add_parser("replay", parents=[common], help="re-run one test episode of a sweep")
    r.add_argument("--log", help="sweep output directory")
    r.add_argument("--episode", type=int, default=0, help="index into the test split")
    r.add_argument("--robots", type=int, help="only this robot count")
    r.add_argument("--dump-messages", action="store_true", help="print every delivered message")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        spec = _spec(args)
        config = {**spec.to_dict(), "deterministic": bool(args.deterministic)}
        manifest = RunManifest(args.command, config, args.seed, __version__, str(args.out), time.time())
        with _threads(args.deterministic):
            COMMANDS[args.command](args, spec, manifest)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest.finished = time.time()
    manifest.write()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
