"""Command-line pipeline driver.

Every subcommand operates on a run directory (`--run DIR`) holding the
artifacts at fixed paths; individual input/output paths can be overridden
per flag. Stages hash their inputs and skip recomputation when nothing
changed; `--force` bypasses the cache. Failures print a single
machine-parsable line `error: <code>: <message>` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .clustering import cluster_at_quantile
from .dataset import (
    build_corpus,
    build_downstream,
    load_corpus,
    load_trajectories,
    save_corpus,
    save_trajectories,
)
from .extract import RepresentationSet, extract_all
from .heatmap import render_assignment
from .metrics import metrics_report
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .simulate import (
    ScenarioConfig,
    default_world,
    export_logs,
    import_logs,
    save_players,
    simulate,
)
from .store import RunStore, hash_inputs
from .training import TrainConfig, TrainingDiverged, train
from .vocab import Vocabulary, build_vocabulary
from .world import WorldConfig, canonical_json
from .clustering import ClusterAssignment

# Hyperparameter preset named after the best-performing published grid row.
PRESETS = {
    "dagger": {"d_model": 256, "d_hid": 1024, "margin": 0.5, "mask_rate": 0.2},
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _store(args) -> RunStore:
    if not args.run:
        raise CliError("missing-run", "this subcommand requires --run DIR")
    return RunStore(args.run)


def _require_file(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise CliError("missing-input", f"{path} does not exist; {hint}")
    return Path(path)


def cmd_simulate(args) -> int:
    store = RunStore(args.run)
    scenario = (
        ScenarioConfig.load(args.scenario) if args.scenario else ScenarioConfig()
    )
    world = WorldConfig.load(args.world) if args.world else default_world()
    inputs = hash_inputs(
        [], {"seed": args.seed, "scenario": scenario.to_json(), "world": world.to_json()}
    )
    if not args.force and store.is_current(store.players_path, inputs):
        print(f"simulate: up-to-date ({store.run_dir})")
        return 0
    store.write_run_meta(seed=args.seed, note=args.note)
    world.save(store.world_path)
    scenario.save(store.scenario_path)
    result = simulate(world, scenario, args.seed)
    save_players(result.profiles, result.access, store.players_path)
    paths = export_logs(result.logs, store.logs_dir)
    store.write_meta(store.players_path, inputs, "simulate")
    n_lines = sum(1 for p in paths for _ in open(p))
    print(
        f"simulate: {len(result.profiles)} players, {scenario.n_days} days, "
        f"{n_lines} log lines -> {store.logs_dir}"
    )
    return 0


def cmd_prep(args) -> int:
    store = _store(args)
    logs_dir = Path(args.logs) if args.logs else store.logs_dir
    world_path = Path(args.world) if args.world else store.world_path
    _require_file(world_path, "run simulate first or pass --world")
    _require_file(logs_dir, "run simulate first or pass --logs")
    seed = args.seed if args.seed is not None else store.seed
    log_files = sorted(logs_dir.glob("day_*.csv"))
    inputs = hash_inputs(
        log_files + [world_path], {"mask_rate": args.mask_rate, "seed": seed}
    )
    if not args.force and store.is_current(store.corpus_path, inputs):
        print(f"prep: up-to-date ({store.corpus_path})")
        return 0
    world = WorldConfig.load(world_path)
    logs = import_logs(logs_dir)
    vocabulary = build_vocabulary((lg.locations() for lg in logs), world)
    vocabulary.save(store.vocab_path)
    corpus = build_corpus(logs, world, vocabulary, args.mask_rate, seed)
    save_corpus(corpus, store.corpus_path, args.mask_rate, vocabulary.sha256())
    trajs = [build_downstream(lg, world, vocabulary) for lg in logs]
    save_trajectories(trajs, store.trajs_path, vocabulary.sha256())
    store.write_meta(store.corpus_path, inputs, "prep")
    print(
        f"prep: vocab zones={len(vocabulary.zones)} cells={len(vocabulary.cells)}, "
        f"{len(corpus)} triplets, {len(trajs)} trajectories"
    )
    return 0


def cmd_train(args) -> int:
    store = _store(args)
    corpus_path = Path(args.corpus) if args.corpus else store.corpus_path
    vocab_path = Path(args.vocab) if args.vocab else store.vocab_path
    _require_file(corpus_path, "run prep first or pass --corpus")
    _require_file(vocab_path, "run prep first or pass --vocab")
    seed = args.seed if args.seed is not None else store.seed

    preset = PRESETS[args.preset]
    d_model = args.d_model if args.d_model is not None else preset["d_model"]
    d_hid = args.d_hid if args.d_hid is not None else preset["d_hid"]
    margin = args.margin if args.margin is not None else preset["margin"]
    mask_rate = (
        args.mask_rate if args.mask_rate is not None else preset["mask_rate"]
    )
    vocabulary = Vocabulary.load(vocab_path)
    model_config = ModelConfig(
        zone_vocab_size=vocabulary.zone_vocab_size,
        cell_vocab_size=vocabulary.cell_vocab_size,
        d_model=d_model,
        d_hid=d_hid,
        n_layers=args.layers,
        n_heads=args.heads,
        margin=margin,
        mask_rate=mask_rate,
        dropout=args.dropout,
    )
    train_config = TrainConfig(
        max_epochs=args.epochs,
        min_epochs=min(args.min_epochs, args.epochs),
        patience=args.patience,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=seed,
        holdout_fraction=args.holdout,
    )
    inputs = hash_inputs(
        [corpus_path, vocab_path],
        {"model": model_config.to_json(), "train": train_config.to_json()},
    )
    if not args.force and store.is_current(store.checkpoint_path, inputs):
        print(f"train: up-to-date ({store.checkpoint_path})")
        return 0

    corpus, _header = load_corpus(corpus_path)
    model = build_model(model_config, seed)

    def progress(stats):
        print(
            f"epoch {stats.epoch}/{train_config.max_epochs} "
            f"loss={stats.loss:.4f} triplet={stats.triplet_loss:.4f} "
            f"mcp={stats.mcp_loss:.4f} acc={stats.mcp_accuracy:.3f}",
            flush=True,
        )

    try:
        model, report = train(corpus, model, train_config, progress=progress)
    except TrainingDiverged as exc:
        raise CliError("diverged", str(exc))
    save_checkpoint(
        store.checkpoint_path,
        model,
        vocabulary.sha256(),
        extra={"train_config": train_config.to_json()},
    )
    store.train_report_path.write_text(canonical_json(report.to_json()))
    store.write_meta(store.checkpoint_path, inputs, "train")
    held = report.heldout or {}
    print(
        f"train: best_epoch={report.best_epoch} "
        f"loss={report.epochs[report.best_epoch - 1].loss:.4f} "
        f"heldout_pos_cos={held.get('pos_cosine')} "
        f"heldout_mcp_acc={held.get('mcp_accuracy')} -> {store.checkpoint_path}"
    )
    return 0


def cmd_embed(args) -> int:
    store = _store(args)
    ckpt_path = Path(args.model) if args.model else store.checkpoint_path
    trajs_path = Path(args.trajs) if args.trajs else store.trajs_path
    vocab_path = Path(args.vocab) if args.vocab else store.vocab_path
    _require_file(ckpt_path, "run train first or pass --model")
    _require_file(trajs_path, "run prep first or pass --trajs")
    inputs = hash_inputs([ckpt_path, trajs_path], {})
    if not args.force and store.is_current(store.reps_path, inputs):
        print(f"embed: up-to-date ({store.reps_path})")
        return 0
    expected = Vocabulary.load(vocab_path).sha256() if vocab_path.exists() else None
    try:
        model, header = load_checkpoint(ckpt_path, expected_vocab_sha256=expected)
    except ValueError as exc:
        raise CliError("vocab-mismatch", str(exc))
    trajs, traj_header = load_trajectories(trajs_path)
    if expected is not None and traj_header.get("vocab_sha256") not in ("", expected):
        raise CliError(
            "vocab-mismatch",
            f"{trajs_path} was tokenized with vocabulary "
            f"{traj_header['vocab_sha256'][:12]}..., expected {expected[:12]}...",
        )
    reps, skipped = extract_all(trajs, model)
    reps.save(store.reps_path, vocab_sha256=header["vocab_sha256"])
    reps.save_csv(store.reps_csv_path)
    store.write_meta(store.reps_path, inputs, "embed")
    for pid, day, reason in skipped:
        print(f"embed: skipped player {pid} day {day}: {reason}", file=sys.stderr)
    print(
        f"embed: {len(reps.keys)} vectors dim={reps.vectors.shape[1]} "
        f"-> {store.reps_path}"
    )
    return 0


def cmd_cluster(args) -> int:
    store = _store(args)
    reps_path = Path(args.reps) if args.reps else store.reps_path
    _require_file(reps_path, "run embed first or pass --reps")
    q = _check_q(args.q)
    out = Path(args.out) if args.out else store.clusters_path(q)
    inputs = hash_inputs(
        [reps_path],
        {"q": q, "min_samples": args.min_samples, "knn_mode": args.knn_mode},
    )
    if not args.force and store.is_current(out, inputs):
        print(f"cluster: up-to-date ({out})")
        return 0
    reps = RepresentationSet.load(reps_path)
    assignment = cluster_at_quantile(
        reps, q, min_samples=args.min_samples, knn_mode=args.knn_mode
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    assignment.save(out)
    store.write_meta(out, inputs, "cluster")
    print(
        f"cluster: q={q} epsilon={assignment.epsilon:.6f} "
        f"clusters={len(assignment.clusters())} "
        f"detecting={assignment.detecting_count()} -> {out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    store = _store(args)
    q = _check_q(args.q)
    assignment_path = Path(args.assignment) if args.assignment else store.clusters_path(q)
    reps_path = Path(args.reps) if args.reps else store.reps_path
    trajs_path = Path(args.trajs) if args.trajs else store.trajs_path
    players_path = Path(args.access) if args.access else store.players_path
    for path, hint in (
        (assignment_path, "run cluster first or pass --assignment"),
        (reps_path, "run embed first or pass --reps"),
        (trajs_path, "run prep first or pass --trajs"),
        (players_path, "run simulate first or pass --access"),
    ):
        _require_file(path, hint)
    seed = args.seed if args.seed is not None else store.seed
    out = Path(args.out) if args.out else store.metrics_path(q)
    inputs = hash_inputs(
        [assignment_path, reps_path, trajs_path, players_path], {"seed": seed}
    )
    if not args.force and store.is_current(out, inputs):
        print(f"evaluate: up-to-date ({out})")
        return 0
    from .simulate import load_players  # local import keeps startup light

    assignment = ClusterAssignment.load(assignment_path)
    reps = RepresentationSet.load(reps_path)
    trajs, _h = load_trajectories(trajs_path)
    world = store.world()
    cells = {t.key: t.cells_by_minute(world) for t in trajs}
    profiles, access = load_players(players_path)
    report = metrics_report(assignment, reps, cells, access, profiles, seed=seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(canonical_json(report))
    store.write_meta(out, inputs, "evaluate")
    print(
        f"evaluate: pos_mean={report['pos_mean']} neg_mean={report['neg_mean']} "
        f"access_homogeneity={report['access_homogeneity']} "
        f"detecting={report['detecting_count']} -> {out}"
    )
    return 0


def cmd_heatmap(args) -> int:
    store = _store(args)
    q = _check_q(args.q)
    assignment_path = Path(args.assignment) if args.assignment else store.clusters_path(q)
    trajs_path = Path(args.trajs) if args.trajs else store.trajs_path
    world_path = Path(args.world) if args.world else store.world_path
    for path, hint in (
        (assignment_path, "run cluster first or pass --assignment"),
        (trajs_path, "run prep first or pass --trajs"),
        (world_path, "run simulate first or pass --world"),
    ):
        _require_file(path, hint)
    out = Path(args.out) if args.out else store.heatmap_dir(q) / "clusters.png"
    noise_out = out.parent / "noise.png"
    inputs = hash_inputs([assignment_path, trajs_path, world_path], {})
    if not args.force and store.is_current(out, inputs):
        print(f"heatmap: up-to-date ({out})")
        return 0
    assignment = ClusterAssignment.load(assignment_path)
    trajs, _h = load_trajectories(trajs_path)
    world = WorldConfig.load(world_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = render_assignment(
        assignment, {t.key: t for t in trajs}, world, out, noise_out
    )
    store.write_meta(out, inputs, "heatmap")
    print(f"heatmap: {written['image']} (+noise, +sidecars)")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    root = Path(args.root if args.root else args.run)
    if not root.exists():
        raise CliError("missing-input", f"{root} does not exist")
    console = Path(args.console) if args.console else None
    app = create_app(root, console_dir=console)
    print(f"serving {root} on http://{args.host}:{args.port}", flush=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_demo(args) -> int:
    """Small end-to-end run for trying the review console.

    Bot groups here farm in tight lockstep (small fields, short login
    stagger, few solo excursions), so even the strict default radius
    quantile q=0.05 already surfaces a cluster worth reviewing.
    """
    run = args.run
    scenario = ScenarioConfig(
        n_benign=30,
        n_groups=3,
        group_size_min=5,
        group_size_max=8,
        n_days=1,
        benign_anchor_pool=12,
        bot_login_window=5,
        bot_logout_window=5,
        bot_field_radius=8,
        bot_supply_runs_mean=0.2,
        bot_death_prob=0.05,
    )
    store = RunStore(run)
    store.run_dir.mkdir(parents=True, exist_ok=True)
    scenario_path = store.run_dir / "scenario.demo.json"
    scenario.save(scenario_path)
    rc = main(
        [
            "simulate",
            "--run",
            run,
            "--seed",
            str(args.seed),
            "--scenario",
            str(scenario_path),
            "--note",
            "demo run",
        ]
    )
    rc = rc or main(["prep", "--run", run])
    rc = rc or main(
        [
            "train",
            "--run",
            run,
            "--d-model",
            "32",
            "--d-hid",
            "64",
            "--layers",
            "2",
            "--heads",
            "4",
            "--epochs",
            "5",
            "--min-epochs",
            "5",
            "--batch-size",
            "32",
        ]
    )
    rc = rc or main(["embed", "--run", run])
    rc = rc or main(["cluster", "--run", run, "--q", "0.05"])
    rc = rc or main(["evaluate", "--run", run, "--q", "0.05"])
    rc = rc or main(["heatmap", "--run", run, "--q", "0.05"])
    if rc == 0:
        print(f"demo: run ready at {run}")
    return rc


def _check_q(q: float) -> float:
    if not 0.0 < q <= 1.0:
        raise CliError("invalid-q", f"q must be in (0, 1], got {q}")
    return q


def _add_run(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run", help="run directory holding the pipeline artifacts")
    p.add_argument(
        "--force", action="store_true", help="recompute even if inputs are unchanged"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajmine",
        description="co-movement mining over game telemetry",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a ground-truthed synthetic run")
    _add_run(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", help="scenario config JSON (defaults built in)")
    p.add_argument("--world", help="world config JSON (defaults built in)")
    p.add_argument("--note", default="")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prep", help="logs -> vocabulary, triplet corpus, trajectories")
    _add_run(p)
    p.add_argument("--logs", help="directory of day_<d>.csv files")
    p.add_argument("--world", help="world config JSON")
    p.add_argument("--mask-rate", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="optimize the trajectory encoder")
    _add_run(p)
    p.add_argument("--corpus", help="triplet corpus file")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument(
        "--preset", choices=sorted(PRESETS), default="dagger",
        help="hyperparameter preset (default: dagger)",
    )
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--d-hid", type=int, default=None)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--mask-rate", type=float, default=None)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=200, help="epoch ceiling")
    p.add_argument("--min-epochs", type=int, default=70, help="early-stop floor")
    p.add_argument("--patience", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="trajectories -> representation vectors")
    _add_run(p)
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--trajs", help="trajectory container file")
    p.add_argument("--vocab", help="vocabulary file (hash check)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="representations -> cluster assignment")
    _add_run(p)
    p.add_argument("--reps", help="representation container file")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--min-samples", type=int, default=4)
    p.add_argument("--knn-mode", choices=["all", "kth"], default="all")
    p.add_argument("--out", help="assignment JSON output path")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="assignment -> quality metrics report")
    _add_run(p)
    p.add_argument("--assignment", help="cluster assignment JSON")
    p.add_argument("--reps", help="representation container file")
    p.add_argument("--trajs", help="trajectory container file")
    p.add_argument("--access", help="players/access JSON")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="metrics JSON output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("heatmap", help="assignment -> trajectory heatmap images")
    _add_run(p)
    p.add_argument("--assignment", help="cluster assignment JSON")
    p.add_argument("--trajs", help="trajectory container file")
    p.add_argument("--world", help="world config JSON")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--out", help="main image output path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("serve", help="HTTP review API over a directory of runs")
    p.add_argument("--root", help="directory containing run directories")
    p.add_argument("--run", help="single run directory (alternative to --root)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--console", help="static console build to mount at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demo", help="build a small end-to-end run quickly")
    _add_run(p)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: invalid-input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
