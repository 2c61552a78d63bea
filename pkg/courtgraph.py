"""
courtgraph command line

Subcommands bind ingestion, the walk-forward sweep, evaluation, intransitivity
analysis, betting simulation, Pareto extraction and the self-test suite into
reproducible runs driven by one configuration file. Every artifact-producing
command writes a manifest.json next to its outputs.

Exit codes: 0 success, 1 unexpected error, 2 usage error, 3 missing config
file, 4 missing input file.
"""

import argparse
import hashlib
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from baselines import BaselineParams
from betting import StrategyConfig, betting_report, simulate, threshold_search, write_bets
from config import ConfigManager
from evaluation import EvaluationParams, evaluate_ledger, write_report
from events import event_bus
from graphs import GraphParams
from ingest import Tour, filter_tiers, load_player_attributes, load_player_map, parse_match_files, read_match_ledger, \
    write_match_ledger, ParseReport
from intransitivity import SCORE_COLUMNS, IntransitivityParams, summarise_intransitivity, write_scores
from magnet import MagnetHyperparams
from pipeline import ModelContext, WalkForwardConfig, pareto_front, read_prediction_ledger, read_trials, \
    walk_forward_run, write_prediction_ledger

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_CONFIG = 3
EXIT_MISSING_INPUT = 4

DEFAULT_CONFIG_FILE = "courtgraph_config.json"
PERIODS = ("validation", "test", "all")


def setup_logging(verbose=False):
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(directory: Path, command: str, argv: Sequence[str], cfg: ConfigManager,
                   inputs: Sequence[Path], artifacts: Sequence[Path], events: Sequence[str] = ()) -> Path:
    """Record what a run read and wrote so it can be repeated"""
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": cfg.config_hash(),
        "config": cfg.config,
        "seed": cfg.seed,
        "inputs": {str(p): file_digest(p) for p in sorted(set(inputs), key=str)},
        "artifacts": sorted(str(p) for p in artifacts),
        "events": dict(sorted(Counter(events).items())),
    }
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    logging.info(f"Manifest written to {path}")
    return path


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"Missing {what}: expected {path}")
    return path


def _period_rows(frame: pd.DataFrame, period: str) -> pd.DataFrame:
    rows = frame if period == "all" else frame[frame["period"] == period]
    if rows.empty:
        raise ValueError(f"Prediction ledger has no rows for period {period!r}")
    return rows


def _ledger_path(args: argparse.Namespace, output_dir: Path) -> Path:
    return Path(args.ledger) if args.ledger else output_dir / "walkforward" / "predictions.csv"


# ============================================================================
# Commands
# ============================================================================

def cmd_ingest(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> List[Path]:
    data = cfg.section("data")
    raw_dir = Path(args.raw_dir or data["raw_dir"])
    ledger_dir = Path(args.ledger_dir or data["ledger_dir"])
    files = sorted(raw_dir.glob("*.csv")) if raw_dir.is_dir() else []
    if not files:
        raise FileNotFoundError(f"Missing raw match files: expected *.csv under {raw_dir}")

    map_file = args.player_map or data.get("player_map")
    player_map = load_player_map(map_file) if map_file else None
    report = ParseReport(source=str(raw_dir))
    records = parse_match_files([str(f) for f in files], player_map=player_map, strict=args.strict, report=report)
    if not args.all_tiers:
        records = filter_tiers(records)
    event_bus.publish_event("ingest.parsed", {"files": len(files), "matches": len(records)}, source="cli")

    artifacts = []
    for tour in Tour:
        tour_records = [r for r in records if r.tour == tour]
        if tour_records:
            artifacts.append(write_match_ledger(tour_records, str(ledger_dir / f"matches_{tour.value}.csv")))
            logging.info(f"{tour.value}: {len(tour_records)} matches")
    report_path = output_dir / "ingest" / "parse_report.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    artifacts.append(report_path)
    if report.rejected:
        logging.warning(f"{len(report.rejected)} rows rejected; see {report_path}")
    inputs = files + ([Path(map_file)] if map_file else [])
    write_manifest(output_dir / "ingest", "ingest", args.argv, cfg, inputs, artifacts, args.events)
    return artifacts


def model_context(cfg: ConfigManager) -> ModelContext:
    return ModelContext(
        graph=GraphParams.from_config(cfg.section("graph")),
        hyperparams=MagnetHyperparams.from_config(cfg.section("model")),
        baselines=BaselineParams.from_config(cfg.section("baselines")),
        intransitivity=IntransitivityParams.from_config(cfg.section("intransitivity")),
    )


def cmd_walkforward(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> List[Path]:
    data, section = cfg.section("data"), cfg.section("walkforward")
    if args.checkpoints:
        section["save_checkpoints"] = True
    ledger_dir = Path(args.ledger_dir or data["ledger_dir"])
    tours = [Tour(t) for t in (args.tours or section["tours"])]
    context = model_context(cfg)
    out = output_dir / "walkforward"

    inputs, jobs = [], {}
    for tour in tours:
        ledger = _require(ledger_dir / f"matches_{tour.value}.csv", f"{tour.value} match ledger")
        attributes = _require(Path(data["attributes"][tour.value]), f"{tour.value} player attributes")
        inputs.extend([ledger, attributes])
        jobs[tour] = (ledger, attributes)

    def run_tour(tour: Tour):
        ledger, attributes = jobs[tour]
        config = WalkForwardConfig.from_config(section, cfg.section("model"), tour, cfg.seed)
        return walk_forward_run(config, read_match_ledger(str(ledger)), load_player_attributes(str(attributes)),
                                context, checkpoint_dir=str(out / "checkpoints"))

    # tours are independent pipelines
    with ThreadPoolExecutor(max_workers=len(tours)) as executor:
        results = dict(zip(tours, executor.map(run_tour, tours)))

    out.mkdir(parents=True, exist_ok=True)
    records, artifacts = [], []
    for tour in tours:
        result = results[tour]
        records.extend(result.records)
        artifacts.extend(Path(a) for a in result.artifacts)
        runs = pd.DataFrame([{"snapshot": r.snapshot, "epochs": r.epochs, "samples": r.samples,
                              "final_loss": r.final_loss} for r in result.training])
        path = out / f"training_{tour.value}.csv"
        runs.to_csv(path, index=False, lineterminator="\n")
        artifacts.append(path)
    artifacts.append(write_prediction_ledger(records, str(out / "predictions.csv")))
    write_manifest(out, "walkforward", args.argv, cfg, inputs, artifacts, args.events)
    return artifacts


def cmd_evaluate(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> List[Path]:
    ledger = _require(_ledger_path(args, output_dir), "prediction ledger (run walkforward first)")
    frame = _period_rows(read_prediction_ledger(str(ledger)), args.period)
    params = EvaluationParams.from_config(cfg.section("evaluation"))
    if args.resamples:
        params.bootstrap_resamples = args.resamples
    report = evaluate_ledger(frame, params, cfg.seed, with_ci=not args.no_ci)
    if report.trend is not None:
        logging.info(f"Spearman trend of I* vs model-minus-Shin Brier: rho = {report.trend[0]:+.4f}, "
                     f"p = {report.trend[1]:.4g}")
    out = output_dir / "evaluate"
    artifacts = write_report(report.artifacts(), str(out), prefix=f"{args.period}_")
    write_manifest(out, "evaluate", args.argv, cfg, [ledger], artifacts, args.events)
    return artifacts


def cmd_intransitivity(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> List[Path]:
    ledger = _require(_ledger_path(args, output_dir), "prediction ledger (run walkforward first)")
    frame = _period_rows(read_prediction_ledger(str(ledger)), args.period)
    out = output_dir / "intransitivity"
    artifacts = [write_scores(frame[SCORE_COLUMNS].to_dict("records"), str(out / f"{args.period}_i_star.csv"))]
    summary, ratio = summarise_intransitivity(frame)
    summary_path = out / f"{args.period}_summary.csv"
    summary.to_csv(summary_path, index=False, lineterminator="\n", float_format="%.10g")
    ratio_path = out / f"{args.period}_ratio.json"
    with open(ratio_path, "w", encoding="utf-8") as f:
        json.dump({"women_over_men": ratio}, f, indent=2)
    if ratio is not None:
        logging.info(f"Women/men mean I* ratio: {ratio:.4f}")
    artifacts.extend([summary_path, ratio_path])
    write_manifest(out, "intransitivity", args.argv, cfg, [ledger], artifacts, args.events)
    return artifacts


def cmd_bet(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> List[Path]:
    ledger = _require(_ledger_path(args, output_dir), "prediction ledger (run walkforward first)")
    frame = read_prediction_ledger(str(ledger))
    section = cfg.section("betting")
    for key in ("staking", "probability_column", "trials", "random_stake"):
        value = getattr(args, key)
        if value is not None:
            section[key] = value
            cfg.set_value("betting", key, value)
    out = output_dir / "bet"
    artifacts = []

    gamma = args.gamma if args.gamma is not None else section.get("gamma")
    validation = frame[frame["period"] == "validation"]
    if not validation.empty:
        search = threshold_search(validation, section["probability_column"], section["grid_step"])
        curve_path = out / "threshold_curve.csv"
        curve_path.parent.mkdir(parents=True, exist_ok=True)
        search.curve.to_csv(curve_path, index=False, lineterminator="\n", float_format="%.10g")
        artifacts.append(curve_path)
        if gamma is None:
            gamma = search.gamma
            logging.info(f"Using validation-optimal gamma = {gamma:g}")

    rows = _period_rows(frame, args.period)
    strategy = StrategyConfig(staking=section["staking"], gamma=gamma,
                              probability_column=section["probability_column"])
    result = simulate(rows, strategy)
    artifacts.append(write_bets(result.bets, str(out / "bets.csv")))
    report, _ = betting_report(rows, gamma, trials=int(section["trials"]), seed=cfg.seed,
                               random_stake=section["random_stake"])
    report_path = out / "report.csv"
    report.to_csv(report_path, index=False, lineterminator="\n", float_format="%.10g")
    artifacts.append(report_path)
    for _, row in report.iterrows():
        logging.info(f"{row['method']:>6} {row['staking']:<6} gamma={row['gamma']}: {row['bets']} bets, "
                     f"ROI {row['roi']:.4f}, p_bs {row['p_bs']}")
    write_manifest(out, "bet", args.argv, cfg, [ledger], artifacts, args.events)
    return artifacts


def cmd_pareto(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> List[Path]:
    trials_path = _require(Path(args.trials), "trial file")
    front = pareto_front(read_trials(str(trials_path)))
    out = output_dir / "pareto"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "pareto_front.csv"
    front.to_csv(path, index=False, lineterminator="\n")
    logging.info(f"{len(front)} Pareto-optimal trials")
    write_manifest(out, "pareto", args.argv, cfg, [trials_path], [path], args.events)
    return [path]


def cmd_selftest(args: argparse.Namespace, cfg: ConfigManager, output_dir: Path) -> bool:
    from selftest import run_selftest
    return run_selftest(quick=args.quick, verbose=args.verbose)


COMMANDS = {
    "ingest": cmd_ingest,
    "walkforward": cmd_walkforward,
    "evaluate": cmd_evaluate,
    "intransitivity": cmd_intransitivity,
    "bet": cmd_bet,
    "pareto": cmd_pareto,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help=f"Configuration file (default: {DEFAULT_CONFIG_FILE} if present)")
    common.add_argument("-o", "--output", help="Output directory (overrides data.output_dir)")
    common.add_argument("--seed", type=int, help="Override the configured seed")
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")

    parser = argparse.ArgumentParser(prog="courtgraph", description="Tennis dominance graphs, forecasting and "
                                     "betting backtests", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="Raw result CSVs to canonical match ledgers")
    p.add_argument("--raw-dir", help="Directory of raw CSV files")
    p.add_argument("--ledger-dir", help="Where match ledgers are written")
    p.add_argument("--player-map", help="name,player_id mapping file")
    p.add_argument("--strict", action="store_true", help="Fail on the first malformed row")
    p.add_argument("--all-tiers", action="store_true", help="Keep every tier instead of the four main tiers")

    p = sub.add_parser("walkforward", parents=[common], help="Walk-forward sweep to a prediction ledger")
    p.add_argument("--ledger-dir", help="Directory holding matches_<tour>.csv")
    p.add_argument("--tours", nargs="+", choices=[t.value for t in Tour], help="Tours to run")
    p.add_argument("--checkpoints", action="store_true", help="Save a checkpoint per training run")

    for name, help_text, default_period in (
            ("evaluate", "Accuracy, Brier, calibration and robustness reports", "test"),
            ("intransitivity", "I* scores and summary by surface and tour", "validation"),
            ("bet", "Betting simulation, threshold curve and significance", "test")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--ledger", help="Prediction ledger (default: <output>/walkforward/predictions.csv)")
        p.add_argument("--period", choices=PERIODS, default=default_period,
                       help=f"Ledger rows to use (default: {default_period})")
        if name == "evaluate":
            p.add_argument("--resamples", type=int, help="Bootstrap resamples")
            p.add_argument("--no-ci", action="store_true", help="Skip bootstrap intervals")
        if name == "bet":
            p.add_argument("--gamma", type=float,
                           help="I* threshold (default: configured, else validation-optimal)")
            p.add_argument("--staking", choices=["kelly", "unit", "kelly_favourite"], help="Staking rule")
            p.add_argument("--method", dest="probability_column", help="Probability column to bet with")
            p.add_argument("--trials", type=int, help="Monte-Carlo trials")
            p.add_argument("--random-stake", choices=["strategy", "unit", "kelly"],
                           help="Stake convention of random bets")

    p = sub.add_parser("pareto", parents=[common], help="Pareto front of tuning trials")
    p.add_argument("--trials", required=True, help="CSV with brier_men, brier_women and parameter columns")

    p = sub.add_parser("selftest", parents=[common], help="Property and oracle checks on bundled fixtures")
    p.add_argument("--quick", action="store_true", help="Reduced sample counts")
    return parser


def load_config(args: argparse.Namespace) -> ConfigManager:
    cfg = ConfigManager(args.config or DEFAULT_CONFIG_FILE)
    for error in cfg.get_validation_errors():
        logging.warning(f"Config: {error}")
    if args.seed is not None:
        cfg.config["seed"] = args.seed
    if args.output:
        cfg.set_value("data", "output_dir", args.output)
    return cfg


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run one subcommand and return its exit status"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    args.argv = argv
    setup_logging(args.verbose)

    if args.config and not Path(args.config).exists():
        logging.error(f"Config file not found: {args.config}")
        return EXIT_MISSING_CONFIG
    cfg = load_config(args)

    if args.command == "selftest":
        return EXIT_OK if cmd_selftest(args, cfg, Path(".")) else EXIT_ERROR

    args.events = []

    def record(event):
        args.events.append(event.name)
        logging.debug(f"{event.name}: {event.data}")

    subscription = event_bus.subscribe("*", record)
    output_dir = Path(cfg.section("data")["output_dir"])
    try:
        artifacts = COMMANDS[args.command](args, cfg, output_dir)
        logging.info(f"{args.command} finished: {len(artifacts)} artifacts under {output_dir}")
        return EXIT_OK
    except FileNotFoundError as e:
        logging.error(str(e))
        return EXIT_MISSING_INPUT
    except Exception as e:
        logging.error(f"{args.command} failed: {e}")
        logging.debug("Traceback", exc_info=True)
        return EXIT_ERROR
    finally:
        event_bus.unsubscribe(subscription)


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
