"""
Command line entry point: ``agu <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import torch

from agu.bench.harness import model_dims, retrain_oracle, run_experiment, run_theta_sweep, write_json_report, write_trials_csv
from agu.bench.metrics import micro_f1
from agu.bench.synthetic import edge_attack, generate_sbm
from agu.graph.graph import apply_request, validate_request
from agu.graph.io import load_graph_dir, read_request, save_graph_dir, write_request
from agu.models.checkpoint import read_checkpoint, write_checkpoint
from agu.models.gnn import GNN, Architecture, init_model, parameter_checksum
from agu.models.training import predict, train
from agu.neighbors.analysis import build_neighbor_report
from agu.schemas.config import ExperimentSpec, FilterConfig, SbmSpec, TrainConfig, UnlearnConfig
from agu.schemas.reports import TrainReport, UnlearnReport
from agu.settings import get_settings
from agu.unlearn.engine import unlearn, unlearn_dec, unlearn_reverse_ce
from agu.utils.exception_handlers import handle_exception
from agu.utils.exceptions import ConfigError, UsageError
from agu.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

REQUEST_FILE = "request.tsv"
SBM_KEYS = {
    "n": "n",
    "c": "blocks",
    "pin": "p_in",
    "pout": "p_out",
    "d": "d",
    "s": "signal",
    "seed": "seed",
    "train": "train_fraction",
}
UNLEARN_METHODS = {"agu": unlearn, "reverse_ce": unlearn_reverse_ce, "dec_baseline": unlearn_dec}


def _valid_flags(parser: argparse.ArgumentParser) -> str:
    return ", ".join(sorted(flag for flag in parser._option_string_actions if flag.startswith("--")))


class AGUArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}; valid flags: {_valid_flags(self)}")


def _provided(args: argparse.Namespace, mapping: dict[str, str]) -> dict:
    """Config fields for the flags that were actually given."""
    return {field: getattr(args, flag) for flag, field in mapping.items() if getattr(args, flag, None) is not None}


def _echo(args: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "handler"}


def _test_f1(model: GNN, graph) -> Optional[float]:
    if not graph.test_mask.any():
        return None
    return micro_f1(predict(model, graph).labels, graph.labels, graph.test_mask)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    values = _provided(args, {"epochs": "epochs", "lr": "lr", "weight_decay": "weight_decay", "dropout": "dropout"})
    return TrainConfig(seed=derive_seed(args.seed, "train"), **values)


def _dims(args: argparse.Namespace, graph) -> list[int]:
    settings = get_settings()
    hidden = args.hidden if args.hidden is not None else settings.hidden_dim
    layers = args.layers if args.layers is not None else settings.num_layers
    if not 1 <= layers <= 3:
        raise ConfigError(f"--layers must be between 1 and 3, got {layers}")
    return model_dims(graph, hidden, layers)


def _filter_config(args: argparse.Namespace) -> FilterConfig:
    values = _provided(args, {"theta": "theta", "k_ans": "k_ans_fraction"})
    return FilterConfig(probe_seed=derive_seed(args.seed, "probe"), **values)


def _trained_reference(args: argparse.Namespace, graph) -> GNN:
    cfg = _train_config(args)
    model = init_model(args.arch, _dims(args, graph), cfg.seed)
    train(model, graph, cfg)
    return model


def cmd_gen(args: argparse.Namespace) -> int:
    values = {"seed": args.seed}
    for item in filter(None, args.sbm.split(",")):
        key, _, value = item.partition("=")
        if key.strip() not in SBM_KEYS or not value:
            raise UsageError(f"bad --sbm entry {item!r}; keys: {', '.join(SBM_KEYS)}")
        values[SBM_KEYS[key.strip()]] = value.strip()
    graph = generate_sbm(SbmSpec(**values))
    save_graph_dir(graph, args.out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    graph = load_graph_dir(args.graph, args.masks)
    cfg = _train_config(args)
    model = init_model(args.arch, _dims(args, graph), cfg.seed)
    result = train(model, graph, cfg)
    write_checkpoint(model, args.out)
    if args.report:
        report = TrainReport(
            arch=model.arch.value,
            dims=model.dims,
            loss_trace=result.losses,
            train_accuracy=result.train_accuracy,
            test_f1=_test_f1(model, graph),
            checksum=parameter_checksum(model),
            config={"args": _echo(args), "train": cfg.model_dump()},
            timing={"wall_time_s": time.perf_counter() - started},
        )
        write_json_report(report, args.report)
    return 0


def cmd_retrain(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    graph = load_graph_dir(args.graph, args.masks)
    request = read_request(args.request)
    validate_request(graph, request)
    cfg = _train_config(args)
    result = retrain_oracle(graph, request, args.arch, cfg, _dims(args, graph))
    write_checkpoint(result.model, args.out)
    if args.report:
        remaining = apply_request(graph, request).remaining
        report = TrainReport(
            arch=result.model.arch.value,
            dims=result.model.dims,
            loss_trace=result.losses,
            train_accuracy=result.train_accuracy,
            test_f1=_test_f1(result.model, remaining),
            checksum=parameter_checksum(result.model),
            config={"args": _echo(args), "train": cfg.model_dump()},
            timing={"wall_time_s": time.perf_counter() - started},
        )
        write_json_report(report, args.report)
    return 0


def _checkpoint_for(args: argparse.Namespace) -> GNN:
    model = read_checkpoint(args.model_in)
    if args.arch is not None and Architecture(args.arch) is not model.arch:
        raise ConfigError(f"--arch {args.arch} does not match the checkpoint ({model.arch.value})")
    return model


def cmd_unlearn(args: argparse.Namespace) -> int:
    graph = load_graph_dir(args.graph, args.masks)
    request = read_request(args.request)
    model = _checkpoint_for(args)

    values = _provided(args, {"alpha": "alpha", "epochs": "epochs", "lr": "lr"})
    cfg = UnlearnConfig(seed=derive_seed(args.seed, "pairs"), filter=_filter_config(args), **values)
    outcome = UNLEARN_METHODS[args.method](model, graph, request, cfg)
    if args.model_out:
        write_checkpoint(outcome.model, args.model_out)
    if args.report:
        report = UnlearnReport(
            arch=model.arch.value,
            method=outcome.method,
            request_kind=request.kind.value,
            request_size=len(request.node_ids) + len(request.edge_list),
            epochs=cfg.epochs,
            loss_traces=outcome.traces,
            reference_checksums=outcome.reference_checksums,
            neighbors=outcome.report.summary() if outcome.report else None,
            test_f1=_test_f1(outcome.model, outcome.remaining),
            checksum=parameter_checksum(outcome.model),
            config={"args": _echo(args), "unlearn": cfg.model_dump()},
            timing={"wall_time_s": outcome.wall_time},
        )
        write_json_report(report, args.report)
    return 0


def cmd_neighbors(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    graph = load_graph_dir(args.graph, args.masks)
    request = read_request(args.request)
    validate_request(graph, request)
    if args.model_in:
        model = _checkpoint_for(args)
    elif args.arch is None:
        raise UsageError("neighbors needs --arch or --model-in")
    else:
        logger.info("No --model-in given; training a reference model")
        model = _trained_reference(args, graph)
    cfg = _filter_config(args)
    report = build_neighbor_report(model, graph, apply_request(graph, request), request, cfg)
    schema = report.to_schema()
    schema.config = {"args": _echo(args), "filter": cfg.model_dump()}
    schema.timing = {"wall_time_s": time.perf_counter() - started}
    write_json_report(schema, args.report)
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    graph = load_graph_dir(args.graph, args.masks)
    noisy, request = edge_attack(graph, args.ratio, derive_seed(args.seed, "attack"))
    save_graph_dir(noisy, args.out)
    write_request(request, Path(args.out) / REQUEST_FILE)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        text = Path(args.spec).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read experiment spec {args.spec}: {e}")
    spec = ExperimentSpec.model_validate_json(text)
    report = run_experiment(spec, jobs=args.jobs, threads=get_settings().torch_threads)
    write_json_report(report, args.out)
    write_trials_csv(report, args.csv if args.csv else Path(args.out).with_suffix(".csv"))
    if args.thetas:
        try:
            thetas = [float(t) for t in args.thetas.split(",")]
        except ValueError:
            raise UsageError(f"--thetas must be comma-separated numbers, got {args.thetas!r}")
        sweep = run_theta_sweep(spec, thetas)
        write_json_report(sweep, args.sweep_out or Path(args.out).with_name("theta_sweep.json"))
    return 0


def _add_graph_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", type=Path, required=True, help="graph.tsv or a directory holding it")
    parser.add_argument("--masks", type=Path, help="masks.tsv (defaults to the one next to graph.tsv)")


def _add_model_flags(parser: argparse.ArgumentParser, arch_required: bool = True) -> None:
    parser.add_argument("--arch", choices=[a.value for a in Architecture], required=arch_required)
    parser.add_argument("--hidden", type=int, help="Hidden width")
    parser.add_argument("--layers", type=int, help="Message-passing layers (1-3)")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--weight-decay", type=float)
    parser.add_argument("--dropout", type=float)


def _add_filter_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--theta", type=float, help="Marginal-neighbor threshold")
    parser.add_argument("--k-ans", type=float, help="Fraction of affected neighbors selected")


def build_parser() -> AGUArgumentParser:
    parser = AGUArgumentParser(prog="agu", description="Graph unlearning toolkit")
    parser.add_argument("--seed", type=int, default=0, help="Base seed for every random choice")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=AGUArgumentParser)

    gen = commands.add_parser("gen", help="Generate a synthetic SBM dataset")
    gen.add_argument("--sbm", required=True, help="n=..,c=..,pin=..,pout=..,d=..,s=..[,seed=..,train=..]")
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen)

    train_cmd = commands.add_parser("train", help="Train a model")
    _add_graph_flags(train_cmd)
    _add_model_flags(train_cmd)
    train_cmd.add_argument("--out", type=Path, required=True, help="Checkpoint path")
    train_cmd.add_argument("--report", type=Path)
    train_cmd.set_defaults(handler=cmd_train)

    retrain = commands.add_parser("retrain", help="Retrain from scratch on the remaining graph")
    _add_graph_flags(retrain)
    _add_model_flags(retrain)
    retrain.add_argument("--request", type=Path, required=True)
    retrain.add_argument("--out", type=Path, required=True)
    retrain.add_argument("--report", type=Path)
    retrain.set_defaults(handler=cmd_retrain)

    unlearn_cmd = commands.add_parser("unlearn", help="Unlearn a request from a trained model")
    _add_graph_flags(unlearn_cmd)
    unlearn_cmd.add_argument("--request", type=Path, required=True)
    unlearn_cmd.add_argument("--model-in", type=Path, required=True)
    unlearn_cmd.add_argument("--model-out", type=Path)
    unlearn_cmd.add_argument("--arch", choices=[a.value for a in Architecture])
    unlearn_cmd.add_argument("--method", choices=sorted(UNLEARN_METHODS), default="agu")
    unlearn_cmd.add_argument("--alpha", type=float)
    unlearn_cmd.add_argument("--epochs", type=int)
    unlearn_cmd.add_argument("--lr", type=float)
    _add_filter_flags(unlearn_cmd)
    unlearn_cmd.add_argument("--report", type=Path)
    unlearn_cmd.set_defaults(handler=cmd_unlearn)

    neighbors = commands.add_parser("neighbors", help="Report affected neighbors of a request")
    _add_graph_flags(neighbors)
    _add_model_flags(neighbors, arch_required=False)
    neighbors.add_argument("--request", type=Path, required=True)
    neighbors.add_argument("--model-in", type=Path, help="Checkpoint; a reference model is trained when omitted")
    _add_filter_flags(neighbors)
    neighbors.add_argument("--report", type=Path, required=True)
    neighbors.set_defaults(handler=cmd_neighbors)

    attack = commands.add_parser("attack", help="Inject cross-class edges")
    _add_graph_flags(attack)
    attack.add_argument("--ratio", type=float, default=0.2, help="Injected edges as a fraction of |E|")
    attack.add_argument("--out", type=Path, required=True, help="Directory for the noisy graph and request.tsv")
    attack.set_defaults(handler=cmd_attack)

    bench = commands.add_parser("bench", help="Run a benchmark from an experiment spec JSON")
    bench.add_argument("--spec", type=Path, required=True)
    bench.add_argument("--out", type=Path, required=True, help="Report JSON")
    bench.add_argument("--csv", type=Path, help="Per-trial CSV (defaults next to the report)")
    bench.add_argument("--jobs", type=int, default=1, help="Parallel worker processes")
    bench.add_argument("--thetas", help="Comma-separated theta values for a sweep")
    bench.add_argument("--sweep-out", type=Path)
    bench.set_defaults(handler=cmd_bench)
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    if extras:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        raise UsageError(f"unrecognized arguments: {' '.join(extras)}; valid flags: {_valid_flags(subparser)}")
    return args


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else get_settings().log_level
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def dispatch(argv: Sequence[str]) -> int:
    """
    Parse argv, run the subcommand, and map failures to exit codes.
    """
    try:
        args = parse_args(argv)
        configure_logging(args.verbose)
        torch.set_num_threads(get_settings().torch_threads)
        logger.info(f"Running {args.command}")
        return args.handler(args)
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:
        return handle_exception(e)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
