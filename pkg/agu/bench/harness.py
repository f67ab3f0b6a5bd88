"""
Comparison harness: trains reference models, builds requests, runs every
method and aggregates test micro-F1 over trials.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd
import torch

from agu.bench.metrics import micro_f1, similarity_gap
from agu.bench.synthetic import edge_attack, generate_sbm, sample_unlearn_request
from agu.graph.graph import Graph, RequestKind, UnlearnRequest, apply_request
from agu.graph.io import load_graph_dir
from agu.models.gnn import GNN, Architecture, forward, init_model
from agu.models.training import TrainResult, predict, train
from agu.schemas.config import ExperimentSpec, Method, TaskKind, TrainConfig, UnlearnConfig
from agu.schemas.reports import EvalReport, MethodSummary, ThetaPoint, ThetaSweepReport, TrialRecord
from agu.unlearn.engine import UnlearnOutcome, unlearn, unlearn_dec, unlearn_reverse_ce
from agu.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["method", "arch", "trial", "seed", "f1", "time_ms", "similarity_gap"]

# Config switches for the ablation variants
ABLATIONS: dict[Method, dict] = {
    Method.AGU: {},
    Method.AGU_NO_HOMO: {"use_homophily_pairs": False},
    Method.AGU_NO_EU: {"use_edge_term": False},
    Method.AGU_NO_FU: {"use_feature_term": False},
    Method.AGU_NO_MNF: {"filter": {"use_marginal_filter": False}},
    Method.AGU_NO_ANS: {"filter": {"use_selection": False}},
}


def model_dims(graph: Graph, hidden_dim: int, num_layers: int) -> list[int]:
    return [graph.d] + [hidden_dim] * (num_layers - 1) + [graph.num_classes]


def retrain_oracle(graph: Graph, request: UnlearnRequest, arch: Architecture | str, train_cfg: TrainConfig,
                   dims: Sequence[int]) -> TrainResult:
    """Train from scratch on the remaining graph; the gold standard for unlearning."""
    remaining = apply_request(graph, request).remaining
    model = init_model(arch, dims, train_cfg.seed)
    return train(model, remaining, train_cfg)


def load_dataset(spec: ExperimentSpec) -> Graph:
    if spec.sbm is not None:
        return generate_sbm(spec.sbm)
    return load_graph_dir(Path(spec.graph_path))


def unlearn_config(spec: ExperimentSpec, method: Method, seed: int) -> UnlearnConfig:
    update = ABLATIONS.get(method, {})
    filter_cfg = spec.unlearn.filter.model_copy(
        update={"probe_seed": derive_seed(seed, "probe"), **update.get("filter", {})}
    )
    flags = {k: v for k, v in update.items() if k != "filter"}
    return spec.unlearn.model_copy(update={"seed": derive_seed(seed, "pairs"), "filter": filter_cfg, **flags})


def applicable(method: Method, task: TaskKind) -> bool:
    if method is Method.DEC_BASELINE and task is TaskKind.FEATURE:
        return False
    if method is Method.AGU_NO_FU and task in (TaskKind.EDGE, TaskKind.ATTACK):
        return False
    if method in (Method.AGU_NO_EU, Method.AGU_NO_HOMO) and task is TaskKind.FEATURE:
        return False
    return True


def _evaluate(model: GNN, graph: Graph, evaluation: Graph) -> float:
    return micro_f1(predict(model, graph).labels, evaluation.labels, evaluation.test_mask)


def _attack_gap(model: GNN, graph: Graph, clean: Graph, request: UnlearnRequest) -> float:
    """Embedding similarity of clean edges minus that of the injected ones."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            embeddings = forward(model, graph).embeddings
    finally:
        model.train(was_training)
    return similarity_gap(embeddings, clean.edges(), request.sorted_edges())


def run_trial(spec: ExperimentSpec, graph: Graph, arch: Architecture, trial: int) -> list[TrialRecord]:
    """
    One trial for one architecture: every applicable method on the same trained model and request.
    """
    seed = derive_seed(spec.seed, "trial", trial)
    dims = model_dims(graph, spec.hidden_dim, spec.num_layers)
    train_cfg = spec.train.model_copy(update={"seed": derive_seed(seed, "train")})

    if spec.task is TaskKind.ATTACK:
        train_graph, request = edge_attack(graph, spec.attack_ratio, derive_seed(seed, "attack"))
    else:
        train_graph = graph
        request = sample_unlearn_request(graph, RequestKind(spec.task.value), spec.unlearn_ratio,
                                         derive_seed(seed, "request"))
    remaining = apply_request(train_graph, request).remaining

    started = time.perf_counter()
    f_g = init_model(arch, dims, train_cfg.seed)
    train(f_g, train_graph, train_cfg)
    train_ms = (time.perf_counter() - started) * 1000.0

    records = []
    for method in spec.methods:
        if not applicable(method, spec.task):
            logger.info(f"Skipping {method.value} for {spec.task.value} task")
            continue
        started = time.perf_counter()
        epochs = spec.unlearn.epochs
        if method is Method.VANILLA:
            model, eval_graph, epochs, elapsed = f_g, train_graph, 0, train_ms
        elif method is Method.RETRAIN:
            model = retrain_oracle(train_graph, request, arch, train_cfg, dims).model
            eval_graph, epochs = remaining, train_cfg.epochs
            elapsed = (time.perf_counter() - started) * 1000.0
        else:
            outcome = _run_unlearning(method, f_g, train_graph, request, unlearn_config(spec, method, seed))
            model, eval_graph = outcome.model, remaining
            elapsed = outcome.wall_time * 1000.0
        f1 = _evaluate(model, eval_graph, remaining)
        gap = _attack_gap(model, eval_graph, graph, request) if spec.task is TaskKind.ATTACK else None
        records.append(TrialRecord(method=method.value, arch=arch.value, trial=trial, seed=seed, f1=f1,
                                   epochs=epochs, similarity_gap=gap, timing={"time_ms": elapsed}))
        logger.info(f"trial {trial} {arch.value} {method.value}: F1 {f1:.4f}")
    return records


def _run_unlearning(method: Method, f_g: GNN, graph: Graph, request: UnlearnRequest,
                    cfg: UnlearnConfig) -> UnlearnOutcome:
    if method is Method.REVERSE_CE:
        return unlearn_reverse_ce(f_g, graph, request, cfg)
    if method is Method.DEC_BASELINE:
        return unlearn_dec(f_g, graph, request, cfg)
    return unlearn(f_g, graph, request, cfg)


def _init_worker(threads: int) -> None:
    torch.set_num_threads(threads)


def _trial_task(args: tuple[ExperimentSpec, Graph, Architecture, int]) -> list[TrialRecord]:
    return run_trial(*args)


def summarize(records: Iterable[TrialRecord], archs: Sequence[Architecture], methods: Sequence[Method]) -> list[MethodSummary]:
    frame = pd.DataFrame(
        [{"method": r.method, "arch": r.arch, "f1": r.f1, "time_ms": r.timing.get("time_ms", 0.0)} for r in records]
    )
    if frame.empty:
        return []
    grouped = frame.groupby(["arch", "method"]).agg(
        trials=("f1", "size"), f1_mean=("f1", "mean"), f1_std=("f1", lambda s: s.std(ddof=0)),
        time_ms_mean=("time_ms", "mean"),
    )
    summary = []
    for arch in archs:
        for method in methods:
            key = (arch.value, method.value)
            if key not in grouped.index:
                continue
            row = grouped.loc[key]
            summary.append(MethodSummary(method=method.value, arch=arch.value, trials=int(row["trials"]),
                                         f1_mean=float(row["f1_mean"]), f1_std=float(row["f1_std"]),
                                         timing={"time_ms_mean": float(row["time_ms_mean"])}))
    return summary


def run_experiment(spec: ExperimentSpec, jobs: int = 1, threads: int = 1) -> EvalReport:
    """
    Run every (architecture, trial) pair, in worker processes when jobs > 1.

    Records are sorted by architecture, trial and method order before aggregation.
    """
    started = time.perf_counter()
    graph = load_dataset(spec)
    tasks = [(spec, graph, arch, trial) for arch in spec.archs for trial in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(threads,)) as executor:
            results = list(executor.map(_trial_task, tasks))
    else:
        results = [_trial_task(task) for task in tasks]

    method_order = {m.value: i for i, m in enumerate(spec.methods)}
    arch_order = {a.value: i for i, a in enumerate(spec.archs)}
    records = sorted((r for batch in results for r in batch),
                     key=lambda r: (arch_order[r.arch], r.trial, method_order[r.method]))
    skipped = [f"{m.value}:{spec.task.value}" for m in spec.methods if not applicable(m, spec.task)]
    report = EvalReport(
        spec=spec.model_dump(mode="json"),
        trials=records,
        summary=summarize(records, spec.archs, spec.methods),
        skipped=skipped,
        timing={"total_ms": (time.perf_counter() - started) * 1000.0},
    )
    logger.info(f"Experiment finished: {len(records)} records over {spec.trials} trials")
    return report


def run_theta_sweep(spec: ExperimentSpec, thetas: Sequence[float]) -> ThetaSweepReport:
    """
    Node unlearning with AGU at each theta: mean kept-marginal count and mean test F1 over trials.
    """
    started = time.perf_counter()
    graph = load_dataset(spec)
    arch = spec.archs[0]
    if not arch.degree_based:
        logger.warning(f"{arch.value} has no marginal neighbors; the sweep will keep zero everywhere")
    dims = model_dims(graph, spec.hidden_dim, spec.num_layers)
    kept = {theta: [] for theta in thetas}
    scores = {theta: [] for theta in thetas}
    for trial in range(spec.trials):
        seed = derive_seed(spec.seed, "trial", trial)
        train_cfg = spec.train.model_copy(update={"seed": derive_seed(seed, "train")})
        request = sample_unlearn_request(graph, RequestKind.NODE, spec.unlearn_ratio, derive_seed(seed, "request"))
        remaining = apply_request(graph, request).remaining
        f_g = init_model(arch, dims, train_cfg.seed)
        train(f_g, graph, train_cfg)
        for theta in thetas:
            cfg = unlearn_config(spec, Method.AGU, seed)
            cfg = cfg.model_copy(update={"filter": cfg.filter.model_copy(update={"theta": theta})})
            outcome = unlearn(f_g, graph, request, cfg)
            kept[theta].append(len(outcome.report.kept_marginal))
            scores[theta].append(_evaluate(outcome.model, remaining, remaining))
    points = [
        ThetaPoint(theta=theta, kept_marginal=float(pd.Series(kept[theta]).mean()),
                   f1=float(pd.Series(scores[theta]).mean()))
        for theta in thetas
    ]
    return ThetaSweepReport(spec=spec.model_dump(mode="json"), points=points,
                            timing={"total_ms": (time.perf_counter() - started) * 1000.0})


def write_json_report(report, path: Path) -> None:
    Path(path).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote report to {path}")


def write_trials_csv(report: EvalReport, path: Path) -> None:
    frame = pd.DataFrame(
        [{"method": r.method, "arch": r.arch, "trial": r.trial, "seed": r.seed, "f1": r.f1,
          "time_ms": r.timing.get("time_ms", 0.0), "similarity_gap": r.similarity_gap} for r in report.trials],
        columns=CSV_COLUMNS,
    )
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} trial rows to {path}")
