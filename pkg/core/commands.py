#!/usr/bin/env python3
"""
Command implementations behind ``main.py``.

Each ``cmd_*`` loads and validates its configuration before doing any work,
writes its artifacts under an ArtifactGuard (so a crash leaves no partial
files) and finishes with a manifest. Numerical checks that do not pass raise
CheckFailedError only after their reports are on disk.
"""

import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .config import RunConfig
from .data import (Dataset, PartitionResult, export_partition, gen_blobs, load_csv, partition_dirichlet,
                   shard_entropy, split_dataset)
from .error_recovery import ArtifactGuard
from .errors import CheckFailedError
from .experiment_loader import experiment_name, load_run_config, resolve_config_path
from .federation import BackwardMode, RoundRecord, RunResult, run_training
from .feedback import FeedbackMode
from .gradcheck import run_gradcheck
from .metrics import (BoundRow, DriftReport, check_recorded_bounds, compare_runs, estimate_assumptions,
                      rescale_holds)
from .nn import MlpModel, init_model, save_model
from .performance_logger import log_info, log_phase_complete, log_phase_start, log_success
from .reports import render_boundcheck_summary, render_compare_summary, render_gradcheck_report
from .run_store import JsonlWriter, RunManifest, write_csv, write_json
from .seeding import stream
from .tracing import TraceRecorder

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2

COMPARE_TAIL_START = 10

RESCALE_COLUMNS = ["method", "round", "client", "step", "layer", "feedback_norm", "weight_norm",
                   "norm_residual", "direction_residual", "passed"]

BOUNDCHECK_METHODS = (
    (BackwardMode.BP, FeedbackMode.GLOBAL_WEIGHTS),
    (BackwardMode.FLFA, FeedbackMode.GLOBAL_WEIGHTS),
    (BackwardMode.FLFA, FeedbackMode.GLOBAL_NO_RESCALE),
    (BackwardMode.FLFA, FeedbackMode.RANDOM_FIXED),
)


@dataclass
class PreparedData:
    train: Dataset
    eval_set: Optional[Dataset]
    partition: PartitionResult


def prepare_data(cfg: RunConfig) -> PreparedData:
    """Build the dataset, hold out the evaluation split and partition the rest."""
    spec = cfg.dataset
    if spec.kind == "csv":
        full = load_csv(spec.path)
    else:
        full = gen_blobs(spec.classes, spec.dim, spec.per_class, spec.spread, cfg.seed)
    train, eval_set = split_dataset(full, spec.test_fraction, cfg.seed)
    partition = partition_dirichlet(train, cfg.partition)
    log_info("Data", f"{train.size} training samples over {len(partition)} clients "
                     f"(beta={cfg.partition.beta}, held out {eval_set.size if eval_set else 0})", "📦")
    return PreparedData(train, eval_set, partition)


def build_model(cfg: RunConfig, dataset: Dataset) -> MlpModel:
    sizes = cfg.model.layer_sizes(dataset.dim, dataset.class_count)
    return init_model(sizes, cfg.model.activation, stream(cfg.seed, "init"))


def _train(cfg: RunConfig, data: PreparedData, model: MlpModel,
           on_round: Optional[Callable[[RoundRecord], None]] = None,
           recorder: Optional[TraceRecorder] = None) -> RunResult:
    return run_training(cfg.train, data.train, data.partition.shards, model, data.eval_set,
                        representation=cfg.metrics.representation, recorder=recorder, on_round=on_round)


def _bound_rows(cfg: RunConfig, recorder: TraceRecorder) -> List[BoundRow]:
    train = cfg.train
    lr_by_round = {r: train.lr_at(r) for r in range(train.rounds)}
    rescaled = train.uses_feedback and train.feedback_mode.rescales
    return check_recorded_bounds(recorder, lr_by_round, train.method_label, rescaled)


def _bound_csv_rows(rows: List[BoundRow]) -> List[Dict]:
    return [row.to_row() for row in rows]


def cmd_train(config: str, seed: Optional[int] = None, output_dir: Optional[str] = None,
              workers: Optional[int] = None) -> int:
    """
    Train one configuration and persist its artifacts.

    Writes rounds.jsonl, metrics.csv, model.json and manifest.json, plus
    assumptions.json when assumption estimates are enabled and
    bound_report.csv in trace mode.

    Raises:
        ConfigError: invalid configuration (nothing is written)
        CheckFailedError: a trace-mode bound row fails (after the artifacts
            are written)
    """
    cfg = load_run_config(config, seed, output_dir, workers)
    if cfg.metrics.trace_mode:
        cfg = cfg.for_trace_mode()
    out = Path(cfg.output_dir)
    manifest = RunManifest.start("train", cfg.to_dict(), cfg.seed)
    log_phase_start("Train", f"{cfg.train.method_label} training, seed {cfg.seed}")
    phase_start = time.perf_counter()

    with ArtifactGuard(out, "Train") as guard:
        data = prepare_data(cfg)
        model = build_model(cfg, data.train)
        recorder = TraceRecorder() if cfg.metrics.trace_mode else None
        rounds_path = guard.track("rounds.jsonl")
        with JsonlWriter(rounds_path) as writer:
            result = _train(cfg, data, model, recorder=recorder,
                            on_round=lambda rec: writer.write(rec.to_dict(cfg.metrics.record_updates)))
        manifest.add_artifact("rounds", rounds_path)

        metrics_path = write_csv(guard.track("metrics.csv"), [rec.metrics_row() for rec in result.records])
        manifest.add_artifact("metrics", metrics_path)

        model_path = guard.track("model.json")
        save_model(model_path, result.model)
        manifest.add_artifact("model", model_path)

        if cfg.metrics.assumptions:
            last = result.records[-1]
            estimates = estimate_assumptions(result.model, data.partition.shards, last.next_fa_layers,
                                             cfg.train.feedback_mode, cfg.train.batch_size, cfg.seed,
                                             bank=result.random_bank,
                                             samples=cfg.metrics.assumption_samples)
            path = write_json(guard.track("assumptions.json"), asdict(estimates))
            manifest.add_artifact("assumptions", path)

        bound_failed = 0
        if recorder is not None:
            rows = _bound_rows(cfg, recorder)
            path = write_csv(guard.track("bound_report.csv"), _bound_csv_rows(rows))
            manifest.add_artifact("bound_report", path)
            bound_failed = sum(1 for row in rows if not row.passed)
            manifest.checks["bound_rows_failed"] = bound_failed

        manifest.finish("ok" if bound_failed == 0 else "failed")
        manifest.save(guard.track("manifest.json"))

    final = result.records[-1]
    log_phase_complete("Train", "training", time.perf_counter() - phase_start,
                       rounds=len(result.records), accuracy=round(final.eval_accuracy, 4))
    if bound_failed:
        raise CheckFailedError(f"train failed: {bound_failed} bound row(s) out of tolerance in trace mode")
    log_success("Train", f"Artifacts written to {out}")
    return EXIT_OK


def cmd_compare(config: str, seed: Optional[int] = None, output_dir: Optional[str] = None,
                workers: Optional[int] = None) -> int:
    """
    Paired BP / FLFA runs (plus ablations) over every configured seed.

    All methods of one seed share the dataset, the partition and the initial
    model. A ``--seed`` flag replaces the configured seed list.
    """
    cfg = load_run_config(config, seed, output_dir, workers)
    seeds = [seed] if seed is not None else list(cfg.compare.seeds)
    methods = cfg.compare.methods()
    out = Path(cfg.output_dir)
    manifest = RunManifest.start("compare", cfg.to_dict(), cfg.seed)
    title = experiment_name(resolve_config_path(config))
    log_phase_start("Compare", f"{len(methods)} methods x {len(seeds)} seeds")
    phase_start = time.perf_counter()

    reports: Dict[int, List[DriftReport]] = {}
    csv_rows: List[Dict] = []
    with ArtifactGuard(out, "Compare") as guard:
        for run_seed in seeds:
            seeded = cfg.with_seed(run_seed)
            data = prepare_data(seeded)
            model = build_model(seeded, data.train)
            records: Dict[str, List[RoundRecord]] = {}
            for backward_mode, feedback_mode in methods:
                run_cfg = seeded.with_method(backward_mode, feedback_mode)
                label = run_cfg.train.method_label
                path = guard.track(f"rounds_{label}_seed{run_seed}.jsonl")
                with JsonlWriter(path) as writer:
                    result = _train(run_cfg, data, model,
                                    on_round=lambda rec: writer.write(rec.to_dict(cfg.metrics.record_updates)))
                manifest.add_artifact(path.stem, path)
                records[label] = result.records
                log_info("Compare", f"seed {run_seed} {label}: final accuracy "
                                    f"{result.records[-1].eval_accuracy:.4f}", "📊")

            baseline = records["bp"]
            reports[run_seed] = [compare_runs(baseline, recs, "bp", label, COMPARE_TAIL_START)
                                 for label, recs in records.items() if label != "bp"]
            for idx, base in enumerate(baseline):
                row = {"seed": run_seed, "round": base.round, "drift_bp": base.drift,
                       "accuracy_bp": base.eval_accuracy}
                for report in reports[run_seed]:
                    cmp = report.rows[idx]
                    row[f"drift_{report.label_b}"] = cmp.drift_b
                    row[f"reduction_{report.label_b}"] = cmp.reduction
                    row[f"accuracy_{report.label_b}"] = cmp.accuracy_b
                    row[f"accuracy_diff_{report.label_b}"] = cmp.accuracy_diff
                csv_rows.append(row)

        compare_path = write_csv(guard.track("compare.csv"), csv_rows)
        manifest.add_artifact("compare", compare_path)
        summary = {
            "tail_start": COMPARE_TAIL_START,
            "methods": [r.label_b for r in reports[seeds[0]]],
            "seeds": {str(s): [r.summary() for r in reports[s]] for s in seeds},
        }
        summary_path = write_json(guard.track("compare_summary.json"), summary)
        manifest.add_artifact("compare_summary", summary_path)
        markdown = guard.track("summary.md")
        markdown.write_text(render_compare_summary(title, reports), encoding='utf-8')
        manifest.add_artifact("summary", markdown)
        manifest.finish("ok")
        manifest.save(guard.track("manifest.json"))

    log_phase_complete("Compare", "paired runs", time.perf_counter() - phase_start,
                       runs=len(seeds) * len(methods))
    for s in seeds:
        for report in reports[s]:
            log_info("Compare", f"seed {s} {report.label_b}: mean drift reduction "
                                f"{report.mean_reduction_tail:+.4g}", "📉")
    return EXIT_OK


def cmd_gradcheck(seed: int = 0, cases: int = 50, output_dir: Optional[str] = None,
                  backward_fn=None) -> int:
    """
    Check backpropagation against finite differences on random networks.

    Prints the rendered report; writes gradcheck.json and gradcheck.txt only
    when ``output_dir`` is given.

    Raises:
        CheckFailedError: a tolerance was exceeded (after the report is written)
    """
    log_phase_start("Gradcheck", f"{cases} random networks, seed {seed}")
    phase_start = time.perf_counter()
    report = run_gradcheck(cases=cases, seed=seed, backward_fn=backward_fn)
    text = render_gradcheck_report(report)
    print(text, end="")

    if output_dir is not None:
        out = Path(output_dir)
        config = {"command": "gradcheck", "cases": cases}
        manifest = RunManifest.start("gradcheck", config, seed)
        with ArtifactGuard(out, "Gradcheck") as guard:
            payload = {"seed": report.seed, "passed": report.passed,
                       "max_relative_error": report.max_relative_error,
                       "max_collapse_residual": report.max_collapse_residual,
                       "cases": [asdict(c) for c in report.cases]}
            manifest.add_artifact("gradcheck", write_json(guard.track("gradcheck.json"), payload))
            text_path = guard.track("gradcheck.txt")
            text_path.write_text(text, encoding='utf-8')
            manifest.add_artifact("report", text_path)
            manifest.checks = {"gradcheck": report.passed}
            manifest.finish("ok" if report.passed else "failed")
            manifest.save(guard.track("manifest.json"))

    log_phase_complete("Gradcheck", "gradient check", time.perf_counter() - phase_start,
                       cases=len(report.cases))
    if not report.passed:
        raise CheckFailedError(f"gradcheck failed: max relative error {report.max_relative_error:.3e}, "
                               f"collapse residual {report.max_collapse_residual:.3e}")
    return EXIT_OK


def cmd_boundcheck(config: str, seed: Optional[int] = None, output_dir: Optional[str] = None,
                   workers: Optional[int] = None) -> int:
    """
    Trace-mode runs for BP, FLFA and both ablations, checked against the
    per-step drift bound and the feedback rescale invariant.

    Raises:
        CheckFailedError: some bound row or rescale sample fails (after the
            reports are written)
    """
    cfg = load_run_config(config, seed, output_dir, workers).for_trace_mode()
    out = Path(cfg.output_dir)
    manifest = RunManifest.start("boundcheck", cfg.to_dict(), cfg.seed)
    log_phase_start("Boundcheck", f"trace mode: {cfg.train.rounds} rounds, "
                                  f"{cfg.train.local_steps} local steps")
    phase_start = time.perf_counter()

    rows: List[BoundRow] = []
    rescale_rows: List[Dict] = []
    with ArtifactGuard(out, "Boundcheck") as guard:
        data = prepare_data(cfg)
        model = build_model(cfg, data.train)
        for backward_mode, feedback_mode in BOUNDCHECK_METHODS:
            run_cfg = cfg.with_method(backward_mode, feedback_mode)
            recorder = TraceRecorder()
            _train(run_cfg, data, model, recorder=recorder)
            method_rows = _bound_rows(run_cfg, recorder)
            rows.extend(method_rows)
            if run_cfg.train.uses_feedback and feedback_mode.rescales:
                for sample in recorder.rescale_samples:
                    row = asdict(sample)
                    row["method"] = run_cfg.train.method_label
                    row["passed"] = rescale_holds(sample)
                    rescale_rows.append(row)
            failed = sum(1 for r in method_rows if not r.passed)
            log_info("Boundcheck", f"{run_cfg.train.method_label}: {len(method_rows) - failed}/"
                                   f"{len(method_rows)} bound rows hold", "📐")

        bound_failed = sum(1 for r in rows if not r.passed)
        rescale_failed = sum(1 for r in rescale_rows if not r["passed"])
        manifest.add_artifact("bound_report", write_csv(guard.track("bound_report.csv"),
                                                        _bound_csv_rows(rows)))
        manifest.add_artifact("rescale_report", write_csv(guard.track("rescale_report.csv"), rescale_rows,
                                                                    RESCALE_COLUMNS))
        summary = {
            "rows": len(rows),
            "failed": bound_failed,
            "min_slack": min((r.slack for r in rows), default=0.0),
            "max_fa_weight_term": max((r.weight_term for r in rows if r.mode == "fa"), default=0.0),
            "spectral_fallbacks": sum(1 for r in rows if r.spectral_fallback),
            "rescale_samples": len(rescale_rows),
            "rescale_failed": rescale_failed,
        }
        manifest.add_artifact("bound_summary", write_json(guard.track("bound_summary.json"), summary))
        markdown = guard.track("summary.md")
        markdown.write_text(render_boundcheck_summary(rows, rescale_failed, len(rescale_rows)),
                            encoding='utf-8')
        manifest.add_artifact("summary", markdown)
        passed = bound_failed == 0 and rescale_failed == 0
        manifest.checks = {"bounds": bound_failed == 0, "rescale": rescale_failed == 0}
        manifest.finish("ok" if passed else "failed")
        manifest.save(guard.track("manifest.json"))

    log_phase_complete("Boundcheck", "bound verification", time.perf_counter() - phase_start,
                       rows=len(rows), rescale_samples=len(rescale_rows))
    if not passed:
        raise CheckFailedError(f"boundcheck failed: {bound_failed} bound row(s), "
                               f"{rescale_failed} rescale sample(s) out of tolerance")
    log_success("Boundcheck", f"All {len(rows)} bound rows hold")
    return EXIT_OK


def cmd_partition(config: str, seed: Optional[int] = None, output_dir: Optional[str] = None) -> int:
    """Dump the client partition (partition.json) and per-client class histograms."""
    cfg = load_run_config(config, seed, output_dir)
    out = Path(cfg.output_dir)
    manifest = RunManifest.start("partition", cfg.to_dict(), cfg.seed)
    with ArtifactGuard(out, "Partition") as guard:
        data = prepare_data(cfg)
        shards = data.partition.shards
        partition_path = guard.track("partition.json")
        export_partition(partition_path, shards)
        manifest.add_artifact("partition", partition_path)
        rows = []
        for shard in shards:
            row = {"client_id": shard.client_id, "samples": shard.sample_count,
                   "entropy": shard_entropy(shard)}
            row.update({f"class_{c}": int(n) for c, n in enumerate(shard.histogram)})
            rows.append(row)
        manifest.add_artifact("histograms", write_csv(guard.track("histograms.csv"), rows))
        manifest.checks = {"empty_clients": data.partition.empty_clients}
        manifest.finish("ok")
        manifest.save(guard.track("manifest.json"))

    log_success("Partition", f"{len(shards)} shards written to {out}")
    return EXIT_OK
