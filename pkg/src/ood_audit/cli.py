"""Command-line surface.

Subcommands map one-to-one onto the library modules: ``audit``,
``calibrate``, ``eval``, ``curate``, ``prep-finetune``, ``simulate``,
``report`` and ``validate``. Every command is deterministic given
identical inputs and seeds; all randomness requires an explicit seed.
Failures print a machine-readable error JSON on stderr and exit
nonzero (1 = runtime error, 2 = usage, 3 = validation findings).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__, audit
from .calibration import calibrate_threshold, load_calibration
from .core import ClassMap, load_dump, resolve_threads, save_dump, validate_dump
from .curation import (
    CurationConfig,
    curate_dataset,
    load_retained_manifest,
    prep_finetune_manifest,
    save_curation_result,
    save_finetune_manifest,
)
from .evaluation import (
    confidence_trend,
    count_hallucinations,
    detection_metrics,
    fpr95,
    inflation_report,
    kde_report,
    reduction_stats,
)
from .filters import (
    fit_filter,
    load_model,
    parse_filter_spec,
    save_model,
    score_dump,
)
from .reportio import (
    provenance,
    read_scores,
    write_csv_report,
    write_json_report,
    write_scores,
)
from .simulator import SynthConfig, generate_dump, simulate_lemma1, simulate_tau_shift


def _args_dict(args: argparse.Namespace) -> dict:
    # threads_resolved is machine-derived, not an input flag
    skip = {"func", "command", "subcommand", "threads_resolved"}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def _load_class_map(path, class_list) -> ClassMap:
    with open(path, "r", encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise ValueError(f"{path}: class map must be a JSON object")
    return ClassMap(mapping, class_list)


def _emit_json(args, payload: dict, inputs) -> None:
    prov = provenance(_args_dict(args), inputs)
    if getattr(args, "out", None):
        write_json_report(args.out, payload, prov)
    else:
        doc = dict(payload)
        doc["provenance"] = prov
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# command handlers

def _cmd_validate(args) -> int:
    dump = load_dump(args.dump)
    violations = validate_dump(dump)
    payload = {
        "dump": args.dump,
        "n_records": len(dump.records),
        "n_violations": len(violations),
        "violations": [{"locator": v.locator, "message": v.message} for v in violations],
    }
    _emit_json(args, payload, [args.dump])
    return 3 if violations else 0


def _cmd_audit(args) -> int:
    dump = load_dump(args.dump)
    if args.subcommand == "outliers":
        if args.model:
            model = load_model(args.model)
        elif args.filter:
            spec = parse_filter_spec(args.filter)
            model = fit_filter(spec, dump)
        else:
            raise ValueError("audit outliers needs --filter or --model")
        report, mask = audit.detect_outliers(dump, model)
        if args.mask_out:
            mask.save(args.mask_out)
    else:
        class_map = _load_class_map(args.class_map, dump.header.class_list)
        if args.subcommand == "type1":
            report = audit.audit_type1(dump, class_map, conf_threshold=args.conf)
        else:
            report = audit.audit_type2(
                dump, class_map, conf_threshold=args.conf, iou_threshold=args.iou
            )
    inputs = [args.dump] + ([args.class_map] if getattr(args, "class_map", None) else [])
    _emit_json(args, report.to_json(), inputs)
    return 0


def _cmd_calibrate(args) -> int:
    cali = load_dump(args.cali)
    spec = parse_filter_spec(args.filter)
    model = fit_filter(spec, cali)
    keys, scores = score_dump(model, cali, conf_threshold=args.conf)
    if args.outlier_mask:
        mask = audit.OutlierMask.load(args.outlier_mask)
        keep = ~mask.bool_array(keys)
        keys = [k for k, m in zip(keys, keep) if m]
        scores = scores[keep]
    result = calibrate_threshold(scores, target_tpr=args.target_tpr)
    if args.model_out:
        save_model(model, args.model_out)
    if args.scores_out:
        write_scores(args.scores_out, keys, scores, provenance(_args_dict(args), [args.cali]))
    payload = result.to_json()
    payload["filter"] = args.filter
    payload["outlier_mask"] = args.outlier_mask
    _emit_json(args, payload, [args.cali])
    return 0


def _load_model_calib(args):
    model = load_model(args.model) if args.model else None
    calib = load_calibration(args.calib) if args.calib else None
    if (model is None) != (calib is None):
        raise ValueError("--model and --calib must be given together")
    return model, calib


def _cmd_eval(args) -> int:
    sub = args.subcommand
    if sub == "hallucinations":
        dump = load_dump(args.dump)
        model, calib = _load_model_calib(args)
        counts = count_hallucinations(
            dump, model, calib, conf_threshold=args.conf, threads=args.threads_resolved
        )
        prov = provenance(_args_dict(args), [args.dump])
        out = args.out or f"hallucinations_{dump.header.split_kind}_{counts.filter_method or 'nofilter'}.csv"
        write_csv_report(
            out,
            ("image_id", "err_plus", "flagged_ood", "n_above_threshold"),
            [(c.image_id, c.err_plus, c.flagged_ood, c.n_above_threshold) for c in counts.per_image],
            prov,
        )
        if args.scores_out:
            if model is None:
                raise ValueError("--scores-out needs --model/--calib")
            keys, scores = score_dump(model, dump, conf_threshold=args.conf)
            write_scores(args.scores_out, keys, scores, prov)
        if args.summary_out:
            write_json_report(args.summary_out, counts.to_json(), prov)
        return 0
    if sub == "fpr95":
        _, id_scores = read_scores(args.id_scores)
        _, ood_scores = read_scores(args.ood_scores)
        value = fpr95(id_scores, ood_scores, target_tpr=args.target_tpr)
        tau = calibrate_threshold(id_scores, args.target_tpr).tau
        payload = {
            "fpr95": value,
            "tau": tau,
            "n_id": int(id_scores.size),
            "n_ood": int(ood_scores.size),
        }
        _emit_json(args, payload, [args.id_scores, args.ood_scores])
        return 0
    if sub == "map":
        dump = load_dump(args.dump)
        metrics = detection_metrics(dump, iou_threshold=args.iou, conf_threshold=args.conf)
        _emit_json(args, metrics.to_json(), [args.dump])
        return 0
    if sub == "inflation":
        dump = load_dump(args.dump)
        report = audit.load_audit_report(args.audit)
        if report.get("kind") != "type1":
            raise ValueError("inflation expects a type1 audit report")
        model, calib = _load_model_calib(args)
        if model is None:
            raise ValueError("inflation needs --model and --calib")
        result = inflation_report(
            dump, report["flagged_images"], model, calib, conf_threshold=args.conf
        )
        _emit_json(args, result.to_json(), [args.dump, args.audit])
        return 0
    if sub == "reduction":
        with open(args.before, "r", encoding="utf-8") as fh:
            before = json.load(fh)
        with open(args.after, "r", encoding="utf-8") as fh:
            after = json.load(fh)
        result = reduction_stats(before, after)
        _emit_json(args, result.to_json(), [args.before, args.after])
        return 0
    if sub == "trend":
        dumps = [load_dump(p) for p in args.dumps]
        points = confidence_trend(dumps, conf_threshold=args.conf)
        prov = provenance(_args_dict(args), args.dumps)
        out = args.out or "trend_ood_test.csv"
        write_csv_report(
            out,
            ("checkpoint", "dump", "count", "mean_confidence"),
            [
                (p.checkpoint, args.dumps[p.checkpoint], p.count, p.mean_confidence)
                for p in points
            ],
            prov,
        )
        if args.fig:
            from .plots import save_trend_figure

            save_trend_figure(points, args.fig)
        return 0
    raise AssertionError(sub)


def _cmd_curate(args) -> int:
    candidates = load_dump(args.candidates)
    with open(args.config, "r", encoding="utf-8") as fh:
        config_obj = json.load(fh)
    config = CurationConfig.from_json(config_obj)
    result = curate_dataset(candidates, config)
    retained_out = args.retained_out or "curation_retained.jsonl"
    rejected_out = args.rejected_out or "curation_rejected.jsonl"
    save_curation_result(result, retained_out, rejected_out, config_echo=config_obj)
    _emit_json(
        args,
        {
            "n_candidates": len(candidates.records),
            "n_retained": len(result.retained),
            "n_rejected": len(result.rejected),
            "retained_manifest": retained_out,
            "rejected_manifest": rejected_out,
        },
        [args.candidates, args.config],
    )
    return 0


def _cmd_prep_finetune(args) -> int:
    id_train = load_dump(args.id_train)
    proximal = load_retained_manifest(args.proximal)
    manifest = prep_finetune_manifest(id_train, proximal, args.lam)
    out = args.out or "finetune_manifest.jsonl"
    save_finetune_manifest(manifest, out)
    summary = {
        "n_entries": len(manifest.entries),
        "n_proximal": sum(1 for e in manifest.entries if e.source == "proximal"),
        "lambda": manifest.lam,
        "manifest": out,
        "provenance": provenance(_args_dict(args), [args.id_train, args.proximal]),
    }
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_simulate(args) -> int:
    sub = args.subcommand
    if sub == "lemma1":
        result = simulate_lemma1(args.alpha, args.g, args.trials, args.seed)
        prov = provenance(_args_dict(args), [])
        out = args.out or "lemma1.csv"
        write_csv_report(
            out,
            ("alpha", "g_count", "trials", "mean_fp", "std_error", "expected"),
            [(result.alpha, result.g_count, result.trials, result.mean_fp,
              result.std_error, result.alpha * result.g_count)],
            prov,
        )
        return 0
    if sub == "tau-shift":
        config = SynthConfig.load(args.config)
        rates = [float(r) for r in args.rates.split(",")] if args.rates else None
        points = simulate_tau_shift(config, rates=rates, target_tpr=args.target_tpr)
        prov = provenance(_args_dict(args), [args.config])
        out = args.out or "tau_shift.csv"
        write_csv_report(
            out,
            ("contamination_rate", "n_contaminated", "tau", "fpr95"),
            [(p.contamination_rate, p.n_contaminated, p.tau, p.fpr95) for p in points],
            prov,
        )
        if args.fig:
            from .plots import save_tau_shift_figure

            save_tau_shift_figure(points, args.fig)
        return 0
    if sub == "gen":
        config = SynthConfig.load(args.config)
        dump = generate_dump(config, args.split)
        save_dump(dump, args.out)
        return 0
    raise AssertionError(sub)


def _cmd_report_kde(args) -> int:
    id_keys, id_scores = read_scores(args.id_scores)
    _, ood_scores = read_scores(args.ood_scores)
    outlier_mask = None
    if args.outlier_mask:
        if id_keys is None:
            raise ValueError(
                "--outlier-mask needs a keyed ID score file (image_id,det_index,score)"
            )
        outlier_mask = audit.OutlierMask.load(args.outlier_mask).bool_array(id_keys)
    report = kde_report(
        id_scores,
        ood_scores,
        grid_points=args.grid_points,
        outlier_mask=outlier_mask,
        target_tpr=args.target_tpr,
    )
    prov = provenance(_args_dict(args), [args.id_scores, args.ood_scores])
    prov["args"]["tau"] = report.tau
    if report.tau_without_outliers is not None:
        prov["args"]["tau_without_outliers"] = report.tau_without_outliers
    prov["args"]["bandwidth_id"] = report.bandwidth_id
    prov["args"]["bandwidth_ood"] = report.bandwidth_ood
    out = args.out or "kde_report.csv"
    write_csv_report(
        out,
        ("score", "id_density", "ood_density"),
        list(zip(report.grid, report.id_density, report.ood_density)),
        prov,
    )
    if not args.no_fig:
        fig_path = args.fig or (out.rsplit(".", 1)[0] + ".png")
        from .plots import save_kde_figure

        save_kde_figure(report, fig_path)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ood-audit",
        description="Evaluate, audit and repair OoD benchmarks for object detection.",
    )
    parser.add_argument("--version", action="version", version=f"ood-audit {__version__}")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads for per-image stages (default: OOD_AUDIT_THREADS or all cores)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dump against every format invariant")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", help="write the violation report JSON here (default stdout)")
    p.set_defaults(func=_cmd_validate)

    p_audit = sub.add_parser("audit", help="benchmark contamination audits")
    audit_sub = p_audit.add_subparsers(dest="subcommand", required=True)
    for kind in ("type1", "type2"):
        p = audit_sub.add_parser(kind)
        p.add_argument("--dump", required=True)
        p.add_argument("--class-map", required=True, help="JSON: aux vocabulary -> ID class")
        p.add_argument("--conf", type=float, default=0.25)
        if kind == "type2":
            p.add_argument("--iou", type=float, default=0.5,
                           help="IoU above which an aux box re-detects a labeled GT box")
        p.add_argument("--out")
        p.set_defaults(func=_cmd_audit)
    p = audit_sub.add_parser("outliers")
    p.add_argument("--dump", required=True, help="ID calibration dump")
    p.add_argument("--filter", help="filter spec to fit on the dump, e.g. knn:k=10")
    p.add_argument("--model", help="pre-fitted model sidecar instead of --filter")
    p.add_argument("--mask-out", help="write the outlier mask sidecar here")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("calibrate", help="fit a filter and pick the FPR95 threshold")
    p.add_argument("--filter", required=True, help="e.g. centroid_l2, knn:k=10, scale:p=85")
    p.add_argument("--cali", required=True, help="ID calibration dump")
    p.add_argument("--outlier-mask", help="outlier mask sidecar; masked detections are excluded")
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--target-tpr", type=float, default=0.95)
    p.add_argument("--model-out", help="write the fitted model sidecar here")
    p.add_argument("--scores-out", help="write per-detection calibration scores here (CSV)")
    p.add_argument("--out", help="calibration result JSON (default stdout)")
    p.set_defaults(func=_cmd_calibrate)

    p_eval = sub.add_parser("eval", help="metrics and reports")
    eval_sub = p_eval.add_subparsers(dest="subcommand", required=True)
    p = eval_sub.add_parser("hallucinations")
    p.add_argument("--dump", required=True, help="ood_test dump")
    p.add_argument("--model")
    p.add_argument("--calib")
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out", help="per-image CSV (default hallucinations_<split>_<filter>.csv)")
    p.add_argument("--summary-out", help="totals JSON")
    p.add_argument("--scores-out", help="per-detection score CSV (needs --model/--calib)")
    p.set_defaults(func=_cmd_eval)
    p = eval_sub.add_parser("fpr95")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--target-tpr", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)
    p = eval_sub.add_parser("map")
    p.add_argument("--dump", required=True, help="id_test dump with ground truth")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)
    p = eval_sub.add_parser("inflation")
    p.add_argument("--dump", required=True, help="ood_test dump")
    p.add_argument("--audit", required=True, help="type1 audit report JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)
    p = eval_sub.add_parser("reduction")
    p.add_argument("--before", required=True, help='JSON {"split": count}')
    p.add_argument("--after", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)
    p = eval_sub.add_parser("trend")
    p.add_argument("--dumps", required=True, nargs="+", help="ood_test dumps, one per checkpoint")
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--out", help="CSV (default trend_ood_test.csv)")
    p.add_argument("--fig", help="also render the trend figure (PNG)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("curate", help="reject ID-contaminated candidate images")
    p.add_argument("--candidates", required=True, help="candidate dump with aux detections")
    p.add_argument("--config", required=True, help="curation config JSON")
    p.add_argument("--retained-out")
    p.add_argument("--rejected-out")
    p.add_argument("--out", help="summary JSON (default stdout)")
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("prep-finetune", help="merge ID training data with proximal images")
    p.add_argument("--id-train", required=True)
    p.add_argument("--proximal", required=True, help="retained curation manifest")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", help="manifest path (default finetune_manifest.jsonl)")
    p.set_defaults(func=_cmd_prep_finetune)

    p_sim = sub.add_parser("simulate", help="synthetic theory checks and fixture dumps")
    sim_sub = p_sim.add_subparsers(dest="subcommand", required=True)
    p = sim_sub.add_parser("lemma1")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--g", type=int, required=True, help="ID objects per OoD-labeled image")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="CSV (default lemma1.csv)")
    p.set_defaults(func=_cmd_simulate)
    p = sim_sub.add_parser("tau-shift")
    p.add_argument("--config", required=True, help="synthetic config JSON (carries the seed)")
    p.add_argument("--rates", help="comma-separated contamination rates, e.g. 0,0.05,0.1")
    p.add_argument("--target-tpr", type=float, default=0.95)
    p.add_argument("--out", help="CSV (default tau_shift.csv)")
    p.add_argument("--fig", help="also render the sweep figure (PNG)")
    p.set_defaults(func=_cmd_simulate)
    p = sim_sub.add_parser("gen")
    p.add_argument("--config", required=True, help="synthetic config JSON (carries the seed)")
    p.add_argument("--split", required=True,
                   choices=["id_train", "id_cali", "id_test", "ood_test", "candidate"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p_report = sub.add_parser("report", help="plot-ready report data (CSV + figure)")
    report_sub = p_report.add_subparsers(dest="subcommand", required=True)
    p = report_sub.add_parser("kde")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--outlier-mask", help="adds the tau-without-outliers marker")
    p.add_argument("--grid-points", type=int, default=256)
    p.add_argument("--target-tpr", type=float, default=0.95)
    p.add_argument("--out", help="CSV (default kde_report.csv)")
    p.add_argument("--fig", help="figure path (default: CSV path with .png)")
    p.add_argument("--no-fig", action="store_true", help="skip the figure")
    p.set_defaults(func=_cmd_report_kde)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.threads_resolved = resolve_threads(args.threads)
    try:
        return args.func(args)
    except BrokenPipeError:  # pragma: no cover
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        json.dump(
            {"error": {"type": type(exc).__name__, "message": str(exc)}},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
