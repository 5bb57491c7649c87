"""``satlens`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .diagnostics import SaturationReport, detect_tails, min_delta_search, sweep_row, width_advice
from .errors import BadBundle, ConfigError, SatlensError, TooFewLayers
from .experiment import (
    load_checkpoint,
    load_experiment,
    marker_index,
    point_receptive_fields,
    run_experiment,
    save_checkpoint,
)
from .nn.train import evaluate, projected_accuracy
from .numeric import derive_seed
from .probes import probe_sweep
from .report import (
    REPORT_SCHEMA,
    chart_svg,
    clean,
    probe_csv,
    read_json,
    run_metadata,
    saturation_csv,
    sweep_csv,
    write_json,
)


def worker_threads() -> int:
    raw = os.environ.get("SATLENS_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SATLENS_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"SATLENS_THREADS must be a positive integer, got {raw!r}")
    return n


def _tails(saturations) -> list:
    try:
        return detect_tails(saturations)
    except TooFewLayers:
        return []


def _tail_dicts(tails) -> list[dict]:
    return [{"start": t.start, "end": t.end, "tail_mean": t.tail_mean, "rest_mean": t.rest_mean}
            for t in tails]


def _advice_dict(s_mu: float) -> dict | None:
    if not 0 < s_mu <= 1:
        return None
    a = width_advice(s_mu)
    return {"action": a.action, "factor": a.factor, "mean_saturation": a.mean_saturation}


def _probe_rows(model, report: SaturationReport, sweep, tails) -> list[dict]:
    rfs = point_receptive_fields(model)
    in_tail = {i for t in tails for i in range(t.start, t.end + 1)}
    return [{"index": i, "layer": name, "width": report.widths[i], "k": report.ks[i],
             "saturation": report.saturations[i], "probe_accuracy": sweep.accuracies[i],
             "probe_train_accuracy": sweep.train_accuracies[i], "receptive_field": rfs[i],
             "in_tail": i in in_tail}
            for i, name in enumerate(report.layers)]


def _write_probe_outputs(out: Path, model, dataset, report: SaturationReport, title: str) -> dict:
    sweep = probe_sweep(model, dataset)
    tails = _tails(report.saturations)
    (out / "probes.csv").write_text(probe_csv(_probe_rows(model, report, sweep, tails)))
    (out / "chart.svg").write_text(chart_svg(report.layers, report.saturations, sweep.accuracies,
                                             tails, marker_index(model), title))
    result = sweep.to_dict()
    result["tails"] = _tail_dicts(tails)
    result["marker"] = marker_index(model)
    write_json(out / "probes.json", result)
    return result


def _current_report(model, delta: float, epoch: int = 0) -> SaturationReport:
    spaces = [p.eigenspace for p in model.points]
    return SaturationReport.from_eigenspaces([p.name for p in model.points], spaces, epoch, delta)


# -- commands --------------------------------------------------------------------

def cmd_train(args) -> int:
    exp = load_experiment(args.config)
    if args.seed is not None:
        exp = exp.with_seed(args.seed)
    if args.delta:
        if len(args.delta) != 1:
            raise ConfigError("train accepts a single --delta")
        exp = exp.with_delta(args.delta[0])
    out = Path(args.out or exp.output)
    out.mkdir(parents=True, exist_ok=True)
    model, dataset, history = run_experiment(exp)
    final = history[-1].report
    tails = _tails(final.saturations)
    report = {
        "schema": REPORT_SCHEMA,
        "meta": run_metadata(exp.to_dict(), exp.train.seed),
        "config": exp.to_dict(),
        "epochs": [r.to_dict() for r in history],
        "final": {
            "saturation": final.to_dict(),
            "width_advice": _advice_dict(final.mean_saturation),
            "tails": _tail_dicts(tails),
            "receptive_field_marker": marker_index(model),
            "val_accuracy": history[-1].val_accuracy,
        },
    }
    if exp.analysis.get("probe"):
        report["probes"] = _write_probe_outputs(out, model, dataset, final, f"{out.name}: saturation and probes")
    write_json(out / "report.json", report)
    (out / "saturation.csv").write_text(saturation_csv([r.report for r in history]))
    save_checkpoint(out / "checkpoint.json", exp, model)
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_project_sweep(args) -> int:
    exp, model, dataset = load_checkpoint(args.checkpoint)
    deltas = sorted(args.delta or exp.analysis["deltas"])
    for d in deltas:
        if not 0 < d <= 1:
            raise ConfigError(f"delta values must lie in (0, 1], got {d}")
    repeats = args.repeats or int(exp.analysis["repeats"])
    seed = exp.train.seed if args.seed is None else args.seed
    policy = exp.train.policy

    def retrain(i: int):
        return run_experiment(exp.with_seed(exp.train.seed + i), dataset)[0]

    models = [model]
    if repeats > 1:
        with ThreadPoolExecutor(max_workers=worker_threads()) as pool:
            models += list(pool.map(retrain, range(1, repeats)))

    runs: dict[float, list] = {d: [] for d in deltas}
    sum_dims: dict[float, list] = {d: [] for d in deltas}
    for r, m in enumerate(models):
        base = evaluate(m, dataset, "val")
        for d in deltas:
            rseed = derive_seed(seed, r) if args.random_projection else None
            acc, ks = projected_accuracy(m, dataset, d, policy, rseed)
            runs[d].append((acc, base))
            sum_dims[d].append(sum(ks))

    rows = []
    for d in deltas:
        row = sweep_row(d, runs[d])
        pairs = np.asarray(runs[d])
        rows.append({"delta": d, "n": row.n, "mu_diff": row.mean_diff, "sigma": row.std,
                     "t": row.t, "p": row.p, "status": row.status, "sum_dim": sum_dims[d][0],
                     "rel_perf": float(np.mean(pairs[:, 0] / pairs[:, 1]))})
    verdict: dict
    try:
        best, _ = min_delta_search(runs, float(exp.analysis["alpha"]))
        verdict = {"min_delta": best}
    except SatlensError as exc:
        verdict = {"min_delta": None, "reason": exc.kind}

    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = "sweep-random" if args.random_projection else "sweep"
    (out / f"{stem}.csv").write_text(sweep_csv(rows))
    write_json(out / f"{stem}.json", {
        "mode": "random" if args.random_projection else "eigenspace",
        "repeats": repeats, "alpha": exp.analysis["alpha"], "rows": rows, "verdict": verdict,
        "pairs": {str(d): runs[d] for d in deltas},
    })
    sys.stdout.write(sweep_csv(rows))
    return 0


def cmd_probe(args) -> int:
    exp, model, dataset = load_checkpoint(args.checkpoint)
    if args.delta:
        model.select_eigenspaces(args.delta[0], exp.train.policy)
    delta = args.delta[0] if args.delta else exp.train.delta
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    result = _write_probe_outputs(out, model, dataset, _current_report(model, delta),
                                  f"{out.name}: saturation and probes")
    for name, acc in zip(result["layers"], result["accuracies"]):
        print(f"{name}\t{acc:.4f}")
    return 0


def _load_saturations(source: str) -> list[float]:
    path = Path(source)
    if path.is_dir():
        path = path / "report.json"
    data = read_json(path)
    try:
        if "final" in data:
            return list(data["final"]["saturation"]["saturations"])
        return list(data["saturations"])
    except (KeyError, TypeError) as exc:
        raise BadBundle(f"{path} holds no saturation values") from exc


def cmd_detect_tails(args) -> int:
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--values must be comma-separated numbers: {exc}") from exc
    elif args.source:
        values = _load_saturations(args.source)
    else:
        raise ConfigError("detect-tails needs a bundle/report path or --values")
    tails = detect_tails(values)
    print(json.dumps({"saturations": clean(values), "tails": _tail_dicts(tails)}, indent=2))
    return 0


def summarize(bundle: Path) -> str:
    """Human-readable summary of a run directory."""
    report = read_json(bundle / "report.json", REPORT_SCHEMA)
    try:
        sat = report["final"]["saturation"]
        s_mu = float(sat["mean_saturation"])
        layers, values = sat["layers"], sat["saturations"]
        tails = report["final"]["tails"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadBundle(f"{bundle / 'report.json'} is missing the final saturation record") from exc
    lines = [f"run: {bundle}", f"config hash: {report.get('meta', {}).get('config_hash', '?')}"]
    if "val_accuracy" in report["final"]:
        lines.append(f"validation accuracy: {report['final']['val_accuracy']:.4f}")
    lines.append(f"mean saturation: {s_mu:.4f}")
    if 0 < s_mu <= 1:
        advice = width_advice(s_mu)
        if advice.action == "keep":
            lines.append("width advice: keep width")
        else:
            lines.append(f"width advice: {advice.action} width by factor {advice.factor:g}")
    lines.append("layers: " + ", ".join(f"{n}={v:.3f}" for n, v in zip(layers, values)))
    if tails:
        for t in tails:
            lines.append(f"tail: layers {t['start']}-{t['end']} ({layers[t['start']]}..{layers[t['end']]}), "
                         f"mean {t['tail_mean']:.3f} vs rest {t['rest_mean']:.3f}")
    else:
        lines.append("tails: none")
    probes_path = bundle / "probes.json"
    if probes_path.exists():
        probes = read_json(probes_path)
        try:
            lines.append("probe accuracy: " + ", ".join(
                f"{n}={a:.3f}" for n, a in zip(probes["layers"], probes["accuracies"])))
        except (KeyError, TypeError) as exc:
            raise BadBundle(f"{probes_path} is malformed") from exc
    for stem in ("sweep", "sweep-random"):
        path = bundle / f"{stem}.json"
        if path.exists():
            sweep = read_json(path)
            verdict = sweep.get("verdict", {})
            if verdict.get("min_delta") is not None:
                lines.append(f"{stem}: smallest non-significant delta = {verdict['min_delta']}")
            else:
                lines.append(f"{stem}: no qualifying delta ({verdict.get('reason', 'unknown')})")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    bundle = Path(args.bundle)
    if not bundle.is_dir():
        raise BadBundle(f"{bundle} is not a run directory")
    sys.stdout.write(summarize(bundle))
    return 0


# -- argument parsing -------------------------------------------------------------

def _delta_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid delta list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satlens", description="Layer saturation analysis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint: bool):
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint.json from a train run")
        else:
            p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--delta", type=_delta_list, help="delta value(s), comma separated")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train a model and write report.json, saturation.csv, checkpoint.json")
    common(p, checkpoint=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("project-sweep", help="paired t-test table of projected vs. unprojected accuracy")
    common(p, checkpoint=True)
    p.add_argument("--repeats", type=int, help="number of seeds (1 = the checkpoint only)")
    p.add_argument("--random-projection", action="store_true",
                   help="use random orthonormal subspaces of matching rank")
    p.set_defaults(func=cmd_project_sweep)

    p = sub.add_parser("probe", help="logistic-regression probes per analysis point plus chart")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("detect-tails", help="report tail patterns in a saturation profile")
    p.add_argument("source", nargs="?", help="run directory or report.json")
    p.add_argument("--values", help="comma-separated saturations")
    p.set_defaults(func=cmd_detect_tails)

    p = sub.add_parser("report", help="print a summary of a run directory")
    p.add_argument("bundle", help="run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "repeats", None) is not None and args.repeats < 1:
            raise ConfigError("--repeats must be >= 1")
        worker_threads()
        return args.func(args)
    except SatlensError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
