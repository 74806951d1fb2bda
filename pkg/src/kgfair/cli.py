"""Command-line front end: ``gen | train | audit | debias | pipeline``.

Exit codes: 0 on success, 1 for configuration problems, 2 for data
problems.  Failures print one JSON object on stderr with an ``error`` field
holding the stable error code.

Every run writes ``manifest.json`` into its output directory, recording the
seed, the config hash and the sha256 of each artifact it produced.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, check_value, validate_config
from .errors import ConfigError, ConfigParseError, DataError, KgFairError
from .fairness import CategoryAudit, audit_report
from .gcn import EdgeWeights, load_checkpoint, save_checkpoint
from .graph import SDOH_NODES, HeteroGraph, load_graph, mask_pairs, save_edge_list, sidecar_path
from .linkpred import TARGET, evaluate_mrr, holdout_split, train, write_loss_csv
from .report import BiasReport, ReportRow
from .synth import generate_graph, params_sidecar_path

COMMANDS = ("gen", "train", "audit", "debias", "pipeline")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigParseError(f"command line: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgfair", description="SDoH bias audits for drug-disease link prediction.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="key = value config file (default: built-in defaults)")
        sp.add_argument("--seed", type=int, help="overrides the config seed and KGFAIR_SEED")
        sp.add_argument("--out-dir", help="artifact directory (default: config out_dir)")
        sp.add_argument("--show-config", action="store_true", help="print the normalized config and exit")

    g = sub.add_parser("gen", help="generate a synthetic graph")
    common(g)
    g.add_argument("--out", help="edge-list path (default: <out-dir>/graph.tsv)")

    t = sub.add_parser("train", help="train the link predictor")
    common(t)
    t.add_argument("--graph", help="input edge list (default: config graph, else generate)")

    for name, text in (("audit", "measure bias per category"), ("debias", "measure, re-weight, re-measure")):
        a = sub.add_parser(name, help=text)
        common(a)
        a.add_argument("--graph", help="input edge list (default: config graph, else generate)")
        a.add_argument("--category", action="append", help="binary SDoH category (repeatable)")
        a.add_argument("--all-categories", action="store_true", help="every binary category")
        a.add_argument("--jobs", type=int, help="parallel per-category workers")
        a.add_argument("--emit-plot-data", action="store_true", help="write s0/s1 score pairs per category")
        if name == "audit":
            a.add_argument("--checkpoint", help="audit this trained model instead of retraining per category")

    pl = sub.add_parser("pipeline", help="gen, train, audit and debias in one go")
    common(pl)
    pl.add_argument("--jobs", type=int, help="parallel per-category workers")
    pl.add_argument("--emit-plot-data", action="store_true")
    return p


# --------------------------------------------------------------------------
# plumbing
# --------------------------------------------------------------------------


class Run:
    """Resolved config plus the artifact manifest of one invocation."""

    def __init__(self, config: RunConfig, out_dir: Path, command: str):
        self.config = config
        self.out_dir = out_dir
        self.command = command
        self.artifacts: dict[str, dict] = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def meta(self) -> dict:
        return {"seed": self.seed, "config_hash": self.config.config_hash(), "command": self.command}

    def record(self, path: Path, **extra) -> None:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        self.artifacts[os.path.relpath(path, self.out_dir)] = {"sha256": digest, **self.meta, **extra}

    def write_manifest(self) -> Path:
        path = self.out_dir / "manifest.json"
        old = {}
        if path.exists():
            try:
                old = json.loads(path.read_text()).get("artifacts", {})
            except (ValueError, AttributeError):
                old = {}
        old.update(self.artifacts)
        doc = {**self.meta, "config": self.config.normalized().splitlines(), "artifacts": old}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        cfg = self.out_dir / "config.txt"
        cfg.write_text(self.config.normalized())
        return path


def _resolve(args) -> tuple[RunConfig, Path]:
    config = validate_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigParseError("--seed must be >= 0")
        config = config.replace(seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigParseError("--jobs must be >= 1")
        config = config.replace(jobs=args.jobs)
    out_dir = Path(args.out_dir if args.out_dir else config.out_dir)
    return config, out_dir


def _input_graph(run: Run, path: str | None) -> HeteroGraph:
    path = path or run.config.graph
    if path:
        try:
            return load_graph(path)
        except FileNotFoundError as exc:
            raise MissingInput(f"no such graph file: {exc.filename}") from None
    return generate_graph(run.config.gen_params())


class MissingInput(DataError):
    pass


def _categories(run: Run, args) -> tuple[str, ...]:
    if getattr(args, "all_categories", False) or not getattr(args, "category", None):
        return run.config.categories
    cats = tuple(dict.fromkeys(args.category))
    check_value("categories", cats)
    return cats


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen(run: Run, args) -> int:
    out = Path(args.out) if args.out else run.out_dir / "graph.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    params = run.config.gen_params()
    graph = generate_graph(params)
    save_edge_list(graph, out)
    side = Path(params_sidecar_path(out))
    doc = json.loads(params.to_json())
    doc["config_hash"] = run.config.config_hash()
    side.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    run.record(out, kind="graph")
    run.record(Path(sidecar_path(out)), kind="graph_nodes")
    run.record(side, kind="graph_params")
    print(f"wrote {out} ({graph.num_edges} edges, {graph.num_nodes} nodes)")
    return 0


def _train(run: Run, graph: HeteroGraph) -> None:
    cfg = run.config
    eval_edges = holdout_split(graph, cfg.eval_fraction, cfg.seed)
    train_graph = mask_pairs(graph, TARGET, eval_edges)
    model, trace = train(train_graph, cfg.train_config(), cfg.gcn_config())
    result = evaluate_mrr(model, train_graph, eval_edges, cfg.negatives, cfg.seed)
    ckpt = run.out_dir / "model.ckpt"
    save_checkpoint(ckpt, model, extra={"seed": cfg.seed, "config_hash": cfg.config_hash(),
                                        "mrr": repr(result.mrr)})
    loss = run.out_dir / "loss.csv"
    write_loss_csv(trace, loss)
    run.record(ckpt, kind="checkpoint", mrr=result.mrr)
    run.record(loss, kind="loss_curve")
    print(f"trained {len(trace)} epochs; loss {trace[0]:.4f} -> {trace[-1]:.4f}; "
          f"held-out MRR {result.mrr:.4f} (K={cfg.negatives})")


def cmd_train(run: Run, args) -> int:
    _train(run, _input_graph(run, args.graph))
    return 0


def _write_weights(path: Path, weights: EdgeWeights) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["drug_id", "sdoh", "direction", "weight"])
        for (drug, sdoh, rev), v in zip(weights.keys.tolist(), weights.values.tolist()):
            w.writerow([drug, SDOH_NODES[sdoh].label, "sdoh->drug" if rev else "drug->sdoh", repr(float(v))])


def _write_plot_data(path: Path, audit: CategoryAudit) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["drug_id", "disease_id", "s0_before", "s1_before", "s0_after", "s1_after"])
        for i, (d, t) in enumerate(audit.test_edges.tolist()):
            w.writerow([d, t, repr(float(audit.before.s0[i])), repr(float(audit.before.s1[i])),
                        repr(float(audit.after.s0[i])), repr(float(audit.after.s1[i]))])


def _detect_only(row: ReportRow) -> ReportRow:
    if row.is_skipped:
        return row
    return ReportRow(row.sdoh_category, row.initial_bias, row.initial_bias, 0.0,
                     row.mrr_before, row.mrr_before, 0.0, row.seed)


def _write_report(run: Run, report: BiasReport, prefix: str, details=None) -> Path:
    csv_path = run.out_dir / f"{prefix}.csv"
    report.write_csv(csv_path)
    json_path = run.out_dir / f"{prefix}.json"
    json_path.write_text(report.to_json(details, run.meta))
    run.record(csv_path, kind="report")
    run.record(json_path, kind="report_details")
    return csv_path


def _audit(run: Run, graph: HeteroGraph, categories, fit: bool, emit_plot: bool,
           model=None, detect_prefix: str | None = None) -> BiasReport:
    cfg = run.config
    report, results = audit_report(graph, cfg.audit_seeds, cfg.gcn_config(), cfg.train_config(),
                                   cfg.audit_config(categories), model=model, fit=fit, jobs=cfg.jobs)
    csv_path = _write_report(run, report, "report", [r.details() for r in results])
    if detect_prefix:
        _write_report(run, BiasReport([_detect_only(r) for r in report.rows]), detect_prefix)
    for res in results:
        if res.before is None:
            continue
        tag = f"{res.row.sdoh_category}_seed{res.row.seed}"
        if fit and res.weights is not None:
            wpath = run.out_dir / f"edge_weights_{tag}.csv"
            _write_weights(wpath, res.weights)
            run.record(wpath, kind="edge_weights", category=res.row.sdoh_category)
        if emit_plot:
            ppath = run.out_dir / f"scores_{tag}.csv"
            _write_plot_data(ppath, res)
            run.record(ppath, kind="plot_data", category=res.row.sdoh_category)
    for row in report.rows:
        if row.is_skipped:
            print(f"{row.sdoh_category:>10s} seed {row.seed}: skipped ({row.reason})")
        else:
            print(f"{row.sdoh_category:>10s} seed {row.seed}: bias {row.initial_bias:.4g} -> "
                  f"{row.current_bias:.4g}, MRR {row.mrr_before:.4f} -> {row.mrr_after:.4f}")
    print(f"wrote {csv_path}")
    return report


def _fail_if_all_skipped(report: BiasReport, explicit: bool) -> None:
    if explicit and report.rows and all(r.is_skipped for r in report.rows):
        reason = report.rows[0].reason or "DataError"
        raise _Skipped(reason, f"every requested category was skipped ({reason})")


class _Skipped(DataError):
    def __init__(self, code: str, message: str):
        self._code = code
        super().__init__(message)

    @property
    def code(self) -> str:
        return self._code


def cmd_audit(run: Run, args) -> int:
    graph = _input_graph(run, args.graph)
    cats = _categories(run, args)
    model = None
    if args.checkpoint:
        try:
            model, _, _ = load_checkpoint(args.checkpoint)
        except FileNotFoundError as exc:
            raise MissingInput(f"no such checkpoint: {exc.filename}") from None
    report = _audit(run, graph, cats, fit=False, emit_plot=args.emit_plot_data, model=model)
    _fail_if_all_skipped(report, bool(args.category) and not args.all_categories)
    return 0


def cmd_debias(run: Run, args) -> int:
    graph = _input_graph(run, args.graph)
    cats = _categories(run, args)
    report = _audit(run, graph, cats, fit=True, emit_plot=args.emit_plot_data)
    _fail_if_all_skipped(report, bool(args.category) and not args.all_categories)
    return 0


def cmd_pipeline(run: Run, args) -> int:
    args.out = None
    cmd_gen(run, args)
    graph = load_graph(run.out_dir / "graph.tsv")
    _train(run, graph)
    # the de-bias pass measures detection first; its "before" columns are the audit
    _audit(run, graph, run.config.categories, fit=True, emit_plot=args.emit_plot_data,
           detect_prefix="audit")
    return 0


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "audit": cmd_audit, "debias": cmd_debias,
            "pipeline": cmd_pipeline}


def _error_json(exc: KgFairError) -> str:
    doc = {"error": exc.code, "message": str(exc)}
    for attr in ("line", "key"):
        v = getattr(exc, attr, None)
        if v is not None:
            doc[attr] = v
    return json.dumps(doc, sort_keys=True)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        try:
            config, out_dir = _resolve(args)
        except FileNotFoundError as exc:
            raise ConfigParseError(f"no such config file: {exc.filename}") from None
        if args.show_config:
            sys.stdout.write(config.normalized())
            return 0
        run = Run(config, out_dir, args.command)
        try:
            return HANDLERS[args.command](run, args)
        finally:
            if run.artifacts:
                run.write_manifest()
    except ConfigError as exc:
        print(_error_json(exc), file=sys.stderr)
        return 1
    except DataError as exc:
        print(_error_json(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
