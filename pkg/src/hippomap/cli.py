"""Command-line entry point: ``hippomap <command> [flags]``.

Settings resolve as flags > ``--config`` JSON file > ``HIPPOMAP_*`` env vars
> built-in defaults. Every command writes ``config.json`` (the resolved
settings) and ``run.log`` into its ``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .cogmap import CognitiveMap, load_map, save_map
from .dynamics import detect_deadlock
from .embed import RemoteEmbedder, StubEmbedder
from .engine import (
    BackendError,
    ChatCompletionsBackend,
    ScriptedBackend,
    SolveConfig,
    batch_eval,
    evaluate_answer,
    run_learning_loop,
    solve,
)
from .ingest import load_problems, load_trajectories, write_problems, write_trajectories
from .navigator import extract_training_set, load_model, save_model, train
from .simtraj import SimConfig, SimTask, SimTaskConfig, generate
from .topo import analyze, export_graph, skeleton

log = logging.getLogger("hippomap")


@dataclass
class RunConfig:
    seed: int = 42
    tau_cluster: float = 0.75
    tau_deadlock: float = 0.3
    hint_trust: float = 0.7
    perturb_trust: float = 0.3
    hint_score: float = 0.6
    perturb_score: float = 0.5
    intervention_prob: float = 0.5
    perturb_temperature: float = 1.5
    base_temperature: float = 0.7
    t_max: int = 5
    trust_mode: str = "static"
    alpha: float = 0.9
    dimension: int = 384
    gate: str = "trust"
    embedder: str = "stub"
    embed_url: str | None = None
    llm_url: str | None = None
    llm_model: str | None = None
    epochs: int = 100
    learning_rate: float = 1e-3

    def validate(self) -> None:
        unit = ["tau_cluster", "tau_deadlock", "hint_trust", "perturb_trust", "hint_score",
                "perturb_score", "intervention_prob", "alpha"]
        for name in unit:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.perturb_temperature <= 0 or self.base_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.trust_mode not in ("static", "ema") or self.gate not in ("trust", "navigator"):
            raise ValueError("bad trust_mode or gate")
        if self.embedder not in ("stub", "remote"):
            raise ValueError("embedder must be 'stub' or 'remote'")

    def solve_config(self) -> SolveConfig:
        return SolveConfig(
            t_max=self.t_max, hint_trust=self.hint_trust, perturb_trust=self.perturb_trust,
            perturb_temperature=self.perturb_temperature, base_temperature=self.base_temperature,
            intervention_prob=self.intervention_prob, gate=self.gate, seed=self.seed,
        )


def _coerce(field_type, raw):
    if raw is None:
        return None
    kind = str(field_type)
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return str(raw)


def resolve_config(args: argparse.Namespace, environ: dict | None = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    for name in types:
        raw = environ.get(f"HIPPOMAP_{name.upper()}")
        if raw is not None:
            setattr(cfg, name, _coerce(types[name], raw))
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(data) - set(types)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name, value in data.items():
            setattr(cfg, name, _coerce(types[name], value))
    for name in types:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", default="out", help="directory for outputs, config snapshot and log")
    p.add_argument("--config", help="JSON file of RunConfig settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--tau-cluster", dest="tau_cluster", type=float)
    p.add_argument("--tau-deadlock", dest="tau_deadlock", type=float)
    p.add_argument("--hint-trust", dest="hint_trust", type=float)
    p.add_argument("--perturb-trust", dest="perturb_trust", type=float)
    p.add_argument("--hint-score", dest="hint_score", type=float)
    p.add_argument("--perturb-score", dest="perturb_score", type=float)
    p.add_argument("-P", "--intervention-prob", dest="intervention_prob", type=float)
    p.add_argument("--perturb-temperature", dest="perturb_temperature", type=float)
    p.add_argument("--base-temperature", dest="base_temperature", type=float)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--trust-mode", dest="trust_mode", choices=["static", "ema"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--dimension", type=int)
    p.add_argument("--gate", choices=["trust", "navigator"])
    p.add_argument("--embedder", choices=["stub", "remote"])
    p.add_argument("--embed-url", dest="embed_url")
    p.add_argument("--llm-url", dest="llm_url")
    p.add_argument("--llm-model", dest="llm_model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)


def _backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["scripted", "sim", "http"], default="sim")
    p.add_argument("--scenario", help="scenario JSON for the scripted backend")
    p.add_argument("--sim-task", dest="sim_task", help="SimTaskConfig JSON for the sim backend")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hippomap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-map", help="cluster recorded trajectories into a cognitive map")
    _common(p)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out", help="map file (default <out-dir>/map.json)")

    p = sub.add_parser("analyze", help="topology report plus a graph export")
    _common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--format", choices=["dot", "graphml", "json"], default="dot")
    p.add_argument("--red-k", dest="red_k", type=int, default=20)
    p.add_argument("--min-success", dest="min_success", type=int, default=2)

    p = sub.add_parser("export", help="write a map or its skeleton as dot/graphml/json")
    _common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--format", required=True)
    p.add_argument("--out", help="output file")
    p.add_argument("--skeleton", type=int, metavar="MIN_SUCCESS", help="export the skeleton subgraph")

    p = sub.add_parser("train-nav", help="train the navigator from map edge statistics")
    _common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--out", help="model file (default <out-dir>/navigator.json)")

    p = sub.add_parser("solve", help="run map-guided refinement on one question")
    _common(p)
    _backend_flags(p)
    p.add_argument("--question", required=True)
    p.add_argument("--gold")
    p.add_argument("--map")
    p.add_argument("--model")

    for name, help_ in (("batch-eval", "evaluate a problem set"),
                        ("sweep", "batch-eval across intervention probabilities")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _backend_flags(p)
        p.add_argument("--problems", required=True)
        p.add_argument("--fields", default="gsm8k", help="field mapping name or JSON object")
        p.add_argument("--map")
        p.add_argument("--model")
        p.add_argument("--limit", type=int)
        if name == "sweep":
            p.add_argument("--p-values", dest="p_values", default="0.3,0.5,0.6,0.7")

    p = sub.add_parser("learn-loop", help="online learning rounds from an empty or given map")
    _common(p)
    _backend_flags(p)
    p.add_argument("--problems", required=True)
    p.add_argument("--fields", default="gsm8k")
    p.add_argument("--map")
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--samples-per-round", dest="samples_per_round", type=int, default=200)

    p = sub.add_parser("simulate", help="write synthetic trajectories and a simulated task")
    _common(p)
    p.add_argument("--sim-config", dest="sim_config", help="SimConfig JSON")
    p.add_argument("--task-config", dest="task_config", help="SimTaskConfig JSON")
    p.add_argument("--n-trajectories", dest="n_trajectories", type=int)
    p.add_argument("--vortex-size", dest="vortex_size", type=int)
    return parser


# -- helpers ----------------------------------------------------------------

def _provider(cfg: RunConfig):
    if cfg.embedder == "remote":
        return RemoteEmbedder(cfg.embed_url, dimension=cfg.dimension)
    return StubEmbedder(cfg.dimension)


def _backend(args, cfg: RunConfig):
    if args.backend == "scripted":
        if not args.scenario:
            raise ValueError("--backend scripted needs --scenario")
        return ScriptedBackend.from_file(args.scenario)
    if args.backend == "http":
        return ChatCompletionsBackend(cfg.llm_url, cfg.llm_model)
    task_cfg = SimTaskConfig.from_file(args.sim_task) if args.sim_task else SimTaskConfig(seed=cfg.seed)
    return SimTask(task_cfg).backend()


def _load_or_new_map(path, cfg: RunConfig) -> CognitiveMap:
    if path:
        return load_map(path)
    return CognitiveMap(cfg.dimension, cfg.tau_cluster, trust_mode=cfg.trust_mode, alpha=cfg.alpha)


def _model(path, cfg: RunConfig):
    if not path:
        return None
    model = load_model(path)
    model.hint_threshold = cfg.hint_score
    model.perturb_threshold = cfg.perturb_score
    return model


def _fields(raw: str):
    return json.loads(raw) if raw.strip().startswith("{") else raw


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_build_map(args, cfg, out: Path) -> None:
    records, report = load_trajectories(args.trajectories)
    if not records:
        raise ValueError(f"{args.trajectories}: no valid trajectories")
    provider = _provider(cfg)
    cmap = CognitiveMap(cfg.dimension, cfg.tau_cluster, trust_mode=cfg.trust_mode, alpha=cfg.alpha)
    for rec in records:
        cmap.ingest_trajectory(rec.steps, rec.outcome, provider)
    path = Path(args.out) if args.out else out / "map.json"
    save_map(cmap, path)
    _write_json(out / "ingest_report.json", report.to_dict())
    log.info("built map: %d states, %d edges from %d trajectories", len(cmap), len(cmap.edges), len(records))
    print(json.dumps({"map": str(path), "states": len(cmap), "edges": len(cmap.edges),
                      "trajectories": len(records), "rejected": len(report.rejections)}))


def cmd_analyze(args, cfg, out: Path) -> None:
    cmap = load_map(args.map)
    report = analyze(cmap, args.red_k, args.min_success).to_dict()
    report["deadlock_states"] = sum(detect_deadlock(s.trust, threshold=cfg.tau_deadlock) for s in cmap.states)
    _write_json(out / "topology.json", report)
    graph = export_graph(cmap, args.format, out / f"map.{args.format}")
    print(json.dumps({"stats": str(out / "topology.json"), "graph": str(graph),
                      "scc_count": report["scc_count"], "blue_nodes": len(report["blue_nodes"])}))


def cmd_export(args, cfg, out: Path) -> None:
    cmap = load_map(args.map)
    g = skeleton(cmap, args.skeleton) if args.skeleton else cmap
    path = Path(args.out) if args.out else out / f"map.{args.format}"
    export_graph(g, args.format, path)
    print(str(path))


def cmd_train_nav(args, cfg, out: Path) -> None:
    cmap = load_map(args.map)
    data = extract_training_set(cmap)
    model = train(data, epochs=cfg.epochs, learning_rate=cfg.learning_rate, seed=cfg.seed)
    model.hint_threshold = cfg.hint_score
    model.perturb_threshold = cfg.perturb_score
    path = Path(args.out) if args.out else out / "navigator.json"
    save_model(model, path)
    stats = {"model": str(path), "rows": len(data), "positives": int(data.labels.sum()),
             "negatives": int(len(data) - data.labels.sum()), "train_accuracy": model.train_accuracy}
    _write_json(out / "train_report.json", stats)
    print(json.dumps(stats))


def cmd_solve(args, cfg, out: Path) -> None:
    provider = _provider(cfg)
    cmap = _load_or_new_map(args.map, cfg)
    result = solve(args.question, cmap, _model(args.model, cfg), _backend(args, cfg), provider, cfg.solve_config())
    if args.gold:
        result.correct = evaluate_answer(result.final_answer, args.gold, provider)
    _write_json(out / "solve.json", result.to_dict())
    print(json.dumps({"answer": result.extracted_answer, "rounds": result.rounds_used,
                      "interventions": len(result.interventions), "degraded": result.degraded,
                      "correct": result.correct}))


def _problems(args):
    problems, report = load_problems(args.problems, _fields(args.fields))
    if getattr(args, "limit", None):
        problems = problems[: args.limit]
    return problems, report


def cmd_batch_eval(args, cfg, out: Path) -> None:
    problems, load_report = _problems(args)
    provider = _provider(cfg)
    report = batch_eval(problems, _load_or_new_map(args.map, cfg), _model(args.model, cfg),
                        _backend(args, cfg), provider, cfg.solve_config())
    _write_json(out / "batch_eval.json", report.to_dict())
    _write_json(out / "load_report.json", load_report.to_dict())
    print(json.dumps({"success_rate": report.success_rate, "avg_rounds": report.avg_rounds,
                      "n": len(report.items), "hints": report.hint_count, "perturbs": report.perturb_count}))


def cmd_sweep(args, cfg, out: Path) -> None:
    problems, _ = _problems(args)
    provider = _provider(cfg)
    p_values = [float(x) for x in args.p_values.split(",") if x.strip()]
    rows = []
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"P={p} outside [0, 1]")
        sc = cfg.solve_config()
        sc.intervention_prob = p
        report = batch_eval(problems, _load_or_new_map(args.map, cfg), _model(args.model, cfg),
                            _backend(args, cfg), provider, sc)
        rows.append({"P": p, "success_rate": report.success_rate, "avg_rounds": report.avg_rounds,
                     "hints": report.hint_count, "perturbs": report.perturb_count, "n": len(report.items)})
        print(json.dumps(rows[-1]))
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]) if rows else ["P"])
        w.writeheader()
        w.writerows(rows)


def cmd_learn_loop(args, cfg, out: Path) -> None:
    problems, _ = _problems(args)
    cmap = _load_or_new_map(args.map, cfg)
    reports = run_learning_loop(problems, _backend(args, cfg), _provider(cfg), out, args.rounds,
                                args.samples_per_round, cfg.solve_config(), cmap,
                                train_epochs=cfg.epochs, train_seed=cfg.seed)
    for r in reports:
        print(json.dumps({"round": r.round, "success_rate": r.success_rate, "map_states": r.map_states,
                          "navigator_trained": r.navigator_trained}))


def cmd_simulate(args, cfg, out: Path) -> None:
    sim = SimConfig(**json.loads(Path(args.sim_config).read_text())) if args.sim_config else SimConfig(seed=cfg.seed)
    if args.n_trajectories is not None:
        sim.n_trajectories = args.n_trajectories
    if args.vortex_size is not None:
        sim.vortex_size = args.vortex_size
    records = generate(sim)
    write_trajectories(records, out / "trajectories.jsonl")
    task_cfg = SimTaskConfig.from_file(args.task_config) if args.task_config else SimTaskConfig(seed=cfg.seed)
    task = SimTask(task_cfg)
    write_problems(task.problems(), out / "problems.jsonl")
    _write_json(out / "sim_task.json", task_cfg.to_dict())
    _write_json(out / "sim_config.json", asdict(sim))
    print(json.dumps({"trajectories": str(out / "trajectories.jsonl"), "n": len(records),
                      "problems": str(out / "problems.jsonl"), "sim_task": str(out / "sim_task.json")}))


COMMANDS = {
    "build-map": cmd_build_map,
    "analyze": cmd_analyze,
    "export": cmd_export,
    "train-nav": cmd_train_nav,
    "solve": cmd_solve,
    "batch-eval": cmd_batch_eval,
    "sweep": cmd_sweep,
    "learn-loop": cmd_learn_loop,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"hippomap: invalid configuration: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {"command": args.command, "argv": sys.argv[1:] if argv is None else list(argv),
                "config": asdict(cfg), "version": __version__}
    _write_json(out / "config.json", snapshot)

    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        COMMANDS[args.command](args, cfg, out)
    except (BackendError, ValueError, OSError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        print(f"hippomap {args.command}: {exc}", file=sys.stderr)
        return 2
    finally:
        root.removeHandler(handler)
        handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
