"""Command-line harness: instance generation, heuristics, bounds, RL training and comparisons.

Every command writes its outputs plus a ``manifest.json`` into a run directory
``<out>/<command>-<hash>`` whose name is derived from the command's full
configuration, so reruns land in (and byte-identically overwrite) the same place.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, nn
from .env import ADD_DELETE_NOOP, ADD_NOOP, MdpConfig
from .heuristics import greedy, sp_heuristic
from .instance import (
    SCENARIOS,
    FlexNetwork,
    Instance,
    InstanceError,
    build_random_instance,
    fctp_to_fdp,
    load_instance,
    sample_demand,
    save_instance,
)
from .meta import TaskSpec, adapt, meta_train
from .oracle import ENGINES, lp_upper_bound, profits
from .ppo import EVAL_SEED, NumericalError, PpoConfig, rollout_networks, score_candidates, train
from .simplex import SimplexError

log = logging.getLogger("flexdesign")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4
ACTION_SETS = {"add": ADD_NOOP, "add-delete": ADD_DELETE_NOOP}
METHODS = ("greedy", "sp", "rl")


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parse_arcs(text: str) -> list[tuple[int, int]]:
    """``"0-1,2-3"`` -> [(0, 1), (2, 3)]; the empty string is the empty design."""
    arcs = []
    for tok in text.replace(" ", "").split(","):
        if not tok:
            continue
        i, _, j = tok.partition("-")
        try:
            arcs.append((int(i), int(j)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad arc {tok!r}; expected i-j") from None
    return arcs


# ---------------------------------------------------------------------------
# run directories and manifests


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


class Run:
    """Collects output files for one command invocation and writes its manifest."""

    def __init__(self, command: str, config: dict, out_root: str, instance: Instance | None = None):
        self.command = command
        self.config = config
        self.instance_digest = instance.digest() if instance is not None else None
        key = {"command": command, "config": config, "instance": self.instance_digest}
        self.dir = Path(out_root) / f"{command}-{_digest(key)}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.seeds: dict = {}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({"manifest": "manifest.json", **obj}, indent=2, sort_keys=True) + "\n")
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def finish(self) -> Path:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "instance_digest": self.instance_digest,
            "version": __version__,
            "outputs": sorted(set(self.outputs)),
        }
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        print(f"run directory: {self.dir}")
        return p


def _load(args) -> Instance:
    inst = load_instance(args.instance)
    if getattr(args, "k", None) is not None:
        inst = inst.with_budget(args.k)
    return inst


def _design_dict(instance: Instance, net: FlexNetwork, **extra) -> dict:
    return {"instance_digest": instance.digest(), "arcs": [list(a) for a in net.arc_list()], **extra}


def _read_design(path: str, instance: Instance) -> FlexNetwork:
    obj = json.loads(Path(path).read_text())
    arcs = obj["arcs"] if isinstance(obj, dict) else obj
    for i, j in arcs:
        if not (0 <= i < instance.m and 0 <= j < instance.n):
            raise InstanceError("arcs", f"arc ({i}, {j}) outside the {instance.m}x{instance.n} network")
    return FlexNetwork.from_arcs(instance.m, instance.n, arcs)


def _evaluate(instance: Instance, net: FlexNetwork, samples, engine: str = "flow") -> tuple[float, float]:
    """Objective estimate and its standard error on ``samples``."""
    vals = profits(instance, samples, net.arcs, engine=engine) - float(np.sum(instance.arc_cost * net.arcs))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(np.mean(vals)), stderr


def _eval_seed(seed: int, k: int) -> int:
    """Seed of the shared evaluation SampleSet for budget ``k``."""
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    if args.scenario == "fctp":
        if not args.fctp:
            raise UsageError("gen fctp needs --fctp PATH (JSON with capacities, demands, transport_cost, fixed_charge)")
        raw = json.loads(Path(args.fctp).read_text())
        inst = fctp_to_fdp(raw["capacities"], raw["demands"], raw["transport_cost"], raw["fixed_charge"], args.k)
    elif args.scenario == "random":
        inst = build_random_instance(args.m, args.n, args.k or 5, args.seed)
    elif args.scenario in SCENARIOS:
        inst = SCENARIOS[args.scenario]() if args.k is None else SCENARIOS[args.scenario](args.k)
    else:
        valid = ", ".join([*SCENARIOS, "random", "fctp"])
        raise UsageError(f"unknown scenario {args.scenario!r}; valid names: {valid}")
    run = Run("gen", {"scenario": args.scenario, "k": args.k, "seed": args.seed}, args.out, inst)
    path = save_instance(inst, run.path("instance.json"))
    run.finish()
    print(f"instance: {path} ({inst.m}x{inst.n}, K={inst.budget}, digest {inst.digest()})")
    return EXIT_OK


def cmd_eval(args) -> int:
    inst = _load(args)
    if args.design:
        net = _read_design(args.design, inst)
    else:
        net = FlexNetwork.from_arcs(inst.m, inst.n, args.arcs or [])
    if net.arc_count > inst.budget:
        raise InstanceError("design", f"{net.arc_count} arcs exceed the budget K={inst.budget}")
    samples = sample_demand(inst.demand_model, args.seed, args.samples)
    mean, stderr = _evaluate(inst, net, samples, args.engine)
    run = Run("eval", vars_config(args), args.out, inst)
    run.seeds["eval"] = args.seed
    run.write_json("eval.json", _design_dict(inst, net, objective=mean, stderr=stderr, samples=args.samples))
    run.finish()
    print(f"objective: {mean:.6f} +- {stderr:.6f}")
    print(f"arcs: {net.arc_list()}")
    return EXIT_OK


def _heuristic(args, name: str) -> int:
    inst = _load(args)
    samples = sample_demand(inst.demand_model, args.seed, args.omega)
    net, trace = greedy(inst, samples, args.omega) if name == "greedy" else sp_heuristic(inst, samples, args.omega)
    run = Run(name, vars_config(args), args.out, inst)
    run.seeds["decision_samples"] = args.seed
    score = trace.scores[-1] if trace.scores else 0.0
    run.write_json("trace.json", trace.to_dict())
    run.write_json("design.json", _design_dict(inst, net, decision_score=score))
    if args.samples:
        mean, stderr = _evaluate(inst, net, sample_demand(inst.demand_model, args.eval_seed, args.samples))
        run.seeds["eval"] = args.eval_seed
        run.write_json("eval.json", _design_dict(inst, net, objective=mean, stderr=stderr, samples=args.samples))
        print(f"objective ({args.samples} fresh samples): {mean:.6f} +- {stderr:.6f}")
    run.finish()
    print(f"{name}: {net.arc_count} arcs, decision-sample objective {score:.6f}")
    print(f"arcs: {net.arc_list()}")
    return EXIT_OK


def cmd_greedy(args) -> int:
    return _heuristic(args, "greedy")


def cmd_sp(args) -> int:
    return _heuristic(args, "sp")


def cmd_bound(args) -> int:
    inst = _load(args)
    samples = sample_demand(inst.demand_model, args.seed, args.omega)
    bound, cert = lp_upper_bound(inst, samples, args.omega, return_certificate=True)
    run = Run("bound", vars_config(args), args.out, inst)
    run.seeds["samples"] = args.seed
    run.write_json("bound.json", {"bound": bound, "certificate": cert, "omega": args.omega})
    run.finish()
    print(f"upper bound: {bound:.6f} (certified <= {cert:.6f})")
    return EXIT_OK


def _ppo_config(args, seed: int) -> PpoConfig:
    kw = dict(seed=seed, episodes_per_epoch=args.episodes, max_steps=args.max_steps, max_epochs=args.max_epochs,
              early_stop_steps=args.early_stop, hidden_sizes=tuple(args.hidden))
    return PpoConfig(**kw)


def _mdp_config(args, horizon: int) -> MdpConfig:
    return MdpConfig(horizon=horizon, omega=args.omega, variance_reduction=args.vr,
                     action_set=ACTION_SETS[args.action_set], seed=args.seed)


def _plotdata(reports: dict) -> str:
    """Long-format training curves: run, step, metric, value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "step", "metric", "value"])
    for name, rep in reports.items():
        for r in rep.rows:
            for metric in ("mean_return", "eval_profit"):
                if r[metric] != "":
                    w.writerow([name, r["step"], metric, repr(r[metric])])
    return buf.getvalue()


def _train_seeds(inst: Instance, args, seeds, designs_per_seed: int, run: Run | None, init=None):
    """Train one agent per seed, extract designs from each, pick the best on the selection set."""
    mdp = _mdp_config(args, inst.budget)
    selection = sample_demand(inst.demand_model, EVAL_SEED, 5000)
    finals, reports = [], {}
    for s in seeds:
        cfg = _ppo_config(args, s)
        if init is None:
            policy, value, report = train(inst, mdp, cfg)
        else:
            policy, value, report = adapt(init, inst, inst.budget, cfg, mdp)
        rng = np.random.Generator(np.random.PCG64(s))
        finals.append(rollout_networks(policy, inst, mdp, rng, designs_per_seed))
        if report.best_network is not None:
            finals.append(report.best_network.arcs.reshape(1, -1))
        reports[f"seed{s}"] = report
        if run is not None:
            run.write_text(f"report_seed{s}.csv", report.to_csv())
            nn.save_checkpoint(run.path(f"checkpoint_seed{s}.bin"), {"policy": policy, "value": value},
                               {"seed": s, "k": inst.budget})
    ex = score_candidates(inst, np.concatenate(finals), selection)
    return ex, reports


def cmd_train(args) -> int:
    inst = _load(args)
    run = Run("train", vars_config(args), args.out, inst)
    seeds = [args.seed + r for r in range(args.rl_seeds)]
    run.seeds.update(train=seeds, selection=EVAL_SEED)
    ex, reports = _train_seeds(inst, args, seeds, args.designs_per_seed, run)
    run.write_json("design.json", _design_dict(inst, ex.best, selection_score=ex.best_score,
                                               candidates=len(ex.candidates)))
    if len(seeds) == 1:
        run.write_text("report.csv", reports[f"seed{seeds[0]}"].to_csv())
    if args.emit_plotdata:
        run.write_text("plotdata.csv", _plotdata(reports))
    run.finish()
    print(f"best design ({len(ex.candidates)} candidates): score {ex.best_score:.6f}, arcs {ex.best.arc_list()}")
    return EXIT_OK


def cmd_meta_train(args) -> int:
    inst = load_instance(args.instance)
    spec = TaskSpec(inst, tuple(args.k_values), adaptation_steps=args.adaptation_steps, meta_lr=args.meta_lr,
                    meta_epochs=args.meta_epochs, convergence_patience=args.patience)
    cfg = _ppo_config(args, args.seed)
    policy, value, report = meta_train(spec, cfg, _mdp_config(args, spec.k_values[0]))
    run = Run("meta-train", vars_config(args), args.out, inst)
    run.seeds["meta"] = args.seed
    run.write_text("report.csv", report.to_csv())
    nn.save_checkpoint(run.path("meta_checkpoint.bin"), {"policy": policy, "value": value},
                       {"meta": True, "k_values": list(spec.k_values), "seed": args.seed})
    if args.emit_plotdata:
        run.write_text("plotdata.csv", _plotdata({"meta": report}))
    run.finish()
    print(f"meta-training done: {report.total_steps} steps, mean eval over tasks {report.best_eval:.6f}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    inst = load_instance(args.instance)
    if args.k is None:
        raise UsageError("adapt needs --k")
    nets, header = nn.load_checkpoint(args.meta)
    if not header.get("meta"):
        log.warning("checkpoint %s is not marked as a meta-initialization", args.meta)
    inst_k = inst.with_budget(args.k)
    run = Run("adapt", {**vars_config(args), "meta_header": header}, args.out, inst_k)
    seeds = [args.seed + r for r in range(args.rl_seeds)]
    run.seeds["adapt"] = seeds
    ex, reports = _train_seeds(inst_k, args, seeds, args.designs_per_seed, run, init=(nets["policy"], nets["value"]))
    if len(seeds) == 1:
        run.write_text("report.csv", reports[f"seed{seeds[0]}"].to_csv())
    run.write_json("design.json", _design_dict(inst_k, ex.best, selection_score=ex.best_score))
    if args.emit_plotdata:
        run.write_text("plotdata.csv", _plotdata(reports))
    run.finish()
    print(f"adapted design: score {ex.best_score:.6f}, arcs {ex.best.arc_list()}")
    return EXIT_OK


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods or any(m not in METHODS for m in methods):
        raise UsageError(f"--methods must be a nonempty subset of {', '.join(METHODS)}")
    base = load_instance(args.instance)
    ks = args.k_list or [base.budget]
    run = Run("compare", vars_config(args), args.out, base)
    run.seeds.update(decision=args.seed, eval={str(k): _eval_seed(args.seed, k) for k in ks})
    decision = sample_demand(base.demand_model, args.seed, args.omega_heuristic)
    greedy_trace = None
    if "greedy" in methods:
        # greedy at budget K is the K-arc prefix of the run at the largest budget
        _, greedy_trace = greedy(base.with_budget(max(ks)), decision, args.omega_heuristic)
    rows = []
    for k in ks:
        inst = base.with_budget(k)
        eval_set = sample_demand(inst.demand_model, _eval_seed(args.seed, k), args.samples)
        designs = {}
        if greedy_trace is not None:
            nets = greedy_trace.networks
            designs["greedy"] = nets[min(k, len(nets)) - 1] if nets else FlexNetwork.empty(inst.m, inst.n)
        if "sp" in methods:
            designs["sp"] = sp_heuristic(inst, decision, args.omega_heuristic)[0]
        if "rl" in methods:
            seeds = [args.seed + r for r in range(args.rl_seeds)]
            designs["rl"] = _train_seeds(inst, args, seeds, args.designs_per_seed, None)[0].best
        for method, net in designs.items():
            mean, stderr = _evaluate(inst, net, eval_set)
            rows.append({"K": k, "method": method, "objective": mean, "stderr": stderr,
                         "arcs": " ".join(f"{i}-{j}" for i, j in net.arc_list())})
            print(f"K={k:3d} {method:7s} {mean:14.4f} +- {stderr:.4f}")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["K", "method", "objective", "stderr", "arcs"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "objective": repr(r["objective"]), "stderr": repr(r["stderr"])})
    run.write_text("results.csv", buf.getvalue())
    run.write_text("table.csv", _wide_table(rows, ks, methods))
    run.finish()
    return EXIT_OK


def _wide_table(rows, ks, methods) -> str:
    """Methods as rows, budgets as columns; the best entry per column is starred."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *[f"K={k}" for k in ks]])
    best = {k: max(r["objective"] for r in rows if r["K"] == k) for k in ks}
    for m in methods:
        cells = []
        for k in ks:
            r = next(r for r in rows if r["K"] == k and r["method"] == m)
            star = "*" if r["objective"] == best[k] else ""
            cells.append(f"{r['objective']:.1f}{star} ({r['stderr']:.1f})")
        w.writerow([m, *cells])
    return buf.getvalue()


def vars_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose", "out")}


# ---------------------------------------------------------------------------
# parser


def _add_rl_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--omega", type=int, default=50, help="samples per terminal reward (default 50)")
    p.add_argument("--vr", type=_bool, default=True, help="variance-reduced terminal reward (default true)")
    p.add_argument("--action-set", choices=sorted(ACTION_SETS), default="add")
    p.add_argument("--episodes", type=int, default=800, help="episodes per PPO epoch (default 800)")
    p.add_argument("--max-steps", type=int, default=5_000_000)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--early-stop", type=int, default=48_000, help="steps without improvement before stopping")
    p.add_argument("--hidden", type=_int_list, default=[1024, 128], help="hidden layer sizes (default 1024,128)")
    p.add_argument("--rl-seeds", type=int, default=12, help="independent training seeds (default 12)")
    p.add_argument("--designs-per-seed", type=int, default=50, help="sampled designs per seed (default 50)")
    p.add_argument("--emit-plotdata", action="store_true", help="write long-format training curves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexdesign", description="Flexibility network design experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_, instance=True, seed=0):
        p = sub.add_parser(name, help=help_)
        if instance:
            p.add_argument("--instance", required=True, help="instance JSON file")
        p.add_argument("--seed", type=int, default=seed)
        p.add_argument("--out", default="runs", help="root directory for run outputs (default runs)")
        p.set_defaults(func=func)
        return p

    p = command("gen", cmd_gen, "write a scenario instance file", instance=False)
    p.add_argument("scenario", help=f"one of {', '.join([*SCENARIOS, 'random', 'fctp'])}")
    p.add_argument("--k", type=int, default=None, help="arc budget")
    p.add_argument("--fctp", help="FCTP JSON input for the fctp scenario")
    p.add_argument("--m", type=int, default=4, help="rows of a random instance")
    p.add_argument("--n", type=int, default=4, help="columns of a random instance")

    p = command("eval", cmd_eval, "estimate a design's objective on fresh samples")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--design", help="design JSON (as written by greedy, sp or train)")
    p.add_argument("--arcs", type=_parse_arcs, default=None, help="inline design, e.g. 0-1,2-3")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--engine", choices=ENGINES, default="flow")

    for name, func in (("greedy", cmd_greedy), ("sp", cmd_sp)):
        p = command(name, func, f"run the {name} heuristic")
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--omega", type=int, default=1000, help="decision samples (default 1000)")
        p.add_argument("--samples", type=int, default=0, help="also evaluate on this many fresh samples")
        p.add_argument("--eval-seed", type=int, default=EVAL_SEED)

    p = command("bound", cmd_bound, "LP relaxation upper bound")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--omega", type=int, default=1000)

    p = command("train", cmd_train, "train PPO agents and extract designs")
    p.add_argument("--k", type=int, default=None)
    _add_rl_flags(p)

    p = command("meta-train", cmd_meta_train, "meta-train a policy across budgets")
    p.add_argument("--k-values", type=_int_list, required=True, help="task budgets, e.g. 3,4,5,6")
    p.add_argument("--meta-epochs", type=int, default=100)
    p.add_argument("--adaptation-steps", type=int, default=1)
    p.add_argument("--meta-lr", type=float, default=1.0)
    p.add_argument("--patience", type=int, default=None, help="stop after this many meta-epochs without improvement")
    _add_rl_flags(p)

    p = command("adapt", cmd_adapt, "adapt a meta-policy to one budget")
    p.add_argument("--meta", required=True, help="meta checkpoint")
    p.add_argument("--k", type=int, default=None)
    _add_rl_flags(p)

    p = command("compare", cmd_compare, "compare methods on shared evaluation samples")
    p.add_argument("--k-list", type=_int_list, default=None, help="budgets, e.g. 16,19,22")
    p.add_argument("--methods", default="greedy,sp,rl")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--omega-heuristic", type=int, default=1000)
    _add_rl_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SimplexError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InstanceError, ValueError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
