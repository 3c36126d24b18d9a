"""Command-line entry point: ``card generate|train|adapt|simulate|report``.

Exit codes: 0 ok, 2 parse or missing input, 3 validation, 4 numeric failure.
``CARD_SEED`` and ``CARD_OUTPUT_DIR`` supply defaults for ``--seed`` and
``--out`` when those flags are not given.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, sim
from .agents import Query
from .errors import CardError, ManifestError, NonFiniteGradient, ValidationError
from .generator import GeneratorParams, generate, init_params, save_checkpoint
from .graph import ANCHOR_KINDS, CHAIN, AnchorTopology, CommTopology, format_matrix, parse_matrix
from .manifest import load_manifest, write_manifest
from .runtime import AGGREGATION_MODES, SELECT_LAST
from .training import TrainConfig, edge_cost_matrix, evaluate, soft_cost, train

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4
ENV_SEED = "CARD_SEED"
ENV_OUTPUT_DIR = "CARD_OUTPUT_DIR"
BUNDLED_MATRICES = tuple(f"appendix_matrix_{k}.txt" for k in range(1, 5))


class InputError(CardError):
    """A named input is missing or unreadable (exit 2)."""


def _default_seed() -> int:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{ENV_SEED} must be an integer, got {raw!r}") from None


def _out_dir(flag: str | None) -> Path:
    return Path(flag or os.environ.get(ENV_OUTPUT_DIR) or ".")


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _load_params(path) -> GeneratorParams:
    text = _read(path)
    try:
        return GeneratorParams.from_text(text)
    except ValidationError as exc:
        raise InputError(f"{path}: {exc}") from None


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _query(args) -> Query:
    return Query("cli", args.query)


def _print_topology(topo: CommTopology, labels: Sequence[str], out) -> None:
    edges = ", ".join(f"{labels[i]}->{labels[j]} ({p:.4f})" for (i, j), p in topo.edges.items())
    out.write(f"edges: {edges or '(none)'}\n")
    out.write(f"schedule: {' '.join(labels[i] for i in topo.schedule)}\n")


def _matrix_text(s, labels, machine: bool) -> str:
    return format_matrix(s, None if machine else labels, masked=not machine)


# --- commands ---------------------------------------------------------------------

def cmd_generate(args, out) -> int:
    m = load_manifest(args.manifest)
    params = _load_params(args.checkpoint)
    labels = [a.id for a in m.roster]
    s, topo = generate(m.roster, m.conditions, _query(args), AnchorTopology(args.anchor, len(m.roster)),
                       params, args.tau)
    out.write(_matrix_text(s, labels, args.machine))
    _print_topology(topo, labels, out)
    return EXIT_OK


def cmd_adapt(args, out) -> int:
    before_digest = _file_digest(args.checkpoint) if Path(args.checkpoint).is_file() else None
    params = _load_params(args.checkpoint)
    old, new = load_manifest(args.manifest), load_manifest(args.new_manifest)
    if [a.id for a in old.roster] != [a.id for a in new.roster]:
        raise ValidationError("old and new manifests must list the same agents in the same order")
    labels = [a.id for a in old.roster]
    anchor = AnchorTopology(args.anchor, len(labels))
    q = _query(args)
    s_old, t_old = analysis.adapt(params, old.roster, old.conditions, q, anchor, args.tau)
    s_new, t_new = analysis.adapt(params, new.roster, new.conditions, q, anchor, args.tau)
    for title, s, t in (("before", s_old, t_old), ("after", s_new, t_new)):
        out.write(f"== {title}\n")
        out.write(_matrix_text(s, labels, args.machine))
        _print_topology(t, labels, out)
    out.write("== delta (after - before)\n")
    delta = s_new - s_old
    changed = 0
    for i in range(len(labels)):
        for j in range(len(labels)):
            if i != j:
                changed += delta[i, j] != 0.0
                out.write(f"{labels[i]}->{labels[j]} {delta[i, j]:+.6f}\n")
    out.write(f"changed entries: {changed}; max |delta| {np.abs(delta).max():.6f}\n")
    out.write(f"topology identical: {'yes' if t_old == t_new else 'no'}\n")
    after_digest = _file_digest(args.checkpoint)
    status = "unchanged" if before_digest == after_digest else "CHANGED"
    out.write(f"checkpoint sha256 {after_digest} {status}\n")
    return EXIT_OK


def _train_inputs(args):
    if args.manifest:
        m = load_manifest(args.manifest)
        tasks = sim.make_task_bank(args.tasks, args.seed)
        pairs = [(t.query(), m.conditions) for t in tasks]
        return m.roster, tuple(tasks), pairs, m.cost_model
    w = sim.make_world(args.scenario, args.seed, args.tasks)
    return w.roster, w.tasks, list(w.pairs), w.cost_model


def cmd_train(args, out) -> int:
    roster, tasks, pairs, cm = _train_inputs(args)
    env = sim.SimEnvironment(roster, tasks, aggregation=args.aggregation)
    anchor = AnchorTopology(args.anchor, len(roster))
    cfg = TrainConfig(beta=args.beta, lr=args.lr, samples_per_step=args.samples, steps=args.steps,
                      tau=args.tau, k_rounds=args.k_rounds, seed=args.seed, batch_size=args.batch_size)
    params0 = init_params(seed=args.seed)
    out_dir = _out_dir(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.txt"

    def on_checkpoint(step, p):
        save_checkpoint(p, out_dir / f"checkpoint-{step:05d}.txt")

    with open(out_dir / "metrics.tsv", "w", encoding="ascii", newline="\n") as metrics:
        result = train(params0, pairs, env, cfg, cm, roster, anchor, metrics_out=metrics,
                       checkpoint_every=args.checkpoint_every, on_checkpoint=on_checkpoint)
    save_checkpoint(result.params, ckpt)
    u0 = evaluate(params0, pairs, env, roster, anchor, args.tau, k_rounds=args.k_rounds)
    u1 = evaluate(result.params, pairs, env, roster, anchor, args.tau, k_rounds=args.k_rounds)
    costs = []
    for q, c in pairs:
        s, _ = generate(roster, c, q, anchor, result.params, args.tau)
        costs.append(soft_cost(s, edge_cost_matrix(roster, c, cm)))
    out.write(f"wrote {ckpt} and {out_dir / 'metrics.tsv'}\n")
    out.write(f"final mean utility {u1:.4f} (untrained {u0:.4f}, gain {u1 - u0:+.4f}); "
              f"mean soft cost {float(np.mean(costs)):.6f}\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    if args.write_manifest:
        if args.scenario == "mixed":
            raise ValidationError("mixed has several condition sets; write one single-regime scenario at a time")
        Path(args.write_manifest).write_text(write_manifest(sim.scenario_manifest(args.scenario)), encoding="utf-8")
        out.write(f"wrote {args.write_manifest}\n")
        return EXIT_OK
    params = _load_params(args.checkpoint) if args.checkpoint else init_params(seed=args.seed)
    w = sim.make_world(args.scenario, args.seed, args.tasks)
    env = w.environment(aggregation=args.aggregation)
    anchor = AnchorTopology(args.anchor, len(w.roster))
    if args.task is not None:
        if not 0 <= args.task < len(w.pairs):
            raise ValidationError(f"--task must lie in 0..{len(w.pairs) - 1}")
        q, c = w.pairs[args.task]
        _, topo = generate(w.roster, c, q, anchor, params, args.tau)
        tr = env.run(q, c, topo, args.seed, args.k_rounds)
        _print_topology(topo, [a.id for a in w.roster], out)
        out.write(tr.export())
        out.write(f"utility {sim.sim_utility(tr.final_answer, env.task_for(q)):.0f}\n")
        return EXIT_OK
    u = evaluate(params, w.pairs, env, w.roster, anchor, args.tau, repeats=args.repeats,
                 k_rounds=args.k_rounds, seed=args.seed)
    out.write(f"scenario {args.scenario}: mean utility {u:.4f} over {len(w.pairs)} tasks x {args.repeats}\n")
    return EXIT_OK


def _bundled_matrix_texts() -> list[tuple[str, str, str]]:
    root = resources.files("card") / "data"
    return [(f"Matrix {k}", name, (root / name).read_text(encoding="utf-8"))
            for k, name in enumerate(BUNDLED_MATRICES, start=1)]


def cmd_report(args, out) -> int:
    sources = _bundled_matrix_texts() if args.bundled else []
    sources += [(Path(p).stem, p, _read(p)) for p in args.matrices]
    if len(sources) < 2:
        raise InputError("report needs at least two matrix files (or --bundled)")
    mats = [parse_matrix(text, path)[0] for _, path, text in sources]
    rep = analysis.compare(mats, [name for name, _, _ in sources], args.tau, args.convention, args.reference_only)
    out.write(rep.to_json() if args.json else rep.to_text())
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="card", description="Condition-aware communication topologies for agent teams.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def graph_flags(sp, tau=True):
        sp.add_argument("--anchor", choices=ANCHOR_KINDS, default=CHAIN)
        if tau:
            sp.add_argument("--tau", type=float, default=0.5)

    g = sub.add_parser("generate", help="decode a topology for one query")
    g.add_argument("--manifest", required=True)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--query", required=True)
    g.add_argument("--machine", action="store_true", help="numeric diagonal, no labels")
    graph_flags(g)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("adapt", help="re-decode under new conditions without training")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--manifest", required=True, help="manifest with the current conditions")
    a.add_argument("--new-manifest", required=True, help="manifest with the changed conditions")
    a.add_argument("--query", required=True)
    a.add_argument("--machine", action="store_true")
    graph_flags(a)
    a.set_defaults(func=cmd_adapt)

    t = sub.add_parser("train", help="train on the simulated environment")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=sim.SCENARIOS, default="mixed")
    src.add_argument("--manifest", help="train under one manifest's conditions instead")
    t.add_argument("--steps", type=int, default=300)
    t.add_argument("--beta", type=float, default=0.2)
    t.add_argument("--lr", type=float, default=0.3)
    t.add_argument("--samples", type=int, default=8, help="sampled graphs per pair and step")
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--k-rounds", type=int, default=1)
    t.add_argument("--tasks", type=int, default=64)
    t.add_argument("--aggregation", choices=AGGREGATION_MODES, default=SELECT_LAST)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")
    graph_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="run the simulated world")
    s.add_argument("--scenario", choices=sim.SCENARIOS, default="mixed")
    s.add_argument("--checkpoint", help="defaults to an untrained generator")
    s.add_argument("--task", type=int, help="print the transcript of one task")
    s.add_argument("--repeats", type=int, default=8)
    s.add_argument("--tasks", type=int, default=64)
    s.add_argument("--k-rounds", type=int, default=1)
    s.add_argument("--aggregation", choices=AGGREGATION_MODES, default=SELECT_LAST)
    s.add_argument("--write-manifest", metavar="PATH", help="write the scenario as a manifest and exit")
    s.add_argument("--seed", type=int)
    graph_flags(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="statistics and correlations of matrix files")
    r.add_argument("matrices", nargs="*")
    r.add_argument("--bundled", action="store_true", help="include the four shipped reference matrices")
    r.add_argument("--convention", choices=analysis.CONVENTIONS, default=analysis.OFFDIAG)
    r.add_argument("--reference-only", action="store_true", help="compare the first matrix with each other one")
    r.add_argument("--json", action="store_true")
    r.add_argument("--tau", type=float, default=0.5)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=err,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args, out)
    except (ManifestError, InputError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_PARSE
    except NonFiniteGradient as exc:
        err.write(f"error: {exc}\n")
        for k, v in sorted(exc.diagnostics.items()):
            err.write(f"  {k}: {v}\n")
        return EXIT_NUMERIC
    except CardError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
