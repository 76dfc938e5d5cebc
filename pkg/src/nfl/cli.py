"""Command-line interface.

Subcommands: gen-task, abduce, space, train, solve, run, eval,
emit-psolve.  Exit codes: 0 success, 2 unsatisfiable task, 3 bad
configuration or input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, UnsatisfiableError
from .util import dump_json

EXIT_OK = 0
EXIT_UNSAT = 2
EXIT_CONFIG = 3


def _add_common(p):
    p.add_argument("--task", required=True, help="task manifest path")
    p.add_argument("--out-dir", default="out")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nfl",
        description="Joint rule-and-perception learning over answer set programs")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-task", help="synthesize a desk-scale task")
    g.add_argument("--kind", required=True, choices=("add", "mul-add", "e9p"))
    g.add_argument("--out-dir", default="out")
    g.add_argument("--train", type=int, default=500)
    g.add_argument("--test", type=int, default=200)
    g.add_argument("--digits", type=int, default=10)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--proto", default="blur", choices=("blur", "onehot"))
    g.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("abduce", help="dump possibility groups per example")
    a.add_argument("--task", required=True)
    a.add_argument("--out", default="possibilities.json")

    s = sub.add_parser("space", help="dump the generalised and optimised rule space")
    s.add_argument("--task", required=True)
    s.add_argument("--out", default="space.json")
    s.add_argument("--max-body", type=int, default=None)

    t = sub.add_parser("train", help="train the perception model and rule posterior")
    _add_common(t)
    t.add_argument("--space", default=None, help="existing space.json to reuse")
    t.add_argument("--out", default=None, help="model output path")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)

    so = sub.add_parser("solve", help="compute the optimal hypothesis")
    so.add_argument("--task", required=True)
    so.add_argument("--model", required=True)
    so.add_argument("--out", default="solution.json")
    so.add_argument("--emit-psolve", default=None)

    r = sub.add_parser("run", help="full pipeline")
    _add_common(r)
    r.add_argument("--stages", default=",".join(("abduce", "space", "train",
                                                 "solve", "eval")))
    r.add_argument("--test", dest="test_path", default=None)
    r.add_argument("--epochs", type=int, default=30)
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--batch", type=int, default=32)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-body", type=int, default=None)

    e = sub.add_parser("eval", help="latent and end-to-end accuracy")
    e.add_argument("--model", required=True)
    e.add_argument("--solution", required=True)
    e.add_argument("--test", required=True, help="test manifest with gold latents")
    e.add_argument("--out", default=None)

    em = sub.add_parser("emit-psolve", help="emit the weak-constraint program text")
    em.add_argument("--task", required=True)
    em.add_argument("--model", required=True)
    em.add_argument("--out", default="psolve.lp")
    return ap


def _cmd_gen_task(args) -> int:
    from .gentask import generate_pair
    train, test = generate_pair(args.kind, args.train, args.test, args.seed,
                                n_digits=args.digits, noise=args.noise,
                                proto=args.proto)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(train, out / "task.json")
    dump_json(test, out / "test.json")
    print(f"wrote {out/'task.json'} ({args.train} examples) and "
          f"{out/'test.json'} ({args.test} examples)")
    return EXIT_OK


def _cmd_abduce(args) -> int:
    from .abduction import AbductionCache, abduce_all
    from .pipeline import dump_possibilities
    from .task import load_task
    task, _data = load_task(args.task)
    cache = AbductionCache()
    groups = abduce_all(task, cache)
    dump_possibilities(groups, cache, args.out)
    total = sum(pg.total() for pg in groups.values())
    print(f"wrote {args.out}: {len(groups)} examples, {total} possibilities")
    return EXIT_OK


def _cmd_space(args) -> int:
    from .abduction import AbductionCache, abduce_all
    from .pipeline import dump_space
    from .synthesis import build_opt_space
    from .task import load_task
    task, _data = load_task(args.task)
    cache = AbductionCache()
    groups = abduce_all(task, cache)
    space = build_opt_space(task, groups, cache, max_body=args.max_body)
    dump_space(space, args.out)
    print(f"wrote {args.out}: {len(space)} rules "
          f"(from {space.g_size} generalised rules)")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .abduction import AbductionCache, abduce_all
    from .pipeline import dump_model, load_space
    from .synthesis import build_opt_space
    from .task import load_task
    from .trainer import TrainConfig, train
    task, data = load_task(args.task)
    cache = AbductionCache()
    groups = abduce_all(task, cache)
    if args.space:
        space = load_space(task, groups, cache, args.space)
    else:
        space = build_opt_space(task, groups, cache)
    cfg = TrainConfig(args.epochs, args.lr, args.batch, args.seed)
    result = train(task, space, data, cfg)
    out = args.out or str(Path(args.out_dir) / "model.json")
    dump_model(result, cfg, out)
    last = result.trajectory[-1] if result.trajectory else {}
    print(f"wrote {out}: final loss {last.get('loss'):.6f}"
          if last else f"wrote {out}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    from .abduction import AbductionCache, abduce_all
    from .pipeline import dump_solution, load_model, solve_with_model
    from .solver import emit_psolve, solve_native
    from .synthesis import build_opt_space
    from .task import load_task
    task, data = load_task(args.task)
    cache = AbductionCache()
    groups = abduce_all(task, cache)
    space = build_opt_space(task, groups, cache)
    model, theta_r, _doc = load_model(args.model)
    inst = solve_with_model(task, space, model, data)
    sol = solve_native(inst)
    dump_solution(sol, space, theta_r, args.out)
    if args.emit_psolve:
        Path(args.emit_psolve).write_text(emit_psolve(inst))
    print(f"wrote {args.out}: objective {sol.objective:.6f}, "
          f"{len(sol.hypothesis)} rules")
    for text in sol.rule_texts:
        print(f"  {text}")
    return EXIT_OK


def _cmd_run(args) -> int:
    from .pipeline import RunConfig, run_pipeline
    stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
    cfg = RunConfig(task_path=args.task, out_dir=args.out_dir, seed=args.seed,
                    epochs=args.epochs, lr=args.lr, batch=args.batch,
                    stages=stages, test_path=args.test_path,
                    max_body=args.max_body)
    report = run_pipeline(cfg)
    print(f"report written to {Path(args.out_dir)/'report.json'}")
    if report.hypothesis:
        print("hypothesis:")
        for text in report.hypothesis:
            print(f"  {text}")
    if report.metrics:
        print(f"metrics: {json.dumps(report.metrics, sort_keys=True)}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .pipeline import evaluate, load_model
    from .task import load_task
    from .util import read_json
    model, _theta_r, _doc = load_model(args.model)
    solution = read_json(args.solution)
    test_task, test_data = load_task(args.test)
    metrics = evaluate(model, solution["hypothesis"], test_task, test_data)
    if args.out:
        dump_json(metrics, args.out)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _cmd_emit_psolve(args) -> int:
    from .abduction import AbductionCache, abduce_all
    from .pipeline import load_model, solve_with_model
    from .solver import emit_psolve
    from .synthesis import build_opt_space
    from .task import load_task
    task, data = load_task(args.task)
    cache = AbductionCache()
    groups = abduce_all(task, cache)
    space = build_opt_space(task, groups, cache)
    model, _theta_r, _doc = load_model(args.model)
    inst = solve_with_model(task, space, model, data)
    Path(args.out).write_text(emit_psolve(inst))
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-task": _cmd_gen_task,
    "abduce": _cmd_abduce,
    "space": _cmd_space,
    "train": _cmd_train,
    "solve": _cmd_solve,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "emit-psolve": _cmd_emit_psolve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UnsatisfiableError as e:
        print(f"unsatisfiable: {e}", file=sys.stderr)
        return EXIT_UNSAT
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
