"""Command-line entry points: gen-world, train, eval, lexicon, report.

Every subcommand accepts ``--config`` (a flat JSON object whose keys are
the subcommand's option names, e.g. ``{"lr": 0.1, "steps": 500}``); the
``SCAFFOLDRL_CONFIG`` environment variable supplies a default path.
Command-line flags override config values. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict, replace

from . import __version__
from . import policy as pol
from . import synthdata as sd
from . import training as tr
from .errors import ConfigError, ScaffoldError
from .evaluation import (
    DEFAULT_RUNS, accuracy_gap, fixed_letter_model, gold_echo_model, read_benchmark,
    reports_csv, score_benchmark, write_benchmark,
)
from .lexicon import identity_translator, load_lexicon, longest_match_spans, translate_mcq

CONFIG_ENV = "SCAFFOLDRL_CONFIG"
log = logging.getLogger("scaffold_rl")


# ---------------------------------------------------------------- helpers


def _write_json(path: str, obj) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


# ---------------------------------------------------------------- gen-world


def cmd_gen_world(args) -> int:
    spec = sd.WorldSpec(n_cues=args.n_cues, n_fillers=args.n_fillers, n_options=args.n_options,
                        concepts_per_cue=args.concepts_per_cue, eval_fraction=args.eval_fraction,
                        term_rate=args.term_rate, seed=args.seed)
    world = sd.generate_world(spec, args.n_items)
    _ensure_dir(args.out)
    try:
        paths = sd.write_world(world, args.out)
    except OSError as exc:
        raise OSError(f"cannot write world to {args.out}: {exc.strerror or exc}") from exc
    m = world.manifest()
    print(f"wrote {m['n_train']} train / {m['n_eval']} eval items "
          f"({m['train_keys']} / {m['eval_keys']} keys) to {args.out}")
    for name in ("train", "eval_hi", "eval_en"):
        print(f"  {name}: {paths[name]}")
    return 0


# ---------------------------------------------------------------- train


def _schedule(args) -> tr.DecaySchedule:
    if args.lambda_shape == "constant":
        if args.lam is None:
            raise ConfigError("--lambda-shape constant needs --lambda")
        return tr.DecaySchedule.constant(args.lam, args.steps)
    if args.lam is not None:
        raise ConfigError("--lambda only applies to --lambda-shape constant")
    return tr.DecaySchedule(args.lambda_start, args.lambda_end, args.steps, args.lambda_shape)


def _sft(args, world):
    base = tr.DESK_LA if args.stage == "la" else tr.DESK_RC
    cfg = replace(base, steps=args.steps if args.steps is not None else base.steps,
                  lr=args.lr if args.lr is not None else base.lr,
                  optimizer=args.optimizer or base.optimizer,
                  seed=base.seed + args.seed)
    if args.init_checkpoint:
        params, vocab, _ = pol.load_checkpoint(args.init_checkpoint)
        if vocab.to_json() != world.vocab.to_json():
            raise ConfigError(f"{args.init_checkpoint}: vocabulary differs from the world's")
    elif args.stage == "rc":
        raise ConfigError("train --stage rc needs --init-checkpoint (the la checkpoint)")
    else:
        params = pol.PolicyParams.init(len(world.vocab), args.dim, seed=args.seed)
    data = sd.sft_examples(world, args.stage, args.hindi_ratio, seed=base.seed + args.seed)
    res = tr.sft_stage(params, data, cfg, args.stage, world.vocab.bos)
    rows = [{"step": i, "loss": l, "ema": e} for i, (l, e) in enumerate(zip(res.losses, res.ema))]
    log.info("%s: loss %.4f -> %.4f, best EMA at step %d", args.stage, res.losses[0],
             res.losses[-1], res.best_step)
    return res.params, rows, cfg


def cmd_train(args) -> int:
    if args.stage == "dsr" and not args.ref_checkpoint:
        raise ConfigError("train --stage dsr needs --ref-checkpoint (the rc checkpoint)")
    world = sd.read_world(args.world)
    _ensure_dir(args.out)
    ckpt = os.path.join(args.out, "checkpoint.npz")
    log_path = os.path.join(args.out, "run_log.jsonl")
    csv_path = os.path.join(args.out, "run_log.csv")
    manifest = {"command": "train", "version": __version__, "config": _effective(args)}

    if args.stage in ("la", "rc"):
        params, rows, cfg = _sft(args, world)
        manifest["sft_config"] = asdict(cfg)
        with open(log_path, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("step,loss,ema\n")
            fh.writelines(f"{r['step']},{r['loss']!r},{r['ema']!r}\n" for r in rows)
        manifest["final"] = {"loss": rows[-1]["loss"], "ema": rows[-1]["ema"]}
    else:
        _require_file(args.ref_checkpoint, "reference checkpoint")
        ref, vocab, _ = pol.load_checkpoint(args.ref_checkpoint)
        if vocab.to_json() != world.vocab.to_json():
            raise ConfigError(f"{args.ref_checkpoint}: vocabulary differs from the world's")
        params = ref
        if args.init_checkpoint:
            params, _, _ = pol.load_checkpoint(args.init_checkpoint)
        steps = args.steps if args.steps is not None else tr.DESK_DSR.max_steps
        base = tr.DESK_DSR
        cfg = replace(base, lr=args.lr if args.lr is not None else base.lr,
                      optimizer=args.optimizer or base.optimizer, seed=args.seed, max_steps=steps,
                      batch_size=args.batch_size or base.batch_size, k=args.k or base.k,
                      beta=base.beta if args.beta is None else args.beta,
                      eval_every=args.eval_every or base.eval_every)
        args.steps = steps
        sched = _schedule(args)
        trainer = tr.DsrTrainer(params, world.vocab, [it.mcq("hi") for it in world.train],
                                [it.mcq("hi") for it in world.eval], cfg, sched, ref=ref)
        if os.path.exists(log_path):
            os.unlink(log_path)

        def progress(rec):
            if rec.eval_acc is not None and rec.step % (10 * cfg.eval_every) == 0:
                log.info("step %d lambda %.3f R_acc %.3f R_lan %.3f eval acc %.3f hi %.3f",
                         rec.step, rec.lam, rec.mean_r_acc, rec.mean_r_lan, rec.eval_acc,
                         rec.eval_hi_frac)

        trainer.run(log_path=log_path, callback=progress)
        tr.write_run_csv(csv_path, trainer.log)
        acc, hi = trainer.evaluate()
        manifest["train_config"] = cfg.to_dict()
        manifest["schedule"] = {**asdict(sched), "shape": sched.shape.value}
        manifest["windows"] = tr.window_means(trainer.log)
        manifest["final"] = {"eval_acc": acc, "eval_hi_frac": hi}
        params = trainer.params
        print(f"final eval accuracy {acc:.4f}, reasoning Hindi fraction {hi:.4f}")

    pol.save_checkpoint(ckpt, params, world.vocab, {"stage": args.stage, "seed": args.seed})
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"{args.stage}: checkpoint {ckpt}, run log {log_path}")
    return 0


# ---------------------------------------------------------------- eval


def _policy_model(params, vocab, max_len):
    def model(item, seed):
        s = pol.sample_batch(params, [vocab.encode(item.question)], 1, seed, vocab.bos,
                             vocab.eos, max_len)[0]
        return vocab.decode(s.ids)
    return model


def cmd_eval(args) -> int:
    if not args.benchmark_hi and not args.benchmark_en:
        raise ConfigError("eval needs --benchmark-hi and/or --benchmark-en")
    if args.oracle == "gold-echo":
        model, label = gold_echo_model, "gold-echo"
    elif args.oracle == "fixed-a":
        model, label = fixed_letter_model("A"), "fixed-A"
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint unless --oracle is given")
        _require_file(args.checkpoint, "checkpoint")
        params, vocab, _ = pol.load_checkpoint(args.checkpoint)
        model, label = _policy_model(params, vocab, args.max_len), os.path.basename(args.checkpoint)

    reports = {}
    for lang, path in (("hi", args.benchmark_hi), ("en", args.benchmark_en)):
        if not path:
            continue
        _require_file(path, "benchmark")
        items = read_benchmark(path)
        reports[lang] = score_benchmark(model, items, runs=args.runs, seed=args.seed,
                                        name=f"{label}:{os.path.basename(path)}")
        r = reports[lang]
        print(f"accuracy [{lang}] {r.accuracy:.4f} over {r.n_items} items x {r.runs} runs")
    delta = None
    if len(reports) == 2:
        delta = accuracy_gap(reports["en"], reports["hi"])
        print(f"delta (en - hi) {delta:+.4f}")

    if args.out:
        _ensure_dir(args.out)
        _write_json(os.path.join(args.out, "report.json"),
                    {"config": _effective(args), "delta": delta,
                     "reports": {k: r.to_dict() for k, r in reports.items()}})
        with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
            fh.write(reports_csv(list(reports.values()), delta))
    return 0


# ---------------------------------------------------------------- lexicon


def _load_lexicon(path):
    _require_file(path, "lexicon")
    with open(path, encoding="utf-8") as fh:
        return load_lexicon(fh)


def cmd_lexicon(args) -> int:
    lex = _load_lexicon(args.lexicon)
    if args.action == "inspect":
        print(f"lexicon entries: {len(lex)}")
        if args.input:
            _require_file(args.input, "dataset")
            counts: Counter = Counter()
            for item in read_benchmark(args.input):
                for text in (item.question, *item.options.values()):
                    counts.update(s.entry.source_term for s in longest_match_spans(text, lex))
            print(f"matches: {sum(counts.values())}")
            for term, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                print(f"  {n:6d}  {term}")
        return 0

    if not args.input or not args.output:
        raise ConfigError("lexicon apply needs --input and --output")
    _require_file(args.input, "dataset")
    items = [translate_mcq(it, lex, identity_translator) for it in read_benchmark(args.input)]
    try:
        write_benchmark(args.output, items)
    except OSError as exc:
        raise OSError(f"cannot write {args.output}: {exc.strerror or exc}") from exc
    print(f"processed {len(items)} items -> {args.output}")
    return 0


# ---------------------------------------------------------------- report


def cmd_report(args) -> int:
    rows = []
    for path in args.run_logs:
        _require_file(path, "run log")
        log_ = tr.read_run_log(path)
        if not log_:
            raise ConfigError(f"{path}: empty run log")
        w = tr.window_means(log_, args.fraction)
        rows.append((path, len(log_), w))
        print(f"{path}: {len(log_)} steps")
        for name in ("first", "last"):
            m = w[name]
            print(f"  {name:5s} R_acc {m['mean_r_acc']:.4f}  R_lan {m['mean_r_lan']:.4f}  "
                  f"eval acc {m['eval_acc']:.4f}  eval hi {m['eval_hi_frac']:.4f}")
    if args.out:
        keys = ["mean_r_acc", "mean_r_lan", "eval_acc", "eval_hi_frac"]
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("run,steps," + ",".join(f"{w}_{k}" for w in ("first", "last") for k in keys) + "\n")
            for path, n, w in rows:
                vals = [repr(w[win][k]) for win in ("first", "last") for k in keys]
                fh.write(",".join([path, str(n)] + vals) + "\n")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scaffold-rl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help=f"flat JSON config (default: ${CONFIG_ENV})")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    g = command("gen-world", cmd_gen_world, "write a seeded synthetic MCQ world")
    spec = sd.WorldSpec()
    g.add_argument("--out")
    g.add_argument("--n-items", type=int, default=sd.DESK_N_ITEMS)
    g.add_argument("--n-cues", type=int, default=spec.n_cues)
    g.add_argument("--n-fillers", type=int, default=spec.n_fillers)
    g.add_argument("--n-options", type=int, default=spec.n_options)
    g.add_argument("--concepts-per-cue", type=int, default=spec.concepts_per_cue)
    g.add_argument("--eval-fraction", type=float, default=spec.eval_fraction)
    g.add_argument("--term-rate", type=float, default=spec.term_rate)

    t = command("train", cmd_train, "run one training stage (la, rc or dsr)")
    t.add_argument("--stage", choices=["la", "rc", "dsr"])
    t.add_argument("--world", help="directory written by gen-world")
    t.add_argument("--out")
    t.add_argument("--init-checkpoint")
    t.add_argument("--ref-checkpoint", help="rc checkpoint; required for dsr")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=["sgd", "adam"])
    t.add_argument("--dim", type=int, default=tr.DESK_DIM)
    t.add_argument("--hindi-ratio", type=float, default=tr.DESK_RC_HINDI_RATIO)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--k", type=int)
    t.add_argument("--beta", type=float)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--lambda-shape", choices=["cosine", "linear", "constant"], default="cosine")
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--lambda-start", type=float, default=0.9)
    t.add_argument("--lambda-end", type=float, default=0.1)

    e = command("eval", cmd_eval, "score a checkpoint or oracle on MCQ benchmarks")
    e.add_argument("--checkpoint")
    e.add_argument("--benchmark-hi")
    e.add_argument("--benchmark-en")
    e.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    e.add_argument("--oracle", choices=["gold-echo", "fixed-a"])
    e.add_argument("--max-len", type=int, default=32)
    e.add_argument("--out")

    x = command("lexicon", cmd_lexicon, "apply or inspect a terminology lexicon")
    x.add_argument("action", choices=["apply", "inspect"])
    x.add_argument("--lexicon")
    x.add_argument("--input")
    x.add_argument("--output")

    r = command("report", cmd_report, "summarise run logs (first / last window means)")
    r.add_argument("run_logs", nargs="+")
    r.add_argument("--fraction", type=float, default=0.1)
    r.add_argument("--out", help="CSV summary path")
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        return args
    _require_file(path, "config file")
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict) or any(isinstance(v, (dict, list)) for v in cfg.values()):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    sub = _subparser(parser, args.command)
    known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    cfg = {("lam" if k == "lambda" else k): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - set(known))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) for {args.command}: {', '.join(unknown)}")
    for key, value in cfg.items():
        action = known[key]
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"{path}: {key}={value!r} not in {sorted(action.choices)}")
    # positional and required options still come from argv; flags override the file
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


# options that may come from either the config file or the command line
REQUIRED = {"gen-world": ["out"], "train": ["stage", "world", "out"], "lexicon": ["lexicon"]}


def _check_required(args) -> None:
    missing = [f"--{k.replace('_', '-')}" for k in REQUIRED.get(args.command, [])
               if getattr(args, k) is None]
    if missing:
        raise ConfigError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        _check_required(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        log.info("effective config: %s", json.dumps(_effective(args), sort_keys=True))
        return args.func(args)
    except (ScaffoldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
