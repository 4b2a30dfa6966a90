"""Command-line entry point: ``audioadv <subcommand> ...``.

Exit codes: 0 success, 1 other error, 2 configuration error, 3 infeasible
initialization, 4 model error, 5 attack ran but found no valid example.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audio import AudioClip, snr_db, write_wav
from .config import AttackConfig, load_config
from .corpus import load_corpus, make_corpus
from .errors import AudioAdvError, ConfigError, NoFeasibleInit
from .evaluation import parse_defenses
from .initialization import ada_search
from .optimizer import run_attack
from .runner import (EXIT_MODEL, EXIT_NO_VALID, EXIT_OK, PipelineSpec, dump_json, evaluate_dir, exit_code_for,
                     load_clip, run_pipeline, spec_from_manifest, write_attack, write_eval, write_infeasible)
from .surrogates.conformance import check_conformance
from .surrogates.registry import SurrogateRegistry, default_model_dir
from .surrogates.toyctc import train_toy_ctc

logger = logging.getLogger("audioadv")


def _ids(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


def _registry(args) -> SurrogateRegistry:
    return SurrogateRegistry(*args.models_dir) if args.models_dir else SurrogateRegistry()


def _config(args) -> AttackConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else AttackConfig()
    changes = {}
    if getattr(args, "max_steps", None) is not None:
        changes["max_steps"] = args.max_steps
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "stop_after_first_valid", False):
        changes["stop_after_first_valid"] = True
    return cfg.replace(**changes) if changes else cfg


def cmd_make_corpus(args) -> int:
    out = make_corpus(args.out, seed=args.seed, n_carriers=args.carriers, carrier_seconds=args.carrier_seconds)
    print(out)
    return EXIT_OK


def cmd_train_toys(args) -> int:
    labels = load_corpus(args.corpus)
    commands = [(e["text"], e["clip"].samples) for e in labels["commands"]]
    seeds = [int(s) for s in _ids(args.seeds)] or list(range(1, args.n_models + 1))
    if len(seeds) != args.n_models:
        raise ConfigError(f"--seeds lists {len(seeds)} seeds for {args.n_models} models")
    ids = _ids(args.ids) or [f"toyctc-{s}" for s in seeds]
    if len(ids) != len(seeds):
        raise ConfigError("--ids and --seeds differ in length")
    out = Path(args.out or default_model_dir())
    out.mkdir(parents=True, exist_ok=True)
    for id, seed in zip(ids, seeds):
        model = train_toy_ctc(commands, seed=seed, id=id)
        manifest = model.save(out)
        failures = check_conformance(model, labels["commands"][0]["text"])
        if failures:
            logger.error("%s fails conformance: %s", id, failures)
            return EXIT_MODEL
        print(f"{id}\t{model.parameter_digest()}\t{manifest}")
    return EXIT_OK


def cmd_init(args) -> int:
    cfg = _config(args)
    init_cfg = cfg.init
    if args.stride is not None:
        init_cfg = type(init_cfg)(**{**init_cfg.to_dict(), "stride": args.stride})
    carrier = load_clip(args.carrier)
    models = _registry(args).load_many(_ids(args.surrogates), args.target)
    pert = ada_search(carrier, args.target, load_clip(args.command_audio), models, init_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, AudioClip(pert.delta, carrier.sample_rate))
    record = {**pert.meta, "snr_db": snr_db(carrier.samples, pert.delta), "target": args.target}
    dump_json(out.with_suffix(".json"), record)
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args)
    ids = _ids(args.surrogates)
    carrier = load_clip(args.carrier)
    models = _registry(args).load_many(ids, args.target)
    try:
        result = run_attack(carrier, args.target, load_clip(args.command_audio), models, cfg)
    except NoFeasibleInit as exc:
        write_infeasible(args.out, args.target, ids, cfg, str(exc))
        raise
    report = write_attack(result, args.out)
    print(f"{report['target']}: {report['n_valid']} valid examples, best SNR {report['best_snr_db']}")
    return EXIT_OK if report["n_valid"] else EXIT_NO_VALID


def cmd_eval(args) -> int:
    defenses = parse_defenses(args.defenses) if args.defenses else []
    report = evaluate_dir(args.adv_dir, _registry(args), _ids(args.surrogates), _ids(args.holdout), defenses)
    write_eval(report, args.out or args.adv_dir)
    print(report.render_table())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    if args.from_manifest:
        spec = spec_from_manifest(args.from_manifest)
    else:
        if not args.surrogates:
            raise ConfigError("--surrogates is required")
        kw = dict(holdout=_ids(args.holdout), defenses=args.defenses or "", config=_config(args),
                  model_dirs=[str(d) for d in args.models_dir or []])
        if args.corpus:
            wanted = [c for c in args.commands.split(";")] if args.commands else None
            spec = PipelineSpec.from_corpus(args.carrier, args.corpus, _ids(args.surrogates), wanted, **kw)
        elif args.carrier and args.command_audio and args.target:
            spec = PipelineSpec(args.carrier, [{"text": args.target, "audio": args.command_audio}],
                                _ids(args.surrogates), **kw)
        else:
            raise ConfigError("give --corpus, or --carrier with --command-audio and --target")
    outcome = run_pipeline(spec, args.out)
    m = outcome.manifest
    for text, art in m["artifacts"].items():
        print(f"{text}\t{art['status']}\t{len(art['examples'])}")
    print(f"run {m['run_id']} -> {Path(args.out) / 'manifest.json'} (exit {outcome.exit_code})")
    return outcome.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="audioadv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def models_opt(sp):
        sp.add_argument("--models-dir", action="append", type=Path,
                        help="directory of adapter manifests (repeatable; default $AUDIOADV_HOME/models)")

    sp = sub.add_parser("make-corpus", help="write the synthetic command corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--carriers", type=int, default=2)
    sp.add_argument("--carrier-seconds", type=float, default=2.0)
    sp.set_defaults(func=cmd_make_corpus)

    sp = sub.add_parser("train-toys", help="train toy CTC surrogates on a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--n-models", type=int, default=2)
    sp.add_argument("--seeds", default="")
    sp.add_argument("--ids", default="")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train_toys)

    sp = sub.add_parser("init", help="AdaSearch initialization only")
    sp.add_argument("--carrier", required=True)
    sp.add_argument("--command-audio", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--surrogates", required=True)
    sp.add_argument("--stride", type=float)
    sp.add_argument("--config")
    sp.add_argument("--out", required=True, help="WAV path for the initial perturbation")
    models_opt(sp)
    sp.set_defaults(func=cmd_init)

    def attack_opts(sp):
        sp.add_argument("--surrogates", default="")
        sp.add_argument("--config")
        sp.add_argument("--max-steps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--stop-after-first-valid", action="store_true")
        sp.add_argument("--out", required=True)
        models_opt(sp)

    sp = sub.add_parser("attack", help="initialize and optimize one command")
    sp.add_argument("--carrier", required=True)
    sp.add_argument("--command-audio", required=True)
    sp.add_argument("--target", required=True)
    attack_opts(sp)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("eval", help="score stored adversarial examples")
    sp.add_argument("--adv-dir", required=True)
    sp.add_argument("--surrogates", required=True)
    sp.add_argument("--holdout", default="")
    sp.add_argument("--defenses", default="", help="e.g. smoothing:h=2,downsample:f_low=8000,td:k=0.5,mvp:m=2")
    sp.add_argument("--out")
    models_opt(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("pipeline", help="init -> attack -> eval for one or more commands")
    sp.add_argument("--corpus")
    sp.add_argument("--commands", help="';'-separated subset of corpus commands")
    sp.add_argument("--carrier")
    sp.add_argument("--command-audio")
    sp.add_argument("--target")
    sp.add_argument("--holdout", default="")
    sp.add_argument("--defenses", default="")
    sp.add_argument("--from-manifest", help="rerun the run recorded in a manifest.json")
    attack_opts(sp)
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AudioAdvError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
