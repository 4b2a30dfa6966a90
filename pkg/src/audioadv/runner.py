"""Run persistence: attack output directories, evaluation from disk, and full pipeline runs."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioClip, normalize, read_wav, snr_db, write_wav
from .config import AttackConfig
from .corpus import load_corpus, slugify
from .errors import AudioAdvError, ConfigError, ModelError, NoFeasibleInit
from .evaluation import DefenseSetting, EvalReport, evaluate, parse_defenses
from .optimizer import AttackResult, run_attack
from .surrogates.registry import SurrogateRegistry

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_MODEL = 4
EXIT_NO_VALID = 5


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dump_json(path, data) -> str:
    """Write canonical JSON and return its sha256."""
    raw = (json.dumps(data, indent=2, sort_keys=True) + "\n").encode()
    Path(path).write_bytes(raw)
    return sha256_bytes(raw)


def load_clip(path) -> AudioClip:
    return normalize(read_wav(path))


# --------------------------------------------------------------------------
# attack directories


def write_attack(result: AttackResult, out_dir) -> dict:
    """Persist an attack result; returns the report dict written to ``report.json``.

    Layout: ``adv_<step>.wav`` per valid example, ``final_delta.npy``,
    ``init_delta.npy``, ``trace.jsonl`` and ``report.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for ex in result.valid_set:
        name = f"adv_{ex.step:05d}.wav"
        write_wav(out / name, ex.clip)
        entries.append({"file": name, "step": ex.step, "snr_db": ex.snr_db,
                        "survives_quantization": ex.survives_quantization})
    final = np.ascontiguousarray(result.final_delta.delta, dtype="<f8")
    np.save(out / "final_delta.npy", final)
    np.save(out / "init_delta.npy", np.ascontiguousarray(result.init.delta, dtype="<f8"))
    lines = [json.dumps(row, sort_keys=True) for row in result.trace]
    (out / "trace.jsonl").write_text("".join(line + "\n" for line in lines))
    x = result.carrier.samples
    report = {
        "status": "ok" if result.valid_set else "no_valid_examples",
        "target": result.target,
        "surrogates": result.surrogate_ids,
        "config": result.config.to_dict(),
        "init": {**result.init.meta, "snr_db": _finite(snr_db(x, result.init.delta))},
        "steps_run": len(result.trace),
        "valid_set": entries,
        "n_valid": len(entries),
        "best_snr_db": result.best_snr,
        "n_flagged_quantization": sum(not e["survives_quantization"] for e in entries),
        "n_dropped_quantization": result.n_dropped_quantization,
        "final_delta_sha256": sha256_bytes(final.tobytes()),
        "trace_file": "trace.jsonl",
    }
    dump_json(out / "report.json", report)
    return report


def _finite(v: float):
    return v if np.isfinite(v) else None


def write_infeasible(out_dir, target: str, surrogates: Sequence[str], config: AttackConfig, reason: str) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"status": "infeasible_init", "target": target, "surrogates": list(surrogates),
              "config": config.to_dict(), "reason": reason, "valid_set": [], "n_valid": 0}
    dump_json(out / "report.json", report)
    return report


# --------------------------------------------------------------------------
# evaluation from disk


def find_reports(adv_dir) -> list[Path]:
    root = Path(adv_dir)
    if (root / "report.json").is_file():
        return [root / "report.json"]
    return sorted(root.rglob("report.json"))


def evaluate_dir(adv_dir, registry: SurrogateRegistry, surrogate_ids: Sequence[str],
                 holdout_ids: Sequence[str] = (), defenses: Sequence[DefenseSetting] = ()) -> EvalReport:
    """Evaluate every attack report under ``adv_dir``.

    Models are scored on the stored (PCM16) examples. Defenses are checked
    against the surrogates, with the holdouts joining the MVP-EARS pool.
    """
    reports = find_reports(adv_dir)
    if not reports:
        raise ConfigError(f"no report.json under {adv_dir}")
    outcomes, model_ids = [], None
    for path in reports:
        rep = json.loads(path.read_text())
        target = rep["target"]
        checkers = registry.load_many(surrogate_ids, target)
        holdouts = registry.load_many(holdout_ids, target)
        items = [(read_wav(path.parent / e["file"]), e["snr_db"]) for e in rep["valid_set"]]
        partial = evaluate({target: items}, checkers + holdouts, defenses, checkers=checkers)
        outcomes.extend(partial.commands)
        model_ids = partial.models
    return EvalReport(outcomes, model_ids, list(defenses))


def write_eval(report: EvalReport, out_dir) -> tuple[Path, str]:
    out = Path(out_dir)
    digest = dump_json(out / "eval_report.json", report.to_dict())
    (out / "eval_table.txt").write_text(report.render_table() + "\n")
    return out / "eval_report.json", digest


# --------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineSpec:
    carrier: str
    commands: list[dict]  # {"text", "audio"}
    surrogates: list[str]
    holdout: list[str] = field(default_factory=list)
    defenses: str = ""
    config: AttackConfig = field(default_factory=AttackConfig)
    model_dirs: list[str] = field(default_factory=list)

    @classmethod
    def from_corpus(cls, carrier: str | None, corpus_dir, surrogates, commands=None, **kw) -> "PipelineSpec":
        labels = load_corpus(corpus_dir)
        wanted = None if commands is None else {c.strip().lower() for c in commands}
        cmds = [{"text": e["text"], "audio": e["path"]} for e in labels["commands"]
                if wanted is None or e["text"] in wanted]
        if wanted is not None and len(cmds) != len(wanted):
            raise ConfigError(f"commands not in corpus: {sorted(wanted - {c['text'] for c in cmds})}")
        return cls(carrier or labels["carrier_paths"][0], cmds, list(surrogates), **kw)


@dataclass
class PipelineOutcome:
    manifest: dict
    exit_code: int
    results: dict = field(default_factory=dict)


def run_id_for(snapshot: dict) -> str:
    return sha256_bytes(json.dumps(snapshot, sort_keys=True).encode())[:16]


def run_pipeline(spec: PipelineSpec, out_dir, keep_results: bool = False) -> PipelineOutcome:
    """AdaSearch -> optimization -> evaluation for every command; writes ``manifest.json``.

    The exit code is 0 only when every command produced at least one valid
    example; infeasible initializations take precedence over empty sets.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    defenses = parse_defenses(spec.defenses) if spec.defenses else []
    registry = SurrogateRegistry(*spec.model_dirs) if spec.model_dirs else SurrogateRegistry()
    carrier = load_clip(spec.carrier)

    snapshot = {
        "config": spec.config.to_dict(),
        "surrogates": spec.surrogates,
        "holdout": spec.holdout,
        "defenses": spec.defenses,
        "inputs": {
            "carrier": {"path": str(spec.carrier), "sha256": sha256_file(spec.carrier)},
            "commands": [{"text": c["text"], "audio": str(c["audio"]), "sha256": sha256_file(c["audio"])}
                         for c in spec.commands],
        },
        "model_dirs": [str(d) for d in spec.model_dirs],
    }
    artifacts, results = {}, {}
    exit_code = EXIT_OK
    for cmd in spec.commands:
        text = cmd["text"]
        cmd_dir = out / slugify(text)
        models = registry.load_many(spec.surrogates, text)
        try:
            result = run_attack(carrier, text, load_clip(cmd["audio"]), models, spec.config)
        except NoFeasibleInit as exc:
            logger.error("%s: %s", text, exc)
            write_infeasible(cmd_dir, text, spec.surrogates, spec.config, str(exc))
            exit_code = EXIT_INFEASIBLE
            artifacts[text] = {"dir": cmd_dir.name, "status": "infeasible_init",
                               "report": f"{cmd_dir.name}/report.json",
                               "report_sha256": sha256_file(cmd_dir / "report.json"), "examples": []}
            continue
        report = write_attack(result, cmd_dir)
        if keep_results:
            results[text] = result
        if not result.valid_set and exit_code == EXIT_OK:
            exit_code = EXIT_NO_VALID
        rel = cmd_dir.name
        artifacts[text] = {
            "dir": rel,
            "status": report["status"],
            "report": f"{rel}/report.json",
            "report_sha256": sha256_file(cmd_dir / "report.json"),
            "trace": f"{rel}/trace.jsonl",
            "trace_sha256": sha256_file(cmd_dir / "trace.jsonl"),
            "final_delta": f"{rel}/final_delta.npy",
            "final_delta_sha256": report["final_delta_sha256"],
            "init_delta": f"{rel}/init_delta.npy",
            "examples": [f"{rel}/{e['file']}" for e in report["valid_set"]],
        }
        logger.info("%s: %d valid examples, best SNR %s", text, report["n_valid"], report["best_snr_db"])

    eval_info = None
    if any(a["status"] != "infeasible_init" for a in artifacts.values()):
        ev = evaluate_dir(out, registry, spec.surrogates, spec.holdout, defenses)
        path, digest = write_eval(ev, out)
        eval_info = {"report": path.name, "sha256": digest, "table": "eval_table.txt"}

    manifest = {
        "schema_version": MANIFEST_VERSION,
        "run_id": run_id_for(snapshot),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        **snapshot,
        "artifacts": artifacts,
        "eval": eval_info,
        "exit_code": exit_code,
    }
    dump_json(out / "manifest.json", manifest)
    return PipelineOutcome(manifest, exit_code, results)


def spec_from_manifest(path) -> PipelineSpec:
    """Rebuild the run specification stored in a manifest, checking input digests."""
    m = json.loads(Path(path).read_text())
    if m.get("schema_version") != MANIFEST_VERSION:
        raise ConfigError(f"unsupported manifest schema {m.get('schema_version')}")
    inputs = m["inputs"]
    for entry in [inputs["carrier"], *inputs["commands"]]:
        p = entry.get("path") or entry.get("audio")
        if sha256_file(p) != entry["sha256"]:
            raise ConfigError(f"input {p} changed since the manifest was written")
    return PipelineSpec(
        carrier=inputs["carrier"]["path"],
        commands=[{"text": c["text"], "audio": c["audio"]} for c in inputs["commands"]],
        surrogates=m["surrogates"],
        holdout=m["holdout"],
        defenses=m["defenses"],
        config=AttackConfig.from_dict(m["config"]),
        model_dirs=m.get("model_dirs", []),
    )


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NoFeasibleInit):
        return EXIT_INFEASIBLE
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ModelError):
        return EXIT_MODEL
    if isinstance(exc, AudioAdvError):
        return EXIT_ERROR
    return EXIT_ERROR
