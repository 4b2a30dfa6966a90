import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from audioadv import cli
from audioadv.audio import read_wav
from audioadv.config import AttackConfig
from audioadv.corpus import COMMANDS, make_corpus
from audioadv.runner import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_MODEL, EXIT_OK, PipelineSpec, run_pipeline,
                             spec_from_manifest)

CMDS = "play music;open the door"


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def referenced_files(manifest):
    refs = []
    for art in manifest["artifacts"].values():
        refs += [art[k] for k in ("report", "trace", "final_delta", "init_delta") if k in art]
        refs += art["examples"]
    if manifest["eval"]:
        refs += [manifest["eval"]["report"], manifest["eval"]["table"]]
    return refs


def pipeline(corpus_dir, out, *extra, surrogates="mock-accept,mock-accept-2"):
    return cli.main(["pipeline", "--corpus", str(corpus_dir), "--commands", CMDS, "--surrogates", surrogates,
                     "--max-steps", "3", "--out", str(out), *extra])


def test_make_corpus_is_deterministic(tmp_path):
    a = make_corpus(tmp_path / "a", seed=5)
    assert cli.main(["make-corpus", "--out", str(tmp_path / "b"), "--seed", "5"]) == EXIT_OK
    assert tree_bytes(a) == tree_bytes(tmp_path / "b")
    assert tree_bytes(a) != tree_bytes(make_corpus(tmp_path / "c", seed=6))
    labels = json.loads((a / "labels.json").read_text())
    assert len(labels["commands"]) == 10 and "play music" in [e["text"] for e in labels["commands"]]
    assert set(COMMANDS) == {e["text"] for e in labels["commands"]}
    clip = read_wav(a / labels["commands"][0]["file"])
    assert clip.sample_rate == 16000 and clip.samples.ndim == 1


def test_pipeline_with_accepting_mocks(corpus_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert pipeline(corpus_dir, out, "--defenses", "smoothing:h=1,mvp:m=2") == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert set(m["artifacts"]) == {"play music", "open the door"}
    for art in m["artifacts"].values():
        assert art["status"] == "ok" and len(art["examples"]) == 3
    ev = json.loads((out / "eval_report.json").read_text())
    assert ev["models"]["mock-accept"]["sroa"] == "2/2"
    assert "run " in capsys.readouterr().out


def test_manifest_references_every_file_once(corpus_dir, tmp_path):
    out = tmp_path / "run"
    pipeline(corpus_dir, out)
    m = json.loads((out / "manifest.json").read_text())
    refs = referenced_files(m)
    assert len(refs) == len(set(refs))
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(refs) == on_disk
    assert json.loads(json.dumps(m)) == m


def test_rerun_from_manifest_reproduces_artifacts(corpus_dir, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    pipeline(corpus_dir, first)
    assert cli.main(["pipeline", "--from-manifest", str(first / "manifest.json"), "--out", str(second)]) == EXIT_OK
    a = json.loads((first / "manifest.json").read_text())
    b = json.loads((second / "manifest.json").read_text())
    assert a["run_id"] == b["run_id"]
    assert a["artifacts"] == b["artifacts"] and a["eval"] == b["eval"]
    for rel in referenced_files(a):
        assert (first / rel).read_bytes() == (second / rel).read_bytes()


def test_manifest_detects_changed_inputs(corpus_dir, tmp_path):
    corpus = make_corpus(tmp_path / "corpus", seed=0)
    out = tmp_path / "run"
    pipeline(corpus, out)
    spec = spec_from_manifest(out / "manifest.json")
    assert isinstance(spec, PipelineSpec)
    wav = corpus / "commands" / "play_music.wav"
    wav.write_bytes(wav.read_bytes()[:-2] + b"\x01\x00")
    assert cli.main(["pipeline", "--from-manifest", str(out / "manifest.json"), "--out", str(tmp_path / "x")]) \
        == EXIT_CONFIG


def test_rejecting_mock_is_infeasible(corpus_dir, tmp_path):
    out = tmp_path / "run"
    assert pipeline(corpus_dir, out, surrogates="mock-reject") == EXIT_INFEASIBLE
    m = json.loads((out / "manifest.json").read_text())
    assert all(a["status"] == "infeasible_init" and a["examples"] == [] for a in m["artifacts"].values())
    assert not list(out.rglob("*.wav")) and m["eval"] is None


@pytest.mark.parametrize("extra", [["--defenses", "blur:h=1"], ["--max-steps", "0"], ["--commands", "sing a song"]])
def test_config_errors_exit_2(corpus_dir, tmp_path, extra):
    args = ["pipeline", "--corpus", str(corpus_dir), "--surrogates", "mock-accept", "--out", str(tmp_path / "o")]
    assert cli.main(args + extra) == EXIT_CONFIG


def test_bad_config_file_exits_2(corpus_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": "fast"}))
    assert pipeline(corpus_dir, tmp_path / "o", "--config", str(cfg)) == EXIT_CONFIG


def test_unknown_model_exits_4(corpus_dir, tmp_path):
    assert pipeline(corpus_dir, tmp_path / "o", surrogates="no-such-model") == EXIT_MODEL


def test_attack_init_and_eval_subcommands(corpus_dir, tmp_path):
    carrier = str(corpus_dir / "carriers" / "song_0.wav")
    cmd = str(corpus_dir / "commands" / "open_the_door.wav")
    common = ["--carrier", carrier, "--command-audio", cmd, "--target", "open the door"]
    init_out = tmp_path / "init.wav"
    assert cli.main(["init", *common, "--surrogates", "mock-accept", "--out", str(init_out)]) == EXIT_OK
    record = json.loads(init_out.with_suffix(".json").read_text())
    assert record["position"] >= 0 and record["snr_db"] > 0
    adv = tmp_path / "adv"
    assert cli.main(["attack", *common, "--surrogates", "mock-accept", "--max-steps", "2", "--out", str(adv)]) \
        == EXIT_OK
    report = json.loads((adv / "report.json").read_text())
    assert report["n_valid"] == 2 and (adv / "adv_00001.wav").is_file()
    assert np.load(adv / "final_delta.npy").size == read_wav(carrier).samples.size
    assert cli.main(["eval", "--adv-dir", str(adv), "--surrogates", "mock-accept", "--holdout", "mock-reject",
                     "--defenses", "downsample:f_low=8000"]) == EXIT_OK
    ev = json.loads((adv / "eval_report.json").read_text())
    assert ev["models"]["mock-reject"]["sroa"] == "0/1"
    rej = tmp_path / "rej"
    assert cli.main(["attack", *common, "--surrogates", "mock-reject", "--out", str(rej)]) == EXIT_INFEASIBLE
    assert json.loads((rej / "report.json").read_text())["status"] == "infeasible_init"


def test_train_toys_plumbing(corpus_dir, tmp_path, monkeypatch, toy_models_dir):
    _, trained = toy_models_dir
    calls = []

    def fake_train(commands, seed, id):
        calls.append((seed, id, len(commands)))
        return trained[id]

    monkeypatch.setattr(cli, "train_toy_ctc", fake_train)
    out = tmp_path / "models"
    assert cli.main(["train-toys", "--corpus", str(corpus_dir), "--n-models", "2", "--seeds", "1,2",
                     "--out", str(out)]) == EXIT_OK
    assert [c[:2] for c in calls] == [(1, "toyctc-1"), (2, "toyctc-2")] and calls[0][2] == 10
    assert len(list(out.glob("*.json"))) >= 2
    assert cli.main(["train-toys", "--corpus", str(corpus_dir), "--n-models", "2", "--seeds", "1"]) == EXIT_CONFIG


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "audioadv.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "pipeline" in res.stdout


def test_run_pipeline_keeps_results(corpus_dir, tmp_path):
    spec = PipelineSpec.from_corpus(None, corpus_dir, ["mock-accept"], ["play music"],
                                    config=AttackConfig(max_steps=2))
    outcome = run_pipeline(spec, tmp_path / "o", keep_results=True)
    assert outcome.exit_code == EXIT_OK and len(outcome.results["play music"].valid_set) == 2
