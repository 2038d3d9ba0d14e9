import json

import pytest

from valuecascade.cli import EXIT_CONFIG, EXIT_FATAL, EXIT_OK, run
from valuecascade.datagen import EMPTY_RESPONSE
from valuecascade.values import LabelVector, Record, TextInstance, read_records, write_records

from cli_support import SYSTEM, forbid_network, write_config, write_dataset, write_wvs


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "data.jsonl")


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def test_identify_record_then_replay_strict(tmp_path, dataset, monkeypatch, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run(["identify", "--config", str(cfg), "--dataset", str(dataset), "--replay-mode", "record"]) == EXIT_OK
    recorded = (out / "results.jsonl").read_bytes()
    rows = read_jsonl(out / "results.jsonl")
    assert len(rows) == 20 and rows[0]["id"] == "arg000"
    assert (out / "eval.json").exists() and (out / "token_report.json").exists()
    assert len(json.loads((out / "eval_levels.json").read_text())) == 20

    attempts = forbid_network(monkeypatch)
    for workers in ("1", "4"):
        assert run(["identify", "--config", str(cfg), "--dataset", str(dataset), "--replay-mode", "replay-strict", "--workers", workers]) == EXIT_OK
        assert (out / "results.jsonl").read_bytes() == recorded
    assert attempts == []


def test_replay_strict_miss_is_fatal(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path)
    (tmp_path / "replay.jsonl").write_text("", encoding="utf-8")
    code = run(["identify", "--config", str(cfg), "--dataset", str(dataset), "--replay-mode", "replay-strict"])
    assert code == EXIT_FATAL
    assert "replay store has no response" in capsys.readouterr().err


def test_threshold_error_before_execution(tmp_path, dataset, monkeypatch, capsys):
    attempts = forbid_network(monkeypatch)
    cfg = write_config(tmp_path, **{"detector.kind": "openai", "detector.base_url": "http://nowhere.invalid"})
    code = run(["identify", "--config", str(cfg), "--dataset", str(dataset), "--p-low", "0.9", "--p-high", "0.2"])
    assert code == EXIT_CONFIG
    assert "p_low" in capsys.readouterr().err
    assert attempts == []
    assert not (tmp_path / "out").exists()


def test_config_errors_are_exhaustive(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"llm.responder": None})
    assert run(["identify", "--config", str(cfg), "-L", "0", "--workers", "0"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    for fragment in ("sampling.L", "workers", "llm:", "dataset is required"):
        assert fragment in err


def test_baseline_five_calls_per_instance(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path)
    assert run(["baseline", "--config", str(cfg), "--dataset", str(dataset), "--batch-size", "4"]) == EXIT_OK
    assert "5.00 per instance" in capsys.readouterr().out
    rows = read_jsonl(tmp_path / "out" / "results.jsonl")
    assert all(r["llm_calls"] == 5 and r["strategy"] == "baseline:batch=4" for r in rows)
    report = json.loads((tmp_path / "out" / "token_report.json").read_text())
    assert report["total_llm_calls"] == 100


def test_set_override_and_unknown_key(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path)
    assert run(["baseline", "--config", str(cfg), "--dataset", str(dataset), "--set", "strategy.batch_size=20", "--limit", "3"]) == EXIT_OK
    rows = read_jsonl(tmp_path / "out" / "results.jsonl")
    assert len(rows) == 3 and all(r["llm_calls"] == 1 for r in rows)
    assert run(["identify", "--config", str(cfg), "--set", "nope=1"]) == EXIT_CONFIG


def test_eval_and_token_report_commands(tmp_path, dataset, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run(["identify", "--config", str(cfg), "--dataset", str(dataset)]) == EXIT_OK
    first = json.loads((out / "eval.json").read_text())
    assert run(["eval", "--config", str(cfg), "--dataset", str(dataset), "--predictions", str(out / "results.jsonl"), "--output-dir", str(tmp_path / "ev")]) == EXIT_OK
    again = json.loads((tmp_path / "ev" / "eval.json").read_text())
    assert again["macro_f1"] == first["macro_f1"] and again["accuracy"] == first["accuracy"]
    dist = json.loads((tmp_path / "ev" / "distribution.json").read_text())
    assert sum(dist["counts"].values()) == sum(len(r.labels.positive_indices()) for r in read_records(dataset, SYSTEM))
    capsys.readouterr()
    assert run(["token-report", str(out / "results.jsonl"), "--out", str(tmp_path / "tr.json")]) == EXIT_OK
    assert "mean_online_tokens" in capsys.readouterr().out
    assert json.loads((tmp_path / "tr.json").read_text())["samples"] == 20


def test_consistency_command(tmp_path, dataset):
    cfg = write_config(tmp_path, responder="flip")
    assert run(["consistency", "--config", str(cfg), "--dataset", str(dataset), "--repeats", "4", "--limit", "5"]) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "consistency.json").read_text())
    stages = doc["stages"]
    assert set(stages) == {"detector_1", "detector_L", "candidate_set", "final"}
    assert stages["detector_1"] > 0


def test_consistency_final_stage_stable_when_llm_rejects_all(tmp_path, dataset):
    # detector output varies across repeats but the LLM rejects every candidate
    cfg = write_config(tmp_path, responder="irrelevant")
    assert run(["consistency", "--config", str(cfg), "--dataset", str(dataset), "--repeats", "3", "--limit", "3", "-L", "5"]) == EXIT_OK
    stages = json.loads((tmp_path / "out" / "consistency.json").read_text())["stages"]
    assert stages["final"] == 0.0


def test_consistency_needs_two_repeats(tmp_path, dataset):
    cfg = write_config(tmp_path)
    assert run(["consistency", "--config", str(cfg), "--dataset", str(dataset), "--repeats", "1"]) == EXIT_CONFIG


def test_datagen_emit(tmp_path, dataset):
    cfg = write_config(tmp_path)
    assert run(["datagen", "emit", "--config", str(cfg), "--dataset", str(dataset)]) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "alpaca.json").read_text())
    assert len(doc) == 40
    assert all(set(r) == {"instruction", "input", "output"} for r in doc)
    assert run(["datagen", "emit", "--config", str(cfg), "--dataset", str(dataset), "--no-reflection"]) == EXIT_OK
    assert len(json.loads((tmp_path / "out" / "alpaca.json").read_text())) == 20


def test_datagen_emit_empty_label_record(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": "x", "text": "nothing here", "labels": []}\n', encoding="utf-8")
    cfg = write_config(tmp_path)
    assert run(["datagen", "emit", "--config", str(cfg), "--dataset", str(path), "--no-reflection"]) == EXIT_OK
    assert json.loads((tmp_path / "out" / "alpaca.json").read_text())[0]["output"] == EMPTY_RESPONSE


def test_datagen_explain(tmp_path):
    data = write_dataset(tmp_path / "raw.jsonl", explained=False)
    cfg = write_config(tmp_path, responder="generator")
    assert run(["datagen", "explain", "--config", str(cfg), "--dataset", str(data)]) == EXIT_OK
    explained = read_records(tmp_path / "out" / "explained.jsonl", SYSTEM)
    assert all(set(r.explanations) == set(r.labels.names(SYSTEM)) for r in explained)
    report = json.loads((tmp_path / "out" / "explain_report.json").read_text())
    assert report["calls"] == sum(len(r.labels.positive_indices()) for r in explained)


def test_datagen_icl(tmp_path, dataset):
    cfg = write_config(tmp_path, responder="generator")
    assert run(["datagen", "icl", "--config", str(cfg), "--dataset", str(dataset), "--count", "6"]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "generation_report.json").read_text())
    assert report["kept"] == 6
    generated = read_records(tmp_path / "out" / "generated.jsonl", SYSTEM)
    assert generated and all(r.source == "icl_generated" for r in generated)


def test_datagen_icl_with_seven_seeds_fails(tmp_path, capsys):
    data = write_dataset(tmp_path / "seven.jsonl", n=7)
    cfg = write_config(tmp_path, responder="generator")
    assert run(["datagen", "icl", "--config", str(cfg), "--dataset", str(data), "--count", "2"]) == EXIT_FATAL
    assert "at least 8" in capsys.readouterr().err


def test_datagen_targeted_reports_ratio(tmp_path):
    records = [
        Record(TextInstance(f"s{i}-{j}", f"seed text {i} {j}"), LabelVector.from_indices([i], SYSTEM), {SYSTEM[i].name: "x"})
        for i in range(20)
        for j in range(1 + (i % 4) * 2)
    ]
    data = tmp_path / "skewed.jsonl"
    write_records(data, records, SYSTEM)
    cfg = write_config(tmp_path, responder="generator")
    assert run(["datagen", "targeted", "--config", str(cfg), "--dataset", str(data), "-k", "2", "--per-value", "3"]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "generation_report.json").read_text())
    assert report["ratio_before"] == 7.0
    assert report["ratio_after"] <= report["ratio_before"]
    assert report["kept_after_dedup"] > 0


ANSWERS = {f"v{i}": a for i, a in zip(range(70, 80), [1, 2, 3, 4, 5, 6, 1, 2, 3, 4])}


def test_persona_replayed_individual(tmp_path, monkeypatch):
    wvs = write_wvs(tmp_path / "wvs.jsonl", {"p1": ANSWERS})
    cfg = write_config(tmp_path)
    assert run(["persona", "--config", str(cfg), "--wvs", str(wvs), "--replay-mode", "record"]) == EXIT_OK
    first = (tmp_path / "out" / "persona.json").read_bytes()
    attempts = forbid_network(monkeypatch)
    assert run(["persona", "--config", str(cfg), "--wvs", str(wvs), "--replay-mode", "replay-strict"]) == EXIT_OK
    assert (tmp_path / "out" / "persona.json").read_bytes() == first
    assert attempts == []
    doc = json.loads(first)
    person = doc["individuals"][0]
    assert len(person["s_pred"]) == 10 and len(person["correct"]) == 10
    assert len(read_jsonl(tmp_path / "out" / "persona_texts.jsonl")) == 20


def test_persona_all_irrelevant(tmp_path):
    wvs = write_wvs(tmp_path / "wvs.jsonl", {"p1": ANSWERS})
    cfg = write_config(tmp_path, responder="irrelevant")
    assert run(["persona", "--config", str(cfg), "--wvs", str(wvs)]) == EXIT_OK
    person = json.loads((tmp_path / "out" / "persona.json").read_text())["individuals"][0]
    assert set(person["s_pred"].values()) == {0}


def test_persona_missing_wvs_file(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["persona", "--config", str(cfg), "--wvs", str(tmp_path / "missing.jsonl")]) == EXIT_CONFIG
    assert "WVS answers file not found" in capsys.readouterr().err


def test_import_command(tmp_path):
    args = tmp_path / "a.tsv"
    labels = tmp_path / "l.tsv"
    args.write_text("Argument ID\tConclusion\tStance\tPremise\nA1\tWe should X\tagainst\tY hurts\n", encoding="utf-8")
    labels.write_text("\t".join(["Argument ID", *SYSTEM.names]) + "\nA1\t" + "\t".join(["1"] + ["0"] * 19) + "\n", encoding="utf-8")
    out = tmp_path / "d.jsonl"
    assert run(["import", "--arguments", str(args), "--labels", str(labels), "--out", str(out)]) == EXIT_OK
    recs = read_records(out, SYSTEM)
    assert recs[0].instance.text == "I am against the opinion of We should X, because Y hurts."
    assert recs[0].labels.names(SYSTEM) == ["Self-direction: thought"]
