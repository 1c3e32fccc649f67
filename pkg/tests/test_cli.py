import csv
import json

import pytest
import yaml
from click.testing import CliRunner

from actionpatterns.backends import CompletionRequest, FixtureStore, fixture_key
from actionpatterns.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_PARSE, cli
from actionpatterns.model import ExtractionKind, load_patterns
from actionpatterns.prompts import render_bulk_prompt, render_slot_prompt

from .conftest import DATA, FIXTURES, chat_payload

BAKE_PROMPT = render_slot_prompt(ExtractionKind.TOOL, "bake", "bread", ["bowl", "oven", "knife"]).text


def write_config(tmp_path, fixture_dir, model="gpt-4", **extra):
    data = {"backends": {"replay": {"kind": "replay", "model": model, "fixture_dir": str(fixture_dir)}}}
    data.update(extra)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def run(config, *args):
    return CliRunner().invoke(cli, ["--config", str(config), *args])


def run_without_config(tmp_path, *args, monkeypatch):
    # no --config and no default file in the working directory
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("ACTIONPATTERNS_CONFIG", raising=False)
    return CliRunner().invoke(cli, list(args))


@pytest.fixture
def replay(tmp_path):
    fixtures = tmp_path / "fixtures"
    fixtures.mkdir()
    return FixtureStore(fixtures), write_config(tmp_path, fixtures)


SLOT_ARGS = ["extract", "slot", "--kind", "tool", "--action", "bake", "--object", "bread"]


def test_extract_slot(replay, tmp_path):
    store, config = replay
    store.put(CompletionRequest(BAKE_PROMPT, "gpt-4", 0), "Oven, bowl")
    out = tmp_path / "labels.txt"
    result = run(config, *SLOT_ARGS, "--candidates", "bowl,oven,knife", "--backend", "replay", "--output", str(out))
    assert result.exit_code == 0, result.output
    assert result.stdout == "oven\nbowl\n"
    assert out.read_text() == "oven\nbowl\n"


def test_extract_slot_candidates_file(replay, tmp_path):
    store, config = replay
    store.put(CompletionRequest(BAKE_PROMPT, "gpt-4", 0), "oven")
    candidates = tmp_path / "c.txt"
    candidates.write_text("bowl\noven\n\nknife\n")
    result = run(config, *SLOT_ARGS, "--candidates-file", str(candidates), "--backend", "replay")
    assert (result.exit_code, result.stdout) == (0, "oven\n")


def test_unknown_backend_lists_available(replay):
    _, config = replay
    result = run(config, *SLOT_ARGS, "--candidates", "oven", "--backend", "gpt-5")
    assert result.exit_code == EXIT_CONFIG
    assert "available backends: replay" in result.stderr


def test_fixture_miss_reports_digest(replay):
    _, config = replay
    result = run(config, *SLOT_ARGS, "--candidates", "bowl,oven,knife", "--backend", "replay")
    assert result.exit_code == EXIT_BACKEND
    assert fixture_key(CompletionRequest(BAKE_PROMPT, "gpt-4", 0)) in result.stderr


def test_unparsable_answer(replay):
    store, config = replay
    store.put(CompletionRequest(BAKE_PROMPT, "gpt-4", 0), "I would use a hammer.")
    result = run(config, *SLOT_ARGS, "--candidates", "bowl,oven,knife", "--backend", "replay")
    assert result.exit_code == EXIT_PARSE


def test_empty_candidates_is_config_error(replay):
    _, config = replay
    result = run(config, *SLOT_ARGS, "--backend", "replay")
    assert result.exit_code == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    result = run(tmp_path / "nope.yaml", *SLOT_ARGS, "--candidates", "oven", "--backend", "replay")
    assert result.exit_code == EXIT_CONFIG


def test_secret_in_config_rejected(tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump({"backends": {"x": {"kind": "chat_http", "endpoint": "http://h", "api_key": "sk"}}}))
    result = run(config, *SLOT_ARGS, "--candidates", "oven", "--backend", "x")
    assert result.exit_code == EXIT_CONFIG
    assert "environment" in result.stderr


def test_extract_hundred_patterns(tmp_path):
    config = write_config(tmp_path, FIXTURES / "bulk_kitchen")
    out = tmp_path / "patterns.json"
    result = run(config, "extract", "patterns", "--domain", "kitchen", "--count", "100", "--backend", "replay", "--output", str(out))
    assert result.exit_code == 0, result.stderr
    assert result.stdout == "parsed: 100\nmalformed: 0\n"
    assert len(load_patterns(out)) == 100
    with open(tmp_path / "patterns.review.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 100
    assert {r["valid_format"] for r in rows} == {"yes"}
    assert {r["human_valid"] for r in rows} == {""}


def test_extract_patterns_with_one_malformed_line(replay, tmp_path):
    store, config = replay
    lines = [f"{i}. (cut, chef, item{i}, knife)" for i in range(1, 11)]
    lines[6] = "7. (wash, sink)"
    store.put(CompletionRequest(render_bulk_prompt(10, "kitchen").text, "gpt-4", 0), "\n".join(lines))
    out = tmp_path / "p.json"
    sheet = tmp_path / "sheet.csv"
    result = run(
        config, "extract", "patterns", "--domain", "kitchen", "--count", "10", "--backend", "replay",
        "--output", str(out), "--review-sheet", str(sheet),
    )
    assert result.exit_code == 0, result.stderr
    assert result.stdout == "parsed: 9\nmalformed: 1\n"
    with open(sheet, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["line"] for r in rows] == [str(i) for i in range(1, 11)]
    bad = [r for r in rows if r["valid_format"] == "no"]
    assert len(bad) == 1 and bad[0]["line"] == "7" and bad[0]["pattern_index"] == ""
    assert rows[0]["tuple"] == "(cut, chef, item1, knife)"


def test_extract_patterns_count_zero(replay, tmp_path):
    _, config = replay
    result = run(config, "extract", "patterns", "--domain", "kitchen", "--count", "0", "--backend", "replay", "--output", str(tmp_path / "p.json"))
    assert result.exit_code == EXIT_CONFIG
    assert not (tmp_path / "p.json").exists()


def _evaluate(config, out, *extra):
    return run(config, "evaluate", "--ground-truth", str(DATA), "--backend", "replay", "--output-dir", str(out), *extra)


def test_evaluate_is_byte_identical(tmp_path, oracle_fixtures):
    config = write_config(tmp_path, oracle_fixtures["perfect"], model="oracle-model")
    first = _evaluate(config, tmp_path / "a", "--kind", "tool")
    second = _evaluate(config, tmp_path / "b", "--kind", "tool")
    assert first.exit_code == second.exit_code == 0, first.stderr
    a = (tmp_path / "a" / "replay__tool.csv").read_bytes()
    assert a == (tmp_path / "b" / "replay__tool.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 97 * 5 + 5
    assert first.stdout.splitlines() == [
        "backend\tkind\tF1@1\tF1@2\tF1@3\tF1@4\tF1@5",
        "replay\ttool\t1.000\t1.000\t1.000\t1.000\t1.000",
    ]
    assert (tmp_path / "a" / "replay__tool.f1.tsv").read_text().startswith("n\tmean_f1\n1\t1.000000\n")


def test_evaluate_flags_override_config(tmp_path, oracle_fixtures):
    config = write_config(tmp_path, oracle_fixtures["perfect"], model="oracle-model", n_max=2)
    result = _evaluate(config, tmp_path / "out", "--kind", "spatial", "--n-max", "3")
    assert result.exit_code == 0, result.stderr
    assert len((tmp_path / "out" / "replay__spatial.csv").read_text().splitlines()) == 1 + 97 * 3 + 3


def test_evaluate_fixture_misses_still_write_results(tmp_path, oracle_fixtures):
    # recorded under another model name, so every entry misses
    config = write_config(tmp_path, oracle_fixtures["perfect"])
    result = _evaluate(config, tmp_path / "out", "--kind", "state_after")
    assert result.exit_code == EXIT_BACKEND
    assert "97 entries with incident FixtureMiss" in result.stderr
    assert (tmp_path / "out" / "replay__state_after.csv").exists()


def test_evaluate_schema_violation(replay, tmp_path):
    _, config = replay
    records = json.loads(DATA.read_text())
    del records[12]["object_states_after"]
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(records))
    result = run(config, "evaluate", "--ground-truth", str(broken), "--output-dir", str(tmp_path / "o"))
    assert result.exit_code == EXIT_CONFIG
    assert "entry 12" in result.stderr and "object_states_after" in result.stderr


def test_evaluate_records_live_answers(tmp_path, stub_server, monkeypatch):
    server = stub_server(lambda body: (200, chat_payload("knife")))
    fixtures = tmp_path / "rec"
    config = tmp_path / "run.yaml"
    config.write_text(
        yaml.safe_dump(
            {
                "fixture_dir": str(fixtures),
                "backends": {"live": {"kind": "chat_http", "endpoint": server.url, "model": "m", "api_key_env": "K"}},
            }
        )
    )
    records = json.loads(DATA.read_text())[:3]
    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps(records))
    monkeypatch.setenv("K", "secret")
    args = ["--config", str(config), "--record", "evaluate", "--ground-truth", str(gt), "--kind", "tool", "--output-dir", str(tmp_path / "o")]
    result = CliRunner().invoke(cli, args)
    assert result.exit_code == 0, result.stderr
    assert len(server.requests) == 3
    assert len(list(fixtures.glob("*.txt"))) == 3
    assert all(r["temperature"] == 0.0 for r in server.requests)


def test_populate(tmp_path, monkeypatch):
    patterns = tmp_path / "p.json"
    patterns.write_text(
        json.dumps(
            [
                {"action": "cut", "agents": ["person"], "object": "bread", "tools": ["knife"]},
                {"action": "peel", "agents": ["person"], "object": "apple", "tools": ["knife"]},
            ]
        )
    )
    out = tmp_path / "o.ttl"
    result = run_without_config(tmp_path, "populate", "--patterns", str(patterns), "--output", str(out), monkeypatch=monkeypatch)
    assert result.exit_code == 0, result.stderr
    lines = result.stdout.splitlines()
    assert lines[:3] == ["2 actions", "4 objects", "0 states"]
    text = out.read_text()
    assert "<http://example.org/action-patterns#cut_ap0> a owl:NamedIndividual , :Action" in text
    assert ":has_tool <http://example.org/action-patterns#knife>" in text
    assert text.count("<http://example.org/action-patterns#knife> a owl:NamedIndividual") == 1


def test_populate_base_iri_and_empty_input(tmp_path, monkeypatch):
    patterns = tmp_path / "p.json"
    patterns.write_text("[]")
    out = tmp_path / "o.ttl"
    result = run_without_config(
        tmp_path, "populate", "--patterns", str(patterns), "--output", str(out), "--base-iri", "urn:x", monkeypatch=monkeypatch
    )
    assert result.exit_code == EXIT_CONFIG
    result = run_without_config(
        tmp_path, "populate", "--patterns", str(patterns), "--output", str(out), "--base-iri", "http://h/o#", monkeypatch=monkeypatch
    )
    assert result.exit_code == 0
    assert result.stdout.startswith("0 actions\n")
    assert out.read_text().startswith("@prefix : <http://h/o#> .")


def test_populate_invalid_patterns_lists_indices(tmp_path, monkeypatch):
    patterns = tmp_path / "p.json"
    patterns.write_text(
        json.dumps(
            [
                {"action": "cut", "agents": ["person"], "object": "bread"},
                {"action": "stir", "agents": [], "object": "soup"},
                {"action": "open", "object": "jar"},
            ]
        )
    )
    out = tmp_path / "o.ttl"
    result = run_without_config(tmp_path, "populate", "--patterns", str(patterns), "--output", str(out), monkeypatch=monkeypatch)
    assert result.exit_code == EXIT_CONFIG
    assert "indices 1, 2" in result.stderr
    assert not out.exists()


def test_populate_uses_config_base_iri(tmp_path, replay):
    _, config = replay
    config.write_text(config.read_text() + "base_iri: http://kitchen.example/onto/\n")
    patterns = tmp_path / "p.json"
    patterns.write_text(json.dumps([{"action": "cut", "agents": ["person"], "object": "bread"}]))
    out = tmp_path / "o.ttl"
    result = run(config, "populate", "--patterns", str(patterns), "--output", str(out))
    assert result.exit_code == 0, result.stderr
    assert "<http://kitchen.example/onto/cut_ap0>" in out.read_text()
