import json
import shutil
import subprocess
import sys

import pytest

from oracles import nb_posterior, nb_train

from conftest import DEMO
from vaxwatch.cli import main
from vaxwatch.corpus import CorpusStore, PostFilter, Relevance
from vaxwatch.normalize import SENTIMENT_TOKENIZER, clean, features


@pytest.fixture
def demo(tmp_path):
    root = tmp_path / "demo"
    root.mkdir()
    for name in ("config.json", "mock-provider.json"):
        shutil.copy(DEMO / name, root / name)
    for name in ("data", "models"):
        shutil.copytree(DEMO / name, root / name)
    return root


def _cfg(demo, **changes):
    data = json.loads((demo / "config.json").read_text())
    for dotted, value in changes.items():
        node = data
        *parents, leaf = dotted.split("__")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    path = demo / "alt.json"
    path.write_text(json.dumps(data))
    return str(path)


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_stage_by_stage(demo, capsys):
    cfg = str(demo / "config.json")
    code, out, _ = _run(["ingest", "--config", cfg], capsys)
    assert code == 0
    stats = json.loads(out)
    assert stats["x"]["fetched"] == stats["x"]["stored"] + stats["x"]["duplicates"] + stats["x"]["skipped_invalid"]
    code, out, _ = _run(["ingest", "--config", cfg, "--source", "reddit", "--fixture", str(demo / "data/posts.jsonl")], capsys)
    assert code == 0 and json.loads(out)["reddit"]["stored"] == 0

    code, out, _ = _run(["normalize", "--config", cfg], capsys)
    norm = json.loads(out)
    assert code == 0 and norm["processed"] == norm["kept"] + norm["dropped"]

    code, out, _ = _run(["classify", "--config", cfg], capsys)
    counts = json.loads(out)
    assert code == 0
    assert counts["relevance"]["input"] == norm["kept"]
    assert counts["sentiment"]["input"] == counts["relevance"]["relevant"]
    assert counts["concern"]["input"] == counts["relevance"]["relevant"]
    for stage in ("relevance", "sentiment"):
        c = counts[stage]
        assert c["baseline"] + c["provider_calls"] == c["input"] and c["degraded"] == 0

    code, out, _ = _run(["topics", "fit", "--config", cfg], capsys)
    assert code == 0 and "S.No\tTopic of Discussion\tComments Count" in out
    code, out, _ = _run(["topics", "fit", "--config", cfg, "--concern", "safety", "--sentiment-filter", "negative,neutral"], capsys)
    assert code == 0 and "# safety" in out

    code, out, _ = _run(["report", "--config", cfg], capsys)
    manifest = json.loads(out)
    assert code == 0 and manifest[0]["path"] == "report.md"
    assert (demo / "work/out/report.md").exists()


def test_sentiment_calls_equal_below_threshold_count(demo, capsys):
    cfg = str(demo / "config.json")
    for argv in (["ingest"], ["normalize"], ["classify", "--stage", "relevance"]):
        assert main(argv + ["--config", cfg]) == 0
    capsys.readouterr()
    code, out, _ = _run(["classify", "--config", cfg, "--stage", "sentiment", "--tau-s", "0.70"], capsys)
    assert code == 0
    calls = json.loads(out)["sentiment"]["provider_calls"]

    labeled = [json.loads(l) for l in (demo / "data/labeled-sentiment.jsonl").read_text().splitlines()]
    oracle = nb_train([(features(clean(r["text"]).clean_text, SENTIMENT_TOKENIZER), r["label"]) for r in labeled])
    with CorpusStore(demo / "work/store", writable=False) as store:
        relevant = [p for p in store.query(PostFilter(kept=True)) if p.relevance not in (None, Relevance.UNRELATED)]
    below = sum(1 for p in relevant if max(nb_posterior(oracle, features(p.clean_text, SENTIMENT_TOKENIZER)).values()) < 0.70)
    assert calls == below
    assert below > 0


def test_train_commands_write_models(demo, capsys):
    for task in ("sentiment", "relevance"):
        target = demo / "models" / f"{task}.v1.json"
        target.unlink()
        code, out, _ = _run([f"train-{task}", "--config", str(demo / "config.json"),
                             "--labeled", str(demo / f"data/labeled-{task}.jsonl")], capsys)
        assert code == 0 and out.strip() == str(target)
        assert json.loads(target.read_text())["format"] == "vaxwatch.naive_bayes/1"


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_2_via_console(demo):
    proc = subprocess.run([sys.executable, "-m", "vaxwatch.cli", "normalize", "--config", str(demo / "config.json"), "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


@pytest.mark.parametrize("changes, field", [
    ({"sentiment__tau_s": 1.5}, "sentiment.tau_s"),
    ({"relevance__tau_r": "high"}, "relevance.tau_r"),
    ({"topics__min_topic_size": 0}, "topics.min_topic_size"),
    ({"report__granularity": "hourly"}, "report.granularity"),
    ({"mock_provider": "missing.json"}, "mock_provider"),
])
def test_config_error_names_field(demo, capsys, changes, field):
    code, _, err = _run(["normalize", "--config", _cfg(demo, **changes)], capsys)
    assert code == 2
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "config" and payload["field"] == field


def test_source_fixture_path_checked(demo, capsys):
    data = json.loads((demo / "config.json").read_text())
    data["ingest"]["sources"][0]["fixture"] = "nowhere.jsonl"
    (demo / "bad.json").write_text(json.dumps(data))
    code, _, err = _run(["ingest", "--config", str(demo / "bad.json")], capsys)
    assert code == 2 and json.loads(err)["field"] == "ingest.sources[0].fixture"


def test_flag_threshold_out_of_range(demo, capsys):
    code, _, err = _run(["classify", "--config", str(demo / "config.json"), "--tau-s", "2"], capsys)
    assert code == 2 and json.loads(err)["field"] == "--tau-s"


def test_missing_config_file(tmp_path, capsys):
    code, _, err = _run(["normalize", "--config", str(tmp_path / "none.json")], capsys)
    assert code == 2 and json.loads(err)["field"] == "config"


def test_report_unwritable_out_dir(demo, capsys):
    cfg = str(demo / "config.json")
    for argv in (["ingest"], ["normalize"], ["classify"]):
        assert main(argv + ["--config", cfg]) == 0
    capsys.readouterr()
    blocker = demo / "blocked"
    blocker.write_text("not a directory")
    code, _, err = _run(["report", "--config", _cfg(demo, report__out_dir="blocked/out")], capsys)
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] == "ReportError" and "blocked" in payload["message"]
    assert len(err.strip().splitlines()) == 1


def test_stage_failure_is_runtime_error(demo, capsys):
    (demo / "models/sentiment.v1.json").unlink()
    cfg = str(demo / "config.json")
    assert main(["ingest", "--config", cfg]) == 0 and main(["normalize", "--config", cfg]) == 0
    capsys.readouterr()
    code, _, err = _run(["classify", "--config", cfg, "--stage", "sentiment"], capsys)
    assert code == 1 and json.loads(err)["error"] == "StageError"


def test_pipeline_run_manifest(demo, capsys):
    code, out, _ = _run(["pipeline", "run", "--config", str(demo / "config.json")], capsys)
    assert code == 0
    manifest = json.loads((demo / "work/out/manifest.json").read_text())
    kinds = {m["kind"] for m in manifest["outputs"]}
    assert kinds == {"markdown", "csv", "svg"}
    assert set(manifest) == {"config_digest", "stage_counts", "stage_timings", "warnings", "outputs"}
    c = manifest["stage_counts"]
    assert c["normalize"]["processed"] == c["ingest"]["store_records"]
    assert c["relevance"]["input"] == c["normalize"]["kept"]
    assert c["sentiment"]["input"] == c["relevance"]["relevant"] == c["concern"]["input"] == c["topics"]["input"]
    for m in manifest["outputs"]:
        assert (demo / "work/out" / m["path"]).exists()
