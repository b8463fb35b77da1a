import json
import subprocess
import sys

import numpy as np
import pytest

from rfclink import dataset
from rfclink.baselines import build_model
from rfclink.checkpoint import load_model, save_model
from rfclink.cli import main
from rfclink.encoder import EncoderConfig, Vocab

from .conftest import DATA

TINY_CFG = """\
num_blocks = 1
hidden_size = 8
num_heads = 2
max_desc_len = 16
max_field_len = 4
vocab_size = 300
dropout = 0.0
epochs = 2
learning_rate = 1e-3
"""

FIXTURE_URI = (DATA / "rfc").as_uri() + "/rfc{number}.txt"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def cache(tmp_path, capsys):
    d = tmp_path / "cache"
    assert run(capsys, "fetch", "--rfc", 791, 768, "--cache", d, "--base-uri", FIXTURE_URI)[0] == 0
    return d


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CFG)
    return p


@pytest.fixture
def small_data(tmp_path, samples):
    p = tmp_path / "samples.jsonl"
    dataset.save_samples(samples[:24], p)
    return p


# -- fetch --------------------------------------------------------------------------------

def test_fetch_creates_cache_files(cache):
    assert (cache / "rfc791.txt").exists() and (cache / "rfc768.txt").exists()


def test_fetch_reuses_cache(cache, capsys):
    # an unreachable source still succeeds because nothing is downloaded
    code, out, _ = run(capsys, "fetch", "--rfc", 791, "--cache", cache, "--base-uri",
                       "http://127.0.0.1:9/rfc{number}.txt")
    assert code == 0 and "rfc791" in out


def test_fetch_zero_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["fetch", "--rfc", "0", "--cache", str(tmp_path)])
    assert info.value.code == 2
    assert "positive" in capsys.readouterr().err


def test_fetch_reports_each_failure(tmp_path, capsys):
    code, out, err = run(capsys, "fetch", "--rfc", 791, 9999, "--cache", tmp_path, "--base-uri", FIXTURE_URI)
    assert code == 1
    assert "rfc9999: error" in err and "rfc791" in out


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["parse", "--colour", "blue"])
    assert info.value.code == 2


# -- parse ----------------------------------------------------------------------------------

def test_parse_rfc791(cache, tmp_path, capsys):
    out_file = tmp_path / "catalog.jsonl"
    code, out, _ = run(capsys, "parse", "--rfc", 791, "--cache", cache, "--out", out_file)
    assert code == 0
    catalog = dataset.load_catalog(out_file)
    assert ("Version", 0, 4) in [(e.name, e.offset, e.width) for e in catalog]
    assert len(catalog) == 14 and "14 fields" in out


def test_parse_prose_only_document(cache, tmp_path, capsys):
    out_file = tmp_path / "catalog.jsonl"
    assert run(capsys, "parse", "--rfc", 768, "--cache", cache, "--out", out_file)[0] == 0
    assert out_file.read_text() == ""


def test_parse_missing_cache_entry(tmp_path, capsys):
    code, _, err = run(capsys, "parse", "--rfc", 791, "--cache", tmp_path, "--out", tmp_path / "c.jsonl")
    assert code == 1 and "not fetched" in err


def test_parse_malformed_row(tmp_path, capsys):
    ruler = "   +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+"
    (tmp_path / "rfc5.txt").write_text("\n".join(["prose", ruler, "   |  bad cell  |" + " " * 50 + "|", ruler]))
    code, _, err = run(capsys, "parse", "--rfc", 5, "--cache", tmp_path, "--out", tmp_path / "c.jsonl")
    assert code == 1 and "line 2" in err


# -- build-dataset ------------------------------------------------------------------------------

def _annotations(tmp_path, rows):
    p = tmp_path / "ann.jsonl"
    p.write_text("".join(json.dumps(dict(zip(("rfc", "diagram", "offset", "label"), r))) + "\n" for r in rows))
    return p


def test_build_dataset(cache, tmp_path, capsys):
    catalog = tmp_path / "catalog.jsonl"
    run(capsys, "parse", "--rfc", 791, "--cache", cache, "--out", catalog)
    ann = _annotations(tmp_path, [(791, 0, 0, "Version Number"), (791, 0, 80, "Checksum")])
    out_file = tmp_path / "samples.jsonl"
    code, out, _ = run(capsys, "build-dataset", "--catalog", catalog, "--annotations", ann,
                       "--schema", DATA / "schema.json", "--out", out_file)
    assert code == 0
    assert [s.header_field for s in dataset.load_samples(out_file)] == ["Version", "Header Checksum"]
    assert "Checksum" in out and out.splitlines()[-1].split()[-1] == "2"


@pytest.mark.parametrize("row,needle", [((791, 0, 0, "Flavor"), "Flavor"), ((791, 0, 3, "Length"), "(791, 0, 3)")])
def test_build_dataset_errors(cache, tmp_path, capsys, row, needle):
    catalog = tmp_path / "catalog.jsonl"
    run(capsys, "parse", "--rfc", 791, "--cache", cache, "--out", catalog)
    code, _, err = run(capsys, "build-dataset", "--catalog", catalog, "--annotations", _annotations(tmp_path, [row]),
                       "--schema", DATA / "schema.json", "--out", tmp_path / "s.jsonl")
    assert code == 1 and needle in err


# -- train / link / evaluate ---------------------------------------------------------------------------

def test_train_then_link(tmp_path, capsys, small_data, cfg_file, samples):
    ckpt = tmp_path / "ckpt"
    code, out, _ = run(capsys, "train", "--data", small_data, "--schema", DATA / "schema.json",
                       "--model-kind", "joint-c", "--config", cfg_file, "--out", ckpt)
    assert code == 0 and "final training loss" in out
    assert {p.name for p in ckpt.iterdir()} == {"manifest.json", "params.bin", "config.json", "vocab.txt"}
    s = samples[0]
    code, out, _ = run(capsys, "link", "--checkpoint", ckpt, "--field", s.header_field, "--description", s.description)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 10
    label, prob = lines[0].split("\t")
    assert label in dataset.load_schema(DATA / "schema.json").active
    assert abs(sum(float(ln.split()[-1]) for ln in lines[1:]) - 1) < 1e-5


def test_link_empty_description(tmp_path, capsys, small_data, cfg_file):
    ckpt = tmp_path / "ckpt"
    run(capsys, "train", "--data", small_data, "--schema", DATA / "schema.json",
        "--model-kind", "encoder-only", "--config", cfg_file, "--out", ckpt)
    code, out, _ = run(capsys, "link", "--checkpoint", ckpt, "--field", "Flags", "--description", "")
    assert code == 0 and "\t" in out.splitlines()[0]


def test_link_uniform_head(tmp_path, capsys, schema):
    cfg = EncoderConfig(num_blocks=1, hidden_size=8, num_heads=2, max_desc_len=16, max_field_len=4)
    model = build_model("joint-c", Vocab.build(["the version field"], 50), cfg, schema.num_classes)
    model.params["head.u"].data[...] = 0
    model.params["head.c"].data[...] = 0
    save_model(model, schema.active, tmp_path / "ckpt")
    code, out, _ = run(capsys, "link", "--checkpoint", tmp_path / "ckpt", "--field", "Version",
                       "--description", "the version field")
    assert code == 0
    probs = [float(ln.split()[-1]) for ln in out.splitlines()[1:]]
    assert len(probs) == 9 and all(abs(p - 1 / 9) <= 1e-6 for p in probs)


def test_link_config_mismatch(tmp_path, capsys, schema):
    cfg = EncoderConfig(num_blocks=1, hidden_size=8, num_heads=2, max_desc_len=16, max_field_len=4)
    model = build_model("bpnn", Vocab.build(["a b c"], 50), cfg, schema.num_classes)
    save_model(model, schema.active, tmp_path / "ckpt")
    record = json.loads((tmp_path / "ckpt" / "config.json").read_text())
    record["model"]["encoder"]["hidden_size"] = 16
    (tmp_path / "ckpt" / "config.json").write_text(json.dumps(record))
    code, _, err = run(capsys, "link", "--checkpoint", tmp_path / "ckpt", "--field", "x", "--description", "y")
    assert code == 1 and "mismatch" in err
    code, _, err = run(capsys, "link", "--checkpoint", tmp_path / "nothing", "--field", "x", "--description", "y")
    assert code == 1


def test_checkpoint_round_trip_predictions(tmp_path, schema):
    cfg = EncoderConfig(num_blocks=1, hidden_size=8, num_heads=2, max_desc_len=16, max_field_len=4)
    model = build_model("joint-b", Vocab.build(["total length of the datagram"], 50), cfg, schema.num_classes, seed=3)
    save_model(model, schema.active, tmp_path)
    again, classes = load_model(tmp_path)
    assert classes == list(schema.active) and again.kind == "joint-b"
    a = model.predict_proba("Total Length", "total length of the datagram")
    b = again.predict_proba("Total Length", "total length of the datagram")
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_evaluate_writes_results(tmp_path, capsys, small_data, cfg_file):
    out_file = tmp_path / "results.jsonl"
    code, out, _ = run(capsys, "evaluate", "--data", small_data, "--schema", DATA / "schema.json",
                       "--model-kind", "bpnn", "--config", cfg_file, "--folds", 3, "--seed", 1, 2,
                       "--out", out_file)
    assert code == 0
    assert "Avg_F" in out.splitlines()[0] and "config " in out
    records = [json.loads(ln) for ln in out_file.read_text().splitlines()]
    assert [r["record"] for r in records].count("fold") == 6
    assert records[-1]["protocol"]["seeds"] == [1, 2]


def test_evaluate_rejects_bad_inputs(tmp_path, capsys, small_data, cfg_file):
    with pytest.raises(SystemExit) as info:
        main(["evaluate", "--data", str(small_data), "--schema", str(DATA / "schema.json"),
              "--model-kind", "bpnn", "--folds", "1", "--out", str(tmp_path / "r")])
    assert info.value.code == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    code, _, err = run(capsys, "evaluate", "--data", small_data, "--schema", DATA / "schema.json",
                       "--model-kind", "bpnn", "--config", bad, "--out", tmp_path / "r")
    assert code == 1 and "colour" in err
    code, _, err = run(capsys, "train", "--data", tmp_path / "missing.jsonl", "--schema", DATA / "schema.json",
                       "--model-kind", "bpnn", "--out", tmp_path / "ck")
    assert code == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rfclink.cli", "parse", "--rfc", "791", "--cache",
                           str(tmp_path), "--out", str(tmp_path / "c.jsonl")], capture_output=True, text=True)
    assert proc.returncode == 1 and "not fetched" in proc.stderr
