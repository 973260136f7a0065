import json

import pytest

from evbraille.cli import EXIT_MODEL, EXIT_OK, EXIT_SEGMENTATION, EXIT_VALIDATION, MANIFEST_NAME, main
from evbraille.datasets import read_stream_index


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """simulate -> label -> train -> train-seg on a small SAB set, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--board", "SAB", "--speed", "8", "--depth", "1.5", "--trials", "10", "--seed", "7",
                 "--out", str(root / "sab")]) == EXIT_OK
    assert main(["label", "--streams", str(root / "sab"), "--out", str(root / "labels")]) == EXIT_OK
    common = ["--data", str(root / "labels"), "--epochs", "1", "--mode", "Norm"]
    assert main(["train", *common, "--out", str(root / "cls.ckpt")]) == EXIT_OK
    assert main(["train-seg", *common, "--out", str(root / "seg.ckpt")]) == EXIT_OK
    return root


def test_simulate_writes_streams_and_sidecars(work):
    files = sorted(p.name for p in (work / "sab").iterdir())
    assert sum(f.endswith(".evb") for f in files) == 30
    assert sum(f.endswith("gt.csv") for f in files) == 30
    assert len(read_stream_index(work / "sab")) == 30
    assert (work / "sab" / MANIFEST_NAME).exists()


def test_label_summary(work):
    summary = json.loads((work / "labels" / "label.json").read_text())
    assert summary["characters"] == 260 and summary["presence"] == 780 and summary["rejected"] == []
    assert summary["calibration"]["choice"] in ("+280", "-280", "fitted")


def test_train_manifest_and_replay_are_byte_identical(work, tmp_path):
    man = work / "cls.ckpt.manifest.json"
    assert json.loads(man.read_text())["command"] == "train"
    assert main(["replay", str(man), "--out", str(tmp_path / "again.ckpt")]) == EXIT_OK
    assert (tmp_path / "again.ckpt").read_bytes() == (work / "cls.ckpt").read_bytes()


def test_eval_chars_reports(work, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval-chars", "--checkpoint", str(work / "cls.ckpt"), "--data", f"1.5={work / 'labels'}",
                 "--data", f"0.6={work / 'labels'}", "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "report.json").read_text())
    assert {r["data"] for r in doc["results"]} == {"1.5", "0.6"}
    assert 0 <= doc["results"][0]["accuracy"] <= 1
    for name in ("confusion_Norm.csv", "confusion_Norm.svg", "depth.svg", "report.txt"):
        assert (out / name).exists()
    assert "Accuracy (%)" in (out / "report.txt").read_text()
    again = tmp_path / "ev2"
    assert main(["replay", str(out / MANIFEST_NAME), "--out", str(again)]) == EXIT_OK
    for name in ("report.json", "report.txt", "confusion_Norm.svg", "depth.svg"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_eval_words_and_decode(work, tmp_path, capsys):
    ev = tmp_path / "ev"
    assert main(["simulate", "--board", "EV", "--speed", "32", "--trials", "1", "--out", str(ev)]) == EXIT_OK
    nets = ["--segmenter", str(work / "seg.ckpt"), "--classifier", str(work / "cls.ckpt")]
    out = tmp_path / "words"
    assert main(["eval-words", *nets, "--streams", str(ev), "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "report.json").read_text())
    assert set(doc["per_speed"]) == {"32"}
    assert set(doc["per_speed"]["32"]["spell"]) == {"words_per_line", "letters_per_word", "correct_words", "correct_letters"}
    assert (out / "decoded.tsv").read_text().startswith("stream_id\t")
    stream = sorted(ev.glob("*.evb"))[0]
    capsys.readouterr()
    assert main(["decode", *nets, str(stream), "--json", str(tmp_path / "d.json")]) == EXIT_OK
    text = capsys.readouterr().out
    rep = json.loads((tmp_path / "d.json").read_text())
    assert set(rep) == {"detections", "registered", "words_raw", "words_corrected"}
    assert text.strip() == " ".join(rep["words_corrected"])


def test_config_file_supplies_options(work, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"simulate": {"board": "UN", "trials": 1, "speed": "16,24"}}))
    out = tmp_path / "un"
    assert main(["--config", str(cfg), "simulate", "--out", str(out)]) == EXIT_OK
    entries = read_stream_index(out)
    assert {e.board for e in entries} == {"UN"} and {e.speed for e in entries} == {16.0, 24.0}
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"simulate": {"colour": 1}}))
    assert main(["--config", str(bad), "simulate", "--out", str(out)]) == EXIT_VALIDATION


def test_exit_codes(work, tmp_path):
    assert main(["decode", "--segmenter", "nope.ckpt", "--classifier", "nope.ckpt", "x.evb"]) == EXIT_VALIDATION
    assert main(["simulate", "--board", "NOPE", "--out", str(tmp_path / "x")]) == EXIT_VALIDATION
    stream = sorted((work / "sab").glob("*.evb"))[0]
    swapped = ["--segmenter", str(work / "cls.ckpt"), "--classifier", str(work / "seg.ckpt")]
    assert main(["decode", *swapped, str(stream)]) == EXIT_MODEL
    (tmp_path / "junk.ckpt").write_bytes(b"BNET\x00")
    assert main(["decode", "--segmenter", str(tmp_path / "junk.ckpt"), "--classifier", str(work / "cls.ckpt"),
                 str(stream)]) == EXIT_MODEL


def test_segmentation_mismatch_exit_code(tmp_path):
    src = tmp_path / "s"
    assert main(["simulate", "--board", "SAB", "--trials", "1", "--out", str(src)]) == EXIT_OK
    gt = sorted(src.glob("*gt.csv"))[0]
    gt.write_text(gt.read_text() + "".join(f"Z,{99000 + 1000 * i}.0,0\n" for i in range(5)))
    args = ["label", "--streams", str(src), "--out", str(tmp_path / "l"), "--offset", "-170"]
    assert main(args + ["--strict"]) == EXIT_SEGMENTATION
    assert main(args) == EXIT_OK
    assert len(json.loads((tmp_path / "l" / "label.json").read_text())["rejected"]) == 1
