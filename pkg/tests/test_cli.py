import json
import socket
import subprocess
import sys
import threading
import time

import pytest

from privfan.cli import main, read_config_file
from privfan.codec import LayeredBitstream
from privfan.tensor import load_tensor


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "corpus"), "--scenes", "4", "--seed", "5"]) == 0
    assert main(["score", "--corpus", str(root / "corpus"), "--out", str(root / "scores")]) == 0
    return root


def test_synth_and_score_outputs(workspace):
    assert (workspace / "corpus" / "manifest.json").is_file()
    lines = (workspace / "scores" / "scores.csv").read_text().splitlines()
    assert len(lines) == 17 and lines[0].startswith("channel,")
    manifest = json.loads((workspace / "scores" / "manifest.json").read_text())
    assert manifest["command"] == "score" and manifest["inputs"]


def test_score_is_deterministic(workspace, tmp_path):
    assert main(["score", "--corpus", str(workspace / "corpus"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "scores.csv").read_bytes() == (workspace / "scores" / "scores.csv").read_bytes()


def test_partition_defaults_to_corpus_base_size(workspace, tmp_path):
    args = ["partition", "--scores", str(workspace / "scores" / "scores.csv"), "--out", str(tmp_path)]
    assert main(args + ["--corpus", str(workspace / "corpus")]) == 0
    assert json.loads((tmp_path / "partition.json").read_text())["base"] == [0]
    assert main(args + ["--base-size", "3"]) == 0
    assert len(json.loads((tmp_path / "partition.json").read_text())["base"]) == 3


def test_encode_decode_metrics(workspace, tmp_path):
    corpus = str(workspace / "corpus")
    scores = str(workspace / "scores" / "scores.csv")
    assert main(["encode", "--corpus", corpus, "--scores", scores, "--out", str(tmp_path / "e40"), "--qp", "40"]) == 0
    assert main(["encode", "--corpus", corpus, "--scores", scores, "--out", str(tmp_path / "e10"), "--qp", "10"]) == 0
    s40 = sum(p.stat().st_size for p in (tmp_path / "e40").glob("*.pfan"))
    s10 = sum(p.stat().st_size for p in (tmp_path / "e10").glob("*.pfan"))
    assert s40 < s10
    streams = sorted(str(p) for p in (tmp_path / "e10").glob("*.pfan"))
    assert main(["decode", *streams, "--out", str(tmp_path / "d")]) == 0
    assert len(list((tmp_path / "d").glob("*.pft"))) == 4
    assert main(["metrics", "--corpus", corpus, "--decoded", str(tmp_path / "d"), "--out", str(tmp_path / "m")]) == 0
    m = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert m["miou"] == 1.0 and m["cra"] > 90


def test_encode_single_tensor(workspace, tmp_path):
    tensor = workspace / "corpus" / "scene_000005.pft"
    args = ["encode", "--tensor", str(tensor), "--scores", str(workspace / "scores" / "scores.csv"),
            "--out", str(tmp_path), "--base-qp", "4", "--qp", "4"]
    # without corpus metadata the base size falls back to 179, too many for 16 channels
    assert main(args) == 2
    assert main(args + ["--base-size", "1"]) == 0
    stream = LayeredBitstream.from_bytes((tmp_path / "scene_000005.pfan").read_bytes())
    assert stream.base == (0,) and stream.channels == 16


def test_missing_score_table_is_an_error(workspace, tmp_path, capsys):
    corpus = str(workspace / "corpus")
    assert main(["encode", "--corpus", corpus, "--out", str(tmp_path)]) == 2
    assert main(["encode", "--corpus", corpus, "--scores", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
    assert "score table" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    for argv in (["no-such-command"], ["sweep"], ["sweep", "--corpus", "x", "--out", "y", "--qps", "a,b"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1


def test_format_error_exit_2(workspace, tmp_path):
    bad = tmp_path / "bad.pfan"
    bad.write_bytes(b"PFAN\x01garbage")
    assert main(["decode", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert not (tmp_path / "d" / "bad.pft").exists()


def test_missing_external_codec_exit_3(workspace, tmp_path, monkeypatch):
    monkeypatch.delenv("PRIVFAN_EXTERNAL_ENCODER", raising=False)
    args = ["encode", "--corpus", str(workspace / "corpus"), "--scores", str(workspace / "scores" / "scores.csv"),
            "--out", str(tmp_path), "--codec", "external"]
    assert main(args) == 3
    assert main(args + ["--encoder-cmd", "no-such-encoder {IN} {OUT}"]) == 3
    monkeypatch.setenv("PRIVFAN_EXTERNAL_ENCODER", "cp {IN} {OUT}")
    assert main(args) == 0


def test_config_file_and_flag_override(workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep settings\nqps = 40, 10\nbase-qp = 20\nworkers = 1\n")
    assert read_config_file(cfg) == {"qps": "40, 10", "base_qp": "20", "workers": "1"}
    out = tmp_path / "a"
    assert main(["--config", str(cfg), "sweep", "--corpus", str(workspace / "corpus"), "--out", str(out),
                 "--scores", str(workspace / "scores" / "scores.csv")]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 3
    out = tmp_path / "b"
    assert main(["--config", str(cfg), "sweep", "--corpus", str(workspace / "corpus"), "--out", str(out),
                 "--qps", "30"]) == 0
    assert len((out / "results.csv").read_text().splitlines()) == 2
    cfg.write_text("bogus_key = 1\n")
    assert main(["--config", str(cfg), "sweep", "--corpus", "x", "--out", "y"]) == 1


def test_blur_sweep(workspace, tmp_path):
    assert main(["blur-sweep", "--corpus", str(workspace / "corpus"), "--out", str(tmp_path), "--sigmas", "0.5,4",
                 "--plots"]) == 0
    rows = (tmp_path / "blur.csv").read_text().splitlines()
    assert rows[0] == "sigma,mse,cra" and len(rows) == 3
    assert (tmp_path / "blur.svg").is_file() and (tmp_path / "manifest.json").is_file()


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_and_send(workspace, tmp_path):
    scores = str(workspace / "scores" / "scores.csv")
    assert main(["encode", "--corpus", str(workspace / "corpus"), "--scores", scores, "--out", str(tmp_path / "e")]) == 0
    streams = sorted((tmp_path / "e").glob("*.pfan"))[:2]
    port = free_port()
    server = subprocess.Popen(
        [sys.executable, "-m", "privfan.cli", "serve", "--out", str(tmp_path / "rx"), "--port", str(port),
         "--max-connections", "1"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        assert "listening" in server.stdout.readline()
        assert main(["send", *map(str, streams), "--port", str(port)]) == 0
        assert server.wait(20) == 0
    finally:
        server.kill()
    received = sorted((tmp_path / "rx").glob("stream_*.pfan"))
    assert [p.read_bytes() for p in received] == [p.read_bytes() for p in streams]


def test_send_refuses_invalid_stream(tmp_path):
    bad = tmp_path / "x.pfan"
    bad.write_bytes(b"nope")
    assert main(["send", str(bad), "--port", "1"]) == 2
