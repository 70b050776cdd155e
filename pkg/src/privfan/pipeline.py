"""Experiment orchestration: score -> partition -> encode -> decode -> evaluate -> sweep."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

import privfan
from privfan import harness
from privfan.codec import CodecId, LayeredBitstream
from privfan.corpus import Corpus
from privfan.layered import decode_stream, encode_tensor
from privfan.metrics import confusion_matrix, cra
from privfan.scoring import ChannelScore, Partition, PrivacyFanConfig, partition, read_scores, score_channels, write_scores

log = logging.getLogger(__name__)

DEFAULT_BASE_QP = 20
DEFAULT_ENHANCEMENT_QPS = (40, 30, 20, 10)
SWEEP_SCHEMA = 1
SWEEP_COLUMNS = (
    "schema", "run_id", "config_id", "qp", "base_qp", "total_bytes", "base_bytes",
    "enhancement_bytes", "miou", "rmse", "cra", "error",
)


@dataclass
class RunConfig:
    corpus: Path
    output: Path
    beta: float = 10.0
    base_size: int = 179
    base_qp: int = DEFAULT_BASE_QP
    enhancement_qps: tuple = DEFAULT_ENHANCEMENT_QPS
    codec: CodecId = CodecId.INTERNAL_DCT
    seed: int = 0
    workers: int = 4
    template_encoder: str | None = None
    template_decoder: str | None = None
    scores: Path | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.enhancement_qps:
            raise ValueError("enhancement QP list is empty")
        self.enhancement_qps = tuple(int(q) for q in self.enhancement_qps)
        self.codec = CodecId(self.codec)

    def fan_config(self) -> PrivacyFanConfig:
        return PrivacyFanConfig(beta=self.beta, base_size=self.base_size)

    def as_record(self) -> dict:
        rec = asdict(self)
        rec["codec"] = self.codec.name.lower()
        return {k: str(v) if isinstance(v, Path) else v for k, v in rec.items()}


# --- scoring ---------------------------------------------------------------


def score_corpus(corpus: Corpus, config: PrivacyFanConfig, reconstructor=None) -> list[ChannelScore]:
    if not len(corpus):
        raise ValueError("empty corpus")
    if not corpus.has_labels:
        raise ValueError("scoring needs task labels for every scene (or import a score table)")
    if reconstructor is None:
        if not corpus.is_harness:
            raise ValueError("no reconstructor for an imported corpus; import a score table instead")
        reconstructor = harness.decode_array
    tensors = [s.tensor for s in corpus.scenes]
    labels = [s.labels for s in corpus.scenes]
    return score_channels(tensors, labels, reconstructor, config)


def load_partition(path) -> Partition:
    doc = json.loads(Path(path).read_text())
    return Partition(tuple(doc["base"]), tuple(doc["enhancement"]))


def save_partition(part: Partition, path) -> None:
    Path(path).write_text(json.dumps({"base": list(part.base), "enhancement": list(part.enhancement)}, indent=1))


# --- evaluation ------------------------------------------------------------


@dataclass
class Evaluation:
    miou: float | None
    rmse: float | None
    cra: float | None


def evaluate(corpus: Corpus, decoded: dict) -> Evaluation:
    """Corpus-level task metrics for decoded tensors keyed by scene id.

    mIoU comes from the pooled confusion matrix, RMSE from all valid pixels
    pooled, CRA over all readable plates. Metrics that need the harness heads
    or recognizer are ``None`` for imported corpora.
    """
    if not corpus.is_harness or not corpus.has_labels:
        return Evaluation(None, None, None)
    k = corpus.scenes[0].labels.num_classes
    cm = np.zeros((k, k + 1), dtype=np.int64)
    sq, n = 0.0, 0
    predicted = {}
    for scene in corpus.scenes:
        t = decoded[scene.image_id]
        lab = scene.labels
        cm += confusion_matrix(harness.seg_head(t, k), lab.segmentation, k, lab.ignore_id)
        diff = (harness.disp_head(t) - lab.disparity)[lab.valid_mask]
        sq += float(np.sum(diff.astype(np.float64) ** 2))
        n += diff.size
        if scene.annotations:
            predicted[scene.image_id] = harness.recognize_plates(harness.decode(t), scene.annotations)
    tp = np.diag(cm[:, :k]).astype(np.float64)
    gt = cm.sum(axis=1)
    present = gt > 0
    iou = tp[present] / (gt[present] + cm[:, :k].sum(axis=0)[present] - tp[present])
    readable = [a for a in corpus.annotations if a.readable]
    cra_value = cra(corpus.annotations, predicted).cra if readable else None
    return Evaluation(float(iou.mean()), float(np.sqrt(sq / n)) if n else None, cra_value)


# --- encode / decode a whole corpus -----------------------------------------


def encode_corpus(corpus: Corpus, part: Partition, base_qp: int, enhancement_qp: int, codec=CodecId.INTERNAL_DCT,
                  template: str | None = None) -> dict:
    return {s.image_id: encode_tensor(s.tensor, part, base_qp, enhancement_qp, codec, template) for s in corpus.scenes}


def run_point(corpus: Corpus, part: Partition, cfg: RunConfig, qp: int, out_dir: Path | None) -> dict:
    """Encode, decode and evaluate the corpus at one enhancement QP."""
    row = {"qp": qp, "base_qp": cfg.base_qp, "config_id": f"b{cfg.base_qp}_e{qp}", "error": ""}
    try:
        streams = encode_corpus(corpus, part, cfg.base_qp, qp, cfg.codec, cfg.template_encoder)
        blobs = {k: s.to_bytes() for k, s in streams.items()}
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            for k, blob in blobs.items():
                (out_dir / f"{k}.pfan").write_bytes(blob)
            params = dict(cfg.as_record(), enhancement_qp=qp, base=list(part.base))
            write_manifest(out_dir, "sweep-point", params, outputs=sorted(out_dir.glob("*.pfan")))
        decoded = {k: decode_stream(LayeredBitstream.from_bytes(b), cfg.template_decoder) for k, b in blobs.items()}
        row["total_bytes"] = sum(len(b) for b in blobs.values())
        row["base_bytes"] = sum(len(s.base_layer.payload) for s in streams.values())
        row["enhancement_bytes"] = sum(len(s.enhancement_layer.payload) for s in streams.values())
        ev = evaluate(corpus, decoded)
        row.update(miou=ev.miou, rmse=ev.rmse, cra=ev.cra)
    except Exception as exc:  # noqa: BLE001 - a failed point is recorded, the sweep goes on
        log.exception("sweep point qp=%s failed", qp)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(corpus: Corpus, part: Partition, cfg: RunConfig, write_streams: bool = True) -> list[dict]:
    """One row per enhancement QP, sorted by total bytes (failed points last)."""

    def point(qp):
        out = cfg.output / f"qp_{qp:02d}" if write_streams else None
        return run_point(corpus, part, cfg, qp, out)

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        rows = list(pool.map(point, cfg.enhancement_qps))
    return sorted(rows, key=lambda r: (r.get("total_bytes") is None, r.get("total_bytes") or 0, -r["qp"]))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def append_sweep_csv(rows, path, run_id: str) -> None:
    """Append rows; an existing file must carry the same header."""
    path = Path(path)
    exists = path.exists() and path.stat().st_size > 0
    if exists:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
        if tuple(header or ()) != SWEEP_COLUMNS:
            raise ValueError(f"{path} has a different schema: {header}")
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            rec = dict(r, schema=SWEEP_SCHEMA, run_id=run_id)
            writer.writerow([_fmt(rec.get(c)) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- manifests --------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, params: dict, inputs=(), outputs=()) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "privfan_version": privfan.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "params": params,
        "inputs": {str(p): sha256_file(p) for p in sorted(map(Path, inputs)) if Path(p).is_file()},
        "outputs": {str(p): sha256_file(p) for p in sorted(map(Path, outputs)) if Path(p).is_file()},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
    return path


def ensure_scores(corpus: Corpus, cfg: RunConfig) -> list[ChannelScore]:
    if cfg.scores is not None:
        return read_scores(cfg.scores, beta=cfg.beta)
    scores = score_corpus(corpus, cfg.fan_config())
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_scores(scores, cfg.output / "scores.csv")
    return scores


def run_sweep(corpus: Corpus, cfg: RunConfig, plots: bool = False, run_id: str | None = None) -> list[dict]:
    cfg.output.mkdir(parents=True, exist_ok=True)
    scores = ensure_scores(corpus, cfg)
    part = partition(scores, cfg.fan_config())
    save_partition(part, cfg.output / "partition.json")
    rows = sweep(corpus, part, cfg)
    run_id = run_id or hashlib.sha256(json.dumps(cfg.as_record(), sort_keys=True, default=str).encode()).hexdigest()[:12]
    results = cfg.output / "results.csv"
    append_sweep_csv(rows, results, run_id)
    outputs = [results, cfg.output / "partition.json"]
    if plots:
        from privfan.report import plot_sweep

        outputs.append(plot_sweep(rows, cfg.output / "sweep.svg"))
    inputs = sorted(Path(corpus.root).iterdir()) if corpus.root else []
    write_manifest(cfg.output, "sweep", cfg.as_record(), inputs=inputs, outputs=outputs)
    return rows
