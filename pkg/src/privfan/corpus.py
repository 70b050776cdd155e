"""On-disk corpus: feature tensors, images, task labels and plate annotations.

Layout of a corpus directory::

    corpus.json          scene ids and generation parameters
    annotations.json     plate annotations for the whole corpus
    <id>.pft             feature tensor (PFT1)
    <id>.img.pft         source image (PFT1, one channel per plane)
    <id>.seg.npy         segmentation ids (int32)
    <id>.disp.npy        disparity (float32)

Only ``corpus.json`` and the ``.pft`` tensors are required; the rest enables
task metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from privfan import harness
from privfan.metrics import PlateAnnotation, load_annotations, save_annotations
from privfan.tensor import FeatureTensor, Image, TaskLabels, load_image, load_tensor, save_image, save_tensor

CORPUS_FORMAT = "privfan-corpus"
CORPUS_VERSION = 1


@dataclass
class Scene:
    image_id: str
    tensor: FeatureTensor
    image: Image | None = None
    labels: TaskLabels | None = None
    annotations: list = field(default_factory=list)


@dataclass
class Corpus:
    root: Path | None
    meta: dict
    scenes: list

    @property
    def ids(self):
        return [s.image_id for s in self.scenes]

    @property
    def annotations(self) -> list[PlateAnnotation]:
        return [a for s in self.scenes for a in s.annotations]

    @property
    def is_harness(self) -> bool:
        return bool(self.meta.get("harness"))

    @property
    def has_labels(self) -> bool:
        return all(s.labels is not None for s in self.scenes)

    def __len__(self):
        return len(self.scenes)


def synth_corpus(n_scenes: int, seed: int = 0, size=(128, 256), regions: int = 4, plates: int = 2,
                 ink: float = harness.DEFAULT_INK) -> Corpus:
    scenes = []
    for k in range(n_scenes):
        spec = harness.SceneSpec(seed=seed + k, size=tuple(size), regions=regions, plates=plates, ink=ink)
        img, labels, anns = harness.generate_scene(spec)
        scenes.append(Scene(anns[0].image_id if anns else f"scene_{spec.seed:06d}", harness.encode(img), img, labels, anns))
    meta = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "harness": True,
        "seed": seed,
        "size": list(size),
        "regions": regions,
        "plates": plates,
        "ink": ink,
        "num_classes": regions,
        "ignore_id": scenes[0].labels.ignore_id if scenes else 255,
        # Task heads read only the coarse channels, so the smallest base set
        # that keeps them is the natural default.
        "base_size": len(harness.COARSE_CHANNELS),
        "scenes": [s.image_id for s in scenes],
    }
    return Corpus(None, meta, scenes)


def write_corpus(corpus: Corpus, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in corpus.scenes:
        save_tensor(s.tensor, root / f"{s.image_id}.pft")
        if s.image is not None:
            save_image(s.image, root / f"{s.image_id}.img.pft")
        if s.labels is not None:
            np.save(root / f"{s.image_id}.seg.npy", s.labels.segmentation.astype(np.int32))
            np.save(root / f"{s.image_id}.disp.npy", s.labels.disparity.astype(np.float32))
    save_annotations(corpus.annotations, root / "annotations.json")
    (root / "corpus.json").write_text(json.dumps(corpus.meta, indent=1, sort_keys=True))
    corpus.root = root
    return root


def read_corpus(root) -> Corpus:
    root = Path(root)
    meta_path = root / "corpus.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("format") != CORPUS_FORMAT:
            raise ValueError(f"{meta_path} is not a {CORPUS_FORMAT} file")
        ids = meta["scenes"]
    else:
        # A bare directory of tensors is accepted as an imported corpus.
        meta = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "harness": False}
        ids = sorted(p.name[: -len(".pft")] for p in root.glob("*.pft") if not p.name.endswith(".img.pft"))
    if not ids:
        raise ValueError(f"corpus at {root} is empty")
    anns_path = root / "annotations.json"
    by_id: dict[str, list] = {}
    if anns_path.exists():
        for a in load_annotations(anns_path):
            by_id.setdefault(a.image_id, []).append(a)
    scenes = []
    for image_id in ids:
        tensor = load_tensor(root / f"{image_id}.pft")
        img_path = root / f"{image_id}.img.pft"
        image = load_image(img_path) if img_path.exists() else None
        labels = None
        seg_path, disp_path = root / f"{image_id}.seg.npy", root / f"{image_id}.disp.npy"
        if seg_path.exists() and disp_path.exists():
            labels = TaskLabels(np.load(seg_path), np.load(disp_path),
                                num_classes=int(meta.get("num_classes", 0)), ignore_id=int(meta.get("ignore_id", 255)))
        scenes.append(Scene(image_id, tensor, image, labels, by_id.get(image_id, [])))
    return Corpus(root, meta, scenes)


def corpus_files(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_file())
