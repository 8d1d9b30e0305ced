"""Dataset ingestion, the stratified 80:10:10 split, classifier training
(with online augmentation and optional GAN-synthetic injection), evaluation,
and history export.

Directory layout: one subdirectory per class (0_no_dr ... 4_proliferative),
or a manifest.csv with header ``path,label`` at the dataset root. Training
assumes images are already preprocessed; loading only converts to grayscale,
resizes to the configured input size, and normalizes to [-1, 1].
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_image
from .classifier import (
    NUM_CLASSES,
    Classifier,
    ClassifierConfig,
    build_classifier,
    predict,
    predict_class,
)
from .dcgan import GanConfig, generate_images, load_generator
from .errors import DataError, NumericError, ShapeError
from .imageproc import NormalizedImage, load_image, normalize_pm1, resize, resize_normalized, to_grayscale
from .metrics import ConfusionMatrix
from .optim import AdamState, EarlyStopState, adam_step, categorical_cross_entropy, early_stop_update, lr_schedule
from .params import read_checkpoint, write_checkpoint
from .shapes import CLASS_DIR_NAMES
from .tensor import RngStream, Tape, Tensor

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class DatasetManifest:
    root: Path
    records: list  # [(relative path, class index)]

    def counts(self) -> np.ndarray:
        out = np.zeros(NUM_CLASSES, dtype=np.int64)
        for _, label in self.records:
            out[label] += 1
        return out


@dataclass
class SplitAssignment:
    assignment: dict  # relative path -> split name
    seed: int
    manifest: DatasetManifest

    def records(self, subset: str) -> list:
        if subset not in SPLIT_NAMES:
            raise ShapeError(f"unknown split {subset!r}")
        return [(p, lbl) for p, lbl in self.manifest.records if self.assignment[p] == subset]


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    csv_path = root / "manifest.csv"
    records = []
    if csv_path.is_file():
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["path", "label"]:
                raise DataError(f"{csv_path}: expected header path,label")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise DataError(f"{csv_path}:{lineno}: malformed row {row!r}")
                rel, label = row[0], row[1]
                try:
                    label = int(label)
                except ValueError:
                    raise DataError(f"{csv_path}:{lineno}: label {label!r} is not an integer") from None
                if not 0 <= label < NUM_CLASSES:
                    raise DataError(f"{csv_path}:{lineno}: label {label} outside 0..4")
                if not (root / rel).is_file():
                    raise DataError(f"manifest lists missing file: {root / rel}")
                records.append((rel, label))
    else:
        subdirs = sorted(p.name for p in root.iterdir() if p.is_dir())
        if not subdirs:
            raise DataError(f"dataset root {root} has no class directories and no manifest.csv")
        unknown = [d for d in subdirs if d not in CLASS_DIR_NAMES]
        if unknown:
            raise DataError(f"unknown class directories under {root}: {unknown}")
        for label, name in enumerate(CLASS_DIR_NAMES):
            class_dir = root / name
            if not class_dir.is_dir():
                continue
            for path in sorted(class_dir.iterdir()):
                if path.is_file():
                    records.append((str(Path(name) / path.name), label))
    if not records:
        raise DataError(f"no images found under {root}")
    records.sort()
    return DatasetManifest(root=root, records=records)


def class_stats(manifest: DatasetManifest) -> tuple:
    """Per-class counts and fractions (fractions sum to 1)."""
    counts = manifest.counts()
    total = counts.sum()
    if total == 0:
        raise DataError("empty manifest")
    return counts, counts / total


def _apportion(counts, fraction) -> list:
    """Largest-remainder allocation of round(total*fraction) across classes;
    every class lands within one image of its exact share."""
    total_target = int(np.floor(sum(counts) * fraction + 0.5))
    exact = [c * fraction for c in counts]
    floors = [int(np.floor(e)) for e in exact]
    seats = total_target - sum(floors)
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - floors[i]), i))
    out = list(floors)
    for i in order[:seats]:
        out[i] += 1
    return out


def stratified_split(manifest: DatasetManifest, seed: int = 0,
                     fractions=DEFAULT_FRACTIONS) -> SplitAssignment:
    counts = manifest.counts()
    for label in range(NUM_CLASSES):
        if 0 < counts[label] < 3:
            raise DataError(f"class {label} has only {counts[label]} images (need >= 3)")
    present = [c for c in counts if c > 0]
    test_alloc = _apportion(present, fractions[2])
    val_alloc = _apportion(present, fractions[1])

    rng = RngStream(seed)
    assignment = {}
    alloc_idx = 0
    for label in range(NUM_CLASSES):
        paths = [p for p, lbl in manifest.records if lbl == label]
        if not paths:
            continue
        perm = rng.child(label).permutation(len(paths))
        n_test = test_alloc[alloc_idx]
        n_val = val_alloc[alloc_idx]
        alloc_idx += 1
        for rank, idx in enumerate(perm):
            if rank < n_test:
                assignment[paths[idx]] = "test"
            elif rank < n_test + n_val:
                assignment[paths[idx]] = "val"
            else:
                assignment[paths[idx]] = "train"
    return SplitAssignment(assignment=assignment, seed=seed, manifest=manifest)


# ---------------------------------------------------------------------------
# training


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainConfig:
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 0.001
    patience: int = 15
    seed: int = 0
    injection: dict = field(default_factory=dict)  # class index -> generator checkpoint
    injection_count: int = 0  # 0 = fill to half the majority-class train count
    gan: GanConfig | None = None


class _ImageStore:
    """Loads and caches normalized training images keyed by relative path."""

    def __init__(self, root: Path, input_size: int):
        self.root = Path(root)
        self.input_size = input_size
        self._cache: dict[str, np.ndarray] = {}

    def get(self, relpath: str) -> np.ndarray:
        arr = self._cache.get(relpath)
        if arr is None:
            try:
                raster = load_image(self.root / relpath)
            except DataError as exc:
                raise DataError(f"unreadable image {self.root / relpath}: {exc}") from exc
            gray = to_grayscale(raster)
            arr = normalize_pm1(resize(gray, self.input_size)).data
            self._cache[relpath] = arr
        return arr


def _synthetic_records(config: TrainConfig, train_counts: dict) -> list:
    """Generate minority-class images from per-class GAN checkpoints.

    Returns [(normalized (S,S) array, label)]. Count per class is the
    configured number, or enough to reach half the majority train count.
    """
    if not config.injection:
        return []
    gan_config = config.gan or GanConfig(image_size=32)
    majority = max(train_counts.values())
    out = []
    for label in sorted(config.injection):
        path = config.injection[label]
        n = config.injection_count or max(0, majority // 2 - train_counts.get(label, 0))
        if n <= 0:
            continue
        gen = load_generator(path, gan_config)
        for img in generate_images(gen, n, seed=config.seed + 7919 * (label + 1)):
            out.append((resize_normalized(img, config.classifier.input_size).data, int(label)))
    return out


def _onehot(labels) -> np.ndarray:
    out = np.zeros((len(labels), NUM_CLASSES), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _validation_loss(net: Classifier, store: _ImageStore, records, batch_size: int) -> float:
    total = 0.0
    seen = 0
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        x = Tensor(np.stack([store.get(p) for p, _ in chunk])[:, None])
        y = Tensor(_onehot([lbl for _, lbl in chunk]))
        loss = categorical_cross_entropy(net(x, train=False), y)
        total += float(loss.data) * len(chunk)
        seen += len(chunk)
    return total / seen


def train_classifier(config: TrainConfig, manifest: DatasetManifest,
                     split: SplitAssignment) -> tuple:
    """Train with online augmentation; returns (net, history) with the
    best-validation parameters restored."""
    train_records = split.records("train")
    val_records = split.records("val")
    if not train_records:
        raise DataError("training split is empty")
    if not val_records:
        raise DataError("validation split is empty")

    store = _ImageStore(manifest.root, config.classifier.input_size)
    train_counts: dict[int, int] = {}
    for _, lbl in train_records:
        train_counts[lbl] = train_counts.get(lbl, 0) + 1
    synthetic = _synthetic_records(config, train_counts)

    # unified item list: files then synthetic; index is the stable image id
    items = [("file", p, lbl) for p, lbl in train_records]
    items += [("synth", i, lbl) for i, (_, lbl) in enumerate(synthetic)]

    net = build_classifier(config.classifier)
    adam = AdamState(net.params, config.learning_rate)
    stopper = EarlyStopState(config.patience)
    rng = RngStream(config.seed)
    history: list[HistoryRow] = []

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        adam.learning_rate = lr_schedule(config.learning_rate, epoch)
        order = rng.child(50_000 + epoch).permutation(len(items))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            if len(batch_ids) < 2:
                continue  # train-mode batch norm needs at least two images
            xs = []
            labels = []
            for gi in batch_ids:
                kind, key, lbl = items[gi]
                arr = store.get(key) if kind == "file" else synthetic[key][0]
                img = augment_image(NormalizedImage(arr), config.augment,
                                    rng.child(epoch, int(gi)))
                xs.append(img.data)
                labels.append(lbl)
            x = Tensor(np.stack(xs)[:, None])
            y = Tensor(_onehot(labels))
            with Tape() as tape:
                loss = categorical_cross_entropy(net(x, train=True), y)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} step {start // config.batch_size}"
                )
            grads = tape.backward(loss, net.params)
            adam_step(net.params, grads, adam)
            losses.append(value)

        val_loss = _validation_loss(net, store, val_records, config.batch_size)
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append(HistoryRow(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_loss=val_loss,
            lr=adam.learning_rate,
            seconds=time.perf_counter() - t0,
        ))
        if early_stop_update(stopper, val_loss, net.params) == "stop":
            break

    if stopper.best_params is not None:
        net.params.load_state(stopper.best_params)
    return net, history


def evaluate(net: Classifier, manifest: DatasetManifest, split: SplitAssignment,
             subset: str = "test", batch_size: int = 32) -> ConfusionMatrix:
    records = split.records(subset)
    if not records:
        raise DataError(f"{subset} split is empty")
    store = _ImageStore(manifest.root, net.config.input_size)
    y_true = []
    y_pred = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        x = Tensor(np.stack([store.get(p) for p, _ in chunk])[:, None])
        probs = predict(net, x)
        y_pred.extend(int(v) for v in predict_class(probs))
        y_true.extend(lbl for _, lbl in chunk)
    return ConfusionMatrix.from_predictions(y_true, y_pred)


# ---------------------------------------------------------------------------
# history and checkpoints


def export_history(history, path):
    if not history:
        raise DataError("cannot export an empty history")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss),
                             repr(row.lr), repr(row.seconds)])


def read_history(path) -> list:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["epoch", "train_loss", "val_loss", "lr", "seconds"]:
                raise DataError(f"{path}: not a history file")
            return [
                HistoryRow(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
                for r in reader
            ]
    except OSError as exc:
        raise DataError(f"cannot read history {path}: {exc}") from exc


def save_classifier(path, net: Classifier):
    write_checkpoint(path, net.params)


def load_classifier(path, config: ClassifierConfig) -> Classifier:
    net = build_classifier(config)
    net.params.load_state(read_checkpoint(path))
    return net
