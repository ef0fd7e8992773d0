"""Instance bags, the on-disk bag/manifest formats, splits and a synthetic benchmark.

Bag file layout (little-endian)::

    b"SMB1" | u32 n | u32 d | u8 label | u8 has_instance_labels
    | n*d float32 features (row-major) | n u8 instance labels (if flagged)

The manifest is a UTF-8 CSV with header ``bag_id,path,label,split``; paths are
relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

BAG_MAGIC = b"SMB1"
_HEADER = struct.Struct("<4sIIBB")
SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    """A bag file or manifest does not conform to its format."""


def bag_label_from_instances(instance_labels: Sequence[int] | np.ndarray) -> int:
    """Bag label under the standard MIL assumption: positive iff any instance is."""
    y = np.asarray(instance_labels)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("instance_labels must be a non-empty 1-d vector")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("instance labels must be 0 or 1")
    return 0 if int(y.sum()) == 0 else 1


@dataclass(frozen=True, eq=False)
class InstanceBag:
    bag_id: str
    features: np.ndarray
    label: int
    instance_labels: np.ndarray | None = None
    coords: np.ndarray | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"bag {self.bag_id!r}: features must be n x d with n, d >= 1, got {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError(f"bag {self.bag_id!r}: features contain non-finite values")
        if self.label not in (0, 1):
            raise ValueError(f"bag {self.bag_id!r}: label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))
        if self.instance_labels is not None:
            inst = np.asarray(self.instance_labels, dtype=np.uint8)
            if inst.shape != (feats.shape[0],):
                raise ValueError(f"bag {self.bag_id!r}: instance_labels length {inst.shape} != n={feats.shape[0]}")
            if bag_label_from_instances(inst) != self.label:
                raise ValueError(f"bag {self.bag_id!r}: label {self.label} inconsistent with instance labels")
            object.__setattr__(self, "instance_labels", inst)
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=np.int64)
            if coords.shape != (feats.shape[0], 2):
                raise ValueError(f"bag {self.bag_id!r}: coords must be n x 2")
            object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def write_bag(bag: InstanceBag, path: str | Path) -> None:
    """Write the SMB1 layout. The format has no coordinate block, so ``coords`` are not stored."""
    has_inst = bag.instance_labels is not None
    if bag.coords is not None:
        log.warning("bag %r: coords are not part of the bag file format and were dropped", bag.bag_id)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BAG_MAGIC, bag.n, bag.d, bag.label, int(has_inst)))
        fh.write(bag.features.astype("<f4", copy=False).tobytes(order="C"))
        if has_inst:
            fh.write(bag.instance_labels.astype(np.uint8).tobytes())


def read_bag(path: str | Path, bag_id: str | None = None, expected_d: int | None = None) -> InstanceBag:
    """Read a bag file; ``bag_id`` defaults to the file stem."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: header: file too short ({len(raw)} bytes)")
    magic, n, d, label, has_inst = _HEADER.unpack_from(raw)
    if magic != BAG_MAGIC:
        raise FormatError(f"{path}: magic: expected {BAG_MAGIC!r}, got {magic!r}")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: header: n={n}, d={d} must both be >= 1")
    if label not in (0, 1):
        raise FormatError(f"{path}: label: must be 0 or 1, got {label}")
    if has_inst not in (0, 1):
        raise FormatError(f"{path}: has_instance_labels: must be 0 or 1, got {has_inst}")
    if expected_d is not None and d != expected_d:
        raise FormatError(f"{path}: d: file has d={d} but manifest expects d={expected_d}")
    feat_bytes = n * d * 4
    need = _HEADER.size + feat_bytes + (n if has_inst else 0)
    if len(raw) < need:
        rows = (len(raw) - _HEADER.size) // (4 * d)
        raise FormatError(f"{path}: features: truncated payload, declared n={n} but only {min(rows, n)} rows present")
    if len(raw) > need:
        raise FormatError(f"{path}: payload: {len(raw) - need} trailing bytes")
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d).astype(np.float32)
    if not np.isfinite(feats).all():
        raise FormatError(f"{path}: features: non-finite values")
    inst = None
    if has_inst:
        inst = np.frombuffer(raw, dtype=np.uint8, count=n, offset=_HEADER.size + feat_bytes).copy()
        if not np.isin(inst, (0, 1)).all():
            raise FormatError(f"{path}: instance_labels: values must be 0 or 1")
        if bag_label_from_instances(inst) != label:
            raise FormatError(f"{path}: label: {label} inconsistent with instance labels")
    return InstanceBag(bag_id or path.stem, feats, label, inst)


@dataclass(frozen=True)
class IndexEntry:
    bag_id: str
    path: str
    label: int
    split: str


@dataclass
class DatasetIndex:
    entries: list[IndexEntry]
    feature_dim: int
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.bag_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("bag_ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> list[IndexEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: IndexEntry) -> Path:
        return self.root / entry.path

    def load(self, split: str | None = None) -> list[InstanceBag]:
        entries = self.entries if split is None else self.split(split)
        bags = []
        for e in entries:
            bag = read_bag(self.resolve(e), bag_id=e.bag_id, expected_d=self.feature_dim)
            if bag.label != e.label:
                raise FormatError(f"{e.path}: label: file says {bag.label}, manifest says {e.label}")
            bags.append(bag)
        return bags

    def check_training_splits(self) -> None:
        for name in SPLITS:
            if not self.split(name):
                raise ValueError(f"split {name!r} is empty")

    def write_manifest(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bag_id", "path", "label", "split"])
            for e in self.entries:
                w.writerow([e.bag_id, e.path, e.label, e.split])
        return path

    @classmethod
    def from_manifest(cls, path: str | Path, feature_dim: int | None = None) -> "DatasetIndex":
        """Load a manifest; ``feature_dim`` is taken from the first bag when not given."""
        path = Path(path)
        root = path.parent
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["bag_id", "path", "label", "split"]:
                raise FormatError(f"{path}: header: expected bag_id,path,label,split, got {reader.fieldnames}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    label = int(row["label"])
                except (TypeError, ValueError):
                    raise FormatError(f"{path}:{lineno}: label: not an integer: {row['label']!r}") from None
                if label not in (0, 1):
                    raise FormatError(f"{path}:{lineno}: label: must be 0 or 1")
                if row["split"] not in SPLITS and row["split"] != "":
                    raise FormatError(f"{path}:{lineno}: split: unknown split {row['split']!r}")
                if not (root / row["path"]).is_file():
                    raise FormatError(f"{path}:{lineno}: path: file not found {row['path']!r}")
                entries.append(IndexEntry(row["bag_id"], row["path"], label, row["split"]))
        if not entries:
            raise FormatError(f"{path}: manifest has no entries")
        if feature_dim is None:
            with open(root / entries[0].path, "rb") as fh:
                head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size or head[:4] != BAG_MAGIC:
                raise FormatError(f"{entries[0].path}: magic: not a bag file")
            feature_dim = _HEADER.unpack(head)[2]
        return cls(entries, feature_dim, root)


def split_dataset(index: DatasetIndex, ratios: Sequence[float], seed: int) -> DatasetIndex:
    """Stratified split into train/val/test (or train/test for two ratios)."""
    ratios = [float(r) for r in ratios]
    if len(ratios) not in (2, 3):
        raise ValueError("ratios must have 2 (train, test) or 3 (train, val, test) entries")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    names = ("train", "test") if len(ratios) == 2 else SPLITS
    rng = np.random.default_rng(seed)
    assigned: dict[str, str] = {}
    for label in (0, 1):
        members = sorted((e for e in index.entries if e.label == label), key=lambda e: e.bag_id)
        if not members:
            continue
        if len(members) < len(ratios):
            raise ValueError(f"class {label} has {len(members)} bags, fewer than {len(ratios)} splits")
        counts = _allocate(len(members), ratios)
        order = rng.permutation(len(members))
        start = 0
        for name, c in zip(names, counts):
            for i in order[start:start + c]:
                assigned[members[i].bag_id] = name
            start += c
    entries = [IndexEntry(e.bag_id, e.path, e.label, assigned[e.bag_id]) for e in index.entries]
    return DatasetIndex(entries, index.feature_dim, index.root)


def _allocate(total: int, ratios: Sequence[float]) -> list[int]:
    # largest remainder, but every split gets at least one member
    raw = [r * total for r in ratios]
    counts = [max(1, math.floor(x)) for x in raw]
    while sum(counts) > total:
        i = max(range(len(counts)), key=lambda j: (counts[j] - raw[j], counts[j]))
        counts[i] -= 1
    order = sorted(range(len(ratios)), key=lambda j: raw[j] - counts[j], reverse=True)
    k = 0
    while sum(counts) < total:
        counts[order[k % len(order)]] += 1
        k += 1
    return counts


@dataclass
class SynthConfig:
    """Synthetic benchmark: background N(0, I) bags, positives seeded with motif instances.

    ``bags_per_class`` gives the number of bags of *each* label per split.
    """

    bags_per_class: dict[str, int] = field(default_factory=lambda: {"train": 100, "val": 25, "test": 50})
    n_min: int = 60
    n_max: int = 120
    d: int = 64
    motif_count: int = 3
    witness_rate: tuple[float, float] = (0.03, 0.05)
    motif_separation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        self.witness_rate = tuple(float(w) for w in self.witness_rate)
        self.validate()

    def validate(self) -> None:
        lo, hi = self.witness_rate
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"witness_rate must satisfy 0 < lo <= hi <= 1, got {self.witness_rate}")
        if self.motif_count < 1:
            raise ValueError("motif_count must be >= 1")
        if self.motif_count > self.d:
            raise ValueError("motif_count must not exceed d")
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError("need 1 <= n_min <= n_max")
        if self.motif_separation < 0:
            raise ValueError("motif_separation must be >= 0")
        unknown = set(self.bags_per_class) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown splits in bags_per_class: {sorted(unknown)}")
        if any(v < 0 for v in self.bags_per_class.values()):
            raise ValueError("bags_per_class entries must be >= 0")


def motif_means(cfg: SynthConfig) -> np.ndarray:
    """Mutually equidistant motif centres, each at distance ``motif_separation`` from the origin."""
    mu = np.zeros((cfg.motif_count, cfg.d))
    mu[np.arange(cfg.motif_count), np.arange(cfg.motif_count)] = cfg.motif_separation
    return mu


def synth_bags(cfg: SynthConfig) -> Iterable[tuple[str, InstanceBag]]:
    """Yield ``(split, bag)`` pairs; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    mu = motif_means(cfg)
    rounded = 0
    for split in SPLITS:
        count = cfg.bags_per_class.get(split, 0)
        for i in range(2 * count):
            label = i % 2
            n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
            x = rng.standard_normal((n, cfg.d))
            inst = np.zeros(n, dtype=np.uint8)
            if label:
                rate = rng.uniform(*cfg.witness_rate)
                k = int(round(rate * n))
                if k < 1:
                    k = 1
                    rounded += 1
                idx = rng.choice(n, size=min(k, n), replace=False)
                motif = rng.integers(0, cfg.motif_count, size=idx.size)
                x[idx] += mu[motif]
                inst[idx] = 1
            yield split, InstanceBag(f"{split}_{i:04d}", x.astype(np.float32), label, inst)
    if rounded:
        log.info("witness count rounded up to 1 in %d positive bags", rounded)


def generate_synthetic_dataset(cfg: SynthConfig, out_dir: str | Path) -> DatasetIndex:
    """Write bag files plus ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "bags").mkdir(parents=True, exist_ok=True)
    entries = []
    for split, bag in synth_bags(cfg):
        rel = f"bags/{bag.bag_id}.smb"
        write_bag(bag, out_dir / rel)
        entries.append(IndexEntry(bag.bag_id, rel, bag.label, split))
    index = DatasetIndex(entries, cfg.d, out_dir)
    index.write_manifest(out_dir / "manifest.csv")
    return index
