"""
Episodic few-shot data: category splits over an image directory and K-shot episode sampling.

Layout on disk is ``root/<category>/<image>`` with one directory per category.
"""
import functools
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sdtm import codec
from sdtm.errors import (
    EmptyBatchError,
    EmptyEpisodeError,
    FormatError,
    InsufficientSamplesError,
    IoError,
    ShapeError,
)
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)

SPLITS = ("seen", "unseen", "all")


@dataclass(frozen=True)
class Episode:
    images: Tuple[Tensor, ...]
    category: int
    split: str
    paths: Tuple[Path, ...] = ()

    @property
    def k(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class DatasetIndex:
    """
    Immutable view of a dataset directory.

    Seen categories are labelled 0..n_seen-1 in name order, unseen ones follow,
    so the classifier head only ever sees labels below ``n_seen``.
    """

    root: Path
    files: Dict[str, Tuple[Path, ...]]
    seen: Tuple[str, ...]
    unseen: Tuple[str, ...]
    labels: Dict[str, int]

    @property
    def n_seen(self) -> int:
        return len(self.seen)

    @property
    def names(self) -> Dict[int, str]:
        return {label: name for name, label in self.labels.items()}

    def split_categories(self, split: str) -> Tuple[str, ...]:
        if split == "seen":
            return self.seen
        if split == "unseen":
            return self.unseen
        if split == "all":
            return self.seen + self.unseen
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")

    def image_shape(self) -> Tuple[int, int, int]:
        first = self.files[(self.seen + self.unseen)[0]][0]
        return _load_pixels(first, first.suffix.lower() == codec.PNG_EXTENSION).shape


def _image_files(directory: Path, png_enabled: bool) -> Tuple[Path, ...]:
    extensions = codec.PNM_EXTENSIONS + ((codec.PNG_EXTENSION,) if png_enabled else ())
    return tuple(sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in extensions))


def parse_split_file(path: Union[str, Path]) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """Read a ``[seen]`` / ``[unseen]`` split file; one category name per line."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise IoError(f"cannot read split file {path}: {e}")
    sections: Dict[str, List[str]] = {"seen": [], "unseen": []}
    current: Optional[str] = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in sections:
                raise FormatError(f"{path}:{lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise FormatError(f"{path}:{lineno}: category listed before any [seen]/[unseen] header")
        sections[current].append(line)
    overlap = set(sections["seen"]) & set(sections["unseen"])
    if overlap:
        raise FormatError(f"{path}: categories in both splits: {', '.join(sorted(overlap))}")
    return tuple(sections["seen"]), tuple(sections["unseen"])


def load_dataset_dir(
    root: Union[str, Path],
    k: int,
    seen_fraction: float = 0.8,
    split_file: Optional[Union[str, Path]] = None,
    seed: int = 0,
    png_enabled: bool = False,
) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"dataset root {root} is not a directory")
    try:
        available = {d.name: _image_files(d, png_enabled) for d in sorted(root.iterdir()) if d.is_dir()}
    except OSError as e:
        raise IoError(f"cannot list {root}: {e}")
    if not available:
        raise InsufficientSamplesError(f"{root} holds no category directories")

    if split_file is not None:
        seen, unseen = parse_split_file(split_file)
        missing = [name for name in seen + unseen if name not in available]
        if missing:
            raise FormatError(f"split file names categories missing from {root}: {', '.join(missing)}")
    else:
        if not 0 < seen_fraction < 1:
            raise ValueError(f"seen_fraction must lie in (0, 1), got {seen_fraction}")
        order = sorted(available)
        shuffled = [order[i] for i in np.random.default_rng(seed).permutation(len(order))]
        n_seen = len(order) if len(order) == 1 else min(max(round(len(order) * seen_fraction), 1), len(order) - 1)
        seen, unseen = tuple(shuffled[:n_seen]), tuple(shuffled[n_seen:])

    seen, unseen = tuple(sorted(seen)), tuple(sorted(unseen))
    for name in seen + unseen:
        files = available[name]
        if len(files) < k:
            raise InsufficientSamplesError(f"category {name!r} has {len(files)} images, K={k} needs at least {k}")
        for f in files:
            if not os.access(f, os.R_OK):
                raise IoError(f"cannot read {f}")

    labels = {name: i for i, name in enumerate(seen + unseen)}
    files = {name: available[name] for name in seen + unseen}
    logger.info("indexed %s: %d seen / %d unseen categories", root, len(seen), len(unseen))
    return DatasetIndex(root=root, files=files, seen=seen, unseen=unseen, labels=labels)


@functools.lru_cache(maxsize=4096)
def _load_pixels(path: Path, png_enabled: bool) -> np.ndarray:
    data = codec.decode(path, png_enabled=png_enabled).data
    data.setflags(write=False)
    return data


def sample_episode(
    index: DatasetIndex,
    split: str,
    k: int,
    rng: np.random.Generator,
    png_enabled: bool = False,
) -> Episode:
    """K distinct images of one uniformly drawn category of ``split``."""
    if k < 1:
        raise EmptyEpisodeError(f"an episode needs K >= 1, got {k}")
    names = index.split_categories(split)
    if not names:
        raise EmptyEpisodeError(f"split {split!r} has no categories")
    name = names[int(rng.integers(len(names)))]
    files = index.files[name]
    if k > len(files):
        raise InsufficientSamplesError(f"category {name!r} has {len(files)} images, cannot draw K={k}")
    chosen = rng.choice(len(files), size=k, replace=False)
    paths = tuple(files[i] for i in chosen)
    images = tuple(Tensor(_load_pixels(p, png_enabled), name=p.name) for p in paths)
    return Episode(images=images, category=index.labels[name], split=split, paths=paths)


def sample_batch(
    index: DatasetIndex,
    split: str,
    k: int,
    batch_size: int,
    rng: np.random.Generator,
    png_enabled: bool = False,
) -> List[Episode]:
    """``batch_size`` independent episodes, each from its own category draw."""
    return [sample_episode(index, split, k, rng, png_enabled) for _ in range(batch_size)]


def stack_batch(batch: Sequence[Episode]) -> Tuple[List[Tensor], List[int]]:
    """
    Turn B episodes of K images into K tensors of shape [B, C, H, W]; tensor k
    holds the k-th conditioning image of every episode.
    """
    if not batch:
        raise EmptyBatchError("cannot stack an empty batch")
    k = batch[0].k
    for ep in batch:
        if ep.k != k:
            raise ShapeError(f"episodes in a batch must share K, got {ep.k} and {k}")
    shape = batch[0].images[0].shape
    stacked = []
    for i in range(k):
        arrays = [ep.images[i].data for ep in batch]
        for a in arrays:
            if a.shape != shape:
                raise ShapeError(f"episode images disagree in shape: {a.shape} vs {shape}")
        stacked.append(Tensor(np.stack(arrays)))
    return stacked, [ep.category for ep in batch]
