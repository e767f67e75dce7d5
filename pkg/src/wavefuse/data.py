"""Dataset ingestion, deterministic splits, and augmentation.

Images live on disk as binary PPM (P6, maxval 255) or as raw little-endian
float32 tensors (magic "WTEN"), with a UTF-8 labels CSV mapping
image_id,label. Everything here is a pure function of its inputs and seed:
loading orders by image id, resizing is nearest-neighbor with integer
index arithmetic, splits use a seeded stratified shuffle, and augmentation
draws from the eight axis-aligned flips and rotations.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "HAM10000_CLASSES", "LabeledDataset",
    "read_ppm", "write_ppm", "read_pgm", "write_pgm",
    "read_wten", "write_wten", "nn_resize",
    "dihedral_transform", "load_dataset", "split_dataset", "augment",
]

# the seven HAM10000 diagnosis codes, in canonical (alphabetical) order
HAM10000_CLASSES = ("akiec", "bcc", "bkl", "df", "mel", "nv", "vasc")


@dataclass
class LabeledDataset:
    """Images in [0, 1], integer labels, and per-sample provenance.

    provenance entries are "source_id" for originals and
    "source_id#op+op" for augmented samples.
    """

    images: list[np.ndarray]
    labels: list[int]
    class_names: tuple[str, ...] = HAM10000_CLASSES
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        k = len(self.class_names)
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if not self.provenance:
            self.provenance = [f"sample_{i:05d}" for i in range(len(self.images))]
        if len(self.provenance) != len(self.images):
            raise DataError("provenance length does not match images")
        for lab in self.labels:
            if not 0 <= lab < k:
                raise DataError(f"label {lab} outside [0, {k})")
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise DataError(f"images disagree on shape: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(
            images=[self.images[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            class_names=self.class_names,
            provenance=[self.provenance[i] for i in indices],
        )

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All images as one [N, H, W, 3] array plus the label vector."""
        return np.stack(self.images), np.asarray(self.labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# file formats

def write_ppm(path, image: np.ndarray) -> None:
    """Write a [H, W, 3] float image in [0, 1] as binary PPM, maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"PPM needs [H, W, 3], got {image.shape}")
    h, w, _ = image.shape
    quantized = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def _ppm_tokens(fh, count: int, path) -> list[int]:
    """Read whitespace-separated header integers, skipping # comments."""
    tokens: list[int] = []
    while len(tokens) < count:
        ch = fh.read(1)
        if not ch:
            raise DataError(f"{path}: truncated PPM header")
        if ch in b" \t\r\n":
            continue
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        token = ch
        while True:
            ch = fh.read(1)
            if not ch or ch in b" \t\r\n":
                break
            token += ch
        try:
            tokens.append(int(token))
        except ValueError:
            raise DataError(f"{path}: bad PPM header token {token!r}") from None
    return tokens


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a float32 [H, W, 3] array in [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P6":
            raise DataError(f"{path}: not a binary PPM (magic {magic!r})")
        w, h, maxval = _ppm_tokens(fh, 3, path)
        if maxval != 255:
            raise DataError(f"{path}: unsupported PPM maxval {maxval}")
        if w <= 0 or h <= 0:
            raise DataError(f"{path}: bad PPM dimensions {w}x{h}")
        payload = fh.read(w * h * 3)
        if len(payload) != w * h * 3:
            raise DataError(f"{path}: truncated PPM payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (pixels.astype(np.float32) / np.float32(255.0))


def write_pgm(path, gray: np.ndarray) -> None:
    """Write a [H, W] uint8 array as binary PGM (P5, maxval 255)."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise DataError(f"PGM needs [H, W], got {gray.shape}")
    if gray.dtype != np.uint8:
        raise DataError(f"PGM needs uint8 pixels, got {gray.dtype}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a [H, W] uint8 array."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
        w, h, maxval = _ppm_tokens(fh, 3, path)
        if maxval != 255:
            raise DataError(f"{path}: unsupported PGM maxval {maxval}")
        payload = fh.read(w * h)
        if len(payload) != w * h:
            raise DataError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def write_wten(path, array: np.ndarray) -> None:
    """Write a raw tensor: magic WTEN, u32 rank, u32 dims, f32 LE payload."""
    array = np.asarray(array)
    with open(path, "wb") as fh:
        fh.write(b"WTEN")
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_wten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != b"WTEN":
            raise DataError(f"{path}: not a raw tensor file")
        head = fh.read(4)
        if len(head) != 4:
            raise DataError(f"{path}: truncated tensor header")
        (ndim,) = struct.unpack("<I", head)
        dims_raw = fh.read(4 * ndim)
        if len(dims_raw) != 4 * ndim:
            raise DataError(f"{path}: truncated tensor dims")
        shape = struct.unpack(f"<{ndim}I", dims_raw)
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = fh.read(4 * n)
        if len(payload) != 4 * n:
            raise DataError(f"{path}: truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def nn_resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize to (height, width).

    Source indices are floor(i * in / out), pure integer arithmetic, so
    results are identical across platforms.
    """
    h_out, w_out = int(size[0]), int(size[1])
    if h_out <= 0 or w_out <= 0:
        raise DataError(f"bad resize target {size}")
    h_in, w_in = image.shape[0], image.shape[1]
    if (h_in, w_in) == (h_out, w_out):
        return image
    rows = (np.arange(h_out, dtype=np.int64) * h_in) // h_out
    cols = (np.arange(w_out, dtype=np.int64) * w_in) // w_out
    return image[rows][:, cols]


# ---------------------------------------------------------------------------
# loading

def load_dataset(image_dir, labels_csv, target_size: tuple[int, int] | None = None,
                 class_names: tuple[str, ...] = HAM10000_CLASSES) -> LabeledDataset:
    """Read a labels CSV and its image files into memory.

    The CSV needs an image_id,label header; every image id must exist in
    image_dir as id.ppm or id.wten. Rows are processed in image-id order
    so the dataset layout is independent of CSV row order.
    """
    image_dir = Path(image_dir)
    label_to_index = {name: i for i, name in enumerate(class_names)}
    try:
        with open(labels_csv, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [c.strip() for c in header[:2]] != ["image_id", "label"]:
                raise DataError(
                    f"{labels_csv}: expected header image_id,label, got {header}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) < 2:
                    raise DataError(f"{labels_csv}: row {lineno} malformed: {row}")
                rows.append((row[0].strip(), row[1].strip(), lineno))
    except OSError as exc:
        raise DataError(f"cannot read labels CSV {labels_csv}: {exc}") from exc

    rows.sort(key=lambda r: r[0])
    images, labels, provenance = [], [], []
    for image_id, label, lineno in rows:
        if label not in label_to_index:
            raise DataError(
                f"{labels_csv}: row {lineno}: unknown label {label!r} "
                f"(classes: {', '.join(class_names)})")
        ppm = image_dir / f"{image_id}.ppm"
        wten = image_dir / f"{image_id}.wten"
        if ppm.exists():
            img = read_ppm(ppm)
        elif wten.exists():
            img = read_wten(wten)
            if img.ndim != 3 or img.shape[2] != 3:
                raise DataError(f"{wten}: expected [H, W, 3], got {img.shape}")
            if img.size and (img.min() < 0.0 or img.max() > 1.0):
                raise DataError(f"{wten}: pixel values outside [0, 1]")
        else:
            raise DataError(f"no image file for id {image_id!r} in {image_dir}")
        if target_size is not None:
            img = nn_resize(img, target_size)
        images.append(np.ascontiguousarray(img, dtype=np.float32))
        labels.append(label_to_index[label])
        provenance.append(image_id)
    return LabeledDataset(images=images, labels=labels,
                          class_names=tuple(class_names), provenance=provenance)


# ---------------------------------------------------------------------------
# splits and augmentation

def split_dataset(ds: LabeledDataset, train_fraction: float = 0.7,
                  seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded stratified split; every class with >= 2 samples lands in both parts."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    labels = np.asarray(ds.labels)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise DataError(
                f"class {ds.class_names[c]!r} has no samples; "
                f"stratified split impossible")
        order = members[rng.permutation(members.size)]
        if members.size == 1:
            n_train = 1
        else:
            n_train = int(members.size * train_fraction + 0.5)
            n_train = min(max(n_train, 1), members.size - 1)
        train_idx.extend(order[:n_train].tolist())
        val_idx.extend(order[n_train:].tolist())
    return ds.subset(sorted(train_idx)), ds.subset(sorted(val_idx))


# the eight axis-aligned symmetries: quarter rotations, optionally mirrored
_DIHEDRAL: list[tuple[int, bool]] = [(k, f) for f in (False, True) for k in range(4)]


def dihedral_transform(image: np.ndarray, rotations: int, hflip: bool) -> np.ndarray:
    """Rotate by 90 degrees `rotations` times, then optionally flip columns."""
    out = np.rot90(image, rotations % 4, axes=(0, 1))
    if hflip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def _dihedral_name(rotations: int, hflip: bool) -> str:
    parts = []
    if rotations % 4:
        parts.append(f"rot{90 * (rotations % 4)}")
    if hflip:
        parts.append("hflip")
    return "+".join(parts) if parts else "identity"


def augment(ds: LabeledDataset, factor: int, seed: int = 0) -> LabeledDataset:
    """Grow the dataset `factor`-fold with random flips and rotations.

    Each source image keeps its original and gains factor-1 transformed
    copies drawn (seeded) from the seven non-identity symmetries; labels
    are preserved and provenance records the op chain.
    """
    factor = int(factor)
    if factor < 1:
        raise ConfigError(f"augmentation factor must be >= 1, got {factor}")
    if factor == 1:
        return ds
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    images, labels, provenance = [], [], []
    for img, lab, prov in zip(ds.images, ds.labels, ds.provenance):
        images.append(img)
        labels.append(lab)
        provenance.append(prov)
        for _ in range(factor - 1):
            rotations, hflip = _DIHEDRAL[int(rng.integers(1, len(_DIHEDRAL)))]
            images.append(dihedral_transform(img, rotations, hflip))
            labels.append(lab)
            provenance.append(f"{prov}#{_dihedral_name(rotations, hflip)}")
    return LabeledDataset(images=images, labels=labels,
                          class_names=ds.class_names, provenance=provenance)
