"""Disk I/O: dataset layout, image normalization, synth pools, checkpoints.

Dataset layout (one directory per texture class):

    <root>/<class>/train/good/*.png            defect-free training images
    <root>/<class>/test/<type>/*.png           test images, one dir per defect type
    <root>/<class>/ground_truth/<type>/<stem>_mask.png

Test images under test/good carry an implicit all-zero mask. All
enumeration is lexicographic by path so indexes are reproducible.

Images travel through the package as float32 H x W x 3 arrays in
[-1, 1]; binary masks as float32 H x W in {0, 1}.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import CheckpointError, ConfigError, DataIntegrityError, DatasetLayoutError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

_CKPT_MAGIC = b"TWCK0001"
_SYNTH_MARKER = ".incomplete"


@dataclass(frozen=True)
class TestItem:
    """One test image; mask is None for implicit all-zero ground truth."""

    image: Path
    mask: Path | None
    label: str


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    class_name: str
    normal_train: tuple[Path, ...]
    test_items: tuple[TestItem, ...]
    anomaly_sources: tuple[Path, ...]


def list_images(directory: Path) -> list[Path]:
    """All image files directly under `directory`, sorted by path."""
    if not directory.is_dir():
        return []
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


def load_raw(path: Path | str) -> np.ndarray:
    """Read an image file as H x W x 3 uint8 RGB.

    Grayscale inputs are replicated across channels; alpha is dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DataIntegrityError(f"image file missing: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise DataIntegrityError(f"cannot read image {path}: {exc}") from None


def normalize(raw: np.ndarray, resolution: int) -> np.ndarray:
    """Bilinear-resize to resolution x resolution, then map u8 v -> v/255*2-1."""
    if resolution < 8:
        raise ConfigError(f"resolution must be >= 8, got {resolution}")
    if raw.ndim != 3 or raw.shape[2] != 3 or raw.dtype != np.uint8:
        raise DataIntegrityError(f"expected H x W x 3 uint8 input, got {raw.shape} {raw.dtype}")
    if raw.shape[0] != resolution or raw.shape[1] != resolution:
        img = Image.fromarray(raw).resize((resolution, resolution), Image.BILINEAR)
        raw = np.asarray(img, dtype=np.uint8)
    return (raw.astype(np.float32) / 255.0) * 2.0 - 1.0


def load_image(path: Path | str, resolution: int) -> np.ndarray:
    return normalize(load_raw(path), resolution)


def load_mask(path: Path | str, resolution: int) -> np.ndarray:
    """Read a ground-truth mask: nearest-neighbor resize, binarize at > 127."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            if gray.size != (resolution, resolution):
                gray = gray.resize((resolution, resolution), Image.NEAREST)
            arr = np.asarray(gray, dtype=np.uint8)
    except FileNotFoundError:
        raise DataIntegrityError(f"mask file missing: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise DataIntegrityError(f"cannot read mask {path}: {exc}") from None
    return (arr > 127).astype(np.float32)


def to_display(image: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] float image to uint8 for storage."""
    scaled = np.clip((image + 1.0) * 0.5, 0.0, 1.0) * 255.0
    return np.round(scaled).astype(np.uint8)


def save_image(path: Path | str, image: np.ndarray) -> None:
    """Write a [-1, 1] float image (or uint8 array) as a PNG."""
    arr = image if image.dtype == np.uint8 else to_display(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def save_mask_image(path: Path | str, mask: np.ndarray) -> None:
    """Write a {0, 1} mask as an 8-bit PNG with values {0, 255}."""
    arr = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path)


def load_dataset(root: Path | str, class_name: str, anomaly_dir: Path | str | None = None) -> DatasetIndex:
    """Index one texture class under `root` (layout in the module docstring)."""
    root = Path(root)
    class_dir = root / class_name
    train_good = class_dir / "train" / "good"
    normals = list_images(train_good)
    if not normals:
        raise DatasetLayoutError(
            f"expected at least one training image under {train_good}; "
            f"the layout is <root>/<class>/train/good/*.png"
        )

    items: list[TestItem] = []
    test_dir = class_dir / "test"
    if test_dir.is_dir():
        for type_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            label = type_dir.name
            for image_path in list_images(type_dir):
                mask_path: Path | None = None
                if label != "good":
                    candidate_dir = class_dir / "ground_truth" / label
                    for ext in IMAGE_EXTENSIONS:
                        candidate = candidate_dir / f"{image_path.stem}_mask{ext}"
                        if candidate.is_file():
                            mask_path = candidate
                            break
                items.append(TestItem(image=image_path, mask=mask_path, label=label))

    sources: list[Path] = []
    if anomaly_dir is not None:
        anomaly_dir = Path(anomaly_dir)
        if not anomaly_dir.is_dir():
            raise DatasetLayoutError(f"anomaly-source directory not found: {anomaly_dir}")
        sources = sorted(
            p
            for p in anomaly_dir.rglob("*")
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not sources:
            raise DatasetLayoutError(f"no images found under anomaly-source directory {anomaly_dir}")

    return DatasetIndex(
        root=root,
        class_name=class_name,
        normal_train=tuple(normals),
        test_items=tuple(items),
        anomaly_sources=tuple(sources),
    )


def save_synth_dataset(samples, out: Path | str) -> None:
    """Persist a synthetic pool: images/, masks/, and a manifest.csv.

    A marker file flags the directory as incomplete while writing; it is
    removed only after the manifest lands, so a torn write fails loudly
    on load instead of silently truncating the pool.
    """
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    marker = out / _SYNTH_MARKER
    marker.write_text("write in progress\n")

    rows = []
    for i, sample in enumerate(samples):
        image_rel = f"images/{i:06d}.png"
        mask_rel = f"masks/{i:06d}.png"
        save_image(out / image_rel, sample.defective)
        save_mask_image(out / mask_rel, sample.synth_mask)
        rows.append((i, image_rel, mask_rel, repr(float(sample.opacity)), int(sample.seed)))

    manifest_tmp = out / "manifest.csv.tmp"
    with manifest_tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "image", "mask", "opacity", "seed"])
        writer.writerows(rows)
    os.replace(manifest_tmp, out / "manifest.csv")
    marker.unlink()


def load_synth_dataset(out: Path | str):
    """Load a synthetic pool saved by save_synth_dataset.

    Returns SynthSample objects with normal=None: the stored format keeps
    only the corrupted image and its mask.
    """
    from .synthesis import SynthSample

    out = Path(out)
    if (out / _SYNTH_MARKER).exists():
        raise DataIntegrityError(f"synthetic dataset at {out} was only partially written")
    manifest = out / "manifest.csv"
    if not manifest.is_file():
        raise DataIntegrityError(f"missing manifest.csv under {out}")
    with manifest.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "image", "mask", "opacity", "seed"]:
            raise DataIntegrityError(f"unexpected manifest columns {reader.fieldnames} in {manifest}")
        rows = list(reader)

    image_count = len(list_images(out / "images"))
    mask_count = len(list_images(out / "masks"))
    if len(rows) != image_count or len(rows) != mask_count:
        raise DataIntegrityError(
            f"manifest lists {len(rows)} samples but found {image_count} images "
            f"and {mask_count} masks under {out}"
        )

    samples = []
    for row in rows:
        raw = load_raw(out / row["image"])
        defective = (raw.astype(np.float32) / 255.0) * 2.0 - 1.0
        with Image.open(out / row["mask"]) as img:
            mask = (np.asarray(img.convert("L"), dtype=np.uint8) > 127).astype(np.float32)
        samples.append(
            SynthSample(
                normal=None,
                defective=defective,
                synth_mask=mask,
                opacity=float(row["opacity"]),
                seed=int(row["seed"]),
            )
        )
    return samples


@dataclass
class Checkpoint:
    """Full training snapshot: parameters, optimizers, counters, RNG."""

    fingerprint: str
    epoch: int
    step: int
    regen_index: int
    numpy_rng_state: dict
    model_states: dict
    optim_states: dict
    torch_rng_state: torch.Tensor


def save_checkpoint(ckpt: Checkpoint, path: Path | str) -> None:
    """Atomically write a checkpoint (binary header + JSON meta + tensor blob)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": 1,
        "fingerprint": ckpt.fingerprint,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "regen_index": ckpt.regen_index,
        "numpy_rng_state": ckpt.numpy_rng_state,
    }
    meta_bytes = json.dumps(meta).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack(">Q", len(meta_bytes)))
        fh.write(meta_bytes)
        torch.save(
            {
                "models": ckpt.model_states,
                "optims": ckpt.optim_states,
                "torch_rng": ckpt.torch_rng_state,
            },
            fh,
        )
    os.replace(tmp, path)


def load_checkpoint(path: Path | str, expected_fingerprint: str | None = None) -> Checkpoint:
    """Read a checkpoint; refuse if it was built for a different architecture."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"{path} is not a texweave checkpoint (bad magic)")
        (meta_len,) = struct.unpack(">Q", fh.read(8))
        try:
            meta = json.loads(fh.read(meta_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint metadata in {path}: {exc}") from None
        if meta.get("format") != 1:
            raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r} in {path}")
        if expected_fingerprint is not None and meta["fingerprint"] != expected_fingerprint:
            raise CheckpointError(
                f"checkpoint {path} was trained with architecture fingerprint "
                f"{meta['fingerprint']} but the current config has {expected_fingerprint}; "
                f"refusing to load mismatched parameter shapes"
            )
        payload = torch.load(fh, weights_only=True)
    return Checkpoint(
        fingerprint=meta["fingerprint"],
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        regen_index=int(meta["regen_index"]),
        numpy_rng_state=meta["numpy_rng_state"],
        model_states=payload["models"],
        optim_states=payload["optims"],
        torch_rng_state=payload["torch_rng"],
    )
