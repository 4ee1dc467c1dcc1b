"""Multi-domain image stores, synthetic shifted-domain data, and TSV manifests.

Directory layout is ``root/<domain>/<class>/<file>.png`` with one manifest
per domain at ``root/<domain>/manifest.tsv``. Manifest rows are
``relative_path<TAB>label``; the label column is omitted on every row of an
unlabeled manifest. Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

MANIFEST_NAME = "manifest.tsv"


def check_image(arr: np.ndarray) -> None:
    """Raise if `arr` is not a finite HxWx3 raster with values in [0, 1]."""
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG into a float32 HxWx3 array scaled to [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    check_image(arr)
    return arr


def save_image(arr: np.ndarray, path: str | Path) -> None:
    check_image(arr)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


@dataclass
class DomainSample:
    """One image with its class label (if labeled) and domain identity.

    `sample_id` is the file path relative to the owning manifest's directory
    and is unique within a store.
    """

    sample_id: str
    domain_id: str
    label: int | None
    path: Path | None = None
    array: np.ndarray | None = field(default=None, repr=False, compare=False)

    def image(self) -> np.ndarray:
        if self.array is None:
            if self.path is None:
                raise ValueError(f"sample {self.sample_id} has no image source")
            self.array = load_image(self.path)
        return self.array


@dataclass
class DomainStore:
    """An ordered, immutable-after-load collection of samples from one domain."""

    domain_id: str
    class_count: int
    samples: list[DomainSample]
    labeled: bool

    def __post_init__(self) -> None:
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate sample_ids in store {self.domain_id!r}")
        for s in self.samples:
            if s.domain_id != self.domain_id:
                raise ValueError(
                    f"sample {s.sample_id} has domain {s.domain_id!r}, "
                    f"store is {self.domain_id!r}"
                )
            if self.labeled:
                if s.label is None or not 0 <= s.label < self.class_count:
                    raise ValueError(
                        f"sample {s.sample_id} has label {s.label!r}, "
                        f"expected [0, {self.class_count})"
                    )
            elif s.label is not None:
                raise ValueError(f"unlabeled store holds a label on {s.sample_id}")

    def __len__(self) -> int:
        return len(self.samples)

    def sample_ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    def unlabeled(self) -> "DomainStore":
        """A copy of this store with all labels hidden (image cache shared)."""
        samples = [dataclasses.replace(s, label=None) for s in self.samples]
        return DomainStore(self.domain_id, self.class_count, samples, labeled=False)


# ---------------------------------------------------------------------------
# Synthetic shifted-domain generator


@dataclass(frozen=True)
class DomainStyle:
    """Rendering style of one toy domain.

    `thickness` of 0 draws filled shapes; a positive value draws outlines that
    many pixels wide. `invert` flips every pixel value after noise is added.
    """

    name: str
    background: tuple[float, float, float] = (0.12, 0.12, 0.16)
    foreground: tuple[float, float, float] = (0.88, 0.86, 0.80)
    noise: float = 0.0
    thickness: int = 0
    invert: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("DomainStyle.name must be non-empty")
        for fname in ("background", "foreground"):
            color = getattr(self, fname)
            if len(color) != 3 or any(not 0.0 <= float(c) <= 1.0 for c in color):
                raise ValueError(f"DomainStyle.{fname} must be three values in [0, 1]")
        if self.noise < 0.0:
            raise ValueError("DomainStyle.noise must be >= 0")
        if self.thickness < 0:
            raise ValueError("DomainStyle.thickness must be >= 0")


STYLE_PRESETS: dict[str, DomainStyle] = {
    "clean": DomainStyle(name="clean"),
    "noisy": DomainStyle(name="noisy", noise=0.2),
    "inverted": DomainStyle(name="inverted", invert=True),
    "inverted_noisy": DomainStyle(name="inverted_noisy", noise=0.2, invert=True),
    "outline": DomainStyle(name="outline", thickness=2),
}


@dataclass(frozen=True)
class ToySpec:
    """Parameters of one synthetic multi-domain dataset."""

    class_count: int
    domains: tuple[DomainStyle, ...]
    samples_per_class_per_domain: int
    image_side: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise ValueError("ToySpec.class_count must be >= 2")
        if self.class_count > len(_SHAPES):
            raise ValueError(
                f"ToySpec.class_count supports at most {len(_SHAPES)} shape classes"
            )
        if not self.domains:
            raise ValueError("ToySpec.domains must name at least one domain")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ValueError("ToySpec.domains must have unique names")
        if self.samples_per_class_per_domain < 1:
            raise ValueError("ToySpec.samples_per_class_per_domain must be >= 1")
        if self.image_side < 8:
            raise ValueError("ToySpec.image_side must be >= 8")
        if self.seed < 0:
            raise ValueError("ToySpec.seed must be >= 0")


def _mask_circle(u, v):
    return u * u + v * v <= 1.0


def _mask_square(u, v):
    return np.maximum(np.abs(u), np.abs(v)) <= 0.82


def _mask_triangle(u, v):
    return (v <= 1.0) & (v >= 2.0 * np.abs(u) - 1.0)


def _mask_plus(u, v):
    au, av = np.abs(u), np.abs(v)
    return ((au <= 0.32) & (av <= 1.0)) | ((av <= 0.32) & (au <= 1.0))


def _mask_diamond(u, v):
    return np.abs(u) + np.abs(v) <= 1.0


def _mask_ring(u, v):
    r2 = u * u + v * v
    return (r2 <= 1.0) & (r2 >= 0.3)


def _mask_xcross(u, v):
    inside = np.maximum(np.abs(u), np.abs(v)) <= 1.0
    return inside & (np.minimum(np.abs(u - v), np.abs(u + v)) <= 0.45)


def _mask_hbars(u, v):
    av = np.abs(v)
    return (np.abs(u) <= 1.0) & (av >= 0.25) & (av <= 0.75)


def _mask_vbars(u, v):
    au = np.abs(u)
    return (np.abs(v) <= 1.0) & (au >= 0.25) & (au <= 0.75)


def _mask_corners(u, v):
    au, av = np.abs(u), np.abs(v)
    return (au >= 0.35) & (au <= 1.0) & (av >= 0.35) & (av <= 1.0)


_SHAPES = (
    _mask_circle,
    _mask_square,
    _mask_triangle,
    _mask_plus,
    _mask_diamond,
    _mask_ring,
    _mask_xcross,
    _mask_hbars,
    _mask_vbars,
    _mask_corners,
)


def render_toy_image(
    style: DomainStyle, class_index: int, side: int, rng: np.random.Generator
) -> np.ndarray:
    """Render one shape-class image in the given domain style.

    Consumes rng draws in a fixed order (center x/y, size, color jitter,
    noise field) so a given generator state yields one exact image.
    """
    cx = side * (0.5 + rng.uniform(-0.14, 0.14))
    cy = side * (0.5 + rng.uniform(-0.14, 0.14))
    radius = side * rng.uniform(0.26, 0.42)
    bg = np.clip(np.asarray(style.background) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
    fg = np.clip(np.asarray(style.foreground) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)

    yy, xx = np.mgrid[0:side, 0:side]
    u = (xx + 0.5 - cx) / radius
    v = (yy + 0.5 - cy) / radius
    mask = _SHAPES[class_index](u, v)
    if style.thickness > 0:
        mask = mask & ~ndimage.binary_erosion(mask, iterations=style.thickness)

    img = np.where(mask[..., None], fg, bg)
    if style.noise > 0.0:
        img = img + rng.normal(0.0, style.noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    if style.invert:
        img = 1.0 - img
    return img.astype(np.float32)


def write_manifest(path: str | Path, rows: list[tuple[str, int | None]]) -> None:
    """Write manifest rows; labels must be present on all rows or none."""
    labels_present = [label is not None for _, label in rows]
    if any(labels_present) and not all(labels_present):
        raise ValueError("manifest rows must be uniformly labeled or unlabeled")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rel, label in rows:
            fh.write(rel if label is None else f"{rel}\t{label}")
            fh.write("\n")


def write_store_manifest(
    store: DomainStore, path: str | Path, include_labels: bool = True
) -> None:
    """Write a store back out as a manifest located at `path`.

    Sample paths are rewritten relative to the manifest's directory, so the
    manifest may live outside the image tree.
    """
    path = Path(path)
    rows: list[tuple[str, int | None]] = []
    for s in store.samples:
        if s.path is None:
            raise ValueError(f"sample {s.sample_id} has no file path to reference")
        rel = os.path.relpath(s.path, path.parent)
        rows.append((rel, s.label if include_labels else None))
    write_manifest(path, rows)


def generate_toy_dataset(spec: ToySpec, out_root: str | Path) -> dict[str, int]:
    """Generate the dataset tree under `out_root` and return per-domain counts.

    Identical (spec, seed) pairs reproduce byte-identical manifests and pixel
    data; each image gets its own generator keyed on (seed, domain, class,
    index).
    """
    out_root = Path(out_root)
    counts: dict[str, int] = {}
    for d_idx, style in enumerate(spec.domains):
        rows: list[tuple[str, int | None]] = []
        for c in range(spec.class_count):
            cls_dir = out_root / style.name / str(c)
            cls_dir.mkdir(parents=True, exist_ok=True)
            for i in range(spec.samples_per_class_per_domain):
                rng = np.random.default_rng([spec.seed, d_idx, c, i])
                img = render_toy_image(style, c, spec.image_side, rng)
                rel = f"{c}/{i:05d}.png"
                save_image(img, out_root / style.name / rel)
                rows.append((rel, c))
        write_manifest(out_root / style.name / MANIFEST_NAME, rows)
        counts[style.name] = len(rows)
    return counts


def load_manifest(
    manifest_path: str | Path,
    class_count: int | None = None,
    domain_id: str | None = None,
) -> DomainStore:
    """Load a manifest into a DomainStore, preserving row order.

    The store is labeled iff every row carries a label column. When
    `class_count` is omitted it is inferred as max(label) + 1 (0 for
    unlabeled manifests).
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    if domain_id is None:
        domain_id = base.name

    entries: list[tuple[str, int | None]] = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for row_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 1:
                rel, label = parts[0], None
            elif len(parts) == 2:
                rel = parts[0]
                try:
                    label = int(parts[1])
                except ValueError:
                    raise ValueError(
                        f"{manifest_path}:{row_no}: malformed label {parts[1]!r}"
                    ) from None
            else:
                raise ValueError(f"{manifest_path}:{row_no}: malformed row {line!r}")
            if not (base / rel).is_file():
                raise ValueError(
                    f"{manifest_path}:{row_no}: referenced image missing: {rel}"
                )
            if label is not None and class_count is not None:
                if not 0 <= label < class_count:
                    raise ValueError(
                        f"{manifest_path}:{row_no}: label {label} outside "
                        f"[0, {class_count})"
                    )
            entries.append((rel, label))

    labeled_rows = [label is not None for _, label in entries]
    labeled = bool(entries) and all(labeled_rows)
    if any(labeled_rows) and not labeled:
        first_bad = labeled_rows.index(False) + 1
        raise ValueError(
            f"{manifest_path}:{first_bad}: row lacks a label in a partially "
            "labeled manifest"
        )

    if class_count is None:
        class_count = max((label for _, label in entries), default=-1) + 1 if labeled else 0

    samples = [
        DomainSample(rel, domain_id, label if labeled else None, path=base / rel)
        for rel, label in entries
    ]
    return DomainStore(domain_id, class_count, samples, labeled)


def split_semi_supervised(
    store: DomainStore,
    per_class: int,
    seed: int,
    eval_manifest: str | Path | None = None,
) -> tuple[DomainStore, DomainStore]:
    """Split a labeled store into a tiny labeled part and an unlabeled rest.

    Exactly `per_class` samples of every class go to the labeled part via a
    seeded uniform draw. The rest is returned with labels hidden; when
    `eval_manifest` is given, the hidden labels are written there for
    evaluation so they never travel through the unlabeled store.
    """
    if not store.labeled:
        raise ValueError("split requires a labeled store")
    by_class: dict[int, list[int]] = {c: [] for c in range(store.class_count)}
    for idx, s in enumerate(store.samples):
        by_class[s.label].append(idx)
    for c in range(store.class_count):
        if len(by_class[c]) < per_class:
            raise ValueError(
                f"class {c} has only {len(by_class[c])} samples, "
                f"need at least {per_class}"
            )

    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    for c in range(store.class_count):
        picks = rng.choice(len(by_class[c]), size=per_class, replace=False)
        chosen.update(by_class[c][int(p)] for p in picks)

    labeled_samples = [store.samples[i] for i in range(len(store)) if i in chosen]
    rest = [store.samples[i] for i in range(len(store)) if i not in chosen]

    labeled_part = DomainStore(store.domain_id, store.class_count, labeled_samples, True)
    unlabeled_part = DomainStore(
        store.domain_id,
        store.class_count,
        [dataclasses.replace(s, label=None) for s in rest],
        labeled=False,
    )
    if eval_manifest is not None:
        hidden = DomainStore(store.domain_id, store.class_count, rest, True)
        write_store_manifest(hidden, eval_manifest, include_labels=True)
    return labeled_part, unlabeled_part
