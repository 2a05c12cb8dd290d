"""Dataset generation and loading.

Images are stored as binary portable pixmaps (P6, with P5 supported for
grayscale exports): dependency-free and bit-exact.  A dataset root looks
like::

    root/manifest.json
    root/{train,val}/img_00000.ppm ...
    root/{train,val}/labels.csv        # filename,class_index

The synthetic generator draws one class-defining textured patch per image
at a random position and scale over cluttered background, so the class
signal occupies only a fraction of the image.  Classes differ by texture
pattern, not by color, which keeps global color statistics uninformative.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MAX_CLASSES = 8


# ---------------------------------------------------------------------------
# portable pixmap I/O


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (H, W, 3) uint8 array as binary P6."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"P6 image must be (H, W, 3), got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary P5."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise DataError(f"P5 image must be (H, W), got {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file into a uint8 array ((H, W) or (H, W, 3))."""
    blob = Path(path).read_bytes()
    try:
        magic, rest = blob.split(None, 1)
    except ValueError:
        raise DataError(f"{path}: empty or truncated pixmap")
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported magic {magic!r} (need binary P5/P6)")

    # header tokens may be separated by whitespace and '#' comments
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: corrupt pixmap header")
        try:
            tokens.append(int(blob[start:pos]))
        except ValueError:
            raise DataError(f"{path}: corrupt pixmap header")
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    expected = w * h * channels
    payload = blob[pos:pos + expected]
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


# ---------------------------------------------------------------------------
# synthetic dataset


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    image_side: int = 64
    scale_range: tuple = (0.12, 0.5)
    clutter_density: float = 1.0
    noise_level: float = 0.08
    train_per_class: int = 250
    val_per_class: int = 50
    seed: int = 0

    def __post_init__(self):
        self.scale_range = (float(self.scale_range[0]), float(self.scale_range[1]))
        if not 2 <= self.num_classes <= MAX_CLASSES:
            raise ConfigError(
                f"num_classes must be in [2, {MAX_CLASSES}], got {self.num_classes}")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"scale range must be within (0, 1], got {self.scale_range}")
        if self.image_side < 16:
            raise ConfigError(f"image side must be >= 16, got {self.image_side}")
        if self.clutter_density < 0 or self.noise_level < 0:
            raise ConfigError("clutter density and noise level must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class DatasetManifest:
    root: Path
    classes: list
    image_side: int
    splits: dict = field(default_factory=dict)  # split -> [(filename, label)]


@dataclass
class Split:
    images: np.ndarray  # (n, side, side, 3) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64

    def __len__(self):
        return self.labels.shape[0]


def _texture_mask(label: int, size: int, phase: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if label == 0:    # horizontal stripes
        return ((yy + phase) // 2) % 2 == 0
    if label == 1:    # vertical stripes
        return ((xx + phase) // 2) % 2 == 0
    if label == 2:    # checkerboard
        return ((yy // 2) + (xx // 2)) % 2 == 0
    if label == 3:    # dot grid (flip-safe, unlike the diagonals below)
        return ((yy + phase) % 4 < 2) & ((xx + phase) % 4 < 2)
    if label == 4:    # diagonal stripes
        return ((xx + yy + phase) // 2) % 2 == 0
    if label == 5:    # anti-diagonal stripes
        return ((xx - yy + phase) // 2) % 2 == 0
    if label == 6:    # concentric rings
        c = (size - 1) / 2.0
        r = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
        return (r.astype(np.int64) // 2) % 2 == 0
    # label == 7: hollow frame
    border = max(2, size // 5)
    inner = (yy >= border) & (yy < size - border) \
        & (xx >= border) & (xx < size - border)
    return ~inner


def render_image(spec: SyntheticSpec, label: int,
                 rng: np.random.Generator) -> np.ndarray:
    """One uint8 sample: textured class patch over cluttered background."""
    side = spec.image_side
    img = np.empty((side, side, 3))
    img[:] = rng.uniform(0.25, 0.75, size=3)

    # class-agnostic solid distractor blobs
    for _ in range(int(round(6 * spec.clutter_density))):
        bh = rng.integers(6, side // 2)
        bw = rng.integers(6, side // 2)
        by = rng.integers(0, side - bh + 1)
        bx = rng.integers(0, side - bw + 1)
        img[by:by + bh, bx:bx + bw] = rng.uniform(0.0, 1.0, size=3)

    # textured distractors drawn from patterns outside the class set, so
    # that global colour/texture statistics are misleading and only the
    # class patch itself is diagnostic
    decoys = list(range(spec.num_classes, MAX_CLASSES))
    if decoys:
        for _ in range(int(round(3 * spec.clutter_density))):
            frac = rng.uniform(*spec.scale_range)
            size = max(6, int(round(frac * side)))
            by = rng.integers(0, side - size + 1)
            bx = rng.integers(0, side - size + 1)
            texture = int(rng.choice(decoys))
            mask = _texture_mask(texture, size, int(rng.integers(0, 4)), rng)
            fg = rng.uniform(0.65, 1.0, size=3)
            bg = rng.uniform(0.0, 0.35, size=3)
            img[by:by + size, bx:bx + size] = np.where(mask[:, :, None], fg, bg)

    # the class-defining textured square patch, fully inside the image
    frac = rng.uniform(*spec.scale_range)
    size = max(6, int(round(frac * side)))
    py = rng.integers(0, side - size + 1)
    px = rng.integers(0, side - size + 1)
    phase = int(rng.integers(0, 4))
    mask = _texture_mask(label, size, phase, rng)
    fg = rng.uniform(0.65, 1.0, size=3)
    bg = rng.uniform(0.0, 0.35, size=3)
    patch = np.where(mask[:, :, None], fg, bg)
    img[py:py + size, px:px + size] = patch

    if spec.noise_level > 0:
        img += rng.normal(0.0, spec.noise_level, size=img.shape)
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def render_split(spec: SyntheticSpec, split: str):
    """In-memory images and labels for one split, deterministic per seed."""
    if split not in ("train", "val"):
        raise ConfigError(f"split must be 'train' or 'val', got {split!r}")
    per_class = spec.train_per_class if split == "train" else spec.val_per_class
    stream = np.random.SeedSequence(spec.seed).spawn(2)[0 if split == "train" else 1]
    rng = np.random.default_rng(stream)
    images = []
    labels = []
    for i in range(per_class * spec.num_classes):
        label = i % spec.num_classes
        images.append(render_image(spec, label, rng))
        labels.append(label)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def generate_synthetic(spec: SyntheticSpec, root) -> DatasetManifest:
    """Write the synthetic dataset under ``root`` and return its manifest."""
    root = Path(root)
    classes = [f"texture_{i}" for i in range(spec.num_classes)]
    manifest = DatasetManifest(root=root, classes=classes,
                               image_side=spec.image_side)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for split in ("train", "val"):
            images, labels = render_split(spec, split)
            split_dir = root / split
            split_dir.mkdir(exist_ok=True)
            rows = []
            for i, (img, label) in enumerate(zip(images, labels)):
                name = f"img_{i:05d}.ppm"
                write_ppm(split_dir / name, img)
                rows.append((name, int(label)))
            with open(split_dir / "labels.csv", "w") as fh:
                fh.write("filename,class_index\n")
                for name, label in rows:
                    fh.write(f"{name},{label}\n")
            manifest.splits[split] = rows
        (root / "manifest.json").write_text(json.dumps({
            "classes": classes,
            "image_side": spec.image_side,
            "splits": {s: len(r) for s, r in manifest.splits.items()},
        }, indent=2) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write dataset under {root}: {exc}") from exc
    return manifest


# ---------------------------------------------------------------------------
# loading


def _load_labels(split_dir: Path) -> list:
    labels_file = split_dir / "labels.csv"
    if not labels_file.exists():
        raise DataError(f"{labels_file}: labels file missing")
    rows = []
    with open(labels_file) as fh:
        header = fh.readline().strip()
        if header != "filename,class_index":
            raise DataError(f"{labels_file}: unexpected header {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{labels_file}:{line_no}: malformed row {line!r}")
            try:
                rows.append((parts[0], int(parts[1])))
            except ValueError:
                raise DataError(f"{labels_file}:{line_no}: bad class index {parts[1]!r}")
    return rows


def load_split(root, split: str, num_classes: int | None = None,
               image_side: int | None = None) -> Split:
    """Load one split into float64 tensors normalized to [0, 1]."""
    split_dir = Path(root) / split
    rows = _load_labels(split_dir)
    listed = {name for name, _ in rows}
    present = {p.name for p in split_dir.glob("img_*.ppm")}
    unlabeled = present - listed
    if unlabeled:
        raise DataError(f"{split_dir}: images without a labels row: "
                        f"{sorted(unlabeled)[:3]}")
    images = []
    labels = []
    for name, label in rows:
        path = split_dir / name
        if not path.exists():
            raise DataError(f"{path}: listed in labels.csv but missing")
        arr = read_pnm(path)
        if arr.ndim != 3:
            raise DataError(f"{path}: expected a color (P6) image")
        if image_side is not None and arr.shape[:2] != (image_side, image_side):
            raise DataError(f"{path}: size {arr.shape[:2]} does not match "
                            f"configured {image_side}x{image_side}")
        if num_classes is not None and not 0 <= label < num_classes:
            raise DataError(f"{path}: class index {label} out of range "
                            f"[0, {num_classes})")
        images.append(arr)
        labels.append(label)
    if not images:
        raise DataError(f"{split_dir}: empty split")
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DataError(f"{split_dir}: inconsistent image sizes {shapes}")
    stack = np.stack(images).astype(np.float64) / 255.0
    return Split(images=stack, labels=np.asarray(labels, dtype=np.int64))


def load_dataset(root) -> dict:
    """Load every split present under ``root``; validates via manifest.json."""
    root = Path(root)
    num_classes = image_side = None
    meta_file = root / "manifest.json"
    if meta_file.exists():
        meta = json.loads(meta_file.read_text())
        num_classes = len(meta["classes"])
        image_side = meta["image_side"]
    out = {}
    for split in ("train", "val"):
        if (root / split).is_dir():
            out[split] = load_split(root, split, num_classes, image_side)
    if not out:
        raise DataError(f"{root}: no train/ or val/ split found")
    return out


def file_hashes(root, split: str) -> set:
    return {hashlib.sha256(p.read_bytes()).hexdigest()
            for p in (Path(root) / split).glob("img_*.ppm")}
