"""Synthetic misaligned pedestrians.

An identity is a stack of K horizontal bands.  Every band position has its
own pattern family (the way heads, torsos and legs look different on real
people), and the identity picks a colour pair per band from a shared palette.
Rendering shifts the whole stack vertically to mimic detector error, jitters
per-band colours to mimic pose/viewpoint change, and applies a camera-specific
brightness/colour cast plus pixel noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tnsio

HEIGHT, WIDTH = 96, 32

PALETTE = np.array(
    [
        [0.85, 0.15, 0.15],
        [0.15, 0.65, 0.20],
        [0.15, 0.30, 0.85],
        [0.90, 0.80, 0.15],
        [0.60, 0.20, 0.70],
        [0.10, 0.70, 0.75],
        [0.95, 0.55, 0.10],
        [0.50, 0.50, 0.50],
    ]
)
BACKGROUND = np.array([0.45, 0.45, 0.42])
PATTERNS = ("solid", "hstripes", "vstripes", "checker", "dots", "diagonal")


class DataConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticIdentity:
    pid: int
    colors: tuple[tuple[int, int], ...]  # (primary, secondary) palette index per band


@dataclass(frozen=True)
class RenderOptions:
    parts: int = 6
    height: int = HEIGHT
    width: int = WIDTH
    max_shift: int = 12
    jitter: bool = True
    flip: bool = True
    color_jitter: float = 0.06
    noise: float = 0.04
    num_cameras: int = 6

    def validate(self) -> None:
        if self.max_shift < 0 or self.max_shift >= self.height:
            raise DataConfigError(f"max_shift {self.max_shift} must lie in [0, {self.height})")
        if self.height % self.parts:
            raise DataConfigError(f"image height {self.height} is not divisible by K={self.parts}")


def _camera_cast(camera: int) -> tuple[float, np.ndarray]:
    rng = np.random.default_rng([7919, camera])
    return float(rng.uniform(0.75, 1.2)), rng.uniform(-0.06, 0.06, size=3)


def _pattern_mask(kind: str, rows: int, width: int, phase: int) -> np.ndarray:
    r = np.arange(rows)[:, None]
    c = np.arange(width)[None, :]
    if kind == "solid":
        m = np.zeros((rows, width), dtype=bool)
        m[:, : width // 4] = True
        return m
    if kind == "hstripes":
        return np.broadcast_to(((r + phase) // 3) % 2 == 0, (rows, width))
    if kind == "vstripes":
        return np.broadcast_to(((c + phase) // 4) % 2 == 0, (rows, width))
    if kind == "checker":
        return ((r // 4) + (c + phase) // 4) % 2 == 0
    if kind == "dots":
        return ((r % 5) < 2) & (((c + phase) % 6) < 2)
    if kind == "diagonal":
        return ((r + c + phase) // 3) % 2 == 0
    raise ValueError(kind)


def band_pattern(k: int) -> str:
    return PATTERNS[k % len(PATTERNS)]


def render(identity: SyntheticIdentity, shift: int, opts: RenderOptions, rng: np.random.Generator | None = None,
           camera: int = 0) -> np.ndarray:
    """Draw one 3 x H x W image; positive ``shift`` moves the body down."""
    h, w, parts = opts.height, opts.width, opts.parts
    band = h // parts
    canvas = np.empty((h, w, 3))
    canvas[:] = BACKGROUND
    jitter = opts.jitter and rng is not None
    for k, (primary, secondary) in enumerate(identity.colors):
        c1, c2 = PALETTE[primary].copy(), PALETTE[secondary].copy()
        if jitter:
            c1 += rng.normal(0, opts.color_jitter, 3)
            c2 += rng.normal(0, opts.color_jitter, 3)
        mask = _pattern_mask(band_pattern(k), band, w, phase=identity.pid % 3)
        block = np.where(mask[..., None], c1, c2)
        top = k * band + shift
        lo, hi = max(top, 0), min(top + band, h)
        if lo < hi:
            canvas[lo:hi] = block[lo - top : hi - top]
    if jitter:
        gain, cast = _camera_cast(camera)
        canvas = canvas * gain + cast + rng.normal(0, opts.noise, canvas.shape)
        if opts.flip and rng.random() < 0.5:
            canvas = canvas[:, ::-1]
    return np.clip(canvas, 0.0, 1.0).transpose(2, 0, 1).copy()


def make_identities(num_ids: int, parts: int, rng: np.random.Generator, start: int = 0,
                    family_size: int = 4, mutations: int = 2) -> list[SyntheticIdentity]:
    """Distinct identities built in families.

    Members of a family copy a random prototype and re-draw the colours of
    ``mutations`` bands, so near-duplicates differ only in a few parts.
    """
    if num_ids < 2:
        raise DataConfigError("need at least 2 identities")

    def draw():
        return tuple(int(x) for x in rng.choice(len(PALETTE), size=2, replace=False))

    seen: set = set()
    out = []
    family, prototype = -1, None
    while len(out) < num_ids:
        if len(out) // family_size != family:
            family = len(out) // family_size
            prototype = tuple(draw() for _ in range(parts))
        colors = list(prototype)
        for k in rng.choice(parts, size=min(mutations, parts), replace=False):
            colors[int(k)] = draw()
        colors = tuple(colors)
        if colors in seen:
            continue
        seen.add(colors)
        out.append(SyntheticIdentity(start + len(out), colors))
    return out


@dataclass
class Dataset:
    images: np.ndarray  # (M, 3, H, W)
    ids: np.ndarray
    cams: np.ndarray
    shifts: np.ndarray
    split: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.images[mask], self.ids[mask], self.cams[mask], self.shifts[mask], self.split[mask])

    def relabeled(self) -> tuple["Dataset", np.ndarray]:
        """Copy with identities remapped to 0..J-1 (classifier targets)."""
        uniq, inv = np.unique(self.ids, return_inverse=True)
        return Dataset(self.images, inv, self.cams, self.shifts, self.split), uniq


def generate(num_ids: int, imgs_per_id: int, max_shift: int, rng: np.random.Generator,
             opts: RenderOptions | None = None, start_id: int = 0) -> Dataset:
    """Render ``imgs_per_id`` images for each of ``num_ids`` fresh identities."""
    opts = RenderOptions(max_shift=max_shift) if opts is None else opts
    if opts.max_shift != max_shift:
        opts = RenderOptions(**{**opts.__dict__, "max_shift": max_shift})
    opts.validate()
    identities = make_identities(num_ids, opts.parts, rng, start=start_id)
    return _render_set(identities, imgs_per_id, opts, rng)


def query_gallery_split(data: Dataset, queries_per_id: int, rng: np.random.Generator) -> Dataset:
    """Mark ``queries_per_id`` images per identity (distinct cameras) as queries, the rest gallery."""
    split = np.array(["gallery"] * len(data), dtype=object)
    for pid in np.unique(data.ids):
        members = rng.permutation(np.flatnonzero(data.ids == pid))
        used_cams: set = set()
        chosen = 0
        for m in members:
            if chosen == queries_per_id:
                break
            cam = data.cams[m]
            others = members[(data.cams[members] != cam)]
            if cam in used_cams or len(others) == 0:
                continue
            split[m] = "query"
            used_cams.add(cam)
            chosen += 1
    # a query needs a cross-camera gallery match
    for q in np.flatnonzero(split == "query"):
        mates = (data.ids == data.ids[q]) & (split == "gallery") & (data.cams != data.cams[q])
        if not mates.any():
            split[q] = "gallery"
    return Dataset(data.images, data.ids, data.cams, data.shifts, split)


@dataclass(frozen=True)
class DataConfig:
    num_train_ids: int = 32
    imgs_per_train_id: int = 16
    num_test_ids: int = 16
    imgs_per_test_id: int = 8
    queries_per_id: int = 2
    max_shift: int = 12
    num_cameras: int = 6
    parts: int = 6
    height: int = HEIGHT
    width: int = WIDTH
    jitter: bool = True
    seed: int = 0


def build_splits(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    """(train, test) with disjoint identities; test carries query/gallery marks."""
    rng = np.random.default_rng(cfg.seed)
    opts = RenderOptions(parts=cfg.parts, height=cfg.height, width=cfg.width, max_shift=cfg.max_shift,
                         jitter=cfg.jitter, num_cameras=cfg.num_cameras)
    opts.validate()
    identities = make_identities(cfg.num_train_ids + cfg.num_test_ids, cfg.parts, rng)
    train = _render_set(identities[: cfg.num_train_ids], cfg.imgs_per_train_id, opts, rng)
    test = _render_set(identities[cfg.num_train_ids :], cfg.imgs_per_test_id, opts, rng)
    test = query_gallery_split(test, cfg.queries_per_id, rng)
    return train, test


def _render_set(identities, per_id: int, opts: RenderOptions, rng) -> Dataset:
    base_seed = int(rng.integers(2**32))
    images, ids, cams, shifts = [], [], [], []
    index = 0
    for ident in identities:
        cam_cycle = rng.permutation(opts.num_cameras)
        for j in range(per_id):
            img_rng = np.random.default_rng([base_seed, index])
            cam = int(cam_cycle[j % opts.num_cameras]) if j < opts.num_cameras else int(img_rng.integers(opts.num_cameras))
            shift = int(img_rng.integers(-opts.max_shift, opts.max_shift + 1)) if opts.max_shift else 0
            images.append(render(ident, shift, opts, img_rng if opts.jitter else None, cam))
            ids.append(ident.pid)
            cams.append(cam)
            shifts.append(shift)
            index += 1
    return Dataset(np.stack(images), np.array(ids), np.array(cams), np.array(shifts),
                   np.array(["train"] * len(ids), dtype=object))


def random_erase(image: np.ndarray, probability: float = 0.5, rng: np.random.Generator | None = None,
                 area=(0.02, 0.2), aspect=(0.3, 3.3)) -> np.ndarray:
    """With ``probability``, overwrite one random rectangle with uniform noise."""
    if not 0 <= probability <= 1:
        raise ValueError("probability must lie in [0, 1]")
    rng = np.random.default_rng() if rng is None else rng
    if rng.random() >= probability:
        return image
    c, h, w = image.shape
    for _ in range(100):
        target = rng.uniform(*area) * h * w
        ratio = np.exp(rng.uniform(np.log(aspect[0]), np.log(aspect[1])))
        eh = int(round(np.sqrt(target * ratio)))
        ew = int(round(np.sqrt(target / ratio)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out = image.copy()
            out[:, top : top + eh, left : left + ew] = rng.random((c, eh, ew))
            return out
    return image


def save_dataset(root, train: Dataset, test: Dataset) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for name, data in (("train", train), ("test", test)):
        for i in range(len(data)):
            split = "train" if name == "train" else str(data.split[i])
            fname = f"images/{name}_{i:05d}.tns"
            tnsio.save(root / fname, data.images[i])
            rows.append([fname, int(data.ids[i]), int(data.cams[i]), split, int(data.shifts[i])])
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "identity", "camera", "split", "shift"])
        writer.writerows(rows)
    return root / "manifest.csv"


def load_dataset(root) -> tuple[Dataset, Dataset]:
    root = Path(root)
    with open(root / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataConfigError(f"empty manifest in {root}")

    def collect(pred):
        sel = [r for r in rows if pred(r["split"])]
        return Dataset(
            np.stack([tnsio.load(root / r["file"]) for r in sel]),
            np.array([int(r["identity"]) for r in sel]),
            np.array([int(r["camera"]) for r in sel]),
            np.array([int(r["shift"]) for r in sel]),
            np.array([r["split"] for r in sel], dtype=object),
        )

    return collect(lambda s: s == "train"), collect(lambda s: s in ("query", "gallery"))
