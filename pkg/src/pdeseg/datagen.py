"""Synthetic phase-contrast-like cell images.

Three morphologies stand in for real cell lines: ``adherent`` (large irregular
blobs) and ``raft`` (dense clusters of touching cells) are the seen kinds
used for train/val/in-distribution test, while ``spherical`` (small round
cells) is held out for the out-of-distribution split.

All randomness flows through ``numpy.random.default_rng`` (PCG64) seeded
from ``SeedSequence([corpus_seed, index])``, so every sample is a pure
function of the corpus seed and its index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .fidelity import as_mask

KINDS = ("adherent", "raft", "spherical")
SEEN_KINDS = ("adherent", "raft")
OOD_KIND = "spherical"
SPLITS = ("train", "val", "test_in", "test_ood")
DEFAULT_PROPORTIONS = (0.48, 0.21, 0.16, 0.15)
FRACTIONS = (0.10, 0.25, 0.50, 0.75, 1.00)


@dataclass(frozen=True)
class Morphology:
    """Shape statistics for one cell kind.

    ``radius`` is a fraction of the canvas side; ``irregularity`` scales the
    radial harmonic amplitudes; ``cells`` is the (min, max) cell count per image.
    """

    kind: str
    radius: float
    irregularity: float
    harmonics: int = 4
    cells: tuple[int, int] = (1, 1)
    vertices: int = 48

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown morphology kind {self.kind!r}")
        if self.radius <= 0 or self.irregularity < 0 or self.harmonics < 1 or self.vertices < 3:
            raise ValueError(f"invalid morphology parameters for {self.kind!r}")
        if not 1 <= self.cells[0] <= self.cells[1]:
            raise ValueError("cells must be a (min, max) range with min >= 1")


MORPHOLOGIES = {
    "adherent": Morphology("adherent", radius=0.22, irregularity=0.18, harmonics=5, cells=(1, 2)),
    "raft": Morphology("raft", radius=0.12, irregularity=0.10, harmonics=3, cells=(3, 5)),
    "spherical": Morphology("spherical", radius=0.09, irregularity=0.02, harmonics=2, cells=(3, 6)),
}


@dataclass(frozen=True)
class RenderParams:
    v_in: float = 0.35
    v_bg: float = 0.55
    halo_amp: float = 0.3
    halo_width: float = 1.5
    blur_sigma: float = 0.7
    noise_sigma: float = 0.05

    def __post_init__(self):
        for name in ("v_in", "v_bg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.halo_amp < 0 or self.halo_width <= 0 or self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("halo_amp, blur_sigma, noise_sigma must be >= 0 and halo_width > 0")


def gen_shape(morphology: Morphology, seed: int, canvas: tuple[int, int], center=None) -> np.ndarray:
    """Closed polygon ``(n, 2)`` of ``(x, y)`` vertices: a circle with random radial harmonics.

    ``center`` defaults to a random point that keeps the nominal circle on the canvas.
    """
    h, w = canvas
    if h < 16 or w < 16:
        raise ValueError("canvas must be at least 16x16")
    rng = np.random.default_rng(seed)
    r0 = morphology.radius * min(h, w) * rng.uniform(0.85, 1.15)
    ks = np.arange(1, morphology.harmonics + 1)
    amps = morphology.irregularity * rng.uniform(0.5, 1.0, size=ks.size) / ks
    phases = rng.uniform(0, 2 * np.pi, size=ks.size)
    if center is None:
        cx = rng.uniform(r0, w - r0) if w > 2 * r0 else w / 2
        cy = rng.uniform(r0, h - r0) if h > 2 * r0 else h / 2
    else:
        cx, cy = center
    theta = np.linspace(0.0, 2 * np.pi, morphology.vertices, endpoint=False)
    rel = 1.0 + (amps[:, None] * np.cos(ks[:, None] * theta + phases[:, None])).sum(axis=0)
    r = r0 * np.maximum(rel, 0.2)
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)


def radial_irregularity(poly: np.ndarray) -> float:
    """Standard deviation over mean of vertex distances from the centroid."""
    poly = np.asarray(poly, dtype=np.float64)
    r = np.hypot(*(poly - poly.mean(axis=0)).T)
    return float(r.std() / r.mean())


def rasterize_polygon(poly, dims: tuple[int, int]) -> np.ndarray:
    """Even-odd fill: pixel ``(i, j)`` is set iff its centre ``(j+0.5, i+0.5)`` is inside."""
    poly = np.asarray(poly, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    h, w = dims
    py = np.arange(h)[:, None] + 0.5
    px = np.arange(w)[None, :] + 0.5
    inside = np.zeros((h, w), dtype=bool)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        crosses = (ay > py) != (by > py)
        xint = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < xint)
    return inside.astype(np.uint8)


def render(mask, rp: RenderParams, seed: int) -> np.ndarray:
    """Two-level image with a bright background-side halo, blur and noise, clipped to [0, 1]."""
    m = as_mask(mask).astype(bool)
    img = np.where(m, rp.v_in, rp.v_bg).astype(np.float64)
    if rp.halo_amp > 0 and m.any():
        d = ndimage.distance_transform_edt(~m)
        img = img + np.where(m, 0.0, rp.halo_amp * np.exp(-(d**2) / (2 * rp.halo_width**2)))
    if rp.blur_sigma > 0:
        img = ndimage.gaussian_filter(img, rp.blur_sigma, mode="nearest")
    if rp.noise_sigma > 0:
        img = img + np.random.default_rng(seed).normal(0.0, rp.noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def corrupt_mask(m, flip_rate: float, seed: int) -> np.ndarray:
    """Flip each pixel independently with probability ``flip_rate``."""
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError(f"flip_rate must lie in [0, 1], got {flip_rate!r}")
    m = as_mask(m)
    flips = np.random.default_rng(seed).random(m.shape) < flip_rate
    return np.where(flips, 1 - m, m).astype(np.uint8)


def _cell_polygons(kind: str, seed: int, canvas: tuple[int, int]) -> list[np.ndarray]:
    morph = MORPHOLOGIES[kind]
    rng = np.random.default_rng(seed)
    count = int(rng.integers(morph.cells[0], morph.cells[1] + 1))
    h, w = canvas
    polys = []
    if kind == "raft":
        # touching cells packed around a cluster centre
        cx, cy = rng.uniform(0.35, 0.65) * w, rng.uniform(0.35, 0.65) * h
        step = morph.radius * min(h, w) * 1.6
        angle0 = rng.uniform(0, 2 * np.pi)
        centres = [(cx, cy)] + [
            (cx + step * math.cos(angle0 + 2 * np.pi * k / (count - 1)),
             cy + step * math.sin(angle0 + 2 * np.pi * k / (count - 1)))
            for k in range(count - 1)
        ]
    else:
        centres = [None] * count
    for k, c in enumerate(centres):
        polys.append(gen_shape(morph, int(rng.integers(2**31)), canvas, center=c))
    return polys


def synth_sample(kind: str, seed: int, size: int = 32, rp: RenderParams = RenderParams()):
    """One ``(image, mask)`` pair of the given kind."""
    canvas = (size, size)
    mask = np.zeros(canvas, dtype=np.uint8)
    for poly in _cell_polygons(kind, seed, canvas):
        mask |= rasterize_polygon(poly, canvas)
    return render(mask, rp, seed + 1), mask


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    morphology: str
    split: str
    seed: int
    index: int


@dataclass(frozen=True)
class CorpusConfig:
    total: int = 100
    counts: tuple[int, int, int, int] | None = None
    proportions: tuple[float, float, float, float] = DEFAULT_PROPORTIONS
    size: int = 32
    seed: int = 0
    render: RenderParams = RenderParams()

    def split_counts(self) -> tuple[int, ...]:
        if self.counts is not None:
            counts = tuple(int(c) for c in self.counts)
        else:
            counts = split_sizes(self.total, self.proportions)
        if len(counts) != 4 or min(counts) < 1:
            raise ValueError(f"every split needs at least one sample, got counts {counts}")
        if self.size < 16:
            raise ValueError("image size must be at least 16")
        return counts


def split_sizes(total: int, proportions=DEFAULT_PROPORTIONS) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``total`` samples to the four splits."""
    p = np.asarray(proportions, dtype=np.float64)
    if p.shape != (4,) or np.any(p < 0) or p.sum() <= 0:
        raise ValueError(f"invalid split proportions {proportions!r}")
    raw = total * p / p.sum()
    base = np.floor(raw + 1e-9).astype(int)
    order = np.argsort(-(raw - base), kind="stable")
    for k in order[: total - base.sum()]:
        base[k] += 1
    return tuple(int(b) for b in base)


@dataclass
class Corpus:
    samples: list[Sample]
    seed: int = 0
    # permutation of train-split positions; fractions take prefixes of it
    train_order: list[int] = field(default_factory=list)

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.samples if s.split == name]

    def fraction_count(self, fraction: float) -> int:
        n = len(self.split("train"))
        return int(math.floor(fraction * n + 1e-9))

    def with_train_fraction(self, fraction: float) -> "Corpus":
        """Corpus whose train split is the seed-stable ``fraction`` prefix of the full train split."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {fraction!r}")
        k = self.fraction_count(fraction)
        if k < 1:
            raise ValueError(f"train fraction {fraction:g} leaves no training samples")
        train = self.split("train")
        order = self.train_order or list(range(len(train)))
        keep = [train[i].index for i in order[:k]]
        samples = [s for s in self.samples if s.split != "train" or s.index in keep]
        position = {s.index: p for p, s in enumerate(x for x in samples if x.split == "train")}
        return replace(self, samples=samples, train_order=[position[i] for i in keep])


def make_corpus(cfg: CorpusConfig) -> Corpus:
    counts = cfg.split_counts()
    samples = []
    index = 0
    for split, n in zip(SPLITS, counts):
        for k in range(n):
            if split == "test_ood":
                kind = OOD_KIND
            else:
                # alternate so every split sees both seen kinds
                kind = SEEN_KINDS[k % 2]
            seed = int(np.random.SeedSequence([cfg.seed, index]).generate_state(1)[0])
            image, mask = synth_sample(kind, seed, cfg.size, cfg.render)
            samples.append(Sample(image, mask, kind, split, seed, index))
            index += 1
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7])).permutation(counts[0])
    return Corpus(samples, cfg.seed, [int(i) for i in order])


def read_coco_subset(path) -> list[dict]:
    """Read images and polygon annotations from a minimal COCO JSON file.

    Returns one ``{"id", "height", "width", "mask"}`` dict per image; the
    mask is the union of the image's rasterized polygons.
    """
    with open(path) as fh:
        doc = json.load(fh)
    try:
        images = {
            int(im["id"]): {"id": int(im["id"]), "height": int(im["height"]), "width": int(im["width"])}
            for im in doc["images"]
        }
        for im in images.values():
            im["mask"] = np.zeros((im["height"], im["width"]), dtype=np.uint8)
        for ann in doc.get("annotations", []):
            im = images[int(ann["image_id"])]
            for seg in ann["segmentation"]:
                poly = np.asarray(seg, dtype=np.float64).reshape(-1, 2)
                im["mask"] |= rasterize_polygon(poly, (im["height"], im["width"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed COCO subset ({exc!r})") from exc
    return [images[k] for k in sorted(images)]
