"""Synthetic severity images, directory datasets, stratified splits and augmentation.

A synthetic image shows two textured bands separated by a bright gap. Higher
grades narrow the gap, roughen its edges and move texture energy to higher
spatial frequencies, so the grade is recoverable from the pixels alone.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .evidential import N_GRADES

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass
class SynthSpec:
    size: int = 224
    gap0: float = 44.0
    gap_step: float = 8.0
    roughness0: float = 0.5
    roughness_step: float = 0.75
    texture_freq0: float = 0.04
    texture_freq_step: float = 0.025
    texture_amp: float = 0.05
    noise: float = 0.02
    gap_jitter: float = 1.5
    label_noise: float = 0.0
    seed: int = 0

    @classmethod
    def for_size(cls, size: int, **overrides) -> "SynthSpec":
        """Defaults with the pixel geometry (gap, step, jitter, roughness) scaled from 224 px to ``size``."""
        f = size / 224.0
        geom = {
            "gap0": 44.0 * f,
            "gap_step": 8.0 * f,
            "gap_jitter": 1.5 * f,
            "roughness0": 0.5 * f,
            "roughness_step": 0.75 * f,
        }
        geom.update(overrides)
        return cls(size=size, **geom)

    def gap(self, grade: int) -> float:
        return self.gap0 - grade * self.gap_step

    def roughness(self, grade: int) -> float:
        return self.roughness0 + grade * self.roughness_step

    def texture_freq(self, grade: int) -> float:
        return self.texture_freq0 + grade * self.texture_freq_step

    def validate(self) -> None:
        if self.gap(N_GRADES - 1) - self.gap_jitter < 1.0:
            raise ValueError(f"grade-{N_GRADES - 1} gap {self.gap(N_GRADES - 1)} px leaves < 1 px after jitter")
        if self.gap_step <= 0:
            raise ValueError("gap must strictly decrease with grade")
        if self.gap0 + self.gap_jitter + 2 * self.roughness(N_GRADES - 1) >= 0.5 * self.size:
            raise ValueError(f"gap {self.gap0} px does not fit in a {self.size} px image")


@dataclass
class LabeledSample:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    label: float
    id: str
    subject: str | None = None
    meta: dict = field(default_factory=dict)


def _smooth_profile(rng: np.random.Generator, width: int, amplitude: float) -> np.ndarray:
    x = np.arange(width) / width
    prof = np.zeros(width)
    for harmonic in (2, 3, 5, 8):
        prof += rng.uniform(-1, 1) * np.sin(2 * np.pi * harmonic * x + rng.uniform(0, 2 * np.pi))
    return amplitude * prof / 2.0


def _band_texture(rng: np.random.Generator, size: int, freq: float, amp: float) -> np.ndarray:
    spec = np.fft.rfft2(rng.standard_normal((size, size)))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    spec *= np.exp(-0.5 * ((radius - freq) / 0.01) ** 2)
    tex = np.fft.irfft2(spec, s=(size, size))
    return amp * tex / (tex.std() + 1e-12)


def generate(spec: SynthSpec, index: int) -> LabeledSample:
    """Deterministic in (spec.seed, index)."""
    spec.validate()
    if index < 0:
        raise ValueError("index must be >= 0")
    rng = np.random.default_rng([spec.seed, 0, index])
    S = spec.size
    grade = int(rng.integers(0, N_GRADES))
    label = grade
    if spec.label_noise > 0 and rng.random() < spec.label_noise:
        label = int(np.clip(grade + rng.choice((-1, 1)), 0, N_GRADES - 1))

    gap = spec.gap(grade) + rng.uniform(-spec.gap_jitter, spec.gap_jitter)
    center = rng.uniform(0.4, 0.6) * S
    rough = spec.roughness(grade)
    top = center - gap / 2 + _smooth_profile(rng, S, rough)
    bot = center + gap / 2 + _smooth_profile(rng, S, rough)
    bot = np.maximum(bot, top + 1.0)

    rows = np.arange(S)[:, None].astype(np.float64)
    # fraction of each pixel row [y, y+1) lying inside the gap
    coverage = np.clip(np.minimum(rows + 1, bot[None, :]) - np.maximum(rows, top[None, :]), 0.0, 1.0)

    bone_level = rng.uniform(0.30, 0.36)
    gap_level = rng.uniform(0.80, 0.86)
    bone = bone_level + _band_texture(rng, S, spec.texture_freq(grade), spec.texture_amp)
    img = bone + (gap_level - bone) * coverage
    img += spec.noise * rng.standard_normal((S, S))
    img8 = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    return LabeledSample(
        image=(img8.astype(np.float32) / 255.0)[None],
        label=float(label),
        id=f"img_{index}",
        meta={"grade": grade, "clean_grade": grade, "noisy_grade": label, "gap_px": float(np.mean(bot - top))},
    )


def generate_arrays(spec: SynthSpec, indices) -> tuple[np.ndarray, np.ndarray]:
    samples = [generate(spec, int(i)) for i in indices]
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples])


def measure_gap(image: np.ndarray) -> float:
    """Gap width in pixels from the row profile, thresholded halfway between bands and gap."""
    img = image.mean(axis=0) if image.ndim == 3 else image
    profile = img.mean(axis=1)
    lo, hi = np.median(profile), profile.max()
    above = profile - 0.5 * (lo + hi)
    peak = int(np.argmax(profile))
    start = peak
    while start > 0 and above[start - 1] > 0:
        start -= 1
    end = peak
    while end < len(profile) - 1 and above[end + 1] > 0:
        end += 1
    # sub-pixel crossings by linear interpolation on either side
    left = start - (above[start] / (above[start] - above[start - 1]) if start > 0 else 0.0)
    right = end + (above[end] / (above[end] - above[end + 1]) if end < len(profile) - 1 else 0.0)
    return float(right - left)


def oracle_grade(image: np.ndarray, spec: SynthSpec) -> int:
    """Hand-coded estimator: invert the gap-width law."""
    g = measure_gap(image)
    return int(np.clip(np.round((spec.gap0 - g) / spec.gap_step), 0, N_GRADES - 1))


def write_synthetic(out: Path, spec: SynthSpec, n: int) -> list[dict]:
    out = Path(out)
    for g in range(N_GRADES):
        (out / str(g)).mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        s = generate(spec, i)
        label = int(s.label)
        Image.fromarray(np.round(s.image[0] * 255).astype(np.uint8), mode="L").save(out / str(label) / f"img_{i}.png")
        rows.append(
            {
                "id": f"img_{i}",
                "grade": label,
                "clean_grade": s.meta["clean_grade"],
                "gap_px": f"{s.meta['gap_px']:.4f}",
                "seed": spec.seed,
            }
        )
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["id", "grade", "clean_grade", "gap_px", "seed"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


def _decode(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "LA", "I", "I;16", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
                return np.repeat(arr[None], 3, axis=0)
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            return arr.transpose(2, 0, 1).copy()
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc


def load_directory_dataset(root) -> list[LabeledSample]:
    """Samples from ``root/<grade>/<image>``; grade directories are "0".."4"."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    subjects: dict[str, str] = {}
    manifest = root / "manifest.csv"
    if manifest.exists():
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                if row.get("subject"):
                    subjects[row["id"]] = row["subject"]
    samples = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name not in {str(g) for g in range(N_GRADES)}:
            log.warning("skipping unknown subdirectory %s", sub)
            continue
        for path in sorted(p for p in sub.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
            samples.append(LabeledSample(_decode(path), float(sub.name), path.stem, subjects.get(path.stem)))
    if not samples:
        log.warning("no images found under %s", root)
    return samples


def split(dataset: list[LabeledSample], fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Grade-stratified, subject-grouped, deterministic split into len(fractions) parts."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9) or np.any(fractions < 0):
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions.tolist()}")
    rng = np.random.default_rng([seed, 2])
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(dataset):
        groups.setdefault(s.subject if s.subject is not None else f"__sample_{i}", []).append(i)
    by_grade: dict[int, list[list[int]]] = {}
    for members in groups.values():
        grades = [int(round(dataset[i].label)) for i in members]
        by_grade.setdefault(max(set(grades), key=grades.count), []).append(members)

    n_parts = int(np.count_nonzero(fractions))
    parts: list[list[int]] = [[] for _ in fractions]
    for grade in sorted(by_grade):
        units = by_grade[grade]
        n_grade = sum(len(u) for u in units)
        if n_grade < n_parts:
            raise ValueError(f"grade {grade} has {n_grade} samples, fewer than the {n_parts} splits")
        order = rng.permutation(len(units))
        target = fractions * n_grade
        taken = np.zeros(len(fractions))
        for u in order:
            s = int(np.argmax(target - taken))
            parts[s].extend(units[u])
            taken[s] += len(units[u])
    return tuple([dataset[i] for i in sorted(p)] for p in parts)


@dataclass
class AugmentConfig:
    affine_p: float = 0.5
    rotate_deg: float = 10.0
    translate: float = 0.05
    jitter_p: float = 0.5
    brightness: float = 0.1
    contrast: float = 0.1
    erasing_p: float = 0.25
    erasing_area: tuple[float, float] = (0.02, 0.2)


def random_affine(image: np.ndarray, rng: np.random.Generator, rotate_deg: float, translate: float) -> np.ndarray:
    C, H, W = image.shape
    theta = math.radians(rng.uniform(-rotate_deg, rotate_deg))
    shift = rng.uniform(-translate, translate, size=2) * np.array([H, W])
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    centre = np.array([(H - 1) / 2, (W - 1) / 2])
    offset = centre - rot @ (centre + shift)
    return np.stack(
        [ndimage.affine_transform(ch, rot, offset=offset, order=1, mode="nearest") for ch in image]
    ).astype(image.dtype)


def random_erase(image: np.ndarray, rng: np.random.Generator, area=(0.02, 0.2)) -> np.ndarray:
    C, H, W = image.shape
    out = image.copy()
    for _ in range(20):
        target = rng.uniform(*area) * H * W
        aspect = math.exp(rng.uniform(math.log(0.3), math.log(1 / 0.3)))
        h = int(round(math.sqrt(target * aspect)))
        w = int(round(math.sqrt(target / aspect)))
        if 0 < h <= H and 0 < w <= W and area[0] <= h * w / (H * W) <= area[1]:
            y0 = int(rng.integers(0, H - h + 1))
            x0 = int(rng.integers(0, W - w + 1))
            out[:, y0 : y0 + h, x0 : x0 + w] = rng.random((C, h, w))
            return out
    return out


def augment(sample, config: AugmentConfig, rng: np.random.Generator):
    """Train-time augmentation of one image (or a LabeledSample); labels are untouched."""
    is_sample = isinstance(sample, LabeledSample)
    img = sample.image if is_sample else sample
    out = img
    if config.affine_p > 0 and rng.random() < config.affine_p:
        out = random_affine(out, rng, config.rotate_deg, config.translate)
    if config.jitter_p > 0 and rng.random() < config.jitter_p:
        b = 1 + rng.uniform(-config.brightness, config.brightness)
        c = 1 + rng.uniform(-config.contrast, config.contrast)
        out = out * b
        m = out.mean()
        out = np.clip((out - m) * c + m, 0.0, 1.0).astype(img.dtype)
    if config.erasing_p > 0 and rng.random() < config.erasing_p:
        out = random_erase(out, rng, config.erasing_area)
    if is_sample:
        return LabeledSample(out, sample.label, sample.id, sample.subject, dict(sample.meta))
    return out
