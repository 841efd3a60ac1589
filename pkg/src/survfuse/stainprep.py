"""Histology preprocessing: saturation-based tissue masking, non-overlapping
patch tiling, and stain normalization via the optical-density SVD method.

Images are height x width x 3 uint8 arrays throughout. Optical density is
OD = -log10((intensity + 1) / 256) per channel, so white sits at OD ~ 0 and
the transform never sees log(0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DegenerateInputError, DomainError, RankDeficiencyError, ShapeError
from .numerics import svd_thin

# keep rows whose every channel clears this optical-density floor
DEFAULT_BETA = 0.15
DEFAULT_ALPHA = 1.0
DEFAULT_SAT_THRESHOLD = 0.07
MIN_PROFILE_PIXELS = 1000

# second singular value at or below this fraction of the first means the
# OD cloud is effectively one-dimensional: one stain (or grayscale), no
# plane to find. Quantization noise alone sits well under this on real
# two-stain tissue and just under 1e-2 on single-stain constructions.
RANK_RATIO_FLOOR = 1e-2

PROFILE_KEYS = (
    "h_red", "h_green", "h_blue",
    "e_red", "e_green", "e_blue",
    "h_max_conc", "e_max_conc",
)


def as_rgb(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an h x w x 3 image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise DomainError(f"expected 8-bit intensities, got dtype {arr.dtype}")
    return arr


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_rgb(path, img):
    Image.fromarray(as_rgb(img), mode="RGB").save(path)


def optical_density(img) -> np.ndarray:
    """Per-channel OD of an 8-bit image; output shape matches input."""
    return -np.log10((np.asarray(img, dtype=np.float64) + 1.0) / 256.0)


def od_to_intensity(od) -> np.ndarray:
    """Inverse OD transform, clamped to valid 8-bit intensities."""
    raw = 256.0 * np.power(10.0, -np.asarray(od, dtype=np.float64)) - 1.0
    return np.clip(np.rint(raw), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# masking and tiling
# ---------------------------------------------------------------------------

def tissue_mask(img, sat_threshold: float = DEFAULT_SAT_THRESHOLD) -> np.ndarray:
    """Boolean tissue mask: HSV saturation strictly above the threshold.

    Saturation is (max - min) / max over the RGB channels, 0 for black.
    White background has saturation 0 and is always excluded; stained
    tissue is strongly chromatic and clears the default easily.
    """
    if not 0.0 <= sat_threshold <= 1.0:
        raise DomainError(f"tissue_mask: threshold {sat_threshold} outside [0, 1]")
    arr = as_rgb(img).astype(np.float64)
    cmax = arr.max(axis=2)
    cmin = arr.min(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        sat = np.where(cmax > 0, (cmax - cmin) / cmax, 0.0)
    return sat > sat_threshold


@dataclass
class PatchGrid:
    """Aligned non-overlapping tile origins, row-major."""

    patch_size: int
    origins: list

    def __len__(self):
        return len(self.origins)

    def slice(self, img, index: int) -> np.ndarray:
        r, c = self.origins[index]
        s = self.patch_size
        return as_rgb(img)[r:r + s, c:c + s]


def extract_patches(img, mask, patch_size: int = 224,
                    min_tissue_frac: float = 0.5) -> PatchGrid:
    """Grid of aligned patches whose tissue fraction clears the floor.

    Origins are multiples of patch_size, fully inside the image, visited
    row-major. An image smaller than one patch yields an empty grid.
    """
    if patch_size < 1:
        raise DomainError(f"extract_patches: patch_size {patch_size} < 1")
    if not 0.0 <= min_tissue_frac <= 1.0:
        raise DomainError(
            f"extract_patches: min_tissue_frac {min_tissue_frac} outside [0, 1]"
        )
    arr = as_rgb(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != arr.shape[:2]:
        raise ShapeError(
            f"extract_patches: mask {mask.shape} vs image {arr.shape[:2]}"
        )
    h, w = mask.shape
    area = patch_size * patch_size
    origins = []
    for r in range(0, h - patch_size + 1, patch_size):
        for c in range(0, w - patch_size + 1, patch_size):
            tile = mask[r:r + patch_size, c:c + patch_size]
            if tile.sum() >= min_tissue_frac * area:
                origins.append((r, c))
    return PatchGrid(patch_size, origins)


# ---------------------------------------------------------------------------
# stain profile estimation
# ---------------------------------------------------------------------------

@dataclass
class StainProfile:
    """Two unit optical-density stain vectors plus reference concentrations.

    stain_matrix holds the hematoxylin vector in column 0 and eosin in
    column 1; max_concentrations are the matching 99th-percentile
    concentrations used as the rescaling reference.
    """

    stain_matrix: np.ndarray
    max_concentrations: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.stain_matrix, dtype=np.float64)
        c = np.asarray(self.max_concentrations, dtype=np.float64).ravel()
        if m.shape != (3, 2):
            raise ShapeError(f"StainProfile: stain_matrix shape {m.shape}, want (3, 2)")
        if c.shape != (2,):
            raise ShapeError("StainProfile: need exactly 2 max concentrations")
        norms = np.linalg.norm(m, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise DomainError(f"StainProfile: column norms {norms} not unit")
        if (m < 0).any():
            raise DomainError("StainProfile: negative stain components")
        if not np.isfinite(c).all() or (c <= 0).any():
            raise DomainError("StainProfile: max concentrations must be positive")
        self.stain_matrix = m
        self.max_concentrations = c

    def to_json(self) -> str:
        m = self.stain_matrix
        vals = dict(zip(PROFILE_KEYS, (
            m[0, 0], m[1, 0], m[2, 0],
            m[0, 1], m[1, 1], m[2, 1],
            self.max_concentrations[0], self.max_concentrations[1],
        )))
        return json.dumps({k: float(v) for k, v in vals.items()},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StainProfile":
        data = json.loads(text)
        missing = [k for k in PROFILE_KEYS if k not in data]
        if missing:
            raise DomainError(f"stain profile missing keys: {missing}")
        extra = [k for k in data if k not in PROFILE_KEYS]
        if extra:
            raise DomainError(f"stain profile has unknown keys: {extra}")
        m = np.array([
            [data["h_red"], data["e_red"]],
            [data["h_green"], data["e_green"]],
            [data["h_blue"], data["e_blue"]],
        ])
        return cls(m, np.array([data["h_max_conc"], data["e_max_conc"]]))


def save_profile(path, profile: StainProfile):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(profile.to_json())
        fh.write("\n")


def load_profile(path) -> StainProfile:
    with open(path, encoding="utf-8") as fh:
        return StainProfile.from_json(fh.read())


def _unit_nonnegative(v: np.ndarray) -> np.ndarray:
    # stain vectors live in the nonnegative orthant; flip the arbitrary SVD
    # sign, then clamp the residual noise below zero and renormalize
    if v.sum() < 0:
        v = -v
    v = np.clip(v, 0.0, None)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise RankDeficiencyError("stain vector collapsed to zero after clamping")
    return v / norm


def estimate_stain_profile(img, mask=None, alpha: float = DEFAULT_ALPHA,
                           beta: float = DEFAULT_BETA) -> StainProfile:
    """Recover the two dominant stain vectors of an H&E image.

    Masked pixels are converted to OD, rows with any channel below beta are
    dropped, and the top-2 right singular vectors of the remaining cloud
    span the stain plane. Projected angles at the alpha and (100 - alpha)
    percentiles give the two extreme directions; the one with the larger
    blue component is labelled hematoxylin. Concentrations of every kept
    pixel against the pair give the 99th-percentile reference maxima.
    """
    arr = as_rgb(img)
    if mask is None:
        mask = np.ones(arr.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    od = optical_density(arr[mask])
    od = od[(od >= beta).all(axis=1)]
    if od.shape[0] < MIN_PROFILE_PIXELS:
        raise DegenerateInputError(
            f"estimate_stain_profile: {od.shape[0]} usable pixels, "
            f"need {MIN_PROFILE_PIXELS}"
        )

    _, s, vt = svd_thin(od)
    if s[1] <= RANK_RATIO_FLOOR * s[0]:
        raise RankDeficiencyError(
            f"estimate_stain_profile: OD cloud is rank-1 "
            f"(singular values {s[0]:.4g}, {s[1]:.4g})"
        )
    plane = vt[:2, :].T
    # orient the basis so projections land in a consistent half-plane
    for j in range(2):
        if plane[:, j].sum() < 0:
            plane[:, j] = -plane[:, j]
    coords = od @ plane
    angles = np.arctan2(coords[:, 1], coords[:, 0])
    lo, hi = np.percentile(angles, [alpha, 100.0 - alpha])
    v_lo = _unit_nonnegative(plane @ np.array([np.cos(lo), np.sin(lo)]))
    v_hi = _unit_nonnegative(plane @ np.array([np.cos(hi), np.sin(hi)]))

    # hematoxylin is the blue-dominant stain: larger blue-channel OD
    if v_lo[2] >= v_hi[2]:
        h_vec, e_vec = v_lo, v_hi
    else:
        h_vec, e_vec = v_hi, v_lo
    matrix = np.column_stack([h_vec, e_vec])

    conc, _, _, _ = np.linalg.lstsq(matrix, od.T, rcond=None)
    max_conc = np.percentile(conc, 99, axis=1)
    if (max_conc <= 0).any():
        raise DegenerateInputError(
            "estimate_stain_profile: nonpositive reference concentration"
        )
    return StainProfile(matrix, max_conc)


def normalize_patch(patch, source: StainProfile, target: StainProfile) -> np.ndarray:
    """Re-render a patch from source stain coordinates into target ones.

    Concentrations are solved by least squares against the source stain
    matrix, clamped at zero, rescaled by the ratio of target to source
    reference maxima, and pushed back through the target stain matrix.
    """
    arr = as_rgb(patch)
    od = optical_density(arr).reshape(-1, 3)
    conc, _, _, _ = np.linalg.lstsq(source.stain_matrix, od.T, rcond=None)
    conc = np.clip(conc, 0.0, None)
    scale = target.max_concentrations / source.max_concentrations
    od_out = target.stain_matrix @ (conc * scale[:, None])
    return od_to_intensity(od_out.T.reshape(arr.shape))
