"""Toy face dataset: procedural rendering, occlusion masks, degradation, heatmaps.

Images are float32 arrays [3, H, W] with values in [0, 1], H == W in
{16, 32, 64, 128}. Landmarks are (x, y) pixel coordinates at the 128x128
scale, x rightward, y downward, integer coordinates meaning pixel centers.

The 17-point landmark layout (0-indexed):

    0-3    left eye: outer corner, top, inner corner, bottom
    4-7    right eye: inner corner, top, outer corner, bottom
    8-10   nose: left nostril, tip, right nostril
    11-14  mouth: left corner, top center, right corner, bottom center
    15-16  brow midpoints: left, right

Eye centers (for the inter-ocular distance) are the centroids of the two
eye quadruples 0:4 and 4:8.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

HR_SIZE = 128
LR_SIZE = 16
SCALE = HR_SIZE // LR_SIZE
LANDMARK_COUNT = 17
MASK_SIDE_MIN = 16
MASK_SIDE_MAX = 64
OCCLUSION_FILL = 0.5
BASE_HEATMAP_SIGMA = 1.5  # at 16x16, scaled proportionally with resolution

VALID_RESOLUTIONS = (16, 32, 64, 128)

MANIFEST_NAME = "manifest.json"
DATASET_VERSION = 1


class MaskPlacementError(RuntimeError):
    """No mask position can intersect any in-frame facial component."""


@dataclass
class Landmarks:
    """K landmark points in HR (128-scale) pixel coordinates."""

    points: np.ndarray  # [K, 2] float64, columns (x, y)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"landmarks must be [K, 2], got {self.points.shape}")

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def out_of_frame(self, resolution: int = HR_SIZE) -> np.ndarray:
        """Boolean flags for points outside [0, resolution) at HR scale."""
        scale = resolution / HR_SIZE
        p = self.points * scale
        return (p < 0).any(axis=1) | (p >= resolution).any(axis=1)

    def eye_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points[0:4].mean(axis=0), self.points[4:8].mean(axis=0)

    def interocular_distance(self) -> float:
        left, right = self.eye_centers()
        return float(np.linalg.norm(right - left))


@dataclass
class Mask:
    """Square occlusion mask in HR coordinates; 1 = occluded."""

    bits: np.ndarray  # [H, W] uint8
    box: tuple[int, int, int, int] | None  # (x, y, w, h); None for the empty mask

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    @property
    def is_empty(self) -> bool:
        return self.box is None

    @staticmethod
    def empty(size: int = HR_SIZE) -> "Mask":
        return Mask(bits=np.zeros((size, size), dtype=np.uint8), box=None)


@dataclass
class ImagePair:
    """One training/eval sample: occluded LR input plus clean HR target."""

    lr_occluded: np.ndarray  # [3, 16, 16] float32
    hr_clean: np.ndarray  # [3, 128, 128] float32
    mask: Mask
    landmarks: Landmarks
    sample_id: int


@dataclass
class ToyDataset:
    root: Path
    seed: int
    pairs: list[ImagePair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def quantize(img: np.ndarray) -> np.ndarray:
    """[0,1] float image -> 8-bit, the exact on-disk representation."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float64) / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Procedural face rendering


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _ellipse_alpha(lx, ly, cx, cy, rx, ry, edge=0.10):
    """Soft-edged ellipse coverage in face-local coordinates."""
    e = ((lx - cx) / rx) ** 2 + ((ly - cy) / ry) ** 2
    return np.clip((1.0 + edge - e) / (2.0 * edge), 0.0, 1.0)


def _paint(img, alpha, color):
    img += alpha[None, :, :] * (np.asarray(color)[:, None, None] - img)


def make_toy_face(seed: int, pose_jitter: float = 1.0) -> tuple[np.ndarray, Landmarks]:
    """Render one synthetic face and the exact landmark coordinates.

    The layout is bilaterally symmetric in face-local coordinates; pose
    (rotation/scale/translation), colors and proportions are drawn from
    the seed. pose_jitter=0 pins the face to the canonical centered pose.

    Shape edges are sharp and the faces carry fine structure (hat band,
    freckles, stripe shading, patterned backdrop) that an 8x downsample
    destroys, so upsampling back is a genuine hallucination problem.
    """
    rng = np.random.default_rng(seed)

    # colors (kept inside [0.05, 0.95] so the generator's output clamp
    # never has to saturate to reproduce them)
    base = rng.uniform(0.55, 0.85)
    skin = np.clip([base, base * rng.uniform(0.78, 0.92), base * rng.uniform(0.6, 0.8)], 0.05, 0.95)
    bg_top = rng.uniform(0.1, 0.9, 3)
    bg_bot = rng.uniform(0.1, 0.9, 3)
    iris = rng.uniform(0.08, 0.55, 3)
    sclera = np.clip(skin + rng.uniform(0.1, 0.2), 0.05, 0.95)
    lips = np.clip([rng.uniform(0.5, 0.8), rng.uniform(0.15, 0.4), rng.uniform(0.2, 0.45)], 0.05, 0.95)
    brow_color = skin * rng.uniform(0.3, 0.55)
    nose_shade = skin * rng.uniform(0.75, 0.9)
    hat_color = rng.uniform(0.08, 0.45, 3)

    # pose
    theta = rng.uniform(-0.18, 0.18) * pose_jitter
    s = 1.0 + rng.uniform(-0.12, 0.08) * pose_jitter
    cx = 64.0 + rng.uniform(-5.0, 5.0) * pose_jitter
    cy = 66.0 + rng.uniform(-5.0, 5.0) * pose_jitter

    # proportions
    head_rx = 38.0 * s * rng.uniform(0.92, 1.08)
    head_ry = 48.0 * s * rng.uniform(0.95, 1.05)
    eye_dx = 17.0 * s * rng.uniform(0.9, 1.1)
    eye_y = -11.0 * s
    eye_rx = 6.5 * s * rng.uniform(0.85, 1.1)
    eye_ry = 4.0 * s * rng.uniform(0.8, 1.15)
    iris_r = 2.4 * s
    brow_y = -20.0 * s
    brow_rx = 7.5 * s
    brow_ry = 1.6 * s
    nostril_dx = 4.5 * s * rng.uniform(0.85, 1.1)
    nostril_y = 7.0 * s
    nose_tip_y = 9.0 * s
    mouth_y = 22.0 * s
    mouth_rx = 9.0 * s * rng.uniform(0.8, 1.15)
    mouth_ry = 3.5 * s * rng.uniform(0.75, 1.2)

    ys, xs = np.mgrid[0:HR_SIZE, 0:HR_SIZE].astype(np.float64)
    ct, st = np.cos(theta), np.sin(theta)
    lx = ct * (xs - cx) + st * (ys - cy)
    ly = -st * (xs - cx) + ct * (ys - cy)

    t = ys / (HR_SIZE - 1.0)
    img = bg_top[:, None, None] * (1.0 - t)[None] + bg_bot[:, None, None] * t[None]
    # mid-frequency backdrop stripes: heavily attenuated at 16x16 but
    # still traceable, so upsampling has to re-amplify them
    bg_angle = rng.uniform(0.0, np.pi)
    bg_period = rng.uniform(16.0, 26.0)
    bg_phase = rng.uniform(0.0, 2 * np.pi)
    weave = np.cos(2 * np.pi * (xs * np.cos(bg_angle) + ys * np.sin(bg_angle)) / bg_period + bg_phase)
    img += (rng.uniform(0.08, 0.14) * np.sign(weave) * np.abs(weave) ** 0.5)[None]
    img = np.clip(img, 0.05, 0.95)

    head_alpha = _ellipse_alpha(lx, ly, 0, 0, head_rx, head_ry, edge=0.02)
    _paint(img, head_alpha, skin)
    # vertical stripe shading across the face, symmetric in local x
    stripe_period = rng.uniform(18.0, 26.0)
    stripes = np.cos(2 * np.pi * lx / stripe_period)
    img += (head_alpha * rng.uniform(0.05, 0.09) * stripes)[None] * skin[:, None, None]

    # hat band across the forehead with hard edges
    band_top = -34.0 * s
    band_bot = -26.0 * s
    band_alpha = np.clip((ly - band_top) / 0.7, 0, 1) * np.clip((band_bot - ly) / 0.7, 0, 1)
    _paint(img, band_alpha * _ellipse_alpha(lx, ly, 0, 0, head_rx * 1.02, head_ry * 1.02, edge=0.04), hat_color)

    for side in (-1.0, 1.0):
        _paint(img, _ellipse_alpha(lx, ly, side * eye_dx, brow_y, brow_rx, brow_ry, edge=0.12), brow_color)
        _paint(img, _ellipse_alpha(lx, ly, side * eye_dx, eye_y, eye_rx, eye_ry, edge=0.05), sclera)
        _paint(img, _ellipse_alpha(lx, ly, side * eye_dx, eye_y, iris_r, iris_r, edge=0.1), iris)
    # nose: shaded wedge plus nostril dots
    _paint(img, _ellipse_alpha(lx, ly, 0, (nostril_y - 6.0 * s) / 2.0, 2.6 * s, 8.0 * s, edge=0.2), nose_shade)
    for side in (-1.0, 1.0):
        _paint(img, _ellipse_alpha(lx, ly, side * nostril_dx, nostril_y, 1.4 * s, 1.1 * s, edge=0.2), nose_shade * 0.7)
    _paint(img, _ellipse_alpha(lx, ly, 0, mouth_y, mouth_rx, mouth_ry, edge=0.06), lips)

    # mirrored freckle dots on the cheeks, large enough to leave an LR trace
    freckle = skin * rng.uniform(0.45, 0.6)
    for _ in range(3):
        fx_off = rng.uniform(10.0, 24.0) * s
        fy_off = rng.uniform(4.0, 18.0) * s
        fr = rng.uniform(3.5, 5.5) * s
        for side in (-1.0, 1.0):
            _paint(img, _ellipse_alpha(lx, ly, side * fx_off, fy_off, fr, fr, edge=0.1), freckle)

    img = np.clip(img, 0.05, 0.95).astype(np.float32)

    local = np.array(
        [
            [-eye_dx - eye_rx, eye_y],
            [-eye_dx, eye_y - eye_ry],
            [-eye_dx + eye_rx, eye_y],
            [-eye_dx, eye_y + eye_ry],
            [eye_dx - eye_rx, eye_y],
            [eye_dx, eye_y - eye_ry],
            [eye_dx + eye_rx, eye_y],
            [eye_dx, eye_y + eye_ry],
            [-nostril_dx, nostril_y],
            [0.0, nose_tip_y],
            [nostril_dx, nostril_y],
            [-mouth_rx, mouth_y],
            [0.0, mouth_y - mouth_ry],
            [mouth_rx, mouth_y],
            [0.0, mouth_y + mouth_ry],
            [-eye_dx, brow_y],
            [eye_dx, brow_y],
        ]
    )
    points = local @ _rot(theta).T + np.array([cx, cy])
    return img, Landmarks(points=points)


# ---------------------------------------------------------------------------
# Occlusion masks


def component_boxes(landmarks: Landmarks) -> list[tuple[int, int, int, int]]:
    """Half-open bounding boxes (x0, y0, x1, y1) of eyes, nose and mouth."""
    groups = [slice(0, 4), slice(4, 8), slice(8, 11), slice(11, 15)]
    boxes = []
    for g in groups:
        pts = landmarks.points[g]
        x0 = int(np.floor(pts[:, 0].min()))
        y0 = int(np.floor(pts[:, 1].min()))
        x1 = int(np.ceil(pts[:, 0].max())) + 1
        y1 = int(np.ceil(pts[:, 1].max())) + 1
        boxes.append((x0, y0, x1, y1))
    return boxes


def _intersects(x: int, y: int, side: int, box: tuple[int, int, int, int]) -> bool:
    x0, y0, x1, y1 = box
    return x < x1 and x0 < x + side and y < y1 and y0 < y + side


def random_mask(landmarks: Landmarks, seed: int, side: int | None = None) -> Mask:
    """Square mask, side uniform in {16..64}, intersecting a facial component."""
    rng = np.random.default_rng(seed)
    if side is None:
        side = int(rng.integers(MASK_SIDE_MIN, MASK_SIDE_MAX + 1))
    if not MASK_SIDE_MIN <= side <= MASK_SIDE_MAX:
        raise ValueError(f"mask side {side} outside [{MASK_SIDE_MIN}, {MASK_SIDE_MAX}]")

    boxes = [b for b in component_boxes(landmarks) if b[0] < HR_SIZE and b[2] > 0 and b[1] < HR_SIZE and b[3] > 0]
    if not boxes:
        raise MaskPlacementError("all facial components lie outside the frame")

    hi = HR_SIZE - side
    x = y = -1
    for _ in range(200):
        tx = int(rng.integers(0, hi + 1))
        ty = int(rng.integers(0, hi + 1))
        if any(_intersects(tx, ty, side, b) for b in boxes):
            x, y = tx, ty
            break
    if x < 0:
        # constructive fallback: place the box over one component
        order = rng.permutation(len(boxes))
        for i in order:
            bx0, by0, bx1, by1 = boxes[i]
            xlo, xhi = max(0, bx0 - side + 1), min(hi, bx1 - 1)
            ylo, yhi = max(0, by0 - side + 1), min(hi, by1 - 1)
            if xlo <= xhi and ylo <= yhi:
                x = int(rng.integers(xlo, xhi + 1))
                y = int(rng.integers(ylo, yhi + 1))
                break
        else:
            raise MaskPlacementError("no valid mask placement exists; landmarks corrupt?")

    bits = np.zeros((HR_SIZE, HR_SIZE), dtype=np.uint8)
    bits[y : y + side, x : x + side] = 1
    return Mask(bits=bits, box=(x, y, side, side))


# ---------------------------------------------------------------------------
# Degradation


def apply_mask(img: np.ndarray, mask: Mask, fill: float = OCCLUSION_FILL) -> np.ndarray:
    out = img.copy()
    out[:, mask.bits.astype(bool)] = fill
    return out


def area_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image side {h} not divisible by {factor}")
    return img.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def degrade(hr: np.ndarray, mask: Mask) -> np.ndarray:
    """Occlude with the fixed mid-gray fill, then 8x area-average downsample."""
    if hr.shape != (3, HR_SIZE, HR_SIZE):
        raise ValueError(f"expected [3, {HR_SIZE}, {HR_SIZE}] HR image, got {hr.shape}")
    return area_downsample(apply_mask(hr, mask), SCALE).astype(np.float32)


# ---------------------------------------------------------------------------
# Landmark heatmaps


def heatmap_sigma(resolution: int) -> float:
    return BASE_HEATMAP_SIGMA * resolution / 16.0


def render_heatmaps(landmarks: Landmarks, resolution: int, sigma: float | None = None) -> np.ndarray:
    """[K, r, r] unnormalized Gaussians, peak 1.0 at the scaled landmark pixel.

    The peak is snapped to the nearest pixel so the in-frame maximum is
    exactly 1.0; points that scale outside the frame render all-zero maps.
    """
    if resolution not in VALID_RESOLUTIONS:
        raise ValueError(f"resolution {resolution} not in {VALID_RESOLUTIONS}")
    if sigma is None:
        sigma = heatmap_sigma(resolution)
    if sigma <= 0:
        raise ValueError("sigma must be positive")

    scale = resolution / HR_SIZE
    ys, xs = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    maps = np.zeros((landmarks.count, resolution, resolution), dtype=np.float32)
    for k, (px, py) in enumerate(landmarks.points):
        qx = int(np.rint(px * scale))
        qy = int(np.rint(py * scale))
        # points on the right/bottom frame edge still round into the frame
        if 0 <= px < HR_SIZE and qx == resolution:
            qx = resolution - 1
        if 0 <= py < HR_SIZE and qy == resolution:
            qy = resolution - 1
        if not (0 <= qx < resolution and 0 <= qy < resolution):
            continue
        maps[k] = np.exp(-((xs - qx) ** 2 + (ys - qy) ** 2) / (2.0 * sigma**2))
    return maps


# ---------------------------------------------------------------------------
# Dataset build / load


def _save_png(path: Path, arr_u8: np.ndarray) -> None:
    if arr_u8.ndim == 3:
        PILImage.fromarray(arr_u8.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        PILImage.fromarray(arr_u8, mode="L").save(path)


def _load_png(path: Path) -> np.ndarray:
    arr = np.asarray(PILImage.open(path))
    if arr.ndim == 3:
        return arr.transpose(2, 0, 1)
    return arr


def _sample_seeds(seed: int, sample_id: int) -> tuple[int, int]:
    face_s, mask_s = np.random.SeedSequence((seed, sample_id)).generate_state(2)
    return int(face_s), int(mask_s)


def _make_pair(seed: int, sample_id: int, occluded: bool = True, mask_side: int | None = None) -> ImagePair:
    face_seed, mask_seed = _sample_seeds(seed, sample_id)
    hr_f, landmarks = make_toy_face(face_seed)
    hr = dequantize(quantize(hr_f))  # round-trip through the stored 8-bit form
    mask = random_mask(landmarks, mask_seed, side=mask_side) if occluded else Mask.empty()
    lr = dequantize(quantize(degrade(hr, mask)))
    return ImagePair(lr_occluded=lr, hr_clean=hr, mask=mask, landmarks=landmarks, sample_id=sample_id)


def _rot90_points(points: np.ndarray, k: int, size: int = HR_SIZE) -> np.ndarray:
    p = points.copy()
    for _ in range(k % 4):
        p = np.stack([p[:, 1], size - 1 - p[:, 0]], axis=1)
    return p


def _flip_points(points: np.ndarray, size: int = HR_SIZE) -> np.ndarray:
    return np.stack([size - 1 - points[:, 0], points[:, 1]], axis=1)


def _augment_variants(hr: np.ndarray, landmarks: Landmarks):
    """Rotations by 90/180/270 degrees plus horizontal flips of each rotation."""
    for k in range(4):
        for flip in (False, True):
            if k == 0 and not flip:
                continue
            img = np.rot90(hr, k=k, axes=(1, 2))
            pts = _rot90_points(landmarks.points, k)
            if flip:
                img = img[:, :, ::-1]
                pts = _flip_points(pts)
            yield np.ascontiguousarray(img), Landmarks(points=pts)


def build_dataset(
    n: int,
    seed: int,
    out_dir: str | Path,
    augment: bool = False,
    occluded: bool = True,
    mask_side: int | None = None,
) -> ToyDataset:
    """Generate n base samples (x8 when augment=True) and persist them.

    Layout: manifest.json plus pairs/{id:06d}/{hr,lr,mask}.png and
    landmarks.csv. The whole build is a pure function of (n, seed, flags).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Path(out_dir)
    (root / "pairs").mkdir(parents=True, exist_ok=True)

    pairs: list[ImagePair] = []
    next_id = 0
    for i in range(n):
        base = _make_pair(seed, i, occluded=occluded, mask_side=mask_side)
        base.sample_id = next_id
        pairs.append(base)
        next_id += 1
        if augment:
            _, mask_seed = _sample_seeds(seed, i)
            for j, (img, lm) in enumerate(_augment_variants(base.hr_clean, base.landmarks)):
                mask = random_mask(lm, mask_seed + j + 1, side=mask_side) if occluded else Mask.empty()
                lr = dequantize(quantize(degrade(img, mask)))
                pairs.append(ImagePair(lr_occluded=lr, hr_clean=img, mask=mask, landmarks=lm, sample_id=next_id))
                next_id += 1

    sides = []
    for p in pairs:
        pdir = root / "pairs" / f"{p.sample_id:06d}"
        pdir.mkdir(parents=True, exist_ok=True)
        _save_png(pdir / "hr.png", quantize(p.hr_clean))
        _save_png(pdir / "lr.png", quantize(p.lr_occluded))
        _save_png(pdir / "mask.png", p.mask.bits * np.uint8(255))
        with open(pdir / "landmarks.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "x", "y"])
            for k, (x, y) in enumerate(p.landmarks.points):
                w.writerow([k, repr(float(x)), repr(float(y))])
        if p.mask.box is not None:
            sides.append(p.mask.box[2])

    manifest = {
        "version": DATASET_VERSION,
        "seed": seed,
        "n": len(pairs),
        "landmark_count": LANDMARK_COUNT,
        "augmented": augment,
        "occluded": occluded,
        "mask_sides": sides,
    }
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")

    return ToyDataset(root=root, seed=seed, pairs=pairs)


def _box_from_bits(bits: np.ndarray) -> tuple[int, int, int, int] | None:
    ys, xs = np.nonzero(bits)
    if ys.size == 0:
        return None
    x0, y0 = int(xs.min()), int(ys.min())
    return (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)


def load_dataset(root: str | Path) -> ToyDataset:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)

    pairs = []
    for pdir in sorted((root / "pairs").iterdir()):
        sample_id = int(pdir.name)
        hr = dequantize(_load_png(pdir / "hr.png"))
        lr = dequantize(_load_png(pdir / "lr.png"))
        bits = (_load_png(pdir / "mask.png") > 127).astype(np.uint8)
        points = []
        with open(pdir / "landmarks.csv", newline="") as f:
            for row in csv.DictReader(f):
                points.append((float(row["x"]), float(row["y"])))
        pairs.append(
            ImagePair(
                lr_occluded=lr,
                hr_clean=hr,
                mask=Mask(bits=bits, box=_box_from_bits(bits)),
                landmarks=Landmarks(points=np.array(points)),
                sample_id=sample_id,
            )
        )
    return ToyDataset(root=root, seed=manifest["seed"], pairs=pairs)


def verify_pair(pair: ImagePair) -> bool:
    """Reconstruction consistency: stored LR equals degrade(HR, mask) bit-exactly."""
    return np.array_equal(quantize(degrade(pair.hr_clean, pair.mask)), quantize(pair.lr_occluded))
