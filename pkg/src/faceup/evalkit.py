"""Quality metrics (PSNR, windowed SSIM), landmark NRMSE, and model sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter

from .data import HR_SIZE, ImagePair, Landmarks, ToyDataset, degrade, random_mask
from .generator import ProgressiveGenerator

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5, i.e. an 11x11 window
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WIN = 11

MASK_BINS = {"m1": 16, "m2": 24, "m3": 32, "m4": 48, "m5": 64}
PRIOR_VARIANTS = ("baseline", "p-fp", "p+gt")


def _to_np(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    return np.asarray(img, dtype=np.float64)


def psnr(a, b) -> float:
    """10*log10(1/MSE) for [0,1]-ranged images, capped at +99 dB."""
    a, b = _to_np(a), _to_np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    args = dict(sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")
    ux = gaussian_filter(x, **args)
    uy = gaussian_filter(y, **args)
    uxx = gaussian_filter(x * x, **args)
    uyy = gaussian_filter(y * y, **args)
    uxy = gaussian_filter(x * y, **args)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    num = (2 * ux * uy + SSIM_C1) * (2 * vxy + SSIM_C2)
    den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2)
    s = num / den
    pad = (SSIM_WIN - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(a, b) -> float:
    """Channel-averaged windowed SSIM (11x11 Gaussian window, sigma 1.5)."""
    a, b = _to_np(a), _to_np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValueError(f"image side {a.shape[-2:]} smaller than the {SSIM_WIN}px window")
    return float(np.mean([_ssim_channel(a[c], b[c]) for c in range(a.shape[0])]))


def heatmap_peaks(maps, resolution: int = HR_SIZE) -> np.ndarray:
    """Per-map argmax coordinates [(x, y), ...] at the requested scale."""
    if isinstance(maps, np.ndarray):
        maps = torch.from_numpy(maps)
    if maps.dim() != 3:
        raise ValueError(f"expected [K, h, w] heatmaps, got {tuple(maps.shape)}")
    if maps.shape[-1] != resolution:
        maps = F.interpolate(
            maps.unsqueeze(0).float(), size=(resolution, resolution), mode="bilinear", align_corners=False
        ).squeeze(0)
    k, h, w = maps.shape
    flat_idx = maps.reshape(k, -1).argmax(dim=1).numpy()
    return np.stack([flat_idx % w, flat_idx // w], axis=1).astype(np.float64)


def landmark_nrmse(est_heatmaps, gt: Landmarks) -> float:
    """RMSE of argmax landmark positions, normalized by inter-ocular distance."""
    iod = gt.interocular_distance()
    if iod < 1.0:
        raise ValueError(f"degenerate inter-ocular distance {iod:.3f}px")
    peaks = heatmap_peaks(est_heatmaps)
    rmse = float(np.sqrt(np.mean(np.sum((peaks - gt.points) ** 2, axis=1))))
    return rmse / iod


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class EvalReport:
    variant: str
    n: int
    psnr_mean: float
    ssim_mean: float
    nrmse_mean: float
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "n": self.n,
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "nrmse_mean": self.nrmse_mean,
            "per_sample": self.per_sample,
        }


def _eval_one(gen: ProgressiveGenerator, lr: np.ndarray, pair: ImagePair, mode: str) -> dict:
    lr_t = torch.from_numpy(lr).unsqueeze(0)
    with torch.no_grad():
        if mode == "p-fp":
            out = gen(lr_t, bypass_priors=True)
        elif mode == "p+gt":
            out = gen.hallucinate_with_prior_override(lr_t, pair.landmarks, {1, 2, 3})
        else:
            out = gen(lr_t)
    final = out.final.squeeze(0)
    return {
        "id": pair.sample_id,
        "psnr": psnr(final, pair.hr_clean),
        "ssim": ssim(final, pair.hr_clean),
        "nrmse": landmark_nrmse(out.heatmaps[-1].squeeze(0), pair.landmarks),
    }


def evaluate_variant(gen: ProgressiveGenerator, dataset: ToyDataset, variant: str) -> EvalReport:
    rows = []
    for pair in dataset.pairs:
        if variant in PRIOR_VARIANTS:
            rows.append(_eval_one(gen, pair.lr_occluded, pair, variant))
        elif variant in MASK_BINS:
            side = MASK_BINS[variant]
            mask = random_mask(pair.landmarks, seed=pair.sample_id, side=side)
            lr = degrade(pair.hr_clean, mask)
            rows.append(_eval_one(gen, lr, pair, "baseline"))
        else:
            raise ValueError(f"unknown sweep variant {variant!r}")
    return EvalReport(
        variant=variant,
        n=len(rows),
        psnr_mean=float(np.mean([r["psnr"] for r in rows])) if rows else 0.0,
        ssim_mean=float(np.mean([r["ssim"] for r in rows])) if rows else 0.0,
        nrmse_mean=float(np.mean([r["nrmse"] for r in rows])) if rows else 0.0,
        per_sample=rows,
    )


def ablation_sweep(gen: ProgressiveGenerator, dataset: ToyDataset, variants: list[str]) -> list[EvalReport]:
    return [evaluate_variant(gen, dataset, v) for v in variants]
