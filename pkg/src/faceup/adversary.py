"""Local and global discriminators plus mask-driven region cropping.

The local discriminator judges the reconstructed occluded region only
(cropped from the mask's HR bounding box, resampled to 64x64); the global
discriminator judges the whole 128x128 face. Both end in a logistic head
whose output is clamped strictly inside (0, 1) so downstream logs stay
finite.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .data import HR_SIZE, Mask

CROP_SIZE = 64
SCORE_EPS = 1e-7


def crop_occluded_region(image: torch.Tensor, mask: Mask) -> torch.Tensor:
    """Crop the mask's HR bounding box and bilinearly resample to 64x64.

    Differentiable in the image, so generator gradients flow through the
    local-adversarial path. Raises on an empty mask: the local
    discriminator is inapplicable and callers skip local terms instead.
    """
    if mask.is_empty:
        raise ValueError("cannot crop the occluded region of an empty mask")
    squeeze = image.dim() == 3
    if squeeze:
        image = image.unsqueeze(0)
    if image.shape[-3:] != (3, HR_SIZE, HR_SIZE):
        raise ValueError(f"expected [3, {HR_SIZE}, {HR_SIZE}] image, got {tuple(image.shape)}")
    x, y, w, h = mask.box
    crop = image[..., y : y + h, x : x + w]
    if (h, w) != (CROP_SIZE, CROP_SIZE):
        crop = F.interpolate(crop, size=(CROP_SIZE, CROP_SIZE), mode="bilinear", align_corners=False)
    return crop.squeeze(0) if squeeze else crop


def crop_batch(images: torch.Tensor, masks: list[Mask]) -> torch.Tensor:
    crops = [crop_occluded_region(img, m) for img, m in zip(images, masks)]
    return torch.stack(crops, dim=0)


class _ConvClassifier(nn.Module):
    """4 strided conv layers and a logistic head.

    The head starts zeroed: scores open at exactly 0.5 and adversarial
    gradients ramp up only once the classifier has learned something.
    """

    def __init__(self, input_size: int):
        super().__init__()
        self.input_size = input_size
        widths = (16, 32, 64, 128)
        layers: list[nn.Module] = []
        in_ch = 3
        for w in widths:
            layers += [nn.Conv2d(in_ch, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(widths[-1], 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.shape[-3:] != (3, self.input_size, self.input_size):
            raise ValueError(
                f"expected [3, {self.input_size}, {self.input_size}] input, got {tuple(image.shape)}"
            )
        x = self.features(image)
        x = x.mean(dim=(-2, -1))
        score = torch.sigmoid(self.head(x)).squeeze(-1)
        score = torch.clamp(score, SCORE_EPS, 1.0 - SCORE_EPS)
        return score.squeeze(0) if squeeze else score


class LocalDiscriminator(_ConvClassifier):
    """Real/fake classifier for 64x64 occluded-region crops."""

    def __init__(self):
        super().__init__(CROP_SIZE)


class GlobalDiscriminator(_ConvClassifier):
    """Real/fake classifier for whole 128x128 faces."""

    def __init__(self):
        super().__init__(HR_SIZE)
