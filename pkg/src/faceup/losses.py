"""Training losses: intensity, identity, symmetry, geometry, style, adversarial,
and the per-stage composites with their fixed weights.

Reduction convention: squared-norm losses are normalized to per-element
means so the weights keep their meaning across the 32/64/128 stages. The
feature extractor is a frozen, seeded conv net standing in for a
pretrained backbone; anything exposing the same tap dict can be slotted
in its place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .data import ImagePair, render_heatmaps
from .generator import STAGE_RESOLUTIONS, StageOutputs

SCORE_EPS = 1e-7
STYLE_TAPS = ("style1", "style2", "style3")


@dataclass
class LossWeights:
    alpha: float = 0.01  # identity
    beta: float = 0.01  # geometry
    psi: float = 0.01  # adversarial
    gamma_a: float = 10.0  # style, stage 1
    gamma_b: float = 10.0  # style, stage 2
    gamma_c: float = 1.0  # style, stage 3

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {v}")


class FeatureExtractor(nn.Module):
    """Frozen, seeded 6-layer conv net with one identity tap and three style taps.

    Stands in for a pretrained perceptual backbone: the identity tap sits at
    quarter resolution, the style taps follow each of the three poolings.
    Parameters are never updated; gradients still flow through to the input.
    """

    def __init__(self, seed: int = 7):
        super().__init__()
        self.seed = seed
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 16, 3, padding=1)
        self.conv3 = nn.Conv2d(16, 32, 3, padding=1)
        self.conv4 = nn.Conv2d(32, 32, 3, padding=1)
        self.conv5 = nn.Conv2d(32, 32, 3, padding=1)
        self.conv6 = nn.Conv2d(32, 64, 3, padding=1)
        gen = torch.Generator().manual_seed(seed)
        for conv in (self.conv1, self.conv2, self.conv3, self.conv4, self.conv5, self.conv6):
            fan_in = conv.in_channels * 9
            with torch.no_grad():
                conv.weight.normal_(0.0, (5.0 / 3.0) / math.sqrt(fan_in), generator=gen)
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        taps = {}
        x = torch.tanh(self.conv1(x))
        x = torch.tanh(self.conv2(x))
        x = F.avg_pool2d(x, 2)
        taps["style1"] = x
        x = torch.tanh(self.conv3(x))
        x = F.avg_pool2d(x, 2)
        taps["style2"] = x
        x = torch.tanh(self.conv4(x))
        x = torch.tanh(self.conv5(x))
        taps["identity"] = x
        x = torch.tanh(self.conv6(x))
        x = F.avg_pool2d(x, 2)
        taps["style3"] = x
        return taps


def _check_same_shape(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def intensity_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-element mean of the squared intensity difference."""
    _check_same_shape(pred, gt)
    return ((pred - gt) ** 2).mean()


def identity_loss(pred: torch.Tensor, gt: torch.Tensor, fx: FeatureExtractor) -> torch.Tensor:
    """Mean squared distance between identity-tap feature maps."""
    _check_same_shape(pred, gt)
    return ((fx(pred)["identity"] - fx(gt)["identity"]) ** 2).mean()


def symmetry_loss(pred: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between an image and its horizontal flip."""
    return ((pred - torch.flip(pred, dims=(-1,))) ** 2).mean()


def geometry_loss(est: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean over the K landmark maps of the per-map mean squared error."""
    if est.shape[-3] != gt.shape[-3]:
        raise ValueError(f"landmark count mismatch: {est.shape[-3]} vs {gt.shape[-3]}")
    _check_same_shape(est, gt)
    return ((est - gt) ** 2).mean()


def gram(features: torch.Tensor) -> torch.Tensor:
    """Channel Gram matrix normalized by C*H*W; [C,C] or [B,C,C]."""
    squeeze = features.dim() == 3
    if squeeze:
        features = features.unsqueeze(0)
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    g = flat @ flat.transpose(1, 2) / (c * h * w)
    return g.squeeze(0) if squeeze else g


def style_loss(pred: torch.Tensor, gt: torch.Tensor, fx: FeatureExtractor) -> torch.Tensor:
    """Sum over the style taps of the L1 norm of the Gram difference.

    The L1 norm follows the module's reduction convention and is
    normalized to the per-entry mean, keeping the style weights on the
    same footing as the intensity terms.
    """
    _check_same_shape(pred, gt)
    taps_p = fx(pred)
    taps_g = fx(gt)
    total = None
    for name in STYLE_TAPS:
        diff = gram(taps_p[name]) - gram(taps_g[name])
        term = diff.abs().sum(dim=(-2, -1)).mean() / (diff.shape[-1] * diff.shape[-2])
        total = term if total is None else total + term
    return total


def _check_scores(t: torch.Tensor) -> torch.Tensor:
    if ((t < 0) | (t > 1)).any():
        raise ValueError("discriminator scores must lie in [0, 1]")
    return torch.clamp(t, SCORE_EPS, 1.0 - SCORE_EPS)


def d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Discriminator objective -[ln d_real + ln(1 - d_fake)], batch-averaged."""
    d_real = _check_scores(torch.as_tensor(d_real))
    d_fake = _check_scores(torch.as_tensor(d_fake))
    return -(torch.log(d_real).mean() + torch.log(1.0 - d_fake).mean())


def g_adv_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Generator adversarial objective -ln d_fake, batch-averaged."""
    d_fake = _check_scores(torch.as_tensor(d_fake))
    return -torch.log(d_fake).mean()


# ---------------------------------------------------------------------------
# Stage composites


@dataclass
class StageTargets:
    """Ground truth resampled to each stage: images at 32/64/128, heatmaps at 16/32/64."""

    images: list[torch.Tensor]
    heatmaps: list[torch.Tensor]


def make_stage_targets(pairs: list[ImagePair], dtype=torch.float32) -> StageTargets:
    hr = torch.stack([torch.from_numpy(p.hr_clean) for p in pairs]).to(dtype)
    images = [F.avg_pool2d(hr, 4), F.avg_pool2d(hr, 2), hr]
    heatmaps = []
    for res in STAGE_RESOLUTIONS:
        maps = [torch.from_numpy(render_heatmaps(p.landmarks, res)) for p in pairs]
        heatmaps.append(torch.stack(maps).to(dtype))
    return StageTargets(images=images, heatmaps=heatmaps)


@dataclass
class StageLossReport:
    net1: torch.Tensor
    net2: torch.Tensor
    net3: torch.Tensor
    total: torch.Tensor
    components: list[dict] = field(default_factory=list)


def stage_net(stage: int, c: dict, w: LossWeights):
    """One stage's weighted objective from its loss components.

    The summation order is fixed left to right so documented spot values
    are reproduced exactly.
    """
    if stage == 0:
        return c["sym"] + c["mse"] + w.alpha * c["id"] + w.beta * c["heat"] + w.gamma_a * c["style"]
    if stage == 1:
        return c["mse"] + w.alpha * c["id"] + w.beta * c["heat"] + w.gamma_b * c["style"]
    net3 = c["mse"] + w.alpha * c["id"] + w.beta * c["heat"] + w.gamma_c * c["style"]
    if "adv_local" in c or "adv_global" in c:
        net3 = net3 + w.psi * (c.get("adv_local", 0.0) + c.get("adv_global", 0.0))
    return net3


def stage_components(
    stage: int,
    image: torch.Tensor,
    heatmaps: torch.Tensor,
    targets: "StageTargets",
    fx: FeatureExtractor,
) -> dict:
    """Unweighted loss components of one stage against its targets."""
    c = {
        "mse": intensity_loss(image, targets.images[stage]),
        "id": identity_loss(image, targets.images[stage], fx),
        "heat": geometry_loss(heatmaps, targets.heatmaps[stage]),
        "style": style_loss(image, targets.images[stage], fx),
    }
    if stage == 0:
        c["sym"] = symmetry_loss(image)
    return c


def combine_stage_components(c1: dict, c2: dict, c3: dict, weights: LossWeights):
    """Weighted composites of the three stages' loss components.

    c1 needs keys sym/mse/id/heat/style; c2 and c3 need mse/id/heat/style;
    c3 takes optional adv_local/adv_global.
    """
    net1 = stage_net(0, c1, weights)
    net2 = stage_net(1, c2, weights)
    net3 = stage_net(2, c3, weights)
    return net1, net2, net3, net1 + net2 + net3


def stage_losses(
    outputs: StageOutputs,
    targets: StageTargets,
    fx: FeatureExtractor,
    weights: LossWeights,
    d_scores: dict[str, torch.Tensor] | None = None,
) -> StageLossReport:
    """Per-stage objectives and their sum.

    d_scores, when the adversarial phase is active, carries the
    discriminator outputs on the hallucinated results under keys
    "local" and "global"; omit it to train without adversarial terms.
    """
    if len(outputs.images) != 3 or len(outputs.heatmaps) != 3:
        raise ValueError("stage losses need all three stage outputs")

    comps = [
        stage_components(s, outputs.images[s], outputs.heatmaps[s], targets, fx) for s in range(3)
    ]
    if d_scores is not None:
        if "local" in d_scores:
            comps[2]["adv_local"] = g_adv_loss(d_scores["local"])
        if "global" in d_scores:
            comps[2]["adv_global"] = g_adv_loss(d_scores["global"])

    net1, net2, net3, total = combine_stage_components(comps[0], comps[1], comps[2], weights)
    return StageLossReport(net1=net1, net2=net2, net3=net3, total=total, components=comps)
