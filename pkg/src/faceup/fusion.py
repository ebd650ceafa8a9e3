"""Cross-modal feature fusion: landmark features attend to facial features.

One module instance serves one refinement stage. The landmark stream is
encoded from the stage's input image (plus the previous stage's upsampled
prior heatmaps after stage 1), fused with the facial feature stream via
cross-attention, and decoded into per-landmark heatmaps.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class LandmarkFeatureEncoder(nn.Module):
    """4-layer conv encoder for the landmark feature stream (resolution preserving)."""

    def __init__(self, channels: int, image_channels: int = 3, heatmap_count: int = 0):
        super().__init__()
        self.heatmap_count = heatmap_count
        in_ch = image_channels + heatmap_count
        self.layers = nn.Sequential(
            nn.Conv2d(in_ch, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, image: torch.Tensor, prior_heatmaps: torch.Tensor | None = None) -> torch.Tensor:
        if (prior_heatmaps is None) != (self.heatmap_count == 0):
            raise ValueError("prior heatmaps do not match this encoder's configuration")
        x = image if prior_heatmaps is None else torch.cat([image, prior_heatmaps], dim=-3)
        return self.layers(x)


class CrossAttentionFusion(nn.Module):
    """Symmetric residual cross-attention between landmark and facial features.

    Queries come from the landmark stream, keys from the facial stream;
    the row-stochastic attention matrix augments each stream with the
    attended projection of the other. For feature maps wider than
    ``token_side`` the attention runs on an average-pooled token grid and
    the attended contributions are bilinearly upsampled back, which keeps
    the cost bounded at the larger stages.
    """

    def __init__(self, channels: int, token_side: int = 16):
        super().__init__()
        self.channels = channels
        self.token_side = token_side
        self.proj_q = nn.Conv2d(channels, channels, 1, bias=False)
        self.proj_k = nn.Conv2d(channels, channels, 1, bias=False)
        self.proj_v = nn.Conv2d(channels, channels, 1, bias=False)
        self.proj_w = nn.Conv2d(channels, channels, 1, bias=False)
        self.fuse_p = nn.Conv2d(channels, channels, 1)
        self.fuse_a = nn.Conv2d(channels, channels, 1)
        nn.init.dirac_(self.fuse_p.weight)
        nn.init.zeros_(self.fuse_p.bias)
        nn.init.dirac_(self.fuse_a.weight)
        nn.init.zeros_(self.fuse_a.bias)

    def attention(self, f_l: torch.Tensor, f_c: torch.Tensor):
        """Full cross-attention at the resolution of its inputs.

        Returns (A, delta_p, delta_a) where A is [B, hw, hw] row-stochastic,
        delta_p = reshape(A @ V_c) and delta_a = reshape(A^T @ V_l).
        """
        b, c, h, w = f_l.shape
        q = self.proj_q(f_l).flatten(2).transpose(1, 2)  # [B, hw, C]
        k = self.proj_k(f_c).flatten(2).transpose(1, 2)
        v_c = self.proj_v(f_c).flatten(2).transpose(1, 2)
        v_l = self.proj_w(f_l).flatten(2).transpose(1, 2)
        logits = q @ k.transpose(1, 2) / math.sqrt(c)
        a = torch.softmax(logits, dim=-1)
        delta_p = (a @ v_c).transpose(1, 2).reshape(b, c, h, w)
        delta_a = (a.transpose(1, 2) @ v_l).transpose(1, 2).reshape(b, c, h, w)
        return a, delta_p, delta_a

    def forward(self, f_l: torch.Tensor, f_c: torch.Tensor):
        if f_l.shape != f_c.shape:
            raise ValueError(f"stream shapes differ: {tuple(f_l.shape)} vs {tuple(f_c.shape)}")
        squeeze = f_l.dim() == 3
        if squeeze:
            f_l, f_c = f_l.unsqueeze(0), f_c.unsqueeze(0)
        if not (torch.isfinite(f_l).all() and torch.isfinite(f_c).all()):
            raise ValueError("non-finite values in fusion inputs")

        h, w = f_l.shape[-2:]
        if h > self.token_side or w > self.token_side:
            side = self.token_side
            a, dp, da = self.attention(
                F.adaptive_avg_pool2d(f_l, side), F.adaptive_avg_pool2d(f_c, side)
            )
            dp = F.interpolate(dp, size=(h, w), mode="bilinear", align_corners=False)
            da = F.interpolate(da, size=(h, w), mode="bilinear", align_corners=False)
        else:
            a, dp, da = self.attention(f_l, f_c)

        f_p = self.fuse_p(f_l + dp)
        f_a = self.fuse_a(f_c + da)
        if squeeze:
            return a.squeeze(0), f_p.squeeze(0), f_a.squeeze(0)
        return a, f_p, f_a


class HeatmapDecoder(nn.Module):
    """Single conv head mapping geometry-prior features to [0,1] heatmaps."""

    def __init__(self, channels: int, heatmap_count: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, heatmap_count, 3, padding=1)

    def forward(self, f_p: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(f_p))


class CrossModalModule(nn.Module):
    """One stage's landmark encoder + cross-attention fusion + heatmap decoder."""

    def __init__(
        self,
        channels: int,
        heatmap_count: int,
        resolution: int,
        with_prior_input: bool,
        token_side: int = 16,
    ):
        super().__init__()
        self.resolution = resolution
        self.with_prior_input = with_prior_input
        self.encoder = LandmarkFeatureEncoder(
            channels, heatmap_count=heatmap_count if with_prior_input else 0
        )
        self.fusion = CrossAttentionFusion(channels, token_side=token_side)
        self.decoder = HeatmapDecoder(channels, heatmap_count)

    def encode_landmark_features(
        self, image: torch.Tensor, prior_heatmaps: torch.Tensor | None = None
    ) -> torch.Tensor:
        if image.shape[-1] != self.resolution or image.shape[-2] != self.resolution:
            raise ValueError(
                f"stage expects {self.resolution}x{self.resolution} input, got {tuple(image.shape[-2:])}"
            )
        return self.encoder(image, prior_heatmaps)

    def forward(
        self,
        image: torch.Tensor,
        face_features: torch.Tensor,
        prior_heatmaps: torch.Tensor | None = None,
    ):
        f_l = self.encode_landmark_features(image, prior_heatmaps)
        attn, f_p, f_a = self.fusion(f_l, face_features)
        heatmaps = self.decoder(f_p)
        return f_p, f_a, heatmaps, attn
