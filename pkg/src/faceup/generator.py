"""Progressive 16->128 face generator: three upsample-and-inpaint stages.

Each stage fuses landmark and facial features (fusion.CrossModalModule),
decodes landmark heatmaps as the stage's geometry prior, embeds the prior,
and refines+2x-upsamples the concatenated prior/appearance features with a
residual upsampler. Stage s consumes the previous stage's output image,
feature map and bilinearly 2x-upsampled prior heatmaps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .data import LANDMARK_COUNT, Landmarks, render_heatmaps
from .fusion import CrossModalModule

STAGE_RESOLUTIONS = (16, 32, 64)  # feature/heatmap side per stage
OUTPUT_RESOLUTIONS = (32, 64, 128)
NUM_STAGES = 3


@dataclass
class ModelConfig:
    channels: int = 32
    res_blocks: int = 3
    landmark_count: int = LANDMARK_COUNT
    token_side: int = 16
    seed: int = 0

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class StageOutputs:
    """Per-stage results of one forward pass (lists indexed by stage)."""

    images: list[torch.Tensor]  # RGB at 32, 64, 128
    heatmaps: list[torch.Tensor]  # estimated heatmaps at 16, 32, 64
    priors_used: list[torch.Tensor] = field(default_factory=list)  # after overrides
    prior_features: list[torch.Tensor] = field(default_factory=list)

    @property
    def final(self) -> torch.Tensor:
        return self.images[-1]


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class ResidualUpsampler(nn.Module):
    """Aggregates prior and appearance features, refines, and 2x-upscales.

    Emits both the upscaled feature map and an RGB image from a 1x1 head;
    the head predicts a correction over the bilinearly upsampled stage
    input (mid-gray when no base image is given) and the result is
    clamped to [0, 1].
    """

    def __init__(self, channels: int, res_blocks: int):
        super().__init__()
        self.entry = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        self.blocks = nn.Sequential(*[ResidualBlock(channels) for _ in range(res_blocks)])
        self.up = nn.Conv2d(channels, 4 * channels, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)
        self.rgb = nn.Conv2d(channels, 3, 1)
        # start close to the plain upsampled base so early training only
        # ever improves on it; small but nonzero to keep gradients alive
        with torch.no_grad():
            self.rgb.weight.normal_(0.0, 1e-3)
            self.rgb.bias.zero_()

    def forward(
        self,
        prior_features: torch.Tensor,
        appearance: torch.Tensor,
        base_image: torch.Tensor | None = None,
    ):
        if prior_features.shape != appearance.shape:
            raise ValueError("prior and appearance feature shapes differ")
        x = self.act(self.entry(torch.cat([prior_features, appearance], dim=-3)))
        x = self.blocks(x)
        feats = self.act(self.shuffle(self.up(x)))
        if base_image is None:
            base = 0.5
        else:
            base = F.interpolate(base_image, scale_factor=2, mode="bilinear", align_corners=False)
        image = torch.clamp(self.rgb(feats) + base, 0.0, 1.0)
        return feats, image


class StageBlock(nn.Module):
    """One refinement stage: cross-modal fusion -> prior heatmaps -> upsampler."""

    def __init__(self, config: ModelConfig, stage_index: int):
        super().__init__()
        self.stage_index = stage_index
        self.resolution = STAGE_RESOLUTIONS[stage_index]
        self.cm = CrossModalModule(
            channels=config.channels,
            heatmap_count=config.landmark_count,
            resolution=self.resolution,
            with_prior_input=stage_index > 0,
            token_side=config.token_side,
        )
        self.prior_embed = nn.Conv2d(config.landmark_count, config.channels, 3, padding=1)
        self.tun = ResidualUpsampler(config.channels, config.res_blocks)


class FaceFeatureEncoder(nn.Module):
    """Facial feature stream for stage 1, computed from the LR input."""

    def __init__(self, channels: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x):
        return self.layers(x)


class ProgressiveGenerator(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.face_encoder = FaceFeatureEncoder(self.config.channels)
        self.stages = nn.ModuleList([StageBlock(self.config, s) for s in range(NUM_STAGES)])

    def block_parameters(self, block: int):
        """Parameters of UI-block `block` in {1, 2, 3}; block 1 owns the face encoder."""
        if block not in (1, 2, 3):
            raise ValueError(f"block must be 1, 2 or 3, got {block}")
        params = list(self.stages[block - 1].parameters())
        if block == 1:
            params = list(self.face_encoder.parameters()) + params
        return params

    def forward(
        self,
        lr: torch.Tensor,
        *,
        override: dict[int, torch.Tensor] | None = None,
        bypass_priors: bool = False,
        up_to_stage: int = NUM_STAGES,
    ) -> StageOutputs:
        squeeze = lr.dim() == 3
        if squeeze:
            lr = lr.unsqueeze(0)
        if lr.dim() != 4 or lr.shape[-3:] != (3, 16, 16):
            raise ValueError(f"expected [B, 3, 16, 16] input, got {tuple(lr.shape)}")
        if not 1 <= up_to_stage <= NUM_STAGES:
            raise ValueError(f"up_to_stage must be in [1, {NUM_STAGES}]")
        if override:
            bad = [s for s in override if s not in range(NUM_STAGES)]
            if bad:
                raise ValueError(f"override stages {bad} outside 0..{NUM_STAGES - 1}")

        image = lr
        features = self.face_encoder(lr)
        priors_prev = None
        images, heatmaps, used, prior_feats = [], [], [], []
        for s in range(up_to_stage):
            stage = self.stages[s]
            _, f_a, est_heat, _ = stage.cm(image, features, priors_prev)
            heat = est_heat
            if override is not None and s in override:
                heat = override[s]
                if heat.dim() == 3:
                    heat = heat.unsqueeze(0)
                if heat.shape[0] == 1 and lr.shape[0] > 1:
                    heat = heat.expand(lr.shape[0], -1, -1, -1)
                if heat.shape[-3:] != est_heat.shape[-3:]:
                    raise ValueError(
                        f"override heatmaps for stage {s} must be {tuple(est_heat.shape[-3:])}"
                    )
            p_feats = stage.prior_embed(heat)
            stream = f_a if bypass_priors else p_feats
            features, image = stage.tun(stream, f_a, base_image=image)
            images.append(image)
            heatmaps.append(est_heat)
            used.append(heat)
            prior_feats.append(p_feats)
            priors_prev = F.interpolate(heat, scale_factor=2, mode="bilinear", align_corners=False)

        if squeeze:
            images = [t.squeeze(0) for t in images]
            heatmaps = [t.squeeze(0) for t in heatmaps]
            used = [t.squeeze(0) for t in used]
            prior_feats = [t.squeeze(0) for t in prior_feats]
        return StageOutputs(images=images, heatmaps=heatmaps, priors_used=used, prior_features=prior_feats)

    def hallucinate(self, lr: torch.Tensor) -> StageOutputs:
        return self.forward(lr)

    def hallucinate_with_prior_override(
        self, lr: torch.Tensor, edited: Landmarks, stages: set[int] | list[int]
    ) -> StageOutputs:
        """Replace selected stages' prior heatmaps with ones rendered from
        the edited landmark coordinates (1-indexed stages per the API)."""
        stages = set(stages)
        if not stages <= {1, 2, 3}:
            raise ValueError(f"stage subset {sorted(stages)} not within {{1, 2, 3}}")
        if edited.count != self.config.landmark_count:
            raise ValueError(
                f"expected {self.config.landmark_count} landmarks, got {edited.count}"
            )
        override = {}
        for s in stages:
            res = STAGE_RESOLUTIONS[s - 1]
            maps = render_heatmaps(edited, res)
            override[s - 1] = torch.from_numpy(maps).to(next(self.parameters()).dtype)
        return self.forward(lr, override=override)


# ---------------------------------------------------------------------------
# Checkpoint archive: named tensors plus a JSON-compatible config dict.

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    generator: ProgressiveGenerator,
    local_d: nn.Module | None = None,
    global_d: nn.Module | None = None,
    step: int = 0,
    extra: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(generator.config),
        "step": step,
        "generator": generator.state_dict(),
    }
    if local_d is not None:
        payload["local_d"] = local_d.state_dict()
    if global_d is not None:
        payload["global_d"] = global_d.state_dict()
    if extra:
        payload["extra"] = extra
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    return payload


def load_generator(path: str | Path) -> tuple[ProgressiveGenerator, dict]:
    payload = load_checkpoint(path)
    gen = ProgressiveGenerator(ModelConfig.from_dict(payload["config"]))
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen, payload
