"""Three-phase training: pre-train stage 1, pre-train stage 2, then joint
adversarial training with per-block learning rates and 1:1 alternating
discriminator/generator updates.

Everything is a pure function of (config, seed): model init, batch order
and optimizer state are all seeded and checkpointable, so a resumed run
reproduces the uninterrupted one step for step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .adversary import GlobalDiscriminator, LocalDiscriminator, crop_batch
from .data import ToyDataset, load_dataset
from .evalkit import psnr
from .generator import ModelConfig, ProgressiveGenerator, load_checkpoint
from .losses import (
    FeatureExtractor,
    LossWeights,
    StageTargets,
    d_loss,
    g_adv_loss,
    make_stage_targets,
    stage_components,
    stage_net,
)

METRICS_COLUMNS = [
    "step",
    "phase",
    "L_net1",
    "L_net2",
    "L_net3",
    "L_G",
    "D_local",
    "D_global",
    "psnr_train",
]


class PhaseOrderError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dataset: str
    out_dir: str
    steps: tuple[int, int, int] = (200, 200, 1000)
    batch_size: int = 4
    lr3: float = 1e-3
    lr12: float = 1e-4
    lr_d: float = 5e-5
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0  # 0: checkpoint only at phase boundaries
    freeze_block1_in_phase2: bool = True
    channels: int = 32
    res_blocks: int = 3
    feature_seed: int = 7
    # fraction of steps whose upsamplers consume ground-truth heatmaps
    # instead of estimated ones, keeping injected priors in-distribution
    prior_teacher_forcing: float = 0.5

    def __post_init__(self):
        self.steps = tuple(self.steps)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if len(self.steps) != 3 or any(s < 0 for s in self.steps):
            raise ValueError("steps must be three nonnegative phase lengths")
        for name in ("lr3", "lr12", "lr_d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.prior_teacher_forcing <= 1.0:
            raise ValueError("prior_teacher_forcing must be in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))

    @staticmethod
    def from_file(path: str | Path) -> "TrainConfig":
        return TrainConfig.from_json(Path(path).read_text())

    def model_config(self) -> ModelConfig:
        return ModelConfig(channels=self.channels, res_blocks=self.res_blocks, seed=self.seed)


class TrainData:
    """Dataset tensors plus per-stage targets, precomputed once."""

    def __init__(self, dataset: ToyDataset):
        self.pairs = dataset.pairs
        self.lr = torch.stack([torch.from_numpy(p.lr_occluded) for p in self.pairs])
        self.targets = make_stage_targets(self.pairs)
        self.masks = [p.mask for p in self.pairs]

    def __len__(self):
        return len(self.pairs)

    def batch_targets(self, idx: torch.Tensor) -> StageTargets:
        return StageTargets(
            images=[t[idx] for t in self.targets.images],
            heatmaps=[t[idx] for t in self.targets.heatmaps],
        )


class TrainState:
    def __init__(self, config: TrainConfig):
        self.config = config
        torch.manual_seed(config.seed)
        self.generator = ProgressiveGenerator(config.model_config())
        self.local_d = LocalDiscriminator()
        self.global_d = GlobalDiscriminator()
        self.fx = FeatureExtractor(seed=config.feature_seed)
        self.sampler = np.random.default_rng(np.random.SeedSequence((config.seed, 0xB0B)))
        self.phase = 1
        self.step_in_phase = 0
        self.global_step = 0
        self.opt_g: torch.optim.Adam | None = None
        self.opt_d: torch.optim.Adam | None = None

    # -- optimizers ---------------------------------------------------------

    def _generator_groups(self, phase: int) -> list[dict]:
        cfg = self.config
        gen = self.generator
        if phase == 1:
            return [{"params": gen.block_parameters(1), "lr": cfg.lr3, "name": "block1"}]
        if phase == 2:
            groups = [{"params": gen.block_parameters(2), "lr": cfg.lr3, "name": "block2"}]
            if not cfg.freeze_block1_in_phase2:
                groups.append({"params": gen.block_parameters(1), "lr": cfg.lr12, "name": "block1"})
            return groups
        return [
            {"params": gen.block_parameters(3), "lr": cfg.lr3, "name": "block3"},
            {"params": gen.block_parameters(1), "lr": cfg.lr12, "name": "block1"},
            {"params": gen.block_parameters(2), "lr": cfg.lr12, "name": "block2"},
        ]

    def make_optimizers(self, phase: int) -> None:
        self.opt_g = torch.optim.Adam(self._generator_groups(phase))
        if phase == 3:
            self.opt_d = torch.optim.Adam(
                list(self.local_d.parameters()) + list(self.global_d.parameters()),
                lr=self.config.lr_d,
            )
        else:
            self.opt_d = None

    def learning_rates(self) -> dict[str, float]:
        if self.opt_g is None:
            return {}
        return {g["name"]: g["lr"] for g in self.opt_g.param_groups}

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": 1,
            "config": asdict(self.generator.config),
            "step": self.global_step,
            "generator": self.generator.state_dict(),
            "local_d": self.local_d.state_dict(),
            "global_d": self.global_d.state_dict(),
            "extra": {
                "train_config": asdict(self.config),
                "phase": self.phase,
                "step_in_phase": self.step_in_phase,
                "global_step": self.global_step,
                "sampler_state": self.sampler.bit_generator.state,
                # optimizer state matters only mid-phase; a fresh phase
                # always builds a fresh optimizer over its own groups
                "opt_g": self.opt_g.state_dict() if self.opt_g and self.step_in_phase > 0 else None,
                "opt_d": self.opt_d.state_dict() if self.opt_d and self.step_in_phase > 0 else None,
            },
        }
        torch.save(payload, Path(path))

    @staticmethod
    def load(path: str | Path) -> "TrainState":
        payload = load_checkpoint(path)
        extra = payload["extra"]
        config = TrainConfig(**extra["train_config"])
        state = TrainState(config)
        state.generator.load_state_dict(payload["generator"])
        state.local_d.load_state_dict(payload["local_d"])
        state.global_d.load_state_dict(payload["global_d"])
        state.phase = extra["phase"]
        state.step_in_phase = extra["step_in_phase"]
        state.global_step = extra["global_step"]
        state.sampler.bit_generator.state = extra["sampler_state"]
        if state.phase <= 3 and state.step_in_phase > 0:
            state.make_optimizers(state.phase)
            if extra["opt_g"] is not None:
                state.opt_g.load_state_dict(extra["opt_g"])
            if extra["opt_d"] is not None and state.opt_d is not None:
                state.opt_d.load_state_dict(extra["opt_d"])
        return state


class Trainer:
    def __init__(self, config: TrainConfig, state: TrainState | None = None):
        # a resumed state carries the exact config of the interrupted run
        self.config = state.config if state is not None else config
        config = self.config
        self.state = state or TrainState(config)
        ds = load_dataset(config.dataset)
        self.data = TrainData(ds)
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.out_dir / "metrics.csv"

    # -- plumbing -----------------------------------------------------------

    def _log(self, row: dict) -> None:
        new = not self.metrics_path.exists()
        with open(self.metrics_path, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
            if new:
                w.writeheader()
            w.writerow({k: row.get(k, "") for k in METRICS_COLUMNS})

    def _sample_batch(self):
        n = len(self.data)
        b = self.config.batch_size
        idx = self.state.sampler.choice(n, size=min(b, n), replace=n < b)
        return torch.from_numpy(np.ascontiguousarray(idx)).long()

    def _maybe_checkpoint(self) -> None:
        every = self.config.checkpoint_every
        if every > 0 and self.state.global_step % every == 0:
            self.state.save(self.out_dir / f"step{self.state.global_step:07d}.ckpt")

    def _prior_override(self, targets, stages: int) -> dict | None:
        if self.state.sampler.random() >= self.config.prior_teacher_forcing:
            return None
        return {s: targets.heatmaps[s] for s in range(stages)}

    # -- phases -------------------------------------------------------------

    def _require_phase(self, phase: int) -> None:
        if self.state.phase != phase:
            raise PhaseOrderError(
                f"cannot run phase {phase}: trainer is at phase {self.state.phase}"
            )

    def _pretrain_phase(self, phase: int) -> None:
        self._require_phase(phase)
        cfg = self.config
        state = self.state
        steps = cfg.steps[phase - 1]
        if state.step_in_phase == 0 and steps > 0:
            state.make_optimizers(phase)
        stage = phase - 1  # 0-based stage trained in this phase
        while state.step_in_phase < steps:
            idx = self._sample_batch()
            targets = self.data.batch_targets(idx)
            out = state.generator(
                self.data.lr[idx],
                up_to_stage=phase,
                override=self._prior_override(targets, phase),
            )
            comps = stage_components(
                stage, out.images[stage], out.heatmaps[stage], targets, state.fx
            )
            loss = stage_net(stage, comps, cfg.weights)
            state.opt_g.zero_grad()
            loss.backward()
            state.opt_g.step()

            state.step_in_phase += 1
            state.global_step += 1
            with torch.no_grad():
                train_psnr = psnr(out.images[stage].detach(), targets.images[stage])
            self._log(
                {
                    "step": state.global_step,
                    "phase": phase,
                    f"L_net{phase}": f"{loss.item():.6f}",
                    "psnr_train": f"{train_psnr:.4f}",
                }
            )
            self._maybe_checkpoint()
        state.phase = phase + 1
        state.step_in_phase = 0
        state.save(self.out_dir / f"phase{phase}.ckpt")

    def run_phase1(self) -> TrainState:
        self._pretrain_phase(1)
        return self.state

    def run_phase2(self) -> TrainState:
        self._pretrain_phase(2)
        return self.state

    def run_phase3(self) -> TrainState:
        self._require_phase(3)
        cfg = self.config
        state = self.state
        steps = cfg.steps[2]
        if state.step_in_phase == 0 and steps > 0:
            state.make_optimizers(3)
        while state.step_in_phase < steps:
            idx = self._sample_batch()
            targets = self.data.batch_targets(idx)
            masks = [self.data.masks[i] for i in idx.tolist()]
            occluded = [i for i, m in enumerate(masks) if not m.is_empty]

            out = state.generator(self.data.lr[idx], override=self._prior_override(targets, 3))
            fake_hr = out.final
            real_hr = targets.images[2]

            # discriminator update on detached fakes
            d_global = d_loss(state.global_d(real_hr), state.global_d(fake_hr.detach()))
            d_local = None
            if occluded:
                masks_occ = [masks[i] for i in occluded]
                real_crops = crop_batch(real_hr[occluded], masks_occ)
                fake_crops_detached = crop_batch(fake_hr.detach()[occluded], masks_occ)
                d_local = d_loss(state.local_d(real_crops), state.local_d(fake_crops_detached))
                d_total = d_local + d_global
            else:
                d_total = d_global
            state.opt_d.zero_grad()
            d_total.backward()
            state.opt_d.step()

            # generator update through the freshly updated discriminators
            comps = [
                stage_components(s, out.images[s], out.heatmaps[s], targets, state.fx)
                for s in range(3)
            ]
            comps[2]["adv_global"] = g_adv_loss(state.global_d(fake_hr))
            if occluded:
                fake_crops = crop_batch(fake_hr[occluded], [masks[i] for i in occluded])
                comps[2]["adv_local"] = g_adv_loss(state.local_d(fake_crops))
            net1 = stage_net(0, comps[0], cfg.weights)
            net2 = stage_net(1, comps[1], cfg.weights)
            net3 = stage_net(2, comps[2], cfg.weights)
            total = net1 + net2 + net3
            state.opt_g.zero_grad()
            total.backward()
            state.opt_g.step()

            state.step_in_phase += 1
            state.global_step += 1
            with torch.no_grad():
                train_psnr = psnr(fake_hr.detach(), real_hr)
            self._log(
                {
                    "step": state.global_step,
                    "phase": 3,
                    "L_net1": f"{net1.item():.6f}",
                    "L_net2": f"{net2.item():.6f}",
                    "L_net3": f"{net3.item():.6f}",
                    "L_G": f"{total.item():.6f}",
                    "D_local": f"{d_local.item():.6f}" if d_local is not None else "",
                    "D_global": f"{d_global.item():.6f}",
                    "psnr_train": f"{train_psnr:.4f}",
                }
            )
            self._maybe_checkpoint()
        state.phase = 4
        state.step_in_phase = 0
        state.save(self.out_dir / "final.ckpt")
        return self.state

    def run(self) -> Path:
        """Run all remaining phases; returns the final checkpoint path."""
        if self.state.phase == 1:
            self.run_phase1()
        if self.state.phase == 2:
            self.run_phase2()
        if self.state.phase == 3:
            self.run_phase3()
        return self.out_dir / "final.ckpt"


def train(config: TrainConfig, resume: str | Path | None = None) -> Path:
    state = TrainState.load(resume) if resume else None
    return Trainer(config, state=state).run()


def parameter_fingerprint(module: nn.Module) -> dict[str, bytes]:
    """Bitwise snapshot of every parameter, for isolation checks."""
    return {name: p.detach().numpy().tobytes() for name, p in module.named_parameters()}
