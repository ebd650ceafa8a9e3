import csv

import numpy as np
import pytest
import torch

from faceup.data import build_dataset
from faceup.losses import d_loss
from faceup.trainer import (
    PhaseOrderError,
    TrainConfig,
    Trainer,
    TrainState,
    parameter_fingerprint,
)

TINY = dict(batch_size=2, channels=8, res_blocks=1)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("trainds")
    build_dataset(4, seed=5, out_dir=root)
    return str(root)


def _config(dataset_dir, out_dir, steps, **kw):
    args = dict(TINY)
    args.update(kw)
    return TrainConfig(dataset=dataset_dir, out_dir=str(out_dir), steps=steps, seed=3, **args)


def _gen_fingerprints(state):
    return {
        b: parameter_fingerprint(state.generator.stages[b - 1])
        for b in (1, 2, 3)
    }


class TestConfig:
    def test_json_roundtrip(self, dataset_dir, tmp_path):
        cfg = _config(dataset_dir, tmp_path, (1, 2, 3))
        again = TrainConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_validation(self, dataset_dir, tmp_path):
        with pytest.raises(ValueError):
            _config(dataset_dir, tmp_path, (1, 2))
        with pytest.raises(ValueError):
            _config(dataset_dir, tmp_path, (1, 2, -1))
        with pytest.raises(ValueError):
            _config(dataset_dir, tmp_path, (1, 2, 3), lr3=0.0)
        with pytest.raises(ValueError):
            _config(dataset_dir, tmp_path, (1, 2, 3), batch_size=0)


class TestPhases:
    def test_zero_steps_leave_parameters_untouched(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "z", (0, 0, 0)))
        before = parameter_fingerprint(trainer.state.generator)
        trainer.run()
        after = parameter_fingerprint(trainer.state.generator)
        assert before == after

    def test_phase_order_enforced(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "o", (1, 1, 1)))
        with pytest.raises(PhaseOrderError):
            trainer.run_phase2()
        with pytest.raises(PhaseOrderError):
            trainer.run_phase3()

    def test_phase1_touches_only_block1(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "p1", (2, 0, 0)))
        before = _gen_fingerprints(trainer.state)
        face_before = parameter_fingerprint(trainer.state.generator.face_encoder)
        d_before = parameter_fingerprint(trainer.state.local_d)
        trainer.run_phase1()
        after = _gen_fingerprints(trainer.state)
        assert after[1] != before[1]
        assert after[2] == before[2]
        assert after[3] == before[3]
        assert parameter_fingerprint(trainer.state.generator.face_encoder) != face_before
        assert parameter_fingerprint(trainer.state.local_d) == d_before

    def test_phase2_freezes_block1_by_default(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "p2", (1, 2, 0)))
        trainer.run_phase1()
        before = _gen_fingerprints(trainer.state)
        trainer.run_phase2()
        after = _gen_fingerprints(trainer.state)
        assert after[1] == before[1]
        assert after[2] != before[2]
        assert after[3] == before[3]

    def test_phase2_unfrozen_flag(self, dataset_dir, tmp_path):
        cfg = _config(dataset_dir, tmp_path / "p2u", (1, 2, 0), freeze_block1_in_phase2=False)
        trainer = Trainer(cfg)
        trainer.run_phase1()
        before = _gen_fingerprints(trainer.state)
        trainer.run_phase2()
        after = _gen_fingerprints(trainer.state)
        assert after[1] != before[1]
        assert after[2] != before[2]

    def test_phase3_learning_rate_groups(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "lr", (0, 0, 1)))
        trainer.run_phase1()
        trainer.run_phase2()
        trainer.state.make_optimizers(3)
        rates = trainer.state.learning_rates()
        assert rates == {"block3": 1e-3, "block1": 1e-4, "block2": 1e-4}

    def test_phase3_updates_everything(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "p3", (1, 1, 2)))
        trainer.run_phase1()
        trainer.run_phase2()
        g_before = _gen_fingerprints(trainer.state)
        dl_before = parameter_fingerprint(trainer.state.local_d)
        dg_before = parameter_fingerprint(trainer.state.global_d)
        trainer.run_phase3()
        g_after = _gen_fingerprints(trainer.state)
        assert all(g_after[b] != g_before[b] for b in (1, 2, 3))
        assert parameter_fingerprint(trainer.state.local_d) != dl_before
        assert parameter_fingerprint(trainer.state.global_d) != dg_before

    def test_discriminator_and_generator_updates_are_disjoint(self, dataset_dir, tmp_path):
        trainer = Trainer(_config(dataset_dir, tmp_path / "dis", (0, 0, 1)))
        state = trainer.state
        state.phase = 3
        state.make_optimizers(3)
        idx = torch.tensor([0, 1])
        targets = trainer.data.batch_targets(idx)
        out = state.generator(trainer.data.lr[idx])

        g_before = parameter_fingerprint(state.generator)
        loss_d = d_loss(state.global_d(targets.images[2]), state.global_d(out.final.detach()))
        state.opt_d.zero_grad()
        loss_d.backward()
        state.opt_d.step()
        assert parameter_fingerprint(state.generator) == g_before

        dl_before = parameter_fingerprint(state.local_d)
        dg_before = parameter_fingerprint(state.global_d)
        g_loss = (out.final - targets.images[2]).pow(2).mean()
        state.opt_g.zero_grad()
        g_loss.backward()
        state.opt_g.step()
        assert parameter_fingerprint(state.local_d) == dl_before
        assert parameter_fingerprint(state.global_d) == dg_before
        assert parameter_fingerprint(state.generator) != g_before


class TestDeterminismAndResume:
    def test_seeded_runs_reproduce_checkpoints(self, dataset_dir, tmp_path):
        cfg_a = _config(dataset_dir, tmp_path / "a", (2, 2, 2))
        cfg_b = _config(dataset_dir, tmp_path / "b", (2, 2, 2))
        ta = Trainer(cfg_a)
        tb = Trainer(cfg_b)
        ta.run()
        tb.run()
        fa = parameter_fingerprint(ta.state.generator)
        fb = parameter_fingerprint(tb.state.generator)
        assert fa == fb
        assert parameter_fingerprint(ta.state.local_d) == parameter_fingerprint(tb.state.local_d)
        assert parameter_fingerprint(ta.state.global_d) == parameter_fingerprint(tb.state.global_d)

    def test_resume_equals_uninterrupted(self, dataset_dir, tmp_path):
        cfg = _config(dataset_dir, tmp_path / "full", (2, 2, 3), checkpoint_every=1)
        full = Trainer(cfg)
        full.run()
        want_g = parameter_fingerprint(full.state.generator)
        want_dl = parameter_fingerprint(full.state.local_d)
        want_dg = parameter_fingerprint(full.state.global_d)

        # resume from a mid-phase-3 checkpoint (global step 5 = phase3 step 1)
        mid = tmp_path / "full" / "step0000005.ckpt"
        assert mid.exists()
        state = TrainState.load(mid)
        assert state.phase == 3 and state.step_in_phase == 1
        resumed = Trainer(cfg, state=state)
        resumed.run()
        assert parameter_fingerprint(resumed.state.generator) == want_g
        assert parameter_fingerprint(resumed.state.local_d) == want_dl
        assert parameter_fingerprint(resumed.state.global_d) == want_dg

    def test_resume_from_phase_boundary(self, dataset_dir, tmp_path):
        cfg = _config(dataset_dir, tmp_path / "bnd", (2, 1, 1))
        full = Trainer(cfg)
        full.run()
        want = parameter_fingerprint(full.state.generator)

        state = TrainState.load(tmp_path / "bnd" / "phase1.ckpt")
        assert state.phase == 2 and state.step_in_phase == 0
        resumed = Trainer(cfg, state=state)
        resumed.run()
        assert parameter_fingerprint(resumed.state.generator) == want


class TestMetricsLog:
    def test_csv_columns_and_rows(self, dataset_dir, tmp_path):
        cfg = _config(dataset_dir, tmp_path / "log", (1, 1, 1))
        Trainer(cfg).run()
        with open(tmp_path / "log" / "metrics.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3
        assert list(rows[0].keys()) == [
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
        assert rows[0]["phase"] == "1" and rows[0]["L_net1"] != ""
        assert rows[1]["phase"] == "2" and rows[1]["L_net2"] != ""
        assert rows[2]["phase"] == "3" and rows[2]["L_G"] != ""
        assert rows[2]["D_global"] != ""


class TestLossDecreases:
    def test_phase1_loss_decreases_on_overfit_set(self, dataset_dir, tmp_path):
        cfg = _config(dataset_dir, tmp_path / "ov", (60, 0, 0), batch_size=4)
        trainer = Trainer(cfg)
        trainer.run_phase1()
        with open(tmp_path / "ov" / "metrics.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        first = np.mean([float(r["L_net1"]) for r in rows[:5]])
        last = np.mean([float(r["L_net1"]) for r in rows[-5:]])
        assert last < first
