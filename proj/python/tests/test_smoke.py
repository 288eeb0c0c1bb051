import math
from pathlib import Path

import pytest

import rlol

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def tiny_config(**overrides):
    base = {
        "run.steps": 2,
        "init.pretrain_steps": 0,
        "model.d_model": 16,
        "model.n_layers": 1,
        "model.n_heads": 2,
        "model.d_ff": 32,
        "algo.batch_prompts": 4,
        "algo.group_size": 3,
        "run.eval_prompts": 4,
        "run.eval_interval": 1,
        "run.checkpoint_interval": 1,
        "run.probe_steps": 1,
        "run.final_window": 1,
    }
    base.update(overrides)
    return rlol.load_config(CONFIGS / "grpo_adamw.conf", overrides=base)


def test_config_round_trip_and_errors():
    cfg = rlol.load_config(CONFIGS / "grpo_sgd.conf")
    assert rlol.Config.from_text(cfg.to_text()) == cfg
    assert "optim.lr" in rlol.Config.keys()
    with pytest.raises(ValueError):
        rlol.load_config(text="run.bogus = 1\n")


def test_scalar_primitives():
    assert rlol.commit_bf16(1.0 + 1e-6) == 1.0
    assert rlol.commit_bf16(1.0 + 0.004) == 1.0078125
    theta, _, _ = rlol.optimizer_update("sgd", 1, 1.0, 0.0, 0.0, 0.5, lr=0.1)
    assert theta == pytest.approx(0.95, abs=1e-15)
    assert rlol.optimizer_memory_bytes(100, "rmsprop") == 800
    assert rlol.optimizer_memory_bytes(1_700_000_000, "adamw") - rlol.optimizer_memory_bytes(1_700_000_000, "sgd") == 13_600_000_000
    assert rlol.effective_lr(1e-6, 0.0, 1e-8) == pytest.approx(100.0)
    assert rlol.grpo_advantages([1, 1, 1, 1], 4) == [0, 0, 0, 0]
    adv, ret = rlol.gae_advantages([1.0, 2.0], [0.5, 0.25], 0.0, 0.9)
    assert adv == [0.5, 1.75]
    assert ret == [1.0, 2.0]
    assert rlol.kl_loss([0.0], [math.log(2.0)]) == pytest.approx(1.0 - math.log(2.0), abs=1e-15)
    assert rlol.effective_rank(2, 2, [10.0, 0.0, 0.0, 0.1]) == 1
    assert rlol.recover_prev_momentum([1.9], [1.0], 0.9)[0] == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        rlol.optimizer_memory_bytes(1, "lion")


def test_run_analyze_compare(tmp_path):
    cfg = tiny_config()
    a = rlol.run_experiment(cfg, tmp_path / "a")
    b = rlol.run_experiment(cfg, tmp_path / "b")
    assert a["steps_completed"] == 2
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    bundle = rlol.analyze_run(tmp_path / "a")
    assert bundle["sparsity"]["global"] == a["sparsity"]
    ck = tmp_path / "a" / "checkpoints"
    assert rlol.checkpoint_sparsity(ck / "policy_step_000000.rlol", ck / "policy_step_000002.rlol") == a["sparsity"]
    rows = rlol.compare_runs([tmp_path / "a", tmp_path / "a"], tmp_path / "cmp")
    assert all(r["delta_sparsity"] == 0.0 for r in rows)


def test_sweep_and_gradcheck(tmp_path):
    cfg = tiny_config(**{"optim.kind": "sgd", "optim.lr": 0.1})
    res = rlol.sweep_lr(cfg, [0.1], [0], tmp_path / "sweep")
    assert len(res["rows"]) == 1 and res["rows"][0]["ok"]
    g = rlol.gradcheck(cfg, coords=16)
    assert g["coords_checked"] == 16
    assert g["max_rel_error"] < 1e-3
