"""Python front end for the rlol C++ core."""

import json
import os

from . import _core
from ._core import (
    Config,
    commit_bf16,
    effective_lr,
    effective_rank,
    gae_advantages,
    grpo_advantages,
    kl_loss,
    optimizer_memory_bytes,
    optimizer_update,
    policy_loss,
    recover_prev_momentum,
)

__all__ = [
    "Config",
    "load_config",
    "run_experiment",
    "analyze_run",
    "compare_runs",
    "sweep_lr",
    "gradcheck",
    "checkpoint_sparsity",
    "commit_bf16",
    "effective_lr",
    "effective_rank",
    "gae_advantages",
    "grpo_advantages",
    "kl_loss",
    "optimizer_memory_bytes",
    "optimizer_update",
    "policy_loss",
    "recover_prev_momentum",
]


def load_config(path=None, text=None, overrides=None):
    """Config from a file or text, with `key=value` overrides applied in order."""
    if (path is None) == (text is None):
        raise ValueError("pass exactly one of path or text")
    cfg = Config.from_file(os.fspath(path)) if path is not None else Config.from_text(text)
    for key, value in (overrides or {}).items():
        cfg.set(key, str(value))
    cfg.validate()
    return cfg


def run_experiment(config, run_dir=""):
    return json.loads(_core.run_experiment(config, os.fspath(run_dir)))


def analyze_run(run_dir):
    return json.loads(_core.analyze_run(os.fspath(run_dir)))


def compare_runs(run_dirs, out_dir):
    return json.loads(_core.compare_runs([os.fspath(d) for d in run_dirs], os.fspath(out_dir)))


def sweep_lr(config, grid, seeds, out_dir):
    return json.loads(_core.sweep_lr(config, list(grid), list(seeds), os.fspath(out_dir)))


def gradcheck(config, coords=64, h=1e-5):
    return json.loads(_core.gradcheck(config, coords, h))


def checkpoint_sparsity(before, after, tol=1e-5, master=False):
    """Update sparsity between two checkpoint files (bf16 stored values unless `master`)."""
    return _core.checkpoint_sparsity(os.fspath(before), os.fspath(after), tol, master)
