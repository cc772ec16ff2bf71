"""Python bindings for the repairlab C++ core."""

import os
from pathlib import Path

_bundled = Path(__file__).with_name("bin") / "toyexpr"
if "REPAIRLAB_TOYEXPR" not in os.environ and _bundled.exists():
    os.environ["REPAIRLAB_TOYEXPR"] = str(_bundled)

from ._core import (  # noqa: E402
    Pipeline,
    RepairlabError,
    bleu,
    gae,
    kl_estimate,
    pass_at_k,
    performance_gap,
    ppo_clip_objective,
    pref_prob,
    td_errors,
    toy_tasks,
    verify,
)

__all__ = [
    "Pipeline",
    "RepairlabError",
    "bleu",
    "gae",
    "kl_estimate",
    "pass_at_k",
    "performance_gap",
    "ppo_clip_objective",
    "pref_prob",
    "td_errors",
    "toy_tasks",
    "verify",
]
