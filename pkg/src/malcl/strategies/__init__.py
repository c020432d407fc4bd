"""Strategy registry: name -> plug-in class, with scenario pairing checks."""

from __future__ import annotations

from typing import Callable

from malcl.errors import ConfigurationError
from malcl.strategies.base import (
    ExtraData,
    NoneStrategy,
    Strategy,
    TaskContext,
    TeacherSnapshot,
    check_scenario,
    distill_targets,
    kd_loss,
)
from malcl.strategies.distillation import LwF, LwFConfig, lwf_loss
from malcl.strategies.generative import (
    BIRConfig,
    BrainInspiredReplay,
    GenerativeReplay,
    ReplayBatch,
    ReplayThroughFeedback,
    bir_step,
    gr_distill,
    gr_task_loss,
    mix_losses,
    replay_ratio,
    rtf_loss,
)
from malcl.strategies.icarl import (
    ICaRL,
    herding_order,
    icarl_classify,
    icarl_construct_exemplars,
    icarl_loss,
    icarl_reduce_exemplars,
)
from malcl.strategies.regularization import (
    EWC,
    SI,
    EWCState,
    OnlineEWC,
    OnlineEWCState,
    SIState,
    compute_fisher_diagonal,
    ewc_online_consolidate,
    ewc_online_penalty,
    ewc_penalty,
    si_consolidate,
    si_penalty,
    si_track,
)
from malcl.strategies.replay import (
    AGEM,
    ExperienceReplay,
    Joint,
    PartialJointReplay,
    PJRStore,
    ReplayBuffer,
    agem_project,
    er_step,
    er_update_buffer,
    pjr_sample,
)

REGISTRY: dict[str, Callable[..., Strategy]] = {
    "none": NoneStrategy,
    "joint": Joint,
    "pjr": PartialJointReplay,
    "ewc": EWC,
    "ewc_online": OnlineEWC,
    "si": SI,
    "lwf": LwF,
    "gr": GenerativeReplay,
    "gr_distill": gr_distill,
    "rtf": ReplayThroughFeedback,
    "bir": BrainInspiredReplay,
    "er": ExperienceReplay,
    "agem": AGEM,
    "icarl": ICaRL,
}

# Report row order, grouped by approach family
ROW_ORDER = ["none", "joint", "ewc", "ewc_online", "si", "lwf", "gr", "gr_distill", "rtf", "bir",
             "er", "agem", "icarl", "pjr"]
FAMILY_ORDER = ["baselines", "regularization", "replay", "replay_exemplars", "partial_replay"]


def parse_strategy(spec: str) -> tuple[str, dict]:
    """``"pjr:0.2"`` -> ``("pjr", {"fraction": 0.2})``; other names take no inline argument."""
    name, _, arg = spec.strip().partition(":")
    name = name.strip().lower()
    if name not in REGISTRY:
        raise ConfigurationError(f"unknown strategy {name!r}")
    if not arg:
        return name, {}
    if name != "pjr":
        raise ConfigurationError(f"strategy {name!r} takes no inline argument")
    try:
        return name, {"fraction": float(arg)}
    except ValueError:
        raise ConfigurationError(f"bad PJR fraction {arg!r}") from None


def make_strategy(kind: str, **params) -> Strategy:
    if kind not in REGISTRY:
        raise ConfigurationError(f"unknown strategy {kind!r}")
    try:
        return REGISTRY[kind](**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for strategy {kind!r}: {exc}") from None


def strategy_dispatch(kind: str | Strategy, scenario: str, **params) -> Strategy:
    """Build the strategy and reject pairings it is not defined for."""
    strategy = kind if isinstance(kind, Strategy) else make_strategy(kind, **params)
    check_scenario(strategy, scenario)
    return strategy


def row_key(name: str) -> int:
    return ROW_ORDER.index(name) if name in ROW_ORDER else len(ROW_ORDER)


__all__ = [
    "ExtraData", "NoneStrategy", "Strategy", "TaskContext", "TeacherSnapshot", "check_scenario",
    "distill_targets", "kd_loss", "LwF", "LwFConfig", "lwf_loss", "BIRConfig", "BrainInspiredReplay",
    "GenerativeReplay", "ReplayBatch", "ReplayThroughFeedback", "bir_step", "gr_distill", "gr_task_loss",
    "mix_losses", "replay_ratio", "rtf_loss", "ICaRL", "herding_order", "icarl_classify",
    "icarl_construct_exemplars", "icarl_loss", "icarl_reduce_exemplars", "EWC", "SI", "EWCState",
    "OnlineEWC", "OnlineEWCState", "SIState", "compute_fisher_diagonal", "ewc_online_consolidate",
    "ewc_online_penalty", "ewc_penalty", "si_consolidate", "si_penalty", "si_track", "AGEM",
    "ExperienceReplay", "Joint", "PartialJointReplay", "PJRStore", "ReplayBuffer", "agem_project",
    "er_step", "er_update_buffer", "pjr_sample", "REGISTRY", "ROW_ORDER", "FAMILY_ORDER",
    "parse_strategy", "make_strategy", "strategy_dispatch", "row_key",
]
