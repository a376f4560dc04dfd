"""Attack suite: single-model gradient attacks, black-box attacks, and
attacks aimed at the weak-defense ensemble itself."""

from .blackbox import HsjaResult, hop_skip_jump, one_pixel, train_substitute
from .config import (
    AttackConfig,
    AttackReport,
    config_from_dict,
    craft_set,
    presets_to_json,
    run_attack,
    whitebox_settings,
    zero_knowledge_presets,
)
from .gradient import bim, cw_l2, deepfool, fgsm, jsma, mim, pgd
from .whitebox import (
    GreedyResult,
    eot_ensemble_attack,
    greedy_ensemble_attack,
    wd_loss_gradient,
)

__all__ = [
    "AttackConfig", "AttackReport", "GreedyResult", "HsjaResult",
    "bim", "config_from_dict", "craft_set", "cw_l2", "deepfool",
    "eot_ensemble_attack", "fgsm", "greedy_ensemble_attack", "hop_skip_jump",
    "jsma", "mim", "one_pixel", "pgd", "presets_to_json", "run_attack",
    "train_substitute", "wd_loss_gradient", "whitebox_settings",
    "zero_knowledge_presets",
]
