"""Estimating-equation systems and closed-form baseline estimators."""

from sorcall.equations.baselines import (
    PCResult,
    build_cc,
    build_cor,
    build_corx,
    cc_estimator,
    cor_estimator,
    corx_estimator,
    impute_unsure,
    mar_estimator,
    pc_estimator,
    pc_solve,
)
from sorcall.equations.common import WorkingModels
from sorcall.equations.multicall import (
    build_multicall_dr,
    build_multicall_ipw,
    build_multicall_reg,
)
from sorcall.equations.systems import Block, EquationSystem, Layout, Moments
from sorcall.equations.twocall import build_dr, build_ipw, build_reg, build_sensitivity

__all__ = [
    "Block",
    "EquationSystem",
    "Layout",
    "Moments",
    "PCResult",
    "WorkingModels",
    "build_cc",
    "build_cor",
    "build_corx",
    "build_dr",
    "build_ipw",
    "build_multicall_dr",
    "build_multicall_ipw",
    "build_multicall_reg",
    "build_reg",
    "build_sensitivity",
    "cc_estimator",
    "cor_estimator",
    "corx_estimator",
    "impute_unsure",
    "mar_estimator",
    "pc_estimator",
    "pc_solve",
]
