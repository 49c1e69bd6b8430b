"""Simulation settings, data generation and the Monte Carlo harness."""

from sorcall.simulate.generate import (
    ChoiceParams,
    Draw,
    generate,
    generate_binary,
    generate_choice_model,
    generate_continuous,
    substream,
)
from sorcall.simulate.scenarios import (
    ScenarioSpec,
    population_distribution,
    population_truth,
    scenario,
    sensitivity_scenario,
)
from sorcall.simulate.study import (
    StudyReport,
    choice_model_odds_ratios,
    run_sensitivity_study,
    run_study,
)

__all__ = [
    "ChoiceParams",
    "choice_model_odds_ratios",
    "Draw",
    "ScenarioSpec",
    "StudyReport",
    "generate",
    "generate_binary",
    "generate_choice_model",
    "generate_continuous",
    "population_distribution",
    "population_truth",
    "run_sensitivity_study",
    "run_study",
    "scenario",
    "sensitivity_scenario",
    "substream",
]
