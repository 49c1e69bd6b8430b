"""Shared helpers for building systems at known parameter values."""

import numpy as np

from sorcall.equations import WorkingModels
from sorcall.simulate import population_distribution, population_truth


def models_for(spec):
    family = "binary" if spec.family == "binary" else "gaussian"
    return WorkingModels.linear(2, family, names=("xa", "xb"))


def true_point(system, spec):
    """Parameter vector of ``system`` at the generating values of a TT-type scenario."""
    beta = list(spec.beta)
    if spec.family == "continuous":
        beta.append(np.log(spec.sigma2))
    values = {
        "alpha1": spec.alpha1,
        "alpha2": spec.alpha2,
        "beta": beta,
        "gamma": [spec.gamma],
        "theta": [population_truth(spec)],
    }
    return system.layout.join({b.name: np.asarray(values[b.name], float)
                               for b in system.layout.blocks})


def moment_z(system, params):
    """Each component of ``g`` divided by its estimated standard error."""
    psi = system.per_unit(params) * system.weight[:, None]
    g = psi.sum(axis=0)
    n = psi.shape[0]
    se = np.sqrt(np.sum((psi - g / n) ** 2, axis=0))
    return g / se


DIST = population_distribution()
