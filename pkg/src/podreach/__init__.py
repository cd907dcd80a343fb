"""Reachability-optimal control of partially observed stochastic hybrid systems.

Point-based value iteration where beliefs (unnormalized sufficient statistics)
and value functions are Gaussian mixtures over a hybrid state space.
"""

from .gmix import (HybridMixture, WeightedGaussian, affine_pushforward, inner_product,
                   interval_mass, product, reduce)
from .hsmodel import (DiscretizedObservation, HybridModel, IndicatorFit, build_thermostat,
                      fit_indicator, load_model, save_model, transition_mixture)

__version__ = "0.1.0"
