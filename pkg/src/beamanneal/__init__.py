"""Reward-guided segment search with an annealing beam.

Subpackages: ``core`` (MDP vocabulary), ``synthenv`` (synthetic tasks with
an exact oracle), ``backends`` (generation + reward backends), ``search``
(inference strategies), ``datagen`` (rollout-labeled training data),
``scorer``/``prmtrain`` (reward-model training), ``cli`` (operator
surface), ``kernels`` (compiled hashing with a pure-Python fallback).
"""

__version__ = "0.1.0"
