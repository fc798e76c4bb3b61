"""heatlab: a desk-scale laboratory for cross-morphology policy training.

Submodules:
  env       GaitChain morphology family and tabular MDP compilation
  pomdp     composite latent-morphology POMDP and exact solvers
  policy    memory-based policies with hand-derived gradients
  train     sequential on-policy training and benchmark harness
  decpomdp  Dec-POMDP evaluation, brute-force search, DTDE learners
  cli       the `heat` command-line entry point
"""

from . import decpomdp, env, errors, policy, pomdp, train

__all__ = ["env", "pomdp", "policy", "train", "decpomdp", "errors"]
__version__ = "0.1.0"
