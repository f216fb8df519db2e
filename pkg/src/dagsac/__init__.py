"""Soft actor-critic with DAG-factored policies.

A self-contained numpy implementation: hand-derived MLP gradients, factored
tanh-Gaussian actors wired along a validated action graph, twin soft Q
critics with a Polyak-averaged value target, an exact tabular soft policy
iteration oracle, desk-scale environments with an LQR ground truth, and a
train/eval/verify/plot/sweep command line.
"""

__version__ = "0.1.0"
