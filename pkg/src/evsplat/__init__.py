"""Event-plus-RGB dynamic Gaussian reconstruction lab.

Desk-scale, CPU-only pipeline: a brightness-threshold event simulator,
contrast-maximization optical flow with low-rank adapter fine-tuning, a
differentiable Gaussian splatting renderer, event-to-splat data
association, and a decomposed-motion training loop, all checked against
analytic and brute-force oracles on synthetic scenes.
"""

__version__ = "0.1.0"
