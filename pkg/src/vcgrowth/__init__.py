"""Varying-coefficient dynamic panel growth regressions.

The pipeline derives distribution-shape drivers (poverty, Gini, middle-class
share) from centile income grids, stacks them into a dynamic panel design
with country fixed effects, estimates the model by iterated reweighted least
squares, and reports coefficient curves with heteroscedasticity-consistent
bands. A simulation module generates panels from the model's own process for
recovery and bias studies.
"""

from __future__ import annotations

__version__ = "0.1.0"
