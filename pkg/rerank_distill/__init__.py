"""
Reranker distillation toolkit.

Turns teacher-model relevance judgments into calibrated training data for
rerankers and measures the result: Bradley-Terry scoring of pairwise
preferences, hard-negative filtering, multi-turn memory examples, IR
metrics and score-distribution diagnostics.
"""

from __future__ import annotations

__version__ = "0.1.0"
