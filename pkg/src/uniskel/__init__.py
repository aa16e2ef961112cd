"""Univariate skeleton prediction: expression synthesis, multi-set data, models and evaluation."""

from __future__ import annotations

__version__ = "0.1.0"
