"""Temporal KG embedding models, teacher/student distillation, ranking evaluation."""

__version__ = "0.1.0"
