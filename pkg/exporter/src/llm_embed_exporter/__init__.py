"""Offline exporter: one embedding record per vocab label, provider file format."""

from . import cli
from .export import ExportError, ExportJob, export_embeddings, stub_vector

__all__ = ["ExportError", "ExportJob", "export_embeddings", "stub_vector", "cli"]

__version__ = "0.1.0"
