"""Offline embedding extractor for window-description files."""

from .extract import MODEL_REGISTRY, ExtractorConfig, extract

__all__ = ["MODEL_REGISTRY", "ExtractorConfig", "extract"]

__version__ = "0.1.0"
