"""EIDO ingestion, transformation, geocoding and incident correlation."""

from .composite import CompositeView, derive_composite
from .correlator import CorrelationConfig, Decision, IncidentContext, SimilarityBreakdown, correlate, score
from .model import EidoDocument, EidoError, document_from_dict, document_to_dict, parse_document, serialize_document

__version__ = "0.1.0"

__all__ = [
    "CompositeView",
    "CorrelationConfig",
    "Decision",
    "EidoDocument",
    "EidoError",
    "IncidentContext",
    "SimilarityBreakdown",
    "correlate",
    "derive_composite",
    "document_from_dict",
    "document_to_dict",
    "parse_document",
    "score",
    "serialize_document",
]
