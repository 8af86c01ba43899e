"""Streaming semantic enrichment of healthcare messages.

HL7v2, FHIR JSON and pipe-delimited inputs are decoded into domain records,
encoded as FHIR-style RDF graphs, kept in a time-indexed triplestore and
served to windowed queries, condition detectors and an OMOP exporter.
"""

__version__ = "0.1.0"
