"""finrag: financial exam benchmarking, retrieval-based few-shot prompting,
and a citation-grounded question answering service."""

__version__ = "0.1.0"
