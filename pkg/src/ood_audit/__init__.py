"""ood-audit: evaluate, audit and repair OoD benchmarks for object detection."""

__version__ = "0.1.0"
