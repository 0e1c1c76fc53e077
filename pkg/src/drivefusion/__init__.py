"""Multi-sensor driving trace analysis: filtration, vehicle and environmental reasoning, response generation."""

__version__ = "0.1.0"
