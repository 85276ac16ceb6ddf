"""Long-form audio inference engine and benchmark harness (CPU, float32)."""

__version__ = "0.1.0"
