"""memdet: a memorizing detector worker for protocol testing."""

__version__ = "0.1.0"
