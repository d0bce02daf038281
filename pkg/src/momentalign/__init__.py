"""Natural-language moment retrieval with dynamic filters and iterative graph adjustment."""

__version__ = "0.1.0"
