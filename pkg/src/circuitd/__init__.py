"""Circuits of asynchronous document-processing agents coordinated through the file system."""

__version__ = "0.1.0"
