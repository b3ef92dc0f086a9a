"""Numerical Cartan-calculus checks for Kaluza-Klein variational models."""

__version__ = "0.1.0"
