"""Variational solver and checks for a singular free-boundary Monge-Ampere equation.

Kept free of heavy imports so that ``python -m fbma`` can cap BLAS threads
before numpy loads.
"""
try:
    from importlib.metadata import PackageNotFoundError, version as _version
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"
