"""Weil-Petersson geodesics between planar shapes via teichon shooting."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # source checkout without install
    __version__ = "0.0.0"
