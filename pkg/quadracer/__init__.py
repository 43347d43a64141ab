"""Top-level package for quadracer."""

__author__ = """Chris Winikka"""
__email__ = "cwinikka@gmail.com"
__version__ = "0.1.0"
