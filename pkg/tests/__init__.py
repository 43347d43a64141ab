"""Unit test package for quadracer."""
