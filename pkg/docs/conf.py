#!/usr/bin/env python
#
# quadracer documentation build configuration file.

import os
import sys

sys.path.insert(0, os.path.abspath(".."))

import quadracer  # noqa: E402

extensions = ["sphinx.ext.autodoc", "sphinx.ext.viewcode", "sphinx.ext.mathjax"]
templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"

project = "quadracer"
copyright = "2026, Chris Winikka"
author = "Chris Winikka"
version = quadracer.__version__
release = quadracer.__version__

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"
autodoc_mock_imports = ["torch"]

html_theme = "alabaster"
html_static_path = ["_static"]
htmlhelp_basename = "quadracerdoc"

man_pages = [(master_doc, "quadracer", "quadracer Documentation", [author], 1)]
