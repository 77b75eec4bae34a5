# -*- coding: utf-8 -*-
#
# Sphinx configuration for the timbrewm documentation.
# Build with `make html` after installing sphinx and sphinx_rtd_theme.

import os
import sys
sys.path.insert(0, os.path.abspath(os.pardir))

project = 'timbrewm'
copyright = "2026, the timbrewm developers"
author = 'the timbrewm developers'

version = '0.1'
release = '0.1.0'

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
]
# numpy style docstrings only
napoleon_google_docstring = False

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'

html_theme = 'sphinx_rtd_theme'
html_static_path = ['_static']
htmlhelp_basename = 'timbrewmdoc'

latex_documents = [
    (master_doc, 'timbrewm.tex', 'timbrewm Documentation', author, 'manual'),
]
man_pages = [
    (master_doc, 'timbrewm', 'timbrewm Documentation', [author], 1),
]
texinfo_documents = [
    (master_doc, 'timbrewm', 'timbrewm Documentation', author, 'timbrewm',
     'Timbre watermarking of speech', 'Miscellaneous'),
]
