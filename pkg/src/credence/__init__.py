"""Belief-function reasoning with weighted fuzzy rules.

Subpackages and modules:

- ``dempster``: classical Dempster-Shafer kernel over small finite frames.
- ``autodiff``: minimal reverse-mode differentiation and dense networks.
- ``engine``: fuzzy-rule belief models, exact queries, rejection sampling.
- ``training``: unsupervised rule learning on the synthetic 11-bit world.
- ``classifier``: evidence-combining robust classifier and its training.
- ``serialize``: versioned model documents.
- ``cli``: command-line front end.
"""

__version__ = "0.1.0"
