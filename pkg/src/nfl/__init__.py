"""Joint learner for answer-set-program rules and a perception model.

The pipeline runs six stages: abduction of latent possibilities,
construction of maximal candidate rules, generalisation, optimisation to a
compact rule space, semantic-loss training of a perception network with a
learned rule posterior, and weak-constraint optimal solving.
"""

__version__ = "0.1.0"
