"""V-learning and Nash Q-learning for tabular Markov games, with exact gap oracles."""

__version__ = "0.1.0"
