"""Federated graph-learning backdoor attack and certified vote-ensemble defense."""
__version__ = "0.1.0"
