"""itr-eval - evaluate individualized treatment rules on randomized experiments."""

__version__ = "0.1.0"
