"""Mean Flow Policy Optimization: MeanFlow policies for maximum-entropy RL, in numpy."""

__version__ = "0.1.0"
