"""Video gaze estimation with difference-driven spatial attention, causal temporal models
and few-shot Gaussian-process personalisation, on a numpy autodiff core."""

__version__ = "0.1.0"
