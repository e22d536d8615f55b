"""Re-balanced contrastive learning for spectral face anti-spoofing."""

__version__ = "0.1.0"

_LAZY = {
    "SpectralFASClassifier": "estimator",
    "SpectralFASNet": "model",
    "RunConfig": "trainer",
    "Tensor": "autodiff",
}


def __getattr__(name):
    # lazy so that the metrics-only CLI path never imports the model
    if name in _LAZY:
        import importlib

        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(name)
