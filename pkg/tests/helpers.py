"""Shared numeric helpers for the test suite."""
import numpy as np

FD_EPSILON = 1e-6


def numeric_gradient(loss_fn, array: np.ndarray, eps: float = FD_EPSILON) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + eps
        plus = loss_fn()
        array[idx] = original - eps
        minus = loss_fn()
        array[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(model, x, y, weights=None, training=False, seed=None, tolerance=1e-4):
    """Compare every trainable tensor's analytic gradient with finite differences.

    With ``seed`` the dropout masks are redrawn identically on every call.
    """

    def rng():
        return None if seed is None else np.random.default_rng(seed)

    _, grads = model.loss_and_gradients(x, y, weights, training=training, rng=rng())

    def loss():
        return model.loss_and_gradients(x, y, weights, training=training, rng=rng())[0]

    errors = {}
    for name in model.trainable:
        numeric = numeric_gradient(loss, model.params[name])
        errors[name] = relative_error(grads[name], numeric)
    failing = {k: v for k, v in errors.items() if v > tolerance}
    assert not failing, f"gradient mismatch: {failing}"
    return errors
