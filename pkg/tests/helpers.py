"""Shared constants and numeric oracles for the test suite."""

import numpy as np

# (centre, bandwidth) in Hz of a mid vowel and of a single open-vowel formant
VOWEL_FORMANTS = [(500.0, 80.0), (1500.0, 100.0), (2500.0, 150.0)]
OPEN_VOWEL_FORMANTS = [(700.0, 130.0)]

DELTA = 1e-5
GRADIENT_TRIALS = 50
GRADIENT_FLOOR = 1e-6


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|, floor) over the flattened gradients."""
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), GRADIENT_FLOOR)
    return np.linalg.norm(analytic - numeric) / scale


def numeric_gradient(f, x):
    """Central differences of the scalar f() with respect to every entry of x (perturbed in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + DELTA
        plus = f()
        x[idx] = original - DELTA
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * DELTA)
    return grad


# Rows are true classes (anger, happy, neutral, sad), columns predictions
BASELINE_CONFUSION = np.array([[11, 0, 0, 1], [9, 0, 11, 2], [20, 4, 59, 29], [0, 0, 8, 71]])
PITCH_SYNC_CONFUSION = np.array([[39, 2, 7, 0], [6, 5, 10, 1], [7, 11, 72, 22], [0, 0, 11, 68]])


def expand(confusion):
    """(predictions, labels) lists that reproduce a confusion matrix."""
    labels, predictions = [], []
    for true_class, row in enumerate(confusion):
        for predicted, count in enumerate(row):
            labels += [true_class] * count
            predictions += [predicted] * count
    return predictions, labels
