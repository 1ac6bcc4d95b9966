"""Dataset container and input validation helpers."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TimeSeriesDataset:
    """``N`` equal-length series stored as a ``(N, T, d_y)`` array."""

    values: np.ndarray
    ids: list = field(default=None)
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = check_panel(self.values)
        if self.ids is None:
            self.ids = [str(i) for i in range(self.n_series)]
        self.ids = [str(i) for i in self.ids]
        if len(self.ids) != self.n_series:
            raise ValueError(f"{len(self.ids)} ids for {self.n_series} series")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("series ids must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.n_series,):
                raise ValueError(f"labels have shape {self.labels.shape}, "
                                 f"expected ({self.n_series},)")

    @property
    def n_series(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]

    @property
    def n_channels(self):
        return self.values.shape[2]

    def __len__(self):
        return self.n_series


def check_panel(X, min_length=1):
    """Validate and coerce observations to a float ``(N, T, d_y)`` array.

    A 2-D input is read as ``N`` univariate series of length ``T``.
    """
    if isinstance(X, TimeSeriesDataset):
        return X.values
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected a (N, T) or (N, T, d_y) array, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[2] < 1:
        raise ValueError(f"empty dataset of shape {X.shape}")
    if X.shape[1] < min_length:
        raise ValueError(f"series length {X.shape[1]} is below the minimum {min_length}")
    if not np.all(np.isfinite(X)):
        raise ValueError("observations contain NaN or infinite values")
    return np.ascontiguousarray(X)
