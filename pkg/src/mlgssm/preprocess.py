"""Per-series transforms applied before clustering real data.

Every function works along the time axis of a ``(T,)``, ``(T, d_y)`` or
``(N, T, d_y)`` array and treats series and channels independently.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConstantSeries, NonPositiveValue, TooShort


def _time_axis(x):
    return 0 if x.ndim <= 2 else 1


def difference(x, order=1):
    """``order``-fold first differencing; the output is ``order`` steps shorter."""
    x = np.asarray(x, dtype=float)
    if order < 1:
        raise ValueError("order must be >= 1")
    axis = _time_axis(x)
    if x.shape[axis] <= order:
        raise TooShort(f"length {x.shape[axis]} is too short for differencing of order {order}")
    return np.diff(x, n=order, axis=axis)


def log_transform(x):
    x = np.asarray(x, dtype=float)
    bad = np.argwhere(~(x > 0))
    if bad.size:
        raise NonPositiveValue(tuple(int(i) for i in bad[0]))
    return np.log(x)


def moving_average(x, window):
    """Valid-mode moving average (no edge padding): length ``T - window + 1``."""
    x = np.asarray(x, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    axis = _time_axis(x)
    T = x.shape[axis]
    if T < window:
        raise TooShort(f"length {T} is shorter than the window {window}")
    c = np.cumsum(x, axis=axis)
    c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
    upper = np.take(c, np.arange(window, T + 1), axis=axis)
    lower = np.take(c, np.arange(0, T - window + 1), axis=axis)
    return (upper - lower) / window


def maxmin_normalize(x):
    """Rescale each series and channel to ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    axis = _time_axis(x)
    lo = x.min(axis=axis, keepdims=True)
    hi = x.max(axis=axis, keepdims=True)
    if np.any(hi <= lo):
        raise ConstantSeries("max-min normalization of a constant series")
    return (x - lo) / (hi - lo)


STEPS = {
    "difference": difference,
    "log_transform": log_transform,
    "moving_average": moving_average,
    "maxmin_normalize": maxmin_normalize,
}


@dataclass
class PipelineSpec:
    """Ordered transform steps, e.g. ``[("log_transform", {}), ("difference", {"order": 1})]``."""

    steps: list = field(default_factory=list)

    def __post_init__(self):
        norm = []
        for step in self.steps:
            if isinstance(step, str):
                step = (step, {})
            elif isinstance(step, dict):
                step = (step["name"], {k: v for k, v in step.items() if k != "name"})
            name, kwargs = step
            if name not in STEPS:
                raise ValueError(f"unknown preprocessing step {name!r}")
            norm.append((name, dict(kwargs)))
        self.steps = norm

    @classmethod
    def parse(cls, text):
        """Parse ``"log_transform,difference:1,moving_average:3,maxmin_normalize"``."""
        steps = []
        for token in filter(None, (t.strip() for t in text.split(","))):
            name, _, arg = token.partition(":")
            kwargs = {}
            if arg:
                key = {"difference": "order", "moving_average": "window"}.get(name)
                if key is None:
                    raise ValueError(f"step {name!r} takes no argument")
                kwargs[key] = int(arg)
            steps.append((name, kwargs))
        return cls(steps)

    def to_list(self):
        return [{"name": name, **kwargs} for name, kwargs in self.steps]

    def apply(self, x):
        for name, kwargs in self.steps:
            x = STEPS[name](x, **kwargs)
        return x


def apply_pipeline(series_list, spec):
    """Transform a list of series and stack them into ``(N, T, d_y)``.

    Series may differ in length on input but must agree afterwards.
    """
    out = []
    for s in series_list:
        s = np.asarray(s, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        out.append(spec.apply(s))
    lengths = {o.shape[0] for o in out}
    if len(lengths) != 1:
        raise ValueError(f"preprocessed series have unequal lengths {sorted(lengths)}")
    return np.stack(out)


# Recipes used for the real datasets, by name.
RECIPES = {
    "ecg": PipelineSpec([("difference", {"order": 3})]),
    "income": PipelineSpec([("log_transform", {}), ("difference", {"order": 1})]),
    "temperature": PipelineSpec([("moving_average", {"window": 3}), ("difference", {"order": 1})]),
    "population": PipelineSpec([("log_transform", {}), ("maxmin_normalize", {})]),
}
