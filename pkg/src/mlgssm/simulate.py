"""Synthetic data from rotation-matrix LGSSMs.

Randomness comes from :class:`numpy.random.Generator` (PCG64). A dataset seed
feeds a :class:`numpy.random.SeedSequence`; every series gets its own child
stream, spawned in series order, used first for its angle and then for its
noise. Series can therefore be generated independently and in any order.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeriesDataset
from .kalman import LgssmParams


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass
class GroupSpec:
    """One group of series sharing noise settings and an angle band."""

    count: int
    angle_low: float
    angle_high: float
    Gamma: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    Sigma: np.ndarray = field(default_factory=lambda: np.array([[0.01]]))
    C: np.ndarray = field(default_factory=lambda: np.ones((1, 2)))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(2))
    P: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("group count must be >= 1")
        if not 0 < self.angle_low <= self.angle_high <= np.pi:
            raise ValueError(f"angle band ({self.angle_low}, {self.angle_high}) "
                             "must lie within (0, pi]")


def paper_groups():
    """Three bands of 20 series: 40-45, 80-90 and 160-180 degrees."""
    deg = np.pi / 180.0
    return [
        GroupSpec(20, 40 * deg, 45 * deg),
        GroupSpec(20, 80 * deg, 90 * deg),
        GroupSpec(20, 160 * deg, 180 * deg),
    ]


@dataclass
class SimSpec:
    groups: list = field(default_factory=paper_groups)
    T: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.groups:
            raise ValueError("at least one group is required")


@dataclass
class LabeledDataset:
    dataset: TimeSeriesDataset
    labels: np.ndarray
    params: list
    angles: np.ndarray


def sample_lgssm(params, T, rng):
    """Draw one ``(T, d_y)`` series. Zero covariances are allowed here."""
    rng = np.random.default_rng(rng)
    dx, dy = params.dx, params.dy

    def draw(cov, size):
        # svd-based sampling accepts semidefinite (including zero) covariances
        return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=size,
                                       method="svd")

    u = draw(params.P, None)
    w = draw(params.Gamma, T)
    v = draw(params.Sigma, T)
    x = np.empty((T, dx))
    x[0] = params.mu + u
    for t in range(1, T):
        x[t] = params.A @ x[t - 1] + w[t]
    return x @ params.C.T + v


def predict_noise_free(params, T):
    """Deterministic trajectory ``x[1] = mu``, ``x[t] = A x[t-1]``, ``y = C x``."""
    x = np.empty((T, params.dx))
    x[0] = params.mu
    for t in range(1, T):
        x[t] = params.A @ x[t - 1]
    return x @ params.C.T


def generate_dataset(spec=None, seed=None):
    """Sample every group's series; angles are uniform on ``[low, high)``."""
    spec = spec or SimSpec()
    seed = spec.seed if seed is None else seed
    n_total = sum(g.count for g in spec.groups)
    streams = np.random.SeedSequence(seed).spawn(n_total)
    values, labels, params, angles = [], [], [], []
    i = 0
    for g_index, group in enumerate(spec.groups):
        for _ in range(group.count):
            rng = np.random.default_rng(streams[i])
            angle = rng.uniform(group.angle_low, group.angle_high)
            p = LgssmParams(A=rotation(angle), Gamma=group.Gamma, C=group.C,
                            Sigma=group.Sigma, mu=group.mu, P=group.P)
            values.append(sample_lgssm(p, spec.T, rng))
            labels.append(g_index)
            params.append(p)
            angles.append(angle)
            i += 1
    labels = np.asarray(labels)
    ds = TimeSeriesDataset(np.stack(values), labels=labels)
    return LabeledDataset(ds, labels, params, np.asarray(angles))
