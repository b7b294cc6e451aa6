"""Magnetic-induction link physics.

Mean received power between two coils falls off as ``k / d**n`` with
``n = 6`` for the near-field MI link (``n = 3`` is kept as an alternate
mode).  The lumped coupling constant ``k`` collects frequency, soil
permeability, transmit power, receiver turns, both coil radii, the
misalignment angle and the loop resistance.  Measurements are the mean
power plus zero-mean Gaussian noise, unclipped.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_point, check_positive

VACUUM_PERMEABILITY = 4e-7 * math.pi
MIN_DISTANCE = 1e-6
RADIUS_RANGE = (1e-4, 1.0)
PATH_LOSS_EXPONENTS = (6, 3)
NOISE_MODES = ("power", "ranging")


class ChannelDomainError(ValueError):
    """Raised for physically meaningless channel inputs or co-located coils."""


@dataclass(frozen=True)
class CoilSpec:
    turns: int
    radius: float

    def __post_init__(self):
        check_int(self.turns, "turns", minimum=1)
        r = check_positive(self.radius, "radius")
        lo, hi = RADIUS_RANGE
        if not lo <= r <= hi:
            raise ChannelDomainError(f"coil radius {r} m outside [{lo}, {hi}] m")


@dataclass(frozen=True)
class ChannelParams:
    frequency: float = 7e6
    permeability: float = VACUUM_PERMEABILITY
    unit_length_resistance: float = 0.01
    transmit_power: float = 0.1
    misalignment_angle: float = math.pi / 2
    path_loss_exponent: int = 6

    def __post_init__(self):
        for name in ("frequency", "permeability", "unit_length_resistance", "transmit_power"):
            try:
                check_positive(getattr(self, name), name)
            except ValueError as exc:
                raise ChannelDomainError(str(exc)) from None
        if not math.isfinite(self.misalignment_angle):
            raise ChannelDomainError("misalignment_angle must be finite")
        if self.path_loss_exponent not in PATH_LOSS_EXPONENTS:
            raise ChannelDomainError(
                f"path_loss_exponent must be one of {PATH_LOSS_EXPONENTS}, "
                f"got {self.path_loss_exponent!r}"
            )

    @property
    def angular_frequency(self):
        return 2.0 * math.pi * self.frequency


@dataclass(frozen=True)
class NoiseSpec:
    """Per-link noise standard deviation on received power, in watts."""

    sigma: float

    def __post_init__(self):
        check_positive(self.sigma, "sigma")


@dataclass(frozen=True)
class NoiseModel:
    """How per-link noise levels are assigned when a graph is built.

    ``mode="power"``: every link gets ``sigma * unit`` watts.
    ``mode="ranging"``: ``sigma`` is a ranging error in meters and the link
    noise is ``|d mean_power / d distance| * sigma``.
    """

    sigma: float = 0.05
    unit: float = 1e-12
    mode: str = "power"

    def __post_init__(self):
        check_positive(self.sigma, "noise sigma")
        check_positive(self.unit, "noise unit")
        if self.mode not in NOISE_MODES:
            raise ValueError(f"noise mode must be one of {NOISE_MODES}, got {self.mode!r}")

    def link_sigma(self, k, distance, exponent):
        if self.mode == "power":
            return self.sigma * self.unit
        return ranging_sigma(k, distance, exponent, self.sigma)


def _sin2(angle):
    # sin(n*pi) is not exactly zero in floating point
    if math.fmod(angle, math.pi) == 0.0:
        return 0.0
    return math.sin(angle) ** 2


def coupling_constant(tx, rx, params):
    """Lumped coupling constant ``k`` in W*m**n.

    >>> tx = rx = CoilSpec(turns=20, radius=0.02)
    >>> round(coupling_constant(tx, rx, ChannelParams()) * 1e8, 3)
    4.422
    """
    if not isinstance(tx, CoilSpec) or not isinstance(rx, CoilSpec):
        raise TypeError("tx and rx must be CoilSpec instances")
    num = (
        params.angular_frequency
        * params.permeability
        * params.transmit_power
        * rx.turns
        * tx.radius**3
        * rx.radius**3
        * _sin2(params.misalignment_angle)
    )
    return num / (16.0 * params.unit_length_resistance)


def _check_exponent(exponent):
    if exponent not in PATH_LOSS_EXPONENTS:
        raise ChannelDomainError(f"exponent must be one of {PATH_LOSS_EXPONENTS}, got {exponent!r}")


def received_power(k, distance, exponent=6):
    """Mean received power ``k / distance**exponent`` in watts."""
    _check_exponent(exponent)
    check_positive(k, "k", allow_zero=True)
    if not math.isfinite(distance) or distance < MIN_DISTANCE:
        raise ChannelDomainError(
            f"distance {distance!r} m below the {MIN_DISTANCE} m co-location floor"
        )
    return k / distance**exponent


def mean_power_gradient(k, s_i, s_j, exponent=6):
    """Gradient of the mean received power with respect to ``s_i``."""
    _check_exponent(exponent)
    diff = check_point(s_i, "s_i") - check_point(s_j, "s_j")
    d = float(np.sqrt(diff @ diff))
    if d < MIN_DISTANCE:
        raise ChannelDomainError("coincident positions: gradient undefined")
    return -exponent * k * diff / d ** (exponent + 2)


def ranging_sigma(k, distance, exponent, range_sigma):
    """Power-domain noise equivalent to a ranging error of ``range_sigma`` meters."""
    check_positive(range_sigma, "range_sigma")
    sigma = exponent * k / distance ** (exponent + 1) * range_sigma
    if not sigma > 0:
        raise ChannelDomainError("ranging noise mode needs k > 0 on every link")
    return sigma


def sample_measurement(k, distance, noise, rng, exponent=6, size=None):
    """Noisy received power; may be negative when noise exceeds signal."""
    mean = received_power(k, distance, exponent)
    return mean + rng.normal(0.0, noise.sigma, size=size)


def edge_geometry(graph, things):
    """Difference vectors ``s_a - s_b`` and lengths for every graph edge."""
    things = np.asarray(things, dtype=float)
    if graph.n_edges == 0:
        return np.zeros((0, 3)), np.zeros(0)
    peer = graph.edge_is_peer
    b = np.empty((graph.n_edges, 3))
    b[peer] = things[graph.edge_b[peer]]
    b[~peer] = graph.anchors[graph.edge_b[~peer]]
    diff = things[graph.edge_a] - b
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(dist < MIN_DISTANCE):
        bad = int(np.argmin(dist))
        raise ChannelDomainError(f"edge {bad} has coincident endpoints under the given positions")
    return diff, dist


def edge_means(graph, things):
    _, dist = edge_geometry(graph, things)
    return graph.edge_k / dist**graph.exponent


def edge_gradients(graph, things):
    """Per-edge gradient of the mean power with respect to endpoint ``a``.

    The gradient with respect to endpoint ``b`` is the negative.
    """
    diff, dist = edge_geometry(graph, things)
    n = graph.exponent
    coef = -n * graph.edge_k / dist ** (n + 2)
    return coef[:, None] * diff


def _aligned_values(measurements, n_edges):
    """Return (edge indices, values) for aligned arrays or (edge, value) pairs."""
    if not _looks_like_pairs(measurements):
        arr = np.asarray(measurements, dtype=float)
        if arr.shape != (n_edges,):
            raise ValueError(f"expected {n_edges} aligned measurements, got shape {arr.shape}")
        return np.arange(n_edges), arr.astype(float)
    idx = []
    vals = []
    for link, value in measurements:
        link = int(link)
        if not 0 <= link < n_edges:
            raise ValueError(f"measurement references unknown link {link}")
        idx.append(link)
        vals.append(float(value))
    return np.asarray(idx, dtype=int), np.asarray(vals, dtype=float)


def _looks_like_pairs(measurements):
    if isinstance(measurements, np.ndarray):
        return False
    try:
        first = next(iter(measurements))
    except StopIteration:
        return True
    return isinstance(first, (tuple, list))


def log_likelihood(measurements, positions, graph):
    """Joint Gaussian log-likelihood of power measurements.

    ``measurements`` is either an array aligned with ``graph.edges`` or a
    sequence of ``(edge_index, value)`` pairs; ``positions`` are the
    candidate positions of the unknown nodes, shape (N, 3).
    """
    idx, vals = _aligned_values(measurements, graph.n_edges)
    if idx.size == 0:
        return 0.0
    mu = edge_means(graph, positions)[idx]
    sigma = graph.edge_sigma[idx]
    resid = (vals - mu) / sigma
    return float(np.sum(-np.log(sigma * math.sqrt(2.0 * math.pi)) - 0.5 * resid**2))


def sample_edge_measurements(graph, things, rng, size=None):
    """Draw one (or ``size``) noisy measurement vectors aligned with the edges."""
    mu = edge_means(graph, things)
    shape = (graph.n_edges,) if size is None else (size, graph.n_edges)
    return mu + rng.standard_normal(shape) * graph.edge_sigma
