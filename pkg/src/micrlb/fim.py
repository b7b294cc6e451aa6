"""Fisher information and Cramér–Rao bounds for power-based localization.

Unknowns are ordered axis-major, matching the x/y/z block layout of the
information matrix: all x coordinates, then all y, then all z.  Coordinate
``p`` of thing ``i`` lives at index ``p * N + i``.

Four assembly routes are provided:

* ``fim_standard``: Gaussian-mean information, sum over links of
  ``g g^T / sigma^2``.  This is the one used for every reported bound.
* ``fim_paper``: the published closed-form element expressions, transcribed
  term for term (they disagree with ``fim_standard``; see ``compare_modes``).
* ``fim_oracle_mc``: sample covariance of the score, with the score taken by
  central differences of the log-likelihood.
* ``fim_oracle_fd``: sample mean of the negative Hessian of the
  log-likelihood by central second differences.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._parallel import map_ordered
from ._validation import check_points, check_symmetric
from .channel import edge_geometry, edge_means
from .deployment import MeasurementGraph
from .seeding import worker_rng

FIM_MODES = ("standard", "paper", "oracle_mc", "oracle_fd")
AXES = "xyz"
DEFAULT_COND_THRESHOLD = 1e12


class SingularBlockError(np.linalg.LinAlgError):
    """An axis block of the information matrix cannot be inverted."""

    def __init__(self, block, condition_number):
        self.block = block
        self.condition_number = condition_number
        super().__init__(f"block {block} is singular (condition number {condition_number:.3g})")


@dataclass(frozen=True, eq=False)
class FimMatrix:
    matrix: np.ndarray
    mode: str = "standard"
    stderr: np.ndarray = None
    n_samples: int = 0
    scale: float = 1.0
    unit: np.ndarray = None

    def __post_init__(self):
        m = check_symmetric(self.matrix, "FIM")
        if m.shape[0] % 3:
            raise ValueError("FIM dimension must be a multiple of 3")
        if self.mode not in FIM_MODES:
            raise ValueError(f"unknown FIM mode {self.mode!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be positive and finite")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        u = m / self.scale if self.unit is None else check_symmetric(self.unit, "unit FIM").copy()
        u.setflags(write=False)
        object.__setattr__(self, "unit", u)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def n_nodes(self):
        return self.dimension // 3

    def block(self, rows, cols):
        """N x N block, e.g. ``block("x", "y")``."""
        n = self.n_nodes
        p, q = AXES.index(rows), AXES.index(cols)
        return self.matrix[p * n:(p + 1) * n, q * n:(q + 1) * n]

    def node_major(self):
        """Same matrix with unknowns reordered as (x0, y0, z0, x1, ...)."""
        perm = node_major_permutation(self.n_nodes)
        return self.matrix[np.ix_(perm, perm)]

    def node_block(self, i):
        idx = [p * self.n_nodes + i for p in range(3)]
        return self.matrix[np.ix_(idx, idx)]


def node_major_permutation(n):
    return (np.arange(3)[None, :] * n + np.arange(n)[:, None]).ravel()


def _scatter(graph, blocks):
    """Place per-link 3x3 blocks into the axis-major information matrix.

    Each link adds ``B`` to the diagonal block of each unknown endpoint and
    ``-B`` to the cross blocks between two unknown endpoints.
    """
    n = graph.n_things
    f = np.zeros((n, n, 3, 3))
    if graph.n_edges:
        a, b, peer = graph.edge_a, graph.edge_b, graph.edge_is_peer
        np.add.at(f, (a, a), blocks)
        bp, ap, blk = b[peer], a[peer], blocks[peer]
        np.add.at(f, (bp, bp), blk)
        np.add.at(f, (ap, bp), -blk)
        np.add.at(f, (bp, ap), -np.swapaxes(blk, 1, 2))
    m = f.transpose(2, 0, 3, 1).reshape(3 * n, 3 * n)
    return 0.5 * (m + m.T)


def _check_positions(graph, positions):
    return check_points(positions, "positions", n=graph.n_things)


def fim_standard(graph, positions):
    """Information matrix ``sum_links g g^T / sigma^2``.

    Stored as ``scale * unit`` with ``scale = max(k / sigma)^2``.  Links that
    share ``k / sigma`` contribute to ``unit`` through geometry alone, so a
    uniform change of ``k`` or ``sigma`` only moves ``scale`` and the bounds
    follow the scaling laws to rounding of one scalar.
    """
    positions = _check_positions(graph, positions)
    diff, dist = edge_geometry(graph, positions)
    n = graph.exponent
    ratio = graph.edge_k / graph.edge_sigma
    ref = float(np.max(np.abs(ratio), initial=0.0)) or 1.0
    h = (ratio / ref * (-n / dist ** (n + 2)))[:, None] * diff
    unit = _scatter(graph, h[:, :, None] * h[:, None, :])
    return FimMatrix(ref**2 * unit, "standard", scale=ref**2, unit=unit)


def paper_link_blocks(k, sigma, diff):
    """Published per-link element expressions as 3x3 blocks.

    Diagonal ``(p, p)``::

        3k/s^2 * (2k/d^7 - 28k dp^2/d^8 + k/d^7 - 8 dp^2/d^5)

    Off-diagonal ``(p, q)``: ``60 k^2 dp dq / (s^2 d^8)``.  The exponent of
    the link model plays no part; these are taken as printed.
    """
    k = np.asarray(k, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    diff = np.atleast_2d(np.asarray(diff, dtype=float))
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    s2 = sigma**2
    outer = diff[:, :, None] * diff[:, None, :]
    blocks = (60.0 * k**2 / (s2 * d**8))[:, None, None] * outer
    sq = diff**2
    diag = (3.0 * k / s2)[:, None] * (
        (2.0 * k / d**7)[:, None]
        - 28.0 * k[:, None] * sq / (d**8)[:, None]
        + (k / d**7)[:, None]
        - 8.0 * sq / (d**5)[:, None]
    )
    idx = np.arange(3)
    blocks[:, idx, idx] = diag
    return blocks


def fim_paper(graph, positions):
    """Information matrix built from the published closed-form elements."""
    positions = _check_positions(graph, positions)
    diff, _ = edge_geometry(graph, positions)
    if graph.n_edges == 0:
        return FimMatrix(np.zeros((3 * graph.n_things,) * 2), "paper")
    blocks = paper_link_blocks(graph.edge_k, graph.edge_sigma, diff)
    return FimMatrix(_scatter(graph, blocks), "paper")


# --- statistical oracles -------------------------------------------------------

def scene_diameter(graph, positions):
    pts = np.vstack([np.asarray(positions, dtype=float), graph.anchors])
    return float(np.max(np.ptp(pts, axis=0))) if len(pts) > 1 else 1.0


def _recentred(graph, positions):
    """Shift the scene so coordinates are O(scene size) before differencing."""
    pts = np.vstack([positions, graph.anchors])
    origin = pts.mean(axis=0)
    g = MeasurementGraph(graph.anchors - origin, graph.n_things, graph.edges, graph.exponent)
    return g, positions - origin


def _batches(n_samples, batch_size):
    sizes = [batch_size] * (n_samples // batch_size)
    if n_samples % batch_size:
        sizes.append(n_samples % batch_size)
    return list(enumerate(sizes))


def _log_likelihood_rows(p, mu, sigma):
    """Per-sample log-likelihood without the constant normalisation term."""
    return -0.5 * np.sum(((p - mu) / sigma) ** 2, axis=1)


def fim_oracle_mc(graph, positions, n_samples=1_000_000, seed=0, step=None,
                  batch_size=100_000, threads=None):
    """Monte-Carlo estimate of ``E[score score^T]``.

    Measurements are drawn from the Gaussian link model at ``positions``;
    the score of every sample is the central difference of its
    log-likelihood (step ``step``, default ``1e-5 x`` scene diameter).
    ``stderr`` holds the standard error of every entry.
    """
    positions = _check_positions(graph, positions)
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    dim = 3 * graph.n_things
    if graph.n_edges == 0:
        return FimMatrix(np.zeros((dim, dim)), "oracle_mc", np.zeros((dim, dim)), n_samples)
    g, x0 = _recentred(graph, positions)
    h = step if step is not None else 1e-5 * scene_diameter(graph, positions)
    mu0 = edge_means(g, x0)
    sigma = g.edge_sigma
    mu_plus = np.empty((dim, g.n_edges))
    mu_minus = np.empty((dim, g.n_edges))
    n = g.n_things
    for c in range(dim):
        p, i = divmod(c, n)
        xp = x0.copy()
        xp[i, p] += h
        xm = x0.copy()
        xm[i, p] -= h
        mu_plus[c] = edge_means(g, xp)
        mu_minus[c] = edge_means(g, xm)

    def run(batch):
        index, size = batch
        rng = worker_rng(seed, index)
        p = mu0 + rng.standard_normal((size, g.n_edges)) * sigma
        score = np.empty((size, dim))
        for c in range(dim):
            score[:, c] = (_log_likelihood_rows(p, mu_plus[c], sigma)
                           - _log_likelihood_rows(p, mu_minus[c], sigma)) / (2 * h)
        prod = score[:, :, None] * score[:, None, :]
        return prod.sum(axis=0), (prod**2).sum(axis=0)

    total = np.zeros((dim, dim))
    total_sq = np.zeros((dim, dim))
    for s, sq in map_ordered(run, _batches(n_samples, batch_size), threads):
        total += s
        total_sq += sq
    mean = total / n_samples
    var = np.maximum(total_sq / n_samples - mean**2, 0.0) * n_samples / (n_samples - 1)
    return FimMatrix(mean, "oracle_mc", np.sqrt(var / n_samples), n_samples)


def _second_difference_weights(graph, x0, h):
    """Stencil values of ``delta = mu(x) - mu(x0)`` and ``delta**2`` per entry.

    Returns ``(pairs, d_delta, d_delta_sq)`` for the upper-triangle entries.
    """
    dim = 3 * graph.n_things
    n = graph.n_things
    mu0 = edge_means(graph, x0)

    def delta(moves):
        x = x0.copy()
        for c, s in moves:
            p, i = divmod(c, n)
            x[i, p] += s * h
        return edge_means(graph, x) - mu0

    pairs = [(a, b) for a in range(dim) for b in range(a, dim)]
    d1 = np.empty((len(pairs), graph.n_edges))
    d2 = np.empty((len(pairs), graph.n_edges))
    for t, (a, b) in enumerate(pairs):
        if a == b:
            up, dn = delta([(a, 1)]), delta([(a, -1)])
            d1[t] = (up + dn) / h**2
            d2[t] = (up**2 + dn**2) / h**2
        else:
            pp = delta([(a, 1), (b, 1)])
            pm = delta([(a, 1), (b, -1)])
            mp = delta([(a, -1), (b, 1)])
            mm = delta([(a, -1), (b, -1)])
            d1[t] = (pp - pm - mp + mm) / (4 * h**2)
            d2[t] = (pp**2 - pm**2 - mp**2 + mm**2) / (4 * h**2)
    return pairs, d1, d2


def fim_oracle_fd(graph, positions, n_samples=100_000, step=None, seed=0,
                  batch_size=100_000, threads=None):
    """Monte-Carlo mean of ``-Hessian`` of the log-likelihood.

    The Hessian is the central second difference with step ``step``
    (default ``1e-4 x`` scene diameter).  Writing each sample's residual as
    ``r = P - mu(x0)`` and ``delta(x) = mu(x) - mu(x0)``, the stencil applied
    to ``-(r - delta)^2 / (2 sigma^2)`` is evaluated term by term so the
    ``r^2`` part cancels exactly instead of in floating point.
    """
    positions = _check_positions(graph, positions)
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    diameter = scene_diameter(graph, positions)
    h = step if step is not None else 1e-4 * diameter
    if not 1e-6 * diameter <= h <= 1e-2 * diameter:
        raise ValueError(f"step {h} outside [1e-6, 1e-2] x scene diameter ({diameter:.3g} m)")
    dim = 3 * graph.n_things
    if graph.n_edges == 0:
        return FimMatrix(np.zeros((dim, dim)), "oracle_fd", np.zeros((dim, dim)), n_samples)
    g, x0 = _recentred(graph, positions)
    pairs, d1, d2 = _second_difference_weights(g, x0, h)
    inv_var = 1.0 / g.edge_sigma**2
    w = (d1 * inv_var).T  # (E, entries)

    def run(batch):
        index, size = batch
        rng = worker_rng(seed, index)
        r = rng.standard_normal((size, g.n_edges)) * g.edge_sigma
        v = r @ w
        return v.sum(axis=0), (v**2).sum(axis=0)

    s = np.zeros(len(pairs))
    sq = np.zeros(len(pairs))
    for bs, bsq in map_ordered(run, _batches(n_samples, batch_size), threads):
        s += bs
        sq += bsq
    mean_v = s / n_samples
    var_v = np.maximum(sq / n_samples - mean_v**2, 0.0) * n_samples / (n_samples - 1)
    values = 0.5 * (d2 * inv_var).sum(axis=1) - mean_v
    m = np.zeros((dim, dim))
    se = np.zeros((dim, dim))
    for t, (a, b) in enumerate(pairs):
        m[a, b] = m[b, a] = values[t]
        se[a, b] = se[b, a] = math.sqrt(var_v[t] / n_samples)
    return FimMatrix(m, "oracle_fd", se, n_samples)


def compute_fim(graph, positions, mode="standard", **kwargs):
    if mode == "standard":
        return fim_standard(graph, positions)
    if mode == "paper":
        return fim_paper(graph, positions)
    if mode == "oracle_mc":
        return fim_oracle_mc(graph, positions, **kwargs)
    if mode == "oracle_fd":
        return fim_oracle_fd(graph, positions, **kwargs)
    raise ValueError(f"unknown FIM mode {mode!r}; expected one of {FIM_MODES}")


# --- bounds --------------------------------------------------------------------

def condition_number(a):
    """Condition number after symmetric diagonal equilibration.

    Equilibration removes the unit and scale spread between coordinates, so
    only genuine rank deficiency produces a huge value.  Matrices with a
    non-positive diagonal are used as is.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return math.inf
    d = np.diag(a)
    if np.all(d > 0):
        s = 1.0 / np.sqrt(d)
        a = a * s[:, None] * s[None, :]
    ev = np.abs(np.linalg.eigvalsh(a))
    if not np.all(np.isfinite(ev)) or ev.min() == 0.0:
        return math.inf
    return float(ev.max() / ev.min())


def _sym_inverse(a):
    """Inverse via symmetric indefinite (LDL^T) factorisation, equilibrated."""
    d = np.diag(a)
    s = 1.0 / np.sqrt(d) if np.all(d > 0) else np.ones(len(d))
    scaled = a * s[:, None] * s[None, :]
    inv = scipy.linalg.solve(scaled, np.eye(len(a)), assume_a="sym")
    inv = inv * s[:, None] * s[None, :]
    return 0.5 * (inv + inv.T)


def _fim_array(fim):
    if isinstance(fim, FimMatrix):
        return fim.matrix, fim.mode
    return check_symmetric(fim, "FIM"), "standard"


def crlb_paper_per_node(fim, cond_threshold=DEFAULT_COND_THRESHOLD):
    """Per-node diagonal of ``Ixx^-1 + Iyy^-1 + Izz^-1``."""
    m, _ = _fim_array(fim)
    scale = 1.0
    if isinstance(fim, FimMatrix):
        m, scale = fim.unit, fim.scale
    n = m.shape[0] // 3
    total = np.zeros(n)
    for p, axis in enumerate(AXES):
        blk = m[p * n:(p + 1) * n, p * n:(p + 1) * n]
        cond = condition_number(blk)
        if cond > cond_threshold:
            raise SingularBlockError(f"I_{axis}{axis}", cond)
        total += np.diag(_sym_inverse(blk))
    return total / scale


def crlb_paper(fim, cond_threshold=DEFAULT_COND_THRESHOLD):
    """Per-axis block-inverse bound, averaged over nodes (m^2).

    Inverts the three diagonal N x N blocks separately and ignores the
    cross-axis blocks, so it is generally smaller than the full-inverse
    bound of :func:`crlb_standard`.
    """
    return float(np.mean(crlb_paper_per_node(fim, cond_threshold)))


@dataclass(frozen=True, eq=False)
class CrlbReport:
    per_node_bound: np.ndarray
    aggregate_bound: float
    paper_formula_bound: float
    condition_number: float
    singular: bool
    mode: str = "standard"
    pseudo_inverse: bool = False
    notes: tuple = field(default=())

    @property
    def n_nodes(self):
        return len(self.per_node_bound)


def crlb_standard(fim, cond_threshold=DEFAULT_COND_THRESHOLD, pinv=False):
    """Full-inverse bound: per-node trace of the 3x3 blocks of ``I^-1``.

    Singularity (equilibrated condition number above ``cond_threshold``) is a
    reported state: bounds are ``inf`` unless ``pinv=True``, in which case
    the Moore–Penrose pseudo-inverse is used and the report is labelled.
    """
    m, mode = _fim_array(fim)
    scale = fim.scale if isinstance(fim, FimMatrix) else 1.0
    if isinstance(fim, FimMatrix):
        m = fim.unit
    n = m.shape[0] // 3
    cond = condition_number(m)
    singular = not cond <= cond_threshold
    notes = []
    try:
        paper_bound = crlb_paper(m, cond_threshold) / scale
    except SingularBlockError as exc:
        paper_bound = math.nan
        notes.append(str(exc))
    used_pinv = False
    if not singular:
        inv = _sym_inverse(m)
    elif pinv and n:
        inv = np.linalg.pinv(m, hermitian=True)
        used_pinv = True
        notes.append("pseudo-inverse used on a singular FIM")
    else:
        inv = None
    if inv is None:
        per_node = np.full(n, math.inf)
    else:
        d = np.diag(inv)
        per_node = (d[:n] + d[n:2 * n] + d[2 * n:]) / scale
    aggregate = float(np.mean(per_node)) if n else math.nan
    return CrlbReport(per_node, aggregate, paper_bound, cond, singular, mode, used_pinv, tuple(notes))


# --- standard vs published elements --------------------------------------------

@dataclass(frozen=True)
class ModeComparison:
    standard_trace: float
    standard_block: float
    paper_block: float
    paper_trace: float
    relative_frobenius: float
    paper_min_eigenvalue: float
    paper_negative_diagonals: int
    peer_links: int

    def rows(self):
        return [
            ("standard FIM, trace of full inverse", self.standard_trace),
            ("standard FIM, per-axis block inverse", self.standard_block),
            ("published FIM, per-axis block inverse", self.paper_block),
            ("published FIM, trace of full inverse", self.paper_trace),
            ("relative Frobenius distance |P - S| / |S|", self.relative_frobenius),
            ("published FIM minimum eigenvalue", self.paper_min_eigenvalue),
            ("published FIM negative diagonal entries", self.paper_negative_diagonals),
            ("peer links (cross-node blocks)", self.peer_links),
        ]

    def format(self):
        width = max(len(name) for name, _ in self.rows())
        lines = ["# standard vs published FIM elements"]
        for name, value in self.rows():
            lines.append(f"{name:<{width}}  {format(value, '.9g')}")
        return "\n".join(lines)


def compare_modes(graph, positions, cond_threshold=DEFAULT_COND_THRESHOLD):
    """Quantify the gap between the standard and the published FIM."""
    std = fim_standard(graph, positions)
    pap = fim_paper(graph, positions)
    rep_std = crlb_standard(std, cond_threshold)
    try:
        paper_block = crlb_paper(pap, cond_threshold)
    except SingularBlockError:
        paper_block = math.nan
    rep_pap = crlb_standard(pap, cond_threshold)
    norm = np.linalg.norm(std.matrix)
    rel = float(np.linalg.norm(pap.matrix - std.matrix) / norm) if norm > 0 else math.nan
    ev = np.linalg.eigvalsh(pap.matrix) if pap.dimension else np.zeros(1)
    return ModeComparison(
        standard_trace=rep_std.aggregate_bound,
        standard_block=rep_std.paper_formula_bound,
        paper_block=paper_block,
        paper_trace=rep_pap.aggregate_bound,
        relative_frobenius=rel,
        paper_min_eigenvalue=float(ev.min()),
        paper_negative_diagonals=int(np.sum(np.diag(pap.matrix) < 0)),
        peer_links=int(np.sum(graph.edge_is_peer)) if graph.n_edges else 0,
    )


# --- serialisation -------------------------------------------------------------

def dump_matrix(fim, path):
    """Dense whitespace-separated matrix, one row per line (axis-major order)."""
    m, _ = _fim_array(fim)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in m:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def load_matrix(path):
    return np.loadtxt(path, ndmin=2)


def write_report_csv(report, path):
    """Per-node bounds as ``node,crlb`` rows followed by summary rows."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("node,crlb\n")
        for i, b in enumerate(report.per_node_bound):
            fh.write(f"t{i},{format(float(b), '.9g')}\n")
        fh.write(f"aggregate,{format(report.aggregate_bound, '.9g')}\n")
        fh.write(f"paper_formula,{format(report.paper_formula_bound, '.9g')}\n")
        fh.write(f"condition_number,{format(report.condition_number, '.9g')}\n")
        fh.write(f"singular,{int(report.singular)}\n")
