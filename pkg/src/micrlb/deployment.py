"""Reservoir scenarios: node placement, measurement graphs and their text format.

Coordinates are meters with ``z`` measured downward (``z`` = depth).  The
fracture is an axis-aligned box ``width x length x thickness`` centred at
``(0, 0, depth)``.  Anchors hang on the fracturing well, which runs
vertically through the box centre; anchor ``j`` sits ``j * anchor_spacing``
above the fracture depth so adding an anchor never moves the others.
"""
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_int, check_points, check_positive
from .channel import (
    ChannelParams,
    CoilSpec,
    NoiseModel,
    coupling_constant,
)
from .seeding import make_rng

SEPARATION_FLOOR = 1e-3
MAX_REJECTIONS = 10_000
ANCHOR_PLACEMENTS = ("well_line", "well_spiral", "explicit")
LINK_MODES = ("anchor_only", "cooperative")
ANCHOR_LINK = "anchor_link"
PEER_LINK = "peer_link"


class DeploymentError(RuntimeError):
    """Raised when a deployment cannot be generated or is invalid."""


def pairwise_distance(a, b):
    """Euclidean distance between two 3-vectors."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(math.sqrt(d @ d))


@dataclass(frozen=True)
class ScenarioConfig:
    width: float = 8.0
    length: float = 8.0
    thickness: float = 2.0
    depth: float = 1800.0
    anchor_count: int = 3
    anchor_placement: str = "well_spiral"
    anchor_spacing: float = 1.0
    anchor_offset: float = 0.5
    anchors: tuple = ()
    thing_count: int = 60
    comm_range_anchor: float = math.inf
    comm_range_peer: float = 4.0
    link_mode: str = "anchor_only"
    # carried as metadata only; no model term depends on it
    temperature: float = 418.0

    def __post_init__(self):
        for name in ("width", "length", "thickness", "depth", "anchor_spacing",
                     "comm_range_anchor", "comm_range_peer", "temperature"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"{name} must be > 0, got {v!r}")
        if not (isinstance(self.anchor_offset, (int, float)) and self.anchor_offset >= 0):
            raise ValueError(f"anchor_offset must be >= 0, got {self.anchor_offset!r}")
        check_int(self.thing_count, "thing_count", minimum=1)
        if self.anchor_placement not in ANCHOR_PLACEMENTS:
            raise ValueError(f"anchor_placement must be one of {ANCHOR_PLACEMENTS}")
        if self.link_mode not in LINK_MODES:
            raise ValueError(f"link_mode must be one of {LINK_MODES}")
        if self.anchor_placement == "explicit":
            pts = check_points(self.anchors, "anchors")
            object.__setattr__(self, "anchors", tuple(tuple(float(c) for c in p) for p in pts))
            object.__setattr__(self, "anchor_count", len(pts))
        check_int(self.anchor_count, "anchor_count", minimum=1)

    @property
    def box(self):
        """(low corner, high corner) of the fracture volume."""
        half = np.array([self.width, self.length, self.thickness]) / 2.0
        center = np.array([0.0, 0.0, self.depth])
        return center - half, center + half

    @property
    def center(self):
        return np.array([0.0, 0.0, self.depth])


@dataclass(frozen=True, eq=False)
class Deployment:
    anchors: np.ndarray
    things: np.ndarray
    seed: int = 0

    def __post_init__(self):
        anchors = check_points(self.anchors, "anchors").copy()
        things = check_points(self.things, "things").copy()
        if len(anchors) < 1 or len(things) < 1:
            raise DeploymentError("a deployment needs at least one anchor and one thing")
        anchors.setflags(write=False)
        things.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "things", things)
        pts = np.vstack([things, anchors])
        pairs = cKDTree(pts).query_pairs(SEPARATION_FLOOR * (1 - 1e-12))
        if pairs:
            i, j = min(pairs)
            raise DeploymentError(f"nodes {i} and {j} closer than {SEPARATION_FLOOR} m")

    @property
    def n_anchors(self):
        return len(self.anchors)

    @property
    def n_things(self):
        return len(self.things)

    def __eq__(self, other):
        if not isinstance(other, Deployment):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.anchors, other.anchors)
            and np.array_equal(self.things, other.things)
        )

    __hash__ = None


def anchor_positions(config):
    """Anchor coordinates for the configured placement rule."""
    if config.anchor_placement == "explicit":
        return np.array(config.anchors, dtype=float)
    j = np.arange(config.anchor_count)
    z = config.depth - j * config.anchor_spacing
    if config.anchor_placement == "well_line":
        return np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    # helical offsets around the casing, 120 degrees apart
    phi = 2.0 * math.pi * j / 3.0
    r = config.anchor_offset
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def generate_deployment(config, seed):
    """Anchors by placement rule, things uniform i.i.d. in the fracture box.

    Things closer than the separation floor to any other node are redrawn.
    """
    anchors = anchor_positions(config)
    lo, hi = config.box
    rng = make_rng(seed)
    things = rng.uniform(lo, hi, size=(config.thing_count, 3))
    attempts = 0
    while True:
        bad = _crowded(things, anchors)
        if not bad:
            break
        attempts += len(bad)
        if attempts > MAX_REJECTIONS:
            raise DeploymentError(
                f"separation floor unmet after {MAX_REJECTIONS} rejections; box too crowded"
            )
        things[bad] = rng.uniform(lo, hi, size=(len(bad), 3))
    return Deployment(anchors=anchors, things=things, seed=int(seed))


def _crowded(things, anchors):
    """Sorted indices of things violating the separation floor."""
    n = len(things)
    tree = cKDTree(np.vstack([things, anchors]))
    bad = set()
    for i, j in tree.query_pairs(SEPARATION_FLOOR):
        # redraw the later thing of a pair; anchors never move
        if j < n:
            bad.add(j)
        elif i < n:
            bad.add(i)
    return sorted(bad)


@dataclass(frozen=True)
class Edge:
    """One power measurement between thing ``a`` and node ``b``.

    ``b`` indexes the anchors for anchor links and the things for peer links.
    """

    a: int
    b: int
    kind: str
    k: float
    sigma: float

    def node_ids(self):
        return f"t{self.a}", (f"a{self.b}" if self.kind == ANCHOR_LINK else f"t{self.b}")


@dataclass(frozen=True, eq=False)
class MeasurementGraph:
    anchors: np.ndarray
    n_things: int
    edges: tuple = ()
    exponent: int = 6

    def __post_init__(self):
        anchors = check_points(self.anchors, "anchors", allow_empty=True).copy()
        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "edges", tuple(self.edges))
        seen = set()
        for e in self.edges:
            if e.kind not in (ANCHOR_LINK, PEER_LINK):
                raise ValueError(f"unknown edge kind {e.kind!r}")
            if not 0 <= e.a < self.n_things:
                raise ValueError(f"edge endpoint t{e.a} out of range")
            limit = self.n_things if e.kind == PEER_LINK else len(anchors)
            if not 0 <= e.b < limit:
                raise ValueError(f"edge endpoint {e.node_ids()[1]} out of range")
            if e.kind == PEER_LINK and e.a == e.b:
                raise ValueError("self-edges are not allowed")
            key = frozenset(e.node_ids())
            if key in seen:
                raise ValueError(f"duplicate edge {e.node_ids()}")
            seen.add(key)
            check_positive(e.sigma, "edge sigma")
            check_positive(e.k, "edge k", allow_zero=True)

    def __eq__(self, other):
        if not isinstance(other, MeasurementGraph):
            return NotImplemented
        return (self.n_things == other.n_things and self.exponent == other.exponent
                and self.edges == other.edges and np.array_equal(self.anchors, other.anchors))

    __hash__ = None

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_anchors(self):
        return len(self.anchors)

    def node_ids(self):
        return [f"t{i}" for i in range(self.n_things)] + [f"a{j}" for j in range(self.n_anchors)]

    def is_known(self, node_id):
        return node_id.startswith("a")

    @cached_property
    def edge_a(self):
        return np.array([e.a for e in self.edges], dtype=int)

    @cached_property
    def edge_b(self):
        return np.array([e.b for e in self.edges], dtype=int)

    @cached_property
    def edge_is_peer(self):
        return np.array([e.kind == PEER_LINK for e in self.edges], dtype=bool)

    @cached_property
    def edge_k(self):
        return np.array([e.k for e in self.edges], dtype=float)

    @cached_property
    def edge_sigma(self):
        return np.array([e.sigma for e in self.edges], dtype=float)

    def isolated_things(self):
        """Unknown nodes that appear in no edge (never localizable)."""
        touched = set(self.edge_a.tolist()) | set(self.edge_b[self.edge_is_peer].tolist())
        return [i for i in range(self.n_things) if i not in touched]

    def subgraph(self, keep):
        """Graph restricted to the edges whose indices are in ``keep``."""
        return MeasurementGraph(self.anchors, self.n_things,
                                tuple(self.edges[i] for i in keep), self.exponent)

    def without_anchors(self, drop):
        """Drop every link to the anchors in ``drop`` (anchor indices stay valid)."""
        drop = set(drop)
        keep = [i for i, e in enumerate(self.edges) if not (e.kind == ANCHOR_LINK and e.b in drop)]
        return self.subgraph(keep)

    def scaled(self, k_factor=1.0, sigma_factor=1.0):
        edges = tuple(Edge(e.a, e.b, e.kind, e.k * k_factor, e.sigma * sigma_factor) for e in self.edges)
        return MeasurementGraph(self.anchors, self.n_things, edges, self.exponent)


@dataclass(frozen=True)
class RadioConfig:
    """Channel inputs needed to attach ``k`` and ``sigma`` to every link."""

    channel: ChannelParams = field(default_factory=ChannelParams)
    tx: CoilSpec = field(default_factory=lambda: CoilSpec(20, 0.02))
    rx: CoilSpec = field(default_factory=lambda: CoilSpec(20, 0.02))
    noise: NoiseModel = field(default_factory=NoiseModel)


def build_measurement_graph(dep, config, radio=None, alphas=None):
    """Links between things and anchors (and between things, if cooperative).

    ``alphas`` optionally maps a pair of node ids, e.g. ``("t0", "a1")``, to a
    per-link misalignment angle; all other links use the channel default.
    """
    radio = radio or RadioConfig()
    params = radio.channel
    exponent = params.path_loss_exponent
    overrides = {frozenset(key): float(v) for key, v in (alphas or {}).items()}
    k_default = coupling_constant(radio.tx, radio.rx, params)

    def link(a, b, kind, dist):
        ids = (f"t{a}", f"a{b}" if kind == ANCHOR_LINK else f"t{b}")
        alpha = overrides.get(frozenset(ids))
        if alpha is None:
            k = k_default
        else:
            k = coupling_constant(radio.tx, radio.rx, _with_alpha(params, alpha))
        return Edge(a, b, kind, k, radio.noise.link_sigma(k, dist, exponent))

    things, anchors = dep.things, dep.anchors
    edges = []
    d_ta = np.linalg.norm(things[:, None, :] - anchors[None, :, :], axis=2)
    for i, j in zip(*np.nonzero(d_ta <= config.comm_range_anchor)):
        edges.append(link(int(i), int(j), ANCHOR_LINK, d_ta[i, j]))
    if config.link_mode == "cooperative":
        d_tt = np.linalg.norm(things[:, None, :] - things[None, :, :], axis=2)
        iu, ju = np.triu_indices(len(things), k=1)
        sel = d_tt[iu, ju] <= config.comm_range_peer
        for i, j in zip(iu[sel], ju[sel]):
            edges.append(link(int(i), int(j), PEER_LINK, d_tt[i, j]))
    return MeasurementGraph(anchors, len(things), tuple(edges), exponent)


def _with_alpha(params, alpha):
    return replace(params, misalignment_angle=alpha)


# --- interchange text format -------------------------------------------------

def _fmt(v):
    return format(float(v), ".9g")


def write_deployment(path, dep, graph=None):
    """Write nodes (and optionally edges) in the line-oriented text format."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_deployment(dep, graph))


def format_deployment(dep, graph=None):
    lines = [f"# anchors {dep.n_anchors}", f"# things {dep.n_things}"]
    if graph is not None:
        lines.append(f"# path_loss_exponent {graph.exponent}")
    lines.append(f"# seed {dep.seed}")
    for j, p in enumerate(dep.anchors):
        lines.append(f"a{j} " + " ".join(_fmt(c) for c in p))
    for i, p in enumerate(dep.things):
        lines.append(f"t{i} " + " ".join(_fmt(c) for c in p))
    if graph is not None:
        for e in graph.edges:
            a, b = e.node_ids()
            lines.append(f"edge {a} {b} {e.kind} {_fmt(e.k)} {_fmt(e.sigma)}")
    return "\n".join(lines) + "\n"


def read_deployment(path):
    """Parse a deployment file; returns ``(Deployment, MeasurementGraph)``."""
    with open(path, encoding="ascii") as fh:
        return parse_deployment(fh.read())


def parse_deployment(text):
    header = {}
    anchors = {}
    things = {}
    raw_edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "#":
            if len(parts) == 3:
                header[parts[1]] = parts[2]
            continue
        try:
            if parts[0] == "edge":
                _, a, b, kind, k, sigma = parts
                raw_edges.append((a, b, kind, float(k), float(sigma)))
            elif len(parts) == 4 and parts[0][0] in "at":
                xyz = tuple(float(c) for c in parts[1:])
                (anchors if parts[0][0] == "a" else things)[int(parts[0][1:])] = xyz
            else:
                raise ValueError("unrecognised row")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}: {line!r}") from None
    for key, table in (("anchors", anchors), ("things", things)):
        if key in header and int(header[key]) != len(table):
            raise ValueError(f"header declares {header[key]} {key}, found {len(table)}")
        if sorted(table) != list(range(len(table))):
            raise ValueError(f"{key} ids must be contiguous from 0")
    dep = Deployment(
        anchors=np.array([anchors[j] for j in range(len(anchors))]),
        things=np.array([things[i] for i in range(len(things))]),
        seed=int(header.get("seed", 0)),
    )
    edges = []
    for a, b, kind, k, sigma in raw_edges:
        if not a.startswith("t"):
            a, b = b, a
        edges.append(Edge(int(a[1:]), int(b[1:]), kind, k, sigma))
    exponent = int(header.get("path_loss_exponent", 6))
    return dep, MeasurementGraph(dep.anchors, dep.n_things, tuple(edges), exponent)
