"""Maximum-likelihood localization from noisy received-power measurements.

The solver is Levenberg–Marquardt damped Gauss–Newton on the whitened
residuals ``(P - mu(x)) / sigma``.  The ``d**-6`` mean makes the Jacobian
columns differ by many orders of magnitude, so unknowns are optimised in
box-normalised coordinates and the damping is scaled by the diagonal of
``J^T J``.
"""
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_int, check_points
from .deployment import MeasurementGraph
from .channel import ChannelDomainError, _aligned_values, edge_gradients, edge_means, log_likelihood
from .seeding import make_rng


class EstimationDivergedError(RuntimeError):
    """The objective became non-finite; ``last_positions`` holds the last iterate."""

    def __init__(self, message, last_positions):
        super().__init__(message)
        self.last_positions = last_positions


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    gtol: float = 1e-10
    xtol: float = 1e-12
    damping: float = 1e-3
    max_damping: float = 1e16


@dataclass(frozen=True, eq=False)
class EstimateResult:
    positions: np.ndarray
    final_objective: float
    iterations: int
    converged: bool
    gradient_norm: float = math.nan
    per_node_error: np.ndarray = None
    start_index: int = 0
    message: str = ""


def _box_scaling(graph, initial, box):
    if box is None:
        pts = np.vstack([initial, graph.anchors])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
    center = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo), 1.0)
    return center, half


def _whitened_problem(graph, values, idx):
    sigma = graph.edge_sigma[idx]
    n = graph.n_things
    a = graph.edge_a[idx]
    b = graph.edge_b[idx]
    peer = graph.edge_is_peer[idx]
    rows = np.arange(len(idx))

    def residual(x):
        return (values - edge_means(graph, x)[idx]) / sigma

    def jacobian(x):
        # d r / d x (node-major columns): -g/sigma at a, +g/sigma at peer b
        g = edge_gradients(graph, x)[idx] / sigma[:, None]
        jac = np.zeros((len(idx), n, 3))
        jac[rows, a] -= g
        jac[rows[peer], b[peer]] += g[peer]
        return jac.reshape(len(idx), 3 * n)

    def rounding(x, jac, scale, r):
        """Floating-point noise in the scaled gradient and in the objective."""
        eps = np.finfo(float).eps
        mag = (np.abs(values) + np.abs(edge_means(graph, x)[idx])) / sigma
        coord = max(float(np.abs(x).max(initial=0.0)), float(np.abs(graph.anchors).max(initial=0.0)))
        js = jac * scale
        # from forming P - mu, and from rounding the coordinates themselves
        hess = np.linalg.norm(js) * np.linalg.norm(jac) * coord * math.sqrt(x.size)
        g_noise = 16 * eps * (float(np.linalg.norm(np.abs(js).T @ mag)) + hess)
        f_noise = 16 * eps * float(np.abs(r) @ mag)
        return g_noise, f_noise

    return residual, jacobian, rounding


def _log_problem(graph, values, idx):
    """Unweighted log-power residuals ``log P - log mu``.

    Up to the constant ``-n`` this is a log-range misfit, which is far less
    stiff than the power residuals.  Non-positive readings are skipped.
    """
    keep = values > 0
    idx, values = idx[keep], values[keep]
    n = graph.n_things
    a = graph.edge_a[idx]
    b = graph.edge_b[idx]
    peer = graph.edge_is_peer[idx]
    rows = np.arange(len(idx))
    log_p = np.log(values)

    def residual(x):
        return log_p - np.log(edge_means(graph, x)[idx])

    def jacobian(x):
        mu = edge_means(graph, x)[idx]
        g = edge_gradients(graph, x)[idx] / mu[:, None]
        jac = np.zeros((len(idx), n, 3))
        jac[rows, a] -= g
        jac[rows[peer], b[peer]] += g[peer]
        return jac.reshape(len(idx), 3 * n)

    return residual, jacobian, len(idx)


def _levenberg_marquardt(residual, jacobian, x, scale, opts, floor=None):
    """Damped Gauss–Newton in scaled coordinates ``x = x0 + scale * theta``.

    Returns ``(x, objective, iterations, converged, gradient_norm, message)``.
    ``floor(x, jac, scale, r)`` gives the rounding noise of the gradient and
    objective; without it the gradient test is purely relative.
    """

    def objective(pos):
        try:
            r = residual(pos)
        except ChannelDomainError:
            return math.inf, None
        f = 0.5 * float(r @ r)
        return f, r

    f, r = objective(x)
    if not math.isfinite(f):
        raise EstimationDivergedError("non-finite objective at the initial positions", x)
    jac = jacobian(x) * scale
    grad = jac.T @ r
    g0 = float(np.linalg.norm(grad))

    def tolerance():
        tol = opts.gtol * g0
        if floor is None:
            return tol
        g_noise, f_noise = floor(x, jac / scale, scale, r)
        lam_min = max(float(np.linalg.eigvalsh(jac.T @ jac)[0]), 0.0)
        # below the second term the remaining decrease |g|^2 / (2 lam_min) is
        # lost in the rounding of the objective; below the third the
        # Gauss-Newton correction is shorter than xtol meters
        return max(tol, g_noise, math.sqrt(2 * lam_min * f_noise),
                   opts.xtol * lam_min / float(np.max(scale)))

    lam = opts.damping
    it = 0
    converged = g0 == 0.0
    message = "max_iter"
    while not converged and it < opts.max_iter:
        it += 1
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-300)
        try:
            step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        trial = x + (step * scale).reshape(-1, 3)
        f_new, r_new = objective(trial)
        if not f_new < f:
            lam *= 10.0
            if lam > opts.max_damping:
                message = "no_decrease"
                break
            continue
        step_m = float(np.linalg.norm(trial - x))
        x, f, r = trial, f_new, r_new
        lam = max(lam / 10.0, 1e-12)
        jac = jacobian(x) * scale
        grad = jac.T @ r
        if not math.isfinite(f):
            raise EstimationDivergedError("objective became non-finite", x)
        if np.linalg.norm(grad) <= tolerance():
            converged = True
        elif step_m < opts.xtol:
            message = "xtol"
            break
    gnorm = float(np.linalg.norm(grad))
    converged = converged or gnorm <= tolerance()
    if converged:
        message = "gtol"
    return x, f, it, converged, gnorm, message


def mle_localize(graph, measurements, initial_positions, options=None, truth=None, box=None,
                 warm_start=True):
    """Maximise the Gaussian log-likelihood over the unknown positions.

    ``measurements`` is aligned with ``graph.edges`` or a sequence of
    ``(edge_index, value)`` pairs.  With ``warm_start`` the positions are first
    refined on log-power residuals (kept only if that lowers the exact
    objective).  The main solve stops when the gradient norm drops below
    ``gtol`` times its initial value (or the floating-point floor of the
    residuals, whichever is larger), when an accepted step is shorter than
    ``xtol`` meters, or after ``max_iter`` iterations.  Accepted steps never
    increase the objective.
    """
    opts = options or SolverOptions()
    x = check_points(initial_positions, "initial_positions", n=graph.n_things).copy()
    idx, values = _aligned_values(measurements, graph.n_edges)
    if graph.n_things and idx.size == 0:
        raise ValueError("no measurements: positions are not identifiable")
    covered = set(graph.edge_a[idx].tolist()) | set(graph.edge_b[idx][graph.edge_is_peer[idx]].tolist())
    missing = sorted(set(range(graph.n_things)) - covered)
    if missing:
        raise ValueError(f"things {missing} appear in no measurement")

    center, half = _box_scaling(graph, x, box)
    scale = np.tile(half, graph.n_things)  # node-major
    # work relative to the box centre; absolute depths (~km) waste mantissa bits
    local = MeasurementGraph(graph.anchors - center, graph.n_things, graph.edges, graph.exponent)
    x = x - center
    residual, jacobian, floor = _whitened_problem(local, values, idx)
    try:
        f_init = 0.5 * float(np.sum(residual(x) ** 2))
    except ChannelDomainError:
        f_init = math.inf
    if not math.isfinite(f_init):
        raise EstimationDivergedError("non-finite objective at the initial positions", x + center)

    iterations = 0
    if warm_start and f_init > 0:
        log_res, log_jac, m = _log_problem(local, values, idx)
        if m:
            try:
                xw, _, iw, _, _, _ = _levenberg_marquardt(log_res, log_jac, x, scale, opts)
                iterations += iw
                if 0.5 * float(np.sum(residual(xw) ** 2)) <= f_init:
                    x = xw
            except (EstimationDivergedError, ChannelDomainError):
                pass

    try:
        x, f, it, converged, gnorm, message = _levenberg_marquardt(residual, jacobian, x, scale, opts, floor)
    except EstimationDivergedError as exc:
        raise EstimationDivergedError(str(exc), exc.last_positions + center) from None
    x = x + center
    err = None
    if truth is not None:
        t = check_points(truth, "truth", n=graph.n_things)
        err = np.linalg.norm(x - t, axis=1)
    return EstimateResult(x, f, iterations + it, converged, gnorm, err, message=message)


def multi_start(graph, measurements, n_starts, seed, options=None, box=None, truth=None):
    """Best of several solves: the box centre first, then uniform random starts.

    Start ``s`` (``s >= 1``) is the ``s``-th draw from the seeded stream, so the
    starts for ``n`` are a prefix of those for ``n + 1``.  Returns the lowest
    objective among converged solves (all solves if none converged); ties go to
    the lowest start index.
    """
    check_int(n_starts, "n_starts", minimum=1)
    if box is None:
        raise ValueError("multi_start needs the deployment box (low, high)")
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    rng = make_rng(seed)
    n = graph.n_things
    starts = [np.tile(0.5 * (lo + hi), (n, 1))]
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(lo, hi, size=(n, 3)))
    results = []
    for s, init in enumerate(starts):
        try:
            res = mle_localize(graph, measurements, init, options, truth=truth, box=box)
        except EstimationDivergedError:
            continue
        results.append((s, res))
    if not results:
        raise EstimationDivergedError("all starts diverged", starts[-1])
    pool = [sr for sr in results if sr[1].converged] or results
    s, best = min(pool, key=lambda sr: (sr[1].final_objective, sr[0]))
    return EstimateResult(best.positions, best.final_objective, best.iterations, best.converged,
                          best.gradient_norm, best.per_node_error, s, best.message)


def rmse(estimates, truth):
    """Root mean squared Euclidean position error over nodes (meters)."""
    e = np.atleast_2d(np.asarray(estimates, dtype=float))
    t = np.atleast_2d(np.asarray(truth, dtype=float))
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {t.shape}")
    return float(np.sqrt(np.mean(np.sum((e - t) ** 2, axis=1))))


class MLELocalizer(BaseEstimator):
    """Estimator-style wrapper around :func:`mle_localize` / :func:`multi_start`.

    ``fit(graph, measurements)`` stores ``positions_``, ``objective_``,
    ``n_iter_`` and ``converged_``; ``predict()`` returns the positions and
    ``score`` the log-likelihood of new measurements at those positions.
    """

    def __init__(self, n_starts=1, random_state=0, max_iter=500, gtol=1e-10, xtol=1e-12, box=None):
        self.n_starts = n_starts
        self.random_state = random_state
        self.max_iter = max_iter
        self.gtol = gtol
        self.xtol = xtol
        self.box = box

    def _options(self):
        return SolverOptions(max_iter=self.max_iter, gtol=self.gtol, xtol=self.xtol)

    def fit(self, graph, measurements, initial_positions=None):
        if initial_positions is not None:
            res = mle_localize(graph, measurements, initial_positions, self._options(), box=self.box)
        else:
            res = multi_start(graph, measurements, self.n_starts, self.random_state,
                              self._options(), box=self.box)
        self.graph_ = graph
        self.result_ = res
        self.positions_ = res.positions
        self.objective_ = res.final_objective
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "positions_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("MLELocalizer is not fitted yet; call fit first")

    def predict(self, graph=None):
        self._check_fitted()
        return self.positions_.copy()

    def score(self, graph, measurements):
        self._check_fitted()
        return log_likelihood(measurements, self.positions_, graph)
