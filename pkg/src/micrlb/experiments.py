"""Monte-Carlo CRLB sweeps, estimator efficiency study, CSV and plot output.

Per-trial seeds are ``mix_seed(master, trial, value_index)`` (see
:mod:`micrlb.seeding`).  Sweeps are paired by default: every swept value
reuses ``value_index = 0``, so all points see the same deployments and
trend checks are free of sampling noise.
"""
import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._parallel import map_ordered
from .channel import edge_means
from .deployment import (
    Deployment,
    RadioConfig,
    ScenarioConfig,
    build_measurement_graph,
    generate_deployment,
)
from .estimator import EstimationDivergedError, SolverOptions, mle_localize
from .fim import (
    DEFAULT_COND_THRESHOLD,
    SingularBlockError,
    crlb_paper,
    crlb_standard,
    fim_paper,
    fim_standard,
)
from .seeding import make_rng, trial_seed

SWEEP_PARAMETERS = (
    "noise_sigma", "frequency", "anchor_count", "coil_turns", "coil_radius", "transmit_power",
)
# physical ranges; anchor_count has none
PHYSICAL_RANGES = {
    "noise_sigma": (0.05, 0.7),
    "frequency": (7e6, 13e6),
    "coil_turns": (10, 30),
    "coil_radius": (0.01, 0.04),
    "transmit_power": (0.1, 0.2),
}
BOUNDS = ("trace", "block")
SWEEP_FIM_MODES = ("standard", "paper")
CSV_HEADER = ("param", "mean_crlb", "std_crlb", "trials", "singular", "status")


class AllTrialsSingularError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)

    def with_parameter(self, name, value):
        cfg, radio = self.config, self.radio
        if name == "noise_sigma":
            radio = replace(radio, noise=replace(radio.noise, sigma=float(value)))
        elif name == "frequency":
            radio = replace(radio, channel=replace(radio.channel, frequency=float(value)))
        elif name == "transmit_power":
            radio = replace(radio, channel=replace(radio.channel, transmit_power=float(value)))
        elif name == "coil_turns":
            turns = _as_int(value, name)
            radio = replace(radio, tx=replace(radio.tx, turns=turns), rx=replace(radio.rx, turns=turns))
        elif name == "coil_radius":
            r = float(value)
            radio = replace(radio, tx=replace(radio.tx, radius=r), rx=replace(radio.rx, radius=r))
        elif name == "anchor_count":
            if cfg.anchor_placement == "explicit":
                raise ValueError("anchor_count cannot be swept with explicit anchors")
            cfg = replace(cfg, anchor_count=_as_int(value, name))
        else:
            raise ValueError(f"unknown sweep parameter {name!r}; expected one of {SWEEP_PARAMETERS}")
        return Scenario(cfg, radio)

    def deploy(self, seed):
        return generate_deployment(self.config, seed)

    def graph(self, dep):
        return build_measurement_graph(dep, self.config, self.radio)


def _as_int(value, name):
    if float(value) != int(value):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    return int(value)


def trial_bound(scenario, seed, fim_mode="standard", bound="trace",
                cond_threshold=DEFAULT_COND_THRESHOLD):
    """Aggregate bound for one seeded deployment; ``nan`` when singular."""
    dep = scenario.deploy(seed)
    graph = scenario.graph(dep)
    if fim_mode == "standard":
        fim = fim_standard(graph, dep.things)
    elif fim_mode == "paper":
        fim = fim_paper(graph, dep.things)
    else:
        raise ValueError(f"sweeps support FIM modes {SWEEP_FIM_MODES}, got {fim_mode!r}")
    if bound == "trace":
        rep = crlb_standard(fim, cond_threshold)
        return math.nan if rep.singular else rep.aggregate_bound
    if bound == "block":
        try:
            return crlb_paper(fim, cond_threshold)
        except SingularBlockError:
            return math.nan
    raise ValueError(f"bound must be one of {BOUNDS}, got {bound!r}")


def trial_bounds(scenario, n_trials, seed, fim_mode="standard", bound="trace", value_index=0,
                 threads=None, cond_threshold=DEFAULT_COND_THRESHOLD):
    """Per-trial aggregate bounds in trial order (``nan`` marks singular trials)."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")

    def one(t):
        return trial_bound(scenario, trial_seed(seed, t, value_index), fim_mode, bound, cond_threshold)

    return np.array(map_ordered(one, range(n_trials), threads), dtype=float)


class MonteCarloCrlb(NamedTuple):
    mean: float
    std: float
    singular_count: int


def summarize_bounds(bounds):
    ok = bounds[~np.isnan(bounds)]
    singular = int(len(bounds) - len(ok))
    if len(ok) == 0:
        raise AllTrialsSingularError(f"all {len(bounds)} trials produced a singular FIM")
    std = float(np.std(ok, ddof=1)) if len(ok) > 1 else 0.0
    return MonteCarloCrlb(float(np.mean(ok)), std, singular)


def monte_carlo_crlb(scenario, n_trials, seed, fim_mode="standard", bound="trace", value_index=0,
                     threads=None, cond_threshold=DEFAULT_COND_THRESHOLD):
    """Mean and sample std of the aggregate bound over random deployments.

    Singular trials are excluded from both and counted separately.
    """
    b = trial_bounds(scenario, n_trials, seed, fim_mode, bound, value_index, threads, cond_threshold)
    return summarize_bounds(b)


@dataclass(frozen=True)
class SweepConfig:
    base: Scenario
    parameter: str
    values: tuple
    trials: int = 500
    seed: int = 1
    fim_mode: str = "standard"
    bound: str = "trace"
    label: str = ""
    paired: bool = True
    allow_out_of_range: bool = False
    cond_threshold: float = DEFAULT_COND_THRESHOLD
    output: str = None

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}; expected one of {SWEEP_PARAMETERS}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.fim_mode not in SWEEP_FIM_MODES:
            raise ValueError(f"fim_mode must be one of {SWEEP_FIM_MODES}")
        if self.bound not in BOUNDS:
            raise ValueError(f"bound must be one of {BOUNDS}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        check_range(self.parameter, self.values, self.allow_out_of_range)


def check_range(parameter, values, allow_out_of_range=False):
    if parameter == "anchor_count":
        bad = [v for v in values if v < 1 or v != int(v)]
        if bad:
            raise ValueError(f"anchor_count values must be positive integers, got {bad}")
        return
    lo, hi = PHYSICAL_RANGES[parameter]
    bad = [v for v in values if not lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12)]
    if bad and not allow_out_of_range:
        raise ValueError(
            f"{parameter} values {bad} outside the physical range [{lo:g}, {hi:g}]; "
            "use allow_out_of_range to override"
        )


class SweepRow(NamedTuple):
    param: float
    mean_crlb: float
    std_crlb: float
    trials: int
    singular: int
    status: str = "ok"


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    rows: tuple
    label: str = ""

    @property
    def values(self):
        return np.array([r.param for r in self.rows])

    @property
    def means(self):
        return np.array([r.mean_crlb for r in self.rows])


def run_sweep(cfg, threads=None):
    """One Monte-Carlo point per swept value; failures land in the row status."""
    rows = []
    for vi, value in sorted(enumerate(cfg.values), key=lambda iv: iv[1]):
        scenario = cfg.base.with_parameter(cfg.parameter, value)
        index = 0 if cfg.paired else vi
        try:
            mean, std, singular = monte_carlo_crlb(
                scenario, cfg.trials, cfg.seed, cfg.fim_mode, cfg.bound, index, threads,
                cfg.cond_threshold,
            )
            rows.append(SweepRow(value, mean, std, cfg.trials, singular))
        except AllTrialsSingularError:
            rows.append(SweepRow(value, math.nan, math.nan, cfg.trials, cfg.trials, "all_singular"))
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            reason = str(exc).replace(",", ";").replace("\n", " ")
            rows.append(SweepRow(value, math.nan, math.nan, cfg.trials, 0, f"error: {reason}"))
    return SweepResult(cfg.parameter, tuple(rows), cfg.label)


# --- estimator efficiency --------------------------------------------------------

class EfficiencyRow(NamedTuple):
    sigma: float
    rmse: float
    sqrt_bound: float
    rmse_se: float
    trials: int
    converged: int

    @property
    def ratio(self):
        return self.rmse / self.sqrt_bound if self.sqrt_bound > 0 else math.nan

    def respects_bound(self, n_se=3.0):
        return self.rmse >= self.sqrt_bound - n_se * self.rmse_se


def efficiency_study(scenario, sigmas, n_trials, seed, deployment=None, threads=None,
                     options=None):
    """Empirical ML RMSE against ``sqrt`` of the aggregate CRLB, per noise level.

    ``sigmas`` are in the scenario's noise units; ``0`` gives noiseless data
    (the bound is then 0).  One deployment (seeded, or the one given) is
    reused for every trial; each trial draws fresh noise and starts the
    solver at the true positions.
    """
    dep = deployment if deployment is not None else scenario.deploy(trial_seed(seed, 0, 0))
    if not isinstance(dep, Deployment):
        raise TypeError("deployment must be a Deployment")
    opts = options or SolverOptions()
    lo, hi = scenario.config.box
    box = (np.minimum(lo, dep.things.min(axis=0)), np.maximum(hi, dep.things.max(axis=0)))
    rows = []
    for si, sigma in enumerate(sigmas):
        noiseless = sigma == 0
        s = scenario if noiseless else scenario.with_parameter("noise_sigma", sigma)
        graph = s.graph(dep)
        if noiseless:
            sqrt_bound = 0.0
        else:
            rep = crlb_standard(fim_standard(graph, dep.things))
            sqrt_bound = math.sqrt(rep.aggregate_bound) if not rep.singular else math.inf
        mu = edge_means(graph, dep.things)

        def one(t):
            rng = make_rng(trial_seed(seed, t, si + 1))
            noise = 0.0 if noiseless else rng.standard_normal(graph.n_edges) * graph.edge_sigma
            try:
                res = mle_localize(graph, mu + noise, dep.things, opts, box=box)
            except EstimationDivergedError as exc:
                return math.nan, False, exc.last_positions
            err = float(np.mean(np.sum((res.positions - dep.things) ** 2, axis=1)))
            return err, res.converged, None

        out = map_ordered(one, range(n_trials), threads)
        mse = np.array([o[0] for o in out])
        conv = int(sum(o[1] for o in out))
        mse = mse[np.isfinite(mse)]
        m = float(np.mean(mse)) if len(mse) else math.nan
        r = math.sqrt(m)
        se_m = float(np.std(mse, ddof=1) / math.sqrt(len(mse))) if len(mse) > 1 else 0.0
        se_r = se_m / (2 * r) if r > 0 else 0.0
        rows.append(EfficiencyRow(float(sigma), r, sqrt_bound, se_r, n_trials, conv))
    return rows


def format_efficiency(rows):
    lines = ["sigma,rmse,sqrt_crlb,rmse_se,ratio,trials,converged"]
    for r in rows:
        lines.append(",".join([
            _fmt(r.sigma), _fmt(r.rmse), _fmt(r.sqrt_bound), _fmt(r.rmse_se), _fmt(r.ratio),
            str(r.trials), str(r.converged),
        ]))
    return "\n".join(lines) + "\n"


# --- output ------------------------------------------------------------------------

def _fmt(v):
    return format(float(v), ".9g")


def emit_csv(result, path):
    """``param,mean_crlb,std_crlb,trials,singular,status`` with 9 significant digits."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in result.rows:
            w.writerow([_fmt(r.param), _fmt(r.mean_crlb), _fmt(r.std_crlb), r.trials, r.singular, r.status])


def read_csv(path, parameter="", label=""):
    with open(path, encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header[:5] != CSV_HEADER[:5]:
            raise ValueError(f"unexpected CSV header {header}")
        rows = []
        for rec in reader:
            status = rec[5] if len(rec) > 5 else "ok"
            rows.append(SweepRow(float(rec[0]), float(rec[1]), float(rec[2]), int(rec[3]), int(rec[4]), status))
    return SweepResult(parameter, tuple(rows), label)


def emit_plotdata(results, path_stem, title="", xlabel=None):
    """Write ``<stem>.dat`` (whitespace table) and ``<stem>.svg`` (line chart).

    One series per result; y axis is logarithmic.  Output is byte-stable.
    """
    results = list(results)
    dat = f"{path_stem}.dat"
    with open(dat, "w", encoding="ascii", newline="\n") as fh:
        fh.write("# series param mean_crlb std_crlb trials singular\n")
        for res in results:
            name = res.label or res.parameter
            for r in res.rows:
                fh.write(f"{name} {_fmt(r.param)} {_fmt(r.mean_crlb)} {_fmt(r.std_crlb)} {r.trials} {r.singular}\n")
    svg = f"{path_stem}.svg"
    _plot_svg(results, svg, title, xlabel)
    return dat, svg


def _plot_svg(results, path, title, xlabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "micrlb", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for res in results:
            ok = [r for r in res.rows if math.isfinite(r.mean_crlb) and r.mean_crlb > 0]
            if ok:
                ax.plot([r.param for r in ok], [r.mean_crlb for r in ok], marker="o",
                        label=res.label or res.parameter)
        ax.set_yscale("log")
        ax.set_xlabel(xlabel or (results[0].parameter if results else ""))
        ax.set_ylabel("mean CRLB (m$^2$)")
        if title:
            ax.set_title(title)
        if any(res.label for res in results):
            ax.legend()
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
