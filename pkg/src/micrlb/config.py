"""Line-oriented run configuration: ``section.key = value``.

Blank lines and ``#`` comments are ignored.  Unknown sections or keys are
hard errors naming the offending key.  Every default is listed in
:data:`DEFAULTS` and printed by ``micrlb config --defaults``.

Several curves in one sweep are declared with ``sweep.series``::

    sweep.series = 7 MHz: channel.frequency = 7e6 | 13 MHz: channel.frequency = 13e6

Each series is ``label: key = value, key = value`` and series are separated
by ``|``.  Keys inside a series are full ``section.key`` names.
"""
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .channel import ChannelParams, CoilSpec, NoiseModel
from .deployment import RadioConfig, ScenarioConfig
from .estimator import SolverOptions
from .experiments import Scenario, SweepConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _float(text):
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    return float(t)


def _angle(text):
    """Radians; ``pi``, ``pi/2``, ``0.25*pi`` and ``-pi/4`` are accepted."""
    t = text.strip().lower().replace(" ", "")
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    coef = num.replace("*pi", "").replace("pi", "")
    coef = {"": 1.0, "+": 1.0, "-": -1.0}.get(coef) if coef in ("", "+", "-") else float(coef)
    return coef * math.pi / (float(den) if den else 1.0)


def _floats(text):
    return tuple(_float(v) for v in text.replace(",", " ").split())


def _points(text):
    pts = []
    for chunk in text.split(";"):
        if chunk.strip():
            xyz = _floats(chunk)
            if len(xyz) != 3:
                raise ValueError(f"anchor {chunk.strip()!r} needs three coordinates")
            pts.append(xyz)
    return tuple(pts)


def _str(text):
    return text.strip()


# (section, key) -> (default, parser, description)
DEFAULTS = {
    ("scenario", "width"): (8.0, _float, "fracture area width (m)"),
    ("scenario", "length"): (8.0, _float, "fracture area length (m)"),
    ("scenario", "thickness"): (2.0, _float, "fracture thickness (m)"),
    ("scenario", "depth"): (1800.0, _float, "fracture depth (m)"),
    ("scenario", "anchor_count"): (3, _int, "anchors on the well"),
    ("scenario", "anchor_placement"): ("well_spiral", _str, "well_line | well_spiral | explicit"),
    ("scenario", "anchor_spacing"): (1.0, _float, "vertical spacing of anchors above the fracture (m)"),
    ("scenario", "anchor_offset"): (0.5, _float, "well_spiral radial offset from the well axis (m)"),
    ("scenario", "anchors"): ((), _points, "explicit anchors 'x y z; x y z; ...' (m)"),
    ("scenario", "thing_count"): (60, _int, "underground things"),
    ("scenario", "comm_range_anchor"): (math.inf, _float, "thing-anchor link range (m)"),
    ("scenario", "comm_range_peer"): (4.0, _float, "thing-thing link range, cooperative mode (m)"),
    ("scenario", "link_mode"): ("anchor_only", _str, "anchor_only | cooperative"),
    ("scenario", "temperature"): (418.0, _float, "reservoir temperature (K), metadata only"),
    ("scenario", "seed"): (1, _int, "deployment seed for generate"),
    ("channel", "frequency"): (7e6, _float, "carrier frequency (Hz)"),
    ("channel", "permeability"): (4e-7 * math.pi, _float, "medium permeability (H/m)"),
    ("channel", "unit_length_resistance"): (0.01, _float, "loop resistance per unit length (ohm/m)"),
    ("channel", "transmit_power"): (0.1, _float, "transmit power (W)"),
    ("channel", "misalignment_angle"): (math.pi / 2, _angle, "coil misalignment (rad, 'pi/2' allowed)"),
    ("channel", "path_loss_exponent"): (6, _int, "6 or 3"),
    ("coils", "tx_turns"): (20, _int, "transmitter turns"),
    ("coils", "tx_radius"): (0.02, _float, "transmitter coil radius (m)"),
    ("coils", "rx_turns"): (20, _int, "receiver turns"),
    ("coils", "rx_radius"): (0.02, _float, "receiver coil radius (m)"),
    ("noise", "sigma"): (0.05, _float, "noise standard deviation in noise.unit (power) or m (ranging)"),
    ("noise", "unit"): (1e-12, _float, "watts per noise.sigma unit in power mode"),
    ("noise", "mode"): ("power", _str, "power | ranging"),
    ("sweep", "parameter"): ("noise_sigma", _str, "swept parameter"),
    ("sweep", "values"): ((0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7), _floats, "swept values"),
    ("sweep", "trials"): (500, _int, "deployments per point"),
    ("sweep", "seed"): (1, _int, "master seed"),
    ("sweep", "fim_mode"): ("standard", _str, "standard | paper"),
    ("sweep", "bound"): ("trace", _str, "trace (full inverse) | block (per-axis block inverse)"),
    ("sweep", "paired"): (True, _bool, "reuse the same deployments at every swept value"),
    ("sweep", "allow_out_of_range"): (False, _bool, "permit values outside the physical ranges"),
    ("sweep", "cond_threshold"): (1e12, _float, "condition number above which a FIM is singular"),
    ("sweep", "series"): ("", _str, "'label: key = value, ... | label: ...' (one curve each)"),
    ("sweep", "title"): ("", _str, "plot title"),
    ("estimator", "max_iter"): (500, _int, "solver iteration cap"),
    ("estimator", "gtol"): (1e-10, _float, "relative gradient tolerance"),
    ("estimator", "xtol"): (1e-12, _float, "step tolerance (m)"),
    ("estimator", "n_starts"): (1, _int, "multi-start count"),
    ("estimator", "sigmas"): ((0.0, 0.05, 0.3, 0.7), _floats, "noise levels of the efficiency study"),
    ("estimator", "trials"): (1000, _int, "noise draws per level"),
    ("estimator", "seed"): (1, _int, "efficiency master seed"),
    ("output", "dir"): (".", _str, "output directory"),
    ("output", "stem"): ("sweep", _str, "file name stem for CSV / plot data"),
    ("output", "plot"): (True, _bool, "also write .dat and .svg plot data"),
}
SECTIONS = tuple(dict.fromkeys(s for s, _ in DEFAULTS))


def _split_key(key, lineno=None):
    where = f"line {lineno}: " if lineno else ""
    section, dot, name = key.strip().partition(".")
    if not dot or not section or not name:
        raise ConfigError(f"{where}expected 'section.key', got {key.strip()!r}")
    if section not in SECTIONS:
        raise ConfigError(f"{where}unknown section {section!r} in key {key.strip()!r}")
    if (section, name) not in DEFAULTS:
        raise ConfigError(f"{where}unknown key {key.strip()!r}")
    return section, name


def _parse_value(section, name, text, lineno=None):
    _, parser, _ = DEFAULTS[(section, name)]
    try:
        return parser(text)
    except (ValueError, ZeroDivisionError) as exc:
        where = f"line {lineno}: " if lineno else ""
        raise ConfigError(f"{where}bad value for {section}.{name}: {exc}") from None


@dataclass(frozen=True)
class Series:
    label: str
    overrides: tuple  # ((section, key, value), ...)


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def get(self, section, name):
        return self.values.get((section, name), DEFAULTS[(section, name)][0])

    def with_values(self, overrides):
        vals = dict(self.values)
        for section, name, value in overrides:
            vals[(section, name)] = value
        return RunConfig(vals)

    # --- builders ----------------------------------------------------------------
    def scenario_config(self):
        g = lambda k: self.get("scenario", k)  # noqa: E731
        placement = g("anchor_placement")
        anchors = g("anchors")
        if anchors and ("scenario", "anchor_placement") not in self.values:
            placement = "explicit"
        return ScenarioConfig(
            width=g("width"), length=g("length"), thickness=g("thickness"), depth=g("depth"),
            anchor_count=g("anchor_count"), anchor_placement=placement,
            anchor_spacing=g("anchor_spacing"), anchor_offset=g("anchor_offset"), anchors=anchors,
            thing_count=g("thing_count"), comm_range_anchor=g("comm_range_anchor"),
            comm_range_peer=g("comm_range_peer"), link_mode=g("link_mode"),
            temperature=g("temperature"),
        )

    def radio_config(self):
        c = lambda k: self.get("channel", k)  # noqa: E731
        channel = ChannelParams(
            frequency=c("frequency"), permeability=c("permeability"),
            unit_length_resistance=c("unit_length_resistance"), transmit_power=c("transmit_power"),
            misalignment_angle=c("misalignment_angle"), path_loss_exponent=c("path_loss_exponent"),
        )
        tx = CoilSpec(self.get("coils", "tx_turns"), self.get("coils", "tx_radius"))
        rx = CoilSpec(self.get("coils", "rx_turns"), self.get("coils", "rx_radius"))
        noise = NoiseModel(self.get("noise", "sigma"), self.get("noise", "unit"), self.get("noise", "mode"))
        return RadioConfig(channel, tx, rx, noise)

    def scenario(self):
        return Scenario(self.scenario_config(), self.radio_config())

    def solver_options(self):
        return SolverOptions(
            max_iter=self.get("estimator", "max_iter"),
            gtol=self.get("estimator", "gtol"),
            xtol=self.get("estimator", "xtol"),
        )

    def series(self):
        return parse_series(self.get("sweep", "series"))

    def sweep_configs(self):
        """One :class:`SweepConfig` per series (or a single unlabeled one)."""
        series = self.series() or [Series("", ())]
        out = []
        for s in series:
            cfg = self.with_values(s.overrides)
            g = lambda k: cfg.get("sweep", k)  # noqa: E731
            out.append(SweepConfig(
                base=cfg.scenario(), parameter=g("parameter"), values=g("values"),
                trials=g("trials"), seed=g("seed"), fim_mode=g("fim_mode"), bound=g("bound"),
                label=s.label, paired=g("paired"), allow_out_of_range=g("allow_out_of_range"),
                cond_threshold=g("cond_threshold"),
            ))
        return out


def parse_series(text):
    series = []
    for chunk in text.split("|"):
        if not chunk.strip():
            continue
        label, colon, body = chunk.partition(":")
        if not colon or not label.strip():
            raise ConfigError(f"series {chunk.strip()!r} needs the form 'label: key = value, ...'")
        overrides = []
        for item in body.split(","):
            if not item.strip():
                continue
            key, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"series {label.strip()!r}: expected 'key = value', got {item.strip()!r}")
            section, name = _split_key(key)
            if (section, name) == ("sweep", "series"):
                raise ConfigError("sweep.series cannot be nested")
            overrides.append((section, name, _parse_value(section, name, value)))
        series.append(Series(label.strip(), tuple(overrides)))
    labels = [s.label for s in series]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate series labels in {labels}")
    return series


def parse_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        section, name = _split_key(key, lineno)
        values[(section, name)] = _parse_value(section, name, value, lineno)
    cfg = RunConfig(values)
    cfg.series()  # validate early
    return cfg


def preset_names():
    return sorted(p.name for p in resources.files("micrlb.presets").iterdir() if p.name.endswith(".cfg"))


def load_config(path):
    """Read a config file; a bare preset name such as ``fig4`` is also accepted."""
    p = Path(path)
    if p.is_file():
        return parse_config(p.read_text(encoding="utf-8"))
    name = p.name if p.name.endswith(".cfg") else f"{p.name}.cfg"
    if p.parent == Path(".") and name in preset_names():
        return parse_config(resources.files("micrlb.presets").joinpath(name).read_text(encoding="utf-8"))
    raise FileNotFoundError(f"config file not found: {path}")


def _show(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(_show(c) for c in p) for p in value)
        return ", ".join(_show(v) for v in value)
    return str(value)


def format_defaults():
    lines = []
    section = None
    for (sec, name), (default, _, desc) in DEFAULTS.items():
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        lines.append(f"{sec}.{name} = {_show(default)}".ljust(48) + f"# {desc}")
    return "\n".join(lines) + "\n"
