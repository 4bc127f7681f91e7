"""Voltage-aware appliance and smart-meter simulator.

Generates per-appliance and aggregated (P, Q) series at 1 Hz under
constant or stepped grid-voltage scenarios. Appliance behavior is a
small set of parametric voltage-response laws (resistive, constant
power, induction, multi-state) around each appliance's rating; the
aggregate active power is the sum of the appliance powers plus i.i.d.
Gaussian noise, so the additive decomposition holds by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ScenarioError

VOLTAGE_MIN = 205.0
VOLTAGE_MAX = 240.0
TAXONOMY_CODES = frozenset({"A", "B", "C", "D"})   # always-on / on-off / continuous / multi-state
VOLTAGE_LAWS = ("resistive", "constant_power", "induction", "multi_state")


@dataclass(frozen=True)
class ApplianceModel:
    """Electrical behavior of one appliance class.

    ``states`` lists the selectable operating points as (power_fraction,
    reactive_fraction) pairs; state index 0 always means "off" and state
    k >= 1 picks states[k-1]. ``transient`` is a switch-on spike as
    (fraction of steady power, decay seconds).
    """

    name: str
    taxonomy: frozenset
    rated_power: float              # watts at nominal voltage
    voltage_law: str
    states: tuple = ((1.0, 0.0),)
    transient: tuple = (0.0, 0.0)
    nominal_voltage: float = 230.0

    def __post_init__(self):
        if self.rated_power <= 0:
            raise ConfigError(f"{self.name}: rated_power must be positive")
        if not self.taxonomy or not set(self.taxonomy) <= TAXONOMY_CODES:
            raise ConfigError(f"{self.name}: taxonomy must be a nonempty subset of A/B/C/D")
        if self.voltage_law not in VOLTAGE_LAWS:
            raise ConfigError(f"{self.name}: unknown voltage law {self.voltage_law!r}")
        if not self.states:
            raise ConfigError(f"{self.name}: needs at least one operating state")
        for frac, _ in self.states:
            if not 0.0 <= frac <= 1.5:
                raise ConfigError(f"{self.name}: power fraction {frac} outside [0, 1.5]")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "taxonomy": sorted(self.taxonomy),
            "rated_power": self.rated_power,
            "voltage_law": self.voltage_law,
            "states": [list(s) for s in self.states],
            "transient": list(self.transient),
            "nominal_voltage": self.nominal_voltage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ApplianceModel":
        return cls(name=d["name"], taxonomy=frozenset(d["taxonomy"]),
                   rated_power=float(d["rated_power"]), voltage_law=d["voltage_law"],
                   states=tuple(tuple(s) for s in d["states"]),
                   transient=tuple(d.get("transient", (0.0, 0.0))),
                   nominal_voltage=float(d.get("nominal_voltage", 230.0)))


def _check_voltage(voltage: np.ndarray) -> None:
    if np.any(voltage < VOLTAGE_MIN) or np.any(voltage > VOLTAGE_MAX):
        raise ScenarioError(
            f"voltage outside the supported band [{VOLTAGE_MIN:.0f}, {VOLTAGE_MAX:.0f}] V")


def _power_arrays(model: ApplianceModel, voltage: np.ndarray, state: np.ndarray,
                  t_since_on: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized steady-state + transient (p, q) for aligned second arrays."""
    _check_voltage(voltage)
    if np.any(state < 0) or np.any(state > len(model.states)):
        raise ScenarioError(f"{model.name}: state index out of range")

    frac_table = np.array([0.0] + [s[0] for s in model.states])
    rfr_table = np.array([0.0] + [s[1] for s in model.states])
    frac = frac_table[state]
    rfr = rfr_table[state]
    vr = voltage / model.nominal_voltage
    rated = model.rated_power

    if model.voltage_law == "resistive":
        p = rated * frac * vr ** 2
        q = np.zeros_like(p)
    elif model.voltage_law == "constant_power":
        p = rated * frac
        q = 0.2 * p / vr
    elif model.voltage_law == "induction":
        p = rated * frac * vr ** 0.5
        q = 0.6 * rated * frac * vr ** 2
    else:  # multi_state: per-state reactive fraction, otherwise constant-power
        p = rated * frac
        q = rfr * p / vr

    spike_frac, spike_dur = model.transient
    if spike_frac > 0 and spike_dur > 0:
        ramp = np.clip(1.0 - t_since_on / spike_dur, 0.0, None)
        p = p + spike_frac * p * ramp * (state > 0)
    return p, q


def appliance_power(model: ApplianceModel, voltage: float, state: int,
                    t_since_on: float) -> tuple[float, float]:
    """Active/reactive power (W, var) of one appliance at one second.

    state 0 is off and returns (0, 0); the transient spike decays linearly
    over the configured duration after switch-on.
    """
    p, q = _power_arrays(model, np.asarray([float(voltage)]),
                         np.asarray([int(state)]), np.asarray([float(t_since_on)]))
    return float(p[0]), float(q[0])


def default_catalog() -> list[ApplianceModel]:
    """The nine-appliance laboratory set with its nameplate ratings."""
    f = frozenset
    return [
        # EV charger: 230 V * 12 A, constant-power charging with a taper state
        ApplianceModel("EV", f("BD"), 2760.0, "constant_power",
                       states=((1.0, 0.0), (0.3, 0.0)), transient=(0.05, 2.0)),
        # refrigerator: induction compressor, duty-cycled
        ApplianceModel("RF", f("AB"), 150.0, "induction", transient=(2.0, 3.0)),
        ApplianceModel("MW", f("CD"), 1000.0, "multi_state",
                       states=((1.0, 0.15), (0.55, 0.15), (0.2, 0.15)), transient=(0.2, 1.0)),
        ApplianceModel("EK", f("B"), 1350.0, "resistive"),
        # oil heater with two heat settings
        ApplianceModel("OH", f("BD"), 1500.0, "resistive", states=((1.0, 0.0), (0.6, 0.0))),
        ApplianceModel("IB", f("B"), 100.0, "resistive"),
        # inverter air-conditioner: compressor modulation levels
        ApplianceModel("AC", f("CD"), 2530.0, "constant_power",
                       states=((1.0, 0.0), (0.7, 0.0), (0.4, 0.0)), transient=(0.4, 2.0)),
        # induction-machine ceiling fan with three speeds
        ApplianceModel("CF", f("BD"), 70.0, "induction",
                       states=((1.0, 0.0), (0.75, 0.0), (0.5, 0.0)), transient=(0.8, 2.0)),
        ApplianceModel("LT", f("B"), 34.0, "constant_power"),
    ]


def load_catalog(path) -> list[ApplianceModel]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [ApplianceModel.from_dict(d) for d in doc]


def save_catalog(appliances, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([a.to_dict() for a in appliances], fh, indent=2)


@dataclass(frozen=True)
class VoltageScenario:
    """Piecewise-constant supply voltage over a fixed duration.

    ``segments`` are (start_s, level_volts) steps sorted by start; a
    constant scenario is the single segment (0, level). The grid runs
    at 50 Hz (informational only at 1 Hz sampling).
    """

    duration_s: int
    segments: tuple
    frequency_hz: float = 50.0

    def __post_init__(self):
        if self.duration_s < 1:
            raise ScenarioError("scenario duration must be >= 1 s")
        if not self.segments:
            raise ScenarioError("scenario needs at least one voltage segment")
        starts = [s for s, _ in self.segments]
        if starts != sorted(starts) or starts[0] != 0:
            raise ScenarioError("segments must be sorted by start time and begin at 0 s")
        for _, level in self.segments:
            if not VOLTAGE_MIN <= level <= VOLTAGE_MAX:
                raise ScenarioError(f"voltage level {level} V outside "
                                    f"[{VOLTAGE_MIN:.0f}, {VOLTAGE_MAX:.0f}] V")

    def voltage(self) -> np.ndarray:
        """Per-second voltage, length duration_s."""
        out = np.empty(self.duration_s)
        starts = [int(s) for s, _ in self.segments] + [self.duration_s]
        for i, (_, level) in enumerate(self.segments):
            out[starts[i]:starts[i + 1]] = level
        return out

    @classmethod
    def constant(cls, duration_s: int, level: float = 230.0) -> "VoltageScenario":
        return cls(duration_s=int(duration_s), segments=((0, float(level)),))

    @classmethod
    def random_steps(cls, duration_s: int, seed: int, mean_segment_s: float = 120.0,
                     low: float = VOLTAGE_MIN, high: float = VOLTAGE_MAX) -> "VoltageScenario":
        """Stepped profile with exponential dwell times and uniform levels."""
        rng = np.random.default_rng(seed)
        segments = []
        t = 0
        while t < duration_s:
            segments.append((t, float(rng.uniform(low, high))))
            t += max(1, int(round(rng.exponential(mean_segment_s))))
        return cls(duration_s=int(duration_s), segments=tuple(segments))

    def to_dict(self) -> dict:
        return {"duration_s": self.duration_s, "frequency_hz": self.frequency_hz,
                "segments": [list(s) for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "VoltageScenario":
        return cls(duration_s=int(d["duration_s"]),
                   segments=tuple(tuple(s) for s in d["segments"]),
                   frequency_hz=float(d.get("frequency_hz", 50.0)))


@dataclass
class Schedule:
    """Per-appliance operating state per second; 0 means off."""

    duration_s: int
    states: dict = field(default_factory=dict)   # name -> int array [duration_s]


# mean on-duration (s) used by the schedule generator, by appliance name;
# unlisted appliances fall back to the generic value
_MEAN_ON_S = {"EV": 2400.0, "EK": 240.0, "MW": 120.0, "AC": 1800.0,
              "OH": 1200.0, "CF": 1200.0, "LT": 1800.0, "IB": 900.0}
_GENERIC_MEAN_ON_S = 600.0
_DUTY_CYCLE_S = 600.0          # always-on compressor half-cycle
_STATE_DWELL_S = 120.0         # mean dwell before a multi-state redraw


def generate_schedule(appliances, duration_s: int, seed: int,
                      density: float = 0.3) -> Schedule:
    """Draw operating-state timelines from exponential on/off processes.

    ``density`` is the target long-run on-fraction for on/off appliances;
    always-on appliances duty-cycle regardless of density. Multi-state
    appliances redraw their state within on-intervals. Deterministic for
    a fixed (appliance order, seed).
    """
    if duration_s < 60:
        raise ScenarioError("schedule duration must be >= 60 s")
    if not 0.0 < density <= 1.0:
        raise ScenarioError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    schedule = Schedule(duration_s=int(duration_s))
    for model in appliances:
        timeline = np.zeros(duration_s, dtype=np.int64)
        always_on = "A" in model.taxonomy
        mean_on = _DUTY_CYCLE_S if always_on else _MEAN_ON_S.get(model.name, _GENERIC_MEAN_ON_S)
        mean_off = _DUTY_CYCLE_S if always_on else mean_on * (1.0 / density - 1.0)
        multi = len(model.states) > 1 and ({"C", "D"} & set(model.taxonomy))

        t = int(round(rng.exponential(mean_off)))  # random initial off phase
        while t < duration_s:
            on_len = max(1, int(round(rng.exponential(mean_on))))
            end = min(duration_s, t + on_len)
            if multi:
                u = t
                while u < end:
                    dwell = max(1, int(round(rng.exponential(_STATE_DWELL_S))))
                    timeline[u:min(end, u + dwell)] = 1 + rng.integers(len(model.states))
                    u += dwell
            else:
                timeline[t:end] = 1
            t = end + max(1, int(round(rng.exponential(mean_off))))
        schedule.states[model.name] = timeline
    return schedule


def _seconds_since_change(states: np.ndarray) -> np.ndarray:
    """For each second, seconds elapsed since the state last changed."""
    t = np.arange(len(states))
    changed = np.empty(len(states), dtype=bool)
    changed[0] = True
    changed[1:] = states[1:] != states[:-1]
    last_change = np.maximum.accumulate(np.where(changed, t, 0))
    return (t - last_change).astype(np.float64)


@dataclass
class MeterSeries:
    """Time-aligned 1 Hz records: voltage, aggregate P/Q, per-appliance truth."""

    timestamps: np.ndarray
    voltage: np.ndarray
    aggregate_p: np.ndarray
    aggregate_q: np.ndarray
    appliance_p: dict
    appliance_on: dict
    noise_sigma: float = 0.0

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def names(self) -> list[str]:
        return list(self.appliance_p)


def synthesize(appliances, schedule: Schedule, scenario: VoltageScenario,
               noise_sigma: float, seed: int) -> MeterSeries:
    """Build the meter record: aggregate P is the appliance sum plus noise.

    The additive decomposition holds exactly: aggregate_p - sum(appliance_p)
    reproduces the drawn Gaussian noise term sample for sample.
    """
    if schedule.duration_s != scenario.duration_s:
        raise ScenarioError(f"schedule covers {schedule.duration_s} s but the "
                            f"scenario covers {scenario.duration_s} s")
    if noise_sigma < 0:
        raise ScenarioError("noise_sigma must be >= 0")
    duration = scenario.duration_s
    voltage = scenario.voltage()
    appliance_p: dict[str, np.ndarray] = {}
    appliance_q: dict[str, np.ndarray] = {}
    appliance_on: dict[str, np.ndarray] = {}
    for model in appliances:
        if model.name not in schedule.states:
            raise ScenarioError(f"schedule has no timeline for appliance {model.name}")
        states = schedule.states[model.name]
        p, q = _power_arrays(model, voltage, states, _seconds_since_change(states))
        appliance_p[model.name] = p
        appliance_q[model.name] = q
        appliance_on[model.name] = states > 0

    eps = np.random.default_rng(seed).normal(0.0, noise_sigma, size=duration)
    total_p = np.sum(list(appliance_p.values()), axis=0) if appliance_p else np.zeros(duration)
    total_q = np.sum(list(appliance_q.values()), axis=0) if appliance_q else np.zeros(duration)
    return MeterSeries(timestamps=np.arange(duration, dtype=np.float64),
                       voltage=voltage,
                       aggregate_p=total_p + eps,
                       aggregate_q=total_q,
                       appliance_p=appliance_p,
                       appliance_on=appliance_on,
                       noise_sigma=float(noise_sigma))


# -- CSV interchange ----------------------------------------------------
# header: t,voltage,agg_p,agg_q,<name>_p,<name>_on,...
# one row per second, floats at 6 decimal places, 0/1 booleans, LF endings


def write_csv(series: MeterSeries, path) -> None:
    names = series.names
    header = ["t", "voltage", "agg_p", "agg_q"]
    for n in names:
        header += [f"{n}_p", f"{n}_on"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(series)):
            row = [f"{series.timestamps[i]:.0f}", f"{series.voltage[i]:.6f}",
                   f"{series.aggregate_p[i]:.6f}", f"{series.aggregate_q[i]:.6f}"]
            for n in names:
                row.append(f"{series.appliance_p[n][i]:.6f}")
                row.append(str(int(series.appliance_on[n][i])))
            fh.write(",".join(row) + "\n")


def read_csv(path) -> MeterSeries:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    required = ["t", "voltage", "agg_p", "agg_q"]
    if header[:4] != required:
        raise ScenarioError(f"meter CSV must start with columns {required}, got {header[:4]}")
    names = [col[:-2] for col in header[4:] if col.endswith("_p")]
    data = np.array([[float(v) for v in row] for row in rows]) if rows else np.zeros((0, len(header)))
    col = {name: idx for idx, name in enumerate(header)}
    return MeterSeries(
        timestamps=data[:, col["t"]],
        voltage=data[:, col["voltage"]],
        aggregate_p=data[:, col["agg_p"]],
        aggregate_q=data[:, col["agg_q"]],
        appliance_p={n: data[:, col[f"{n}_p"]] for n in names},
        appliance_on={n: data[:, col[f"{n}_on"]].astype(bool) for n in names},
    )
