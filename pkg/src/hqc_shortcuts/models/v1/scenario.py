"""Model for gate scenarios."""

from __future__ import annotations

import math
import re
from typing import Annotated, Any, Self, TypeAlias

import numpy as np
from pydantic import BeforeValidator, Field, model_validator
from pydantic import ValidationError as PydanticValidationError
from safir.pydantic import CamelCaseModel

from ...constants import (
    DEFAULT_FOCK_CUTOFF,
    DEFAULT_RAMAN_COUPLING,
    DEFAULT_SAMPLES,
    DEFAULT_TOL,
    DISPERSIVE_RATIO,
    TWO_PI,
)
from ...dynamics import DecayRates, Layer
from ...exceptions import (
    DispersiveGuardError,
    ScenarioError,
    UnknownAxisError,
)
from ...holonomy import (
    CdMethod,
    DfsEncoding,
    GateKind,
    PulseSchedule,
    Ramp,
    cp_encoding_for,
    default_encoding,
    make_schedule,
    split_total_time,
)
from ...nvplatform import (
    NvParams,
    PlatformSettings,
    coupling_strength_G,
    effective_rabi,
    program_qubits,
    raman_coupling_g,
)

__all__ = [
    "DynamicsSection",
    "HolonomySection",
    "HumanAngle",
    "HumanFrequency",
    "HumanTime",
    "NvPlatformSection",
    "NvSection",
    "Scenario",
    "SWEEP_AXES",
    "SweepSection",
    "load_scenario",
    "resolve_axis",
    "scenario_error",
]

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"

# Cyclic units are converted to rad/us.
_FREQUENCY_UNITS = {
    "thz": TWO_PI * 1e6,
    "ghz": TWO_PI * 1e3,
    "mhz": TWO_PI,
    "khz": TWO_PI * 1e-3,
    "hz": TWO_PI * 1e-6,
    "rad/us": 1.0,
    "rad/μs": 1.0,
    "rad/s": 1e-6,
}
_TIME_UNITS = {"s": 1e6, "ms": 1e3, "us": 1.0, "μs": 1.0, "ns": 1e-3}

_FREQUENCY_RE = re.compile(
    rf"^(?:2\s*(?:pi|π)\s*[x×*]?\s*)?({_NUMBER})\s*([a-zμ/]*)$",
    re.IGNORECASE,
)
_TIME_RE = re.compile(rf"^({_NUMBER})\s*([a-zμ]*)$", re.IGNORECASE)
_ANGLE_RE = re.compile(
    rf"^({_NUMBER})?\s*\*?\s*(pi|π)?\s*(?:/\s*({_NUMBER}))?$",
    re.IGNORECASE,
)
_DEGREES_RE = re.compile(rf"^({_NUMBER})\s*(?:deg|degrees|°)$")


def _validate_human_frequency(v: str | float) -> float:
    """Parse a frequency into rad/us.

    Numbers are taken as rad/us already.  Strings carry a unit; cyclic
    units (Hz through THz) are multiplied by 2pi, and a leading ``2pi x``
    only restates that convention.
    """
    if isinstance(v, int | float):
        return float(v)
    match = _FREQUENCY_RE.match(v.strip())
    if not match:
        raise ValueError(f"Could not convert '{v}' to a frequency")
    value, unit = match.groups()
    if not unit:
        return float(value)
    try:
        return float(value) * _FREQUENCY_UNITS[unit.lower()]
    except KeyError:
        raise ValueError(f"Unknown frequency unit in '{v}'") from None


def _validate_human_time(v: str | float) -> float:
    """Parse a duration into microseconds."""
    if isinstance(v, int | float):
        return float(v)
    match = _TIME_RE.match(v.strip())
    if not match:
        raise ValueError(f"Could not convert '{v}' to a duration")
    value, unit = match.groups()
    if not unit:
        return float(value)
    try:
        return float(value) * _TIME_UNITS[unit.lower()]
    except KeyError:
        raise ValueError(f"Unknown time unit in '{v}'") from None


def _validate_human_angle(v: str | float) -> float:
    """Parse an angle in radians: ``1.2``, ``pi/2``, ``3pi/4``, ``90 deg``."""
    if isinstance(v, int | float):
        return float(v)
    text = v.strip()
    if match := _DEGREES_RE.match(text):
        return math.radians(float(match.group(1)))
    match = _ANGLE_RE.match(text)
    if not text or not match or not any(match.groups()):
        raise ValueError(f"Could not convert '{v}' to an angle")
    factor, pi, divisor = match.groups()
    value = float(factor) if factor else 1.0
    if pi:
        value *= math.pi
    if divisor:
        value /= float(divisor)
    return value


HumanFrequency: TypeAlias = Annotated[
    float, BeforeValidator(_validate_human_frequency)
]
"""Angular frequency in rad/us; accepts strings such as ``'2pi x 50 MHz'``,
``'4 kHz'`` or ``'314.2 rad/us'``.
"""

HumanTime: TypeAlias = Annotated[float, BeforeValidator(_validate_human_time)]
"""Duration in microseconds; accepts strings such as ``'500 ns'``."""

HumanAngle: TypeAlias = Annotated[
    float, BeforeValidator(_validate_human_angle)
]
"""Angle in radians; accepts ``'pi/2'``, ``'3pi/4'`` or ``'90 deg'``."""


class HolonomySection(CamelCaseModel):
    """Which gate, and the control loop that makes it."""

    kind: Annotated[GateKind, Field(title="Gate family")]

    phi_c: Annotated[
        HumanAngle, Field(title="Azimuth reached by the loop", gt=0)
    ]

    durations: Annotated[
        list[HumanTime] | None,
        Field(title="Duration of each loop leg in microseconds"),
    ] = None

    total_time: Annotated[
        HumanTime | list[HumanTime] | None,
        Field(
            title="Total loop time in microseconds",
            description=(
                "Shared equally between the legs.  A list scans each"
                " value in turn."
            ),
        ),
    ] = None

    ramp: Annotated[Ramp, Field(title="Shape of each leg")] = Ramp.COSINE

    close_loop: Annotated[
        bool,
        Field(
            title="Append the phi return leg to the bit-phase loop",
        ),
    ] = True

    compare_closure: Annotated[
        bool,
        Field(
            title="Run bit-phase loops with and without the return leg",
        ),
    ] = False

    cp_pair: Annotated[
        tuple[int, int],
        Field(title="Logical qubits (m, n) acted on by the cp gate"),
    ] = (1, 2)

    logical_qubits: Annotated[
        int, Field(title="Logical qubits in the cp register", ge=2)
    ] = 2

    @model_validator(mode="after")
    def _check_timing(self) -> Self:
        if (self.durations is None) == (self.total_time is None):
            raise ValueError("Give exactly one of durations and total_time")
        if self.phi_c >= TWO_PI:
            raise ValueError("phi_c must be below 2pi")
        times = self.durations or self.total_times
        if any(t <= 0 for t in times):
            raise ValueError("Durations must be positive")
        return self

    @property
    def total_times(self) -> list[float]:
        if self.total_time is None:
            return []
        if isinstance(self.total_time, list):
            return list(self.total_time)
        return [self.total_time]

    def encoding(self) -> DfsEncoding:
        if self.kind != GateKind.CP or (
            self.cp_pair == (1, 2) and self.logical_qubits == 2
        ):
            return default_encoding(self.kind)
        m, n = self.cp_pair
        return cp_encoding_for(m, n, self.logical_qubits)

    def schedules(
        self, lambda_prime: float
    ) -> list[tuple[bool, PulseSchedule]]:
        """Return ``(closed, schedule)`` for every loop to run."""
        closures = [self.close_loop]
        if self.kind == GateKind.BITPHASE and self.compare_closure:
            closures = [True, False]
        out = []
        for closed in closures:
            if self.durations is not None:
                duration_sets = [
                    self.durations if closed else self.durations[:3]
                ]
            else:
                duration_sets = [
                    split_total_time(self.kind, t, closed=closed)
                    for t in self.total_times
                ]
            out.extend(
                (
                    closed,
                    make_schedule(
                        self.kind,
                        self.phi_c,
                        durations,
                        self.ramp,
                        lambda_prime=lambda_prime,
                        closed=closed,
                    ),
                )
                for durations in duration_sets
            )
        return out


class NvSection(CamelCaseModel):
    """NV and cavity parameters the Raman coupling is derived from."""

    gamma0: Annotated[
        HumanFrequency,
        Field(title="Spontaneous emission rate of the optical level", gt=0),
    ]

    field_ratio: Annotated[
        float,
        Field(title="Cavity field at the centre over its maximum", ge=0, le=1),
    ]

    nu: Annotated[
        HumanFrequency, Field(title="Optical transition frequency", gt=0)
    ]

    v_m: Annotated[
        float, Field(title="Mode volume in cubic micrometres", gt=0)
    ]

    omega_l: Annotated[
        HumanFrequency, Field(title="Rabi frequency of the lasers", gt=0)
    ]

    delta: Annotated[
        HumanFrequency,
        Field(title="Detuning of the lasers from the optical level", gt=0),
    ]

    omega_c: Annotated[HumanFrequency, Field(title="Cavity frequency", gt=0)]

    omega_10: Annotated[
        HumanFrequency, Field(title="Ground-state splitting", gt=0)
    ]

    def params(self) -> NvParams:
        return NvParams(
            gamma0=self.gamma0,
            field_ratio=self.field_ratio,
            nu=self.nu / TWO_PI,
            v_m=self.v_m,
            omega_l=self.omega_l,
            delta=self.delta,
            omega_c=self.omega_c,
            omega_10=self.omega_10,
        )

    def raman_g(self, two_photon_detuning: float) -> float:
        """Raman coupling of a centre at ``two_photon_detuning``."""
        return raman_coupling_g(
            coupling_strength_G(self.params()),
            self.omega_l,
            self.delta,
            two_photon_detuning,
        )


class NvPlatformSection(CamelCaseModel):
    """Cavity coupling and laser detunings."""

    g: Annotated[
        HumanFrequency | None,
        Field(
            title="Raman coupling to the cavity",
            description=(
                "Derived from nv at the first detuning when unset, or"
                " 2pi x 50 MHz otherwise."
            ),
            gt=0,
        ),
    ] = None

    nv: Annotated[
        NvSection | None,
        Field(title="NV and cavity parameters that set g"),
    ] = None

    lambda_prime: Annotated[
        HumanFrequency | None,
        Field(
            title="Effective Rabi frequency",
            description="Computed from the first two detunings if unset.",
        ),
    ] = None

    detunings: Annotated[
        list[HumanFrequency],
        Field(title="Two-photon detunings of the driven centres, in order"),
    ] = []

    fock_cutoff: Annotated[
        int, Field(title="Highest cavity photon number kept", ge=1)
    ] = DEFAULT_FOCK_CUTOFF

    include_stark: Annotated[
        bool, Field(title="Keep the cavity Stark shifts")
    ] = False

    cavity_purcell: Annotated[
        bool,
        Field(title="Add cavity-induced decay on the effective layer"),
    ] = True

    dispersive_guard: Annotated[
        bool,
        Field(title="Require every detuning to be at least 10 g"),
    ] = True

    @model_validator(mode="after")
    def _check_rabi(self) -> Self:
        if self.lambda_prime is None and len(self.detunings) < 2:
            raise ValueError(
                "Set lambda_prime or give at least two detunings"
            )
        if any(d == 0 for d in self.detunings):
            raise ValueError("Detunings must be nonzero")
        if self.dispersive_guard:
            g = self.resolved_g()
            for j, delta in enumerate(self.detunings, start=1):
                if abs(delta) < DISPERSIVE_RATIO * g:
                    raise DispersiveGuardError(
                        f"Detuning {j} is {abs(delta):.4g} rad/us, below"
                        f" {DISPERSIVE_RATIO:g} g = {DISPERSIVE_RATIO * g:.4g}"
                        " rad/us; set dispersive_guard to false to run"
                        " outside the dispersive regime",
                        guard="dispersive_guard",
                    )
        return self

    def resolved_g(self) -> float:
        if self.g is not None:
            return self.g
        if self.nv is not None and self.detunings:
            return self.nv.raman_g(self.detunings[0])
        return DEFAULT_RAMAN_COUPLING

    def resolved_lambda_prime(self) -> float:
        if self.lambda_prime is not None:
            return self.lambda_prime
        return effective_rabi(
            self.resolved_g(), self.detunings[0], self.detunings[1]
        )

    def platform(self) -> PlatformSettings:
        return PlatformSettings(
            g=self.resolved_g(),
            detunings=tuple(self.detunings),
            fock_cutoff=self.fock_cutoff,
            include_stark=self.include_stark,
            cavity_purcell=self.cavity_purcell,
            dispersive_guard=self.dispersive_guard,
        )


class DynamicsSection(CamelCaseModel):
    """Simulation layer, decay rates and integrator settings."""

    layer: Annotated[Layer, Field(title="Simulation layer")] = (
        Layer.DFS_ABSTRACT
    )

    kappa: Annotated[
        HumanFrequency, Field(title="Cavity decay rate", ge=0)
    ] = 0.0

    gamma: Annotated[
        HumanFrequency, Field(title="Collective relaxation rate", ge=0)
    ] = 0.0

    gamma_phi: Annotated[
        HumanFrequency, Field(title="Collective dephasing rate", ge=0)
    ] = 0.0

    tol: Annotated[
        float, Field(title="Integrator relative tolerance", gt=0, lt=1)
    ] = DEFAULT_TOL

    samples: Annotated[
        int, Field(title="Samples along the trajectory", ge=2)
    ] = DEFAULT_SAMPLES

    cd_method: Annotated[
        CdMethod, Field(title="Counterdiabatic construction")
    ] = CdMethod.CLOSED_FORM

    initial_state: Annotated[
        str | list[float],
        Field(
            title="Logical input state",
            description=(
                "'plus' (equal superposition), 'bell' ((|00>+|11>)/sqrt 2),"
                " a computational label such as '1L' or '01L', or a list of"
                " real amplitudes."
            ),
        ),
    ] = "plus"

    def rates(self) -> DecayRates:
        return DecayRates(
            kappa=self.kappa, gamma=self.gamma, gamma_phi=self.gamma_phi
        )

    def initial_amplitudes(self, enc: DfsEncoding) -> np.ndarray:
        dim = enc.logical_dim
        state = self.initial_state
        if isinstance(state, list):
            amps = np.array(state, dtype=complex)
            if amps.size != dim:
                raise ValueError(f"initial_state needs {dim} amplitudes")
        elif state == "plus":
            amps = np.ones(dim, dtype=complex)
        elif state == "bell":
            if dim != 4:
                raise ValueError("'bell' needs a two-qubit logical space")
            amps = np.array([1, 0, 0, 1], dtype=complex)
        elif state in enc.computational_labels:
            amps = np.zeros(dim, dtype=complex)
            amps[enc.computational_labels.index(state)] = 1.0
        else:
            raise ValueError(f"Unknown initial_state '{state}'")
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("initial_state must not be the zero vector")
        return amps / norm

    @property
    def initial_label(self) -> str:
        if isinstance(self.initial_state, list):
            return "custom"
        return self.initial_state


class SweepSection(CamelCaseModel):
    """Parameter sweep carried in the scenario file."""

    axis: Annotated[str, Field(title="Numeric scenario field to vary")]

    values: Annotated[
        list[float | str], Field(title="Values of the axis", min_length=1)
    ]


class Scenario(CamelCaseModel):
    """A gate simulation, or a sweep of them."""

    name: Annotated[str, Field(title="Scenario name", min_length=1)]

    seed: Annotated[int, Field(title="Seed for randomized checks")] = 0

    target_fidelity: Annotated[
        float | None,
        Field(title="Fidelity the runs are compared with", ge=0, le=1),
    ] = None

    band: Annotated[
        float, Field(title="Half-width of the target band", ge=0)
    ] = 0.005

    holonomy: Annotated[HolonomySection, Field(title="Gate and loop")]

    nvplatform: Annotated[
        NvPlatformSection, Field(title="Physical parameters")
    ] = NvPlatformSection(lambda_prime=1.0)

    dynamics: Annotated[
        DynamicsSection, Field(title="Simulation settings")
    ] = DynamicsSection()

    sweep: Annotated[
        SweepSection | None, Field(title="Optional parameter sweep")
    ] = None

    @model_validator(mode="after")
    def _check_initial_state(self) -> Self:
        self.dynamics.initial_amplitudes(self.holonomy.encoding())
        return self

    @model_validator(mode="after")
    def _check_layer(self) -> Self:
        kind = self.holonomy.kind
        enc = self.holonomy.encoding()
        layer = self.dynamics.layer
        if layer == Layer.FULL_CAVITY:
            driven = program_qubits(kind, enc)
            if len(self.nvplatform.detunings) < len(driven):
                raise ValueError(
                    f"The full_cavity layer needs {len(driven)} detunings,"
                    " one per driven centre"
                )
        if kind == GateKind.CP and layer != Layer.DFS_ABSTRACT:
            amplitudes = self.dynamics.initial_amplitudes(enc)
            if abs(amplitudes[enc.computational_labels.index("10L")]):
                raise ValueError(
                    "cp on the physical layers takes inputs without 10L"
                )
        return self

    def with_value(self, axis: str, value: float | str) -> Scenario:
        """Return a copy with the sweep ``axis`` set to ``value``.

        Raises
        ------
        UnknownAxisError
            ``axis`` does not name a sweepable field.
        pydantic.ValidationError
            The modified scenario does not validate.
        """
        return Scenario.model_validate(self.raw_with_value(axis, value))

    def raw_with_value(self, axis: str, value: float | str) -> dict[str, Any]:
        """Unvalidated form of `with_value`."""
        section, name = resolve_axis(axis)
        data = self.model_dump(mode="json", by_alias=False)
        data[section][name] = value
        if name == "total_time":
            data["holonomy"]["durations"] = None
        data["sweep"] = None
        return data

    def axis_value(self, axis: str) -> float | bool | None:
        section, name = resolve_axis(axis)
        value: float | bool | None = getattr(getattr(self, section), name)
        return value


SWEEP_AXES = {
    "phi_c": "holonomy",
    "total_time": "holonomy",
    "g": "nvplatform",
    "lambda_prime": "nvplatform",
    "fock_cutoff": "nvplatform",
    "include_stark": "nvplatform",
    "kappa": "dynamics",
    "gamma": "dynamics",
    "gamma_phi": "dynamics",
    "tol": "dynamics",
}
"""Numeric fields a sweep may vary, and their section."""


def resolve_axis(axis: str) -> tuple[str, str]:
    """Map ``phi_c`` or ``holonomy.phi_c`` to (section, field)."""
    section, _, name = axis.rpartition(".")
    if name not in SWEEP_AXES or (section and section != SWEEP_AXES[name]):
        known = ", ".join(sorted(SWEEP_AXES))
        raise UnknownAxisError(
            f"Cannot sweep '{axis}'; choose one of {known}"
        )
    return SWEEP_AXES[name], name


def _snake(name: str | int) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", str(name)).lower()


def scenario_error(exc: PydanticValidationError) -> ScenarioError:
    """Convert a pydantic failure into a `ScenarioError` naming the field."""
    first = exc.errors()[0]
    field = ".".join(_snake(part) for part in first["loc"]) or "scenario"
    return ScenarioError(
        f"Invalid scenario field '{field}': {first['msg']}", field=field
    )


def load_scenario(data: object) -> Scenario:
    """Validate parsed YAML as a `Scenario`."""
    if not isinstance(data, dict):
        raise ScenarioError("Scenario file must hold a mapping")
    try:
        return Scenario.model_validate(data)
    except PydanticValidationError as exc:
        raise scenario_error(exc) from exc
