"""Shared physical constants, emission-line table, detector response and geometry.

Everything here is immutable after construction and safe to share across
workers.  Energies are in eV, lengths in cm, times in seconds, currents in
amperes unless a field name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

# Gaussian FWHM = 2 sqrt(2 ln 2) sigma
FWHM_OVER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Search window for the anomalous line, one detector FWHM wide.  The line
# itself sits at the window midpoint by construction; limits code and the
# event generator must both use these constants.
ROI_LOW_EV = 7629.0
ROI_HIGH_EV = 7829.0
PEP_LINE_ENERGY_EV = 0.5 * (ROI_LOW_EV + ROI_HIGH_EV)

SDD_COUNT = 6


def fwhm_to_sigma(fwhm: float) -> float:
    """Convert a Gaussian full width at half maximum to its sigma."""
    if fwhm <= 0:
        raise DomainError(f"fwhm must be positive, got {fwhm}")
    return fwhm / FWHM_OVER_SIGMA


def sigma_to_fwhm(sigma: float) -> float:
    """Inverse of :func:`fwhm_to_sigma`."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    return sigma * FWHM_OVER_SIGMA


@dataclass(frozen=True)
class EmissionLine:
    """A fluorescence line: label, energy in eV, intensity relative to the
    strongest line of the same series (K-alpha = 1)."""

    label: str
    energy_ev: float
    relative_intensity: float = 1.0

    def __post_init__(self):
        if self.energy_ev <= 0:
            raise DomainError(f"line {self.label!r}: energy must be positive")
        if not 0.0 < self.relative_intensity <= 1.0:
            raise DomainError(
                f"line {self.label!r}: relative intensity must be in (0, 1]")


def default_line_table() -> list[EmissionLine]:
    """Emission lines used by the generator and the calibration.

    K-alpha1/K-alpha2 fine structure is merged into a single line at the
    K-alpha1 energy.  Energies and K-beta/K-alpha ratios for Ti, Mn and Cu
    are taken from standard x-ray reference tables; the copper K-alpha is
    anchored at the 8.04 keV value used throughout the analysis, and the
    anomalous line sits at the search-window midpoint.  Sorted by energy.
    """
    lines = [
        EmissionLine("ti_ka", 4510.84, 1.0),
        EmissionLine("ti_kb", 4931.81, 0.134),
        EmissionLine("mn_ka", 5898.75, 1.0),
        EmissionLine("mn_kb", 6490.45, 0.135),
        EmissionLine("pep_forbidden", PEP_LINE_ENERGY_EV, 1.0),
        EmissionLine("cu_ka", 8040.0, 1.0),
        EmissionLine("cu_kb", 8905.3, 0.137),
    ]
    return sorted(lines, key=lambda ln: ln.energy_ev)


def line_lookup(lines: list[EmissionLine] | None = None) -> dict[str, EmissionLine]:
    """Label -> line mapping over ``lines`` (default table when omitted)."""
    return {ln.label: ln for ln in (lines if lines is not None else default_line_table())}


# Labels of the lines produced by the in-situ calibration source (a weak
# Fe-55 emitter behind a titanium foil).
CALIBRATION_LINE_LABELS = ("ti_ka", "ti_kb", "mn_ka", "mn_kb")


@dataclass(frozen=True)
class PhysicsConstants:
    """Constants of the conduction-current forward model.

    ``capture_fraction`` is the assumed lower bound on the probability that
    a scattered current electron is captured by a lattice atom; using the
    bound as an equality gives the weakest (conservative) expected signal.
    """

    electron_charge_c: float = 1.602e-19
    electron_mean_free_path_cm: float = 3.9e-6   # in copper
    strip_length_cm: float = 10.0
    cu_attenuation_length_cm: float = 2.1e-3     # ~8 keV photons in copper
    si_attenuation_length_cm: float = 7.0e-3     # ~8 keV photons in silicon
    sdd_thickness_cm: float = 0.045
    capture_fraction: float = 0.1

    def __post_init__(self):
        for name in ("electron_charge_c", "electron_mean_free_path_cm",
                     "strip_length_cm", "cu_attenuation_length_cm",
                     "si_attenuation_length_cm", "sdd_thickness_cm"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be strictly positive")
        if not 0.0 < self.capture_fraction <= 1.0:
            raise DomainError("capture_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ResponseModel:
    """Gaussian detector response with an affine channel-to-energy map.

    The resolution model is a single energy-independent FWHM; the quoted
    figure applies at ``reference_energy_ev``.
    """

    fwhm_at_reference_ev: float = 200.0
    reference_energy_ev: float = 8040.0
    gain_ev_per_channel: float = 1.0
    offset_ev: float = 0.0
    channel_count: int = 16384

    def __post_init__(self):
        if self.fwhm_at_reference_ev <= 0:
            raise DomainError("fwhm_at_reference_ev must be positive")
        if self.gain_ev_per_channel <= 0:
            raise DomainError("gain_ev_per_channel must be positive")
        if not 2 <= self.channel_count <= 65536:
            raise DomainError("channel_count must be in [2, 65536] to fit "
                              "the 16-bit ADC field")

    @property
    def sigma_ev(self) -> float:
        return fwhm_to_sigma(self.fwhm_at_reference_ev)

    def energy_of(self, channel):
        """Energy at channel (scalar or array); affine, strictly increasing."""
        return self.offset_ev + self.gain_ev_per_channel * channel

    def channel_of(self, energy_ev):
        """Nearest integer channel for an energy (scalar or array), unclamped."""
        ch = np.rint((np.asarray(energy_ev) - self.offset_ev)
                     / self.gain_ev_per_channel).astype(np.int64)
        return ch if ch.ndim else int(ch)


@dataclass(frozen=True)
class DetectorPlate:
    """One rectangular SDD sensitive area, parallel to the strip's flat faces.

    The plate lies in the plane z = ``center_z_cm``; ``normal_z`` is the
    direction its sensitive face points (-1 looks down toward the strip).
    """

    det_id: int
    center_x_cm: float
    center_y_cm: float
    center_z_cm: float
    width_x_cm: float
    width_y_cm: float
    normal_z: int = -1

    def __post_init__(self):
        if self.width_x_cm < 0 or self.width_y_cm < 0:
            raise ConfigError("detector widths must be non-negative")
        if self.normal_z not in (-1, 1):
            raise ConfigError("normal_z must be +1 or -1")

    @property
    def area_cm2(self) -> float:
        return self.width_x_cm * self.width_y_cm


def _plates_overlap(a: DetectorPlate, b: DetectorPlate) -> bool:
    if a.center_z_cm != b.center_z_cm:
        return False
    return (abs(a.center_x_cm - b.center_x_cm) < (a.width_x_cm + b.width_x_cm) / 2
            and abs(a.center_y_cm - b.center_y_cm) < (a.width_y_cm + b.width_y_cm) / 2)


@dataclass(frozen=True)
class GeometryConfig:
    """Copper-strip and detector geometry for the acceptance Monte Carlo.

    The strip is an axis-aligned box centred on the origin: length along x,
    width along y, thickness along z.  Zero extents and an empty detector
    list are permitted for degenerate Monte Carlo studies; the config
    loader enforces the stricter analysis-grade invariants.
    """

    strip_length_cm: float = 10.0
    strip_width_cm: float = 2.0
    strip_thickness_cm: float = 0.005
    detectors: tuple[DetectorPlate, ...] = ()

    def __post_init__(self):
        if min(self.strip_length_cm, self.strip_width_cm,
               self.strip_thickness_cm) < 0:
            raise ConfigError("strip dimensions must be non-negative")
        plates = list(self.detectors)
        for i, a in enumerate(plates):
            for b in plates[i + 1:]:
                if _plates_overlap(a, b):
                    raise ConfigError(
                        f"detectors {a.det_id} and {b.det_id} overlap")

    @property
    def detector_count(self) -> int:
        return len(self.detectors)


def default_geometry() -> GeometryConfig:
    """Six 0.7 x 0.7 cm2 plates, three over and three under the strip.

    Positions and areas are a plausible stand-in tuned so the default
    detection efficiency comes out near 1%; they are not a measured layout.
    """
    plates = []
    for i, x in enumerate((-3.0, 0.0, 3.0)):
        plates.append(DetectorPlate(i, x, 0.0, 1.0, 0.7, 0.7, -1))
    for i, x in enumerate((-3.0, 0.0, 3.0)):
        plates.append(DetectorPlate(i + 3, x, 0.0, -1.0, 0.7, 0.7, 1))
    return GeometryConfig(detectors=tuple(plates))


@dataclass(frozen=True)
class RunMeta:
    """Identity and exposure of one data-taking run."""

    run_id: str
    current_a: float
    live_time_s: float
    current_on: bool

    def __post_init__(self):
        if self.live_time_s < 0:
            raise DomainError("live_time_s must be non-negative")
        if self.current_a < 0:
            raise DomainError("current_a must be non-negative")
        if not self.current_on and self.current_a != 0:
            raise DomainError("current_on is false but current_a is nonzero")
