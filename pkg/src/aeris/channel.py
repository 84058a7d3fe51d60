"""Link-level channel math: LoS probability, direct and RIS-cascaded gains, SNR, coverage, rate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .scenario import SPEED_OF_LIGHT, RisDescriptor


class ChannelDomainError(ValueError):
    """Geometry or argument outside the domain of a channel formula."""


@dataclass(frozen=True)
class ChannelParams:
    omega1: float = 11.95
    omega2: float = 0.14
    alpha1: float = 2.2
    alpha2: float = 0.2
    mu: float = 1e-3
    rician_k: float = 10.0
    carrier_hz: float = 1e9
    element_spacing_m: float | None = None  # defaults to half a wavelength
    noise_power_w: float = 1e-20  # -170 dBm
    tx_power_w: float = 0.1
    bandwidth_hz: float = 1e6
    thresholds_db: tuple[float, float, float] = (30.0, 25.0, 20.0)
    alpha_ris: float | None = None  # path-loss exponent of the RIS hops; alpha1 when unset

    def __post_init__(self):
        if not (self.omega1 > 0 and self.omega2 > 0):
            raise ValueError("omega1 and omega2 must be positive")
        if not self.alpha1 > 0:
            raise ValueError("alpha1 must be positive")
        if not 0 < self.alpha2 <= 1:
            raise ValueError("alpha2 must lie in (0, 1]")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.rician_k < 0:
            raise ValueError("Rician factor must be non-negative")
        for name in ("carrier_hz", "noise_power_w", "tx_power_w", "bandwidth_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        th = tuple(float(t) for t in self.thresholds_db)
        if len(th) != 3 or not th[0] >= th[1] >= th[2]:
            raise ValueError("thresholds must be ordered video >= data >= audio")
        object.__setattr__(self, "thresholds_db", th)
        if self.alpha_ris is not None and not self.alpha_ris > 0:
            raise ValueError("alpha_ris must be positive")

    @property
    def carrier_wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def spacing_m(self) -> float:
        if self.element_spacing_m is None:
            return self.carrier_wavelength_m / 2.0
        return self.element_spacing_m

    @property
    def ris_exponent(self) -> float:
        return self.alpha1 if self.alpha_ris is None else self.alpha_ris

    @property
    def snr_scale(self) -> float:
        return self.tx_power_w / self.noise_power_w

    @property
    def thresholds_linear(self) -> np.ndarray:
        return to_linear(np.asarray(self.thresholds_db))


def to_db(x):
    return 10.0 * np.log10(x)


def to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return float(10.0 ** ((dbm - 30.0) / 10.0))


def _distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def elevation_angle(uav_pos, ue_pos) -> float:
    """Elevation angle in degrees seen from the UE, using the UAV altitude above ground."""
    d = _distance(uav_pos, ue_pos)
    if d == 0:
        raise ChannelDomainError("UAV and UE positions coincide")
    return math.degrees(math.asin(min(1.0, float(uav_pos[2]) / d)))


def los_probability(theta_deg, params: ChannelParams):
    theta = np.asarray(theta_deg, dtype=np.float64)
    p = 1.0 / (1.0 + params.omega1 * np.exp(-params.omega2 * (theta - params.omega1)))
    return float(p) if p.ndim == 0 else p


def direct_gain(uav_pos, ue_pos, params: ChannelParams) -> float:
    d = _distance(uav_pos, ue_pos)
    if d == 0:
        raise ChannelDomainError("UAV and UE positions coincide")
    p_los = los_probability(elevation_angle(uav_pos, ue_pos), params)
    loss = d ** -params.alpha1
    return p_los * loss + (1.0 - p_los) * params.alpha2 * loss


def array_response(cos_angle: float, element_count: int, params: ChannelParams,
                   spacing_m: float | None = None) -> np.ndarray:
    if abs(cos_angle) > 1.0:
        raise ChannelDomainError(f"direction cosine {cos_angle} outside [-1, 1]")
    if element_count < 1:
        raise ChannelDomainError("element count must be >= 1")
    tau = params.spacing_m if spacing_m is None else spacing_m
    m = np.arange(element_count)
    return np.exp(-1j * (2.0 * np.pi / params.carrier_wavelength_m) * m * tau * cos_angle)


def cascade_channel(a, b, params: ChannelParams, element_count: int,
                    spacing_m: float | None = None) -> np.ndarray:
    """LoS Rician hop between two endpoints; the array sits at whichever end is the RIS.

    The direction cosine is ``(x_a - x_b) / d``.
    """
    d = _distance(a, b)
    if d == 0:
        raise ChannelDomainError("cascade endpoints coincide")
    k = params.rician_k
    amp = math.sqrt(params.mu * d ** -params.ris_exponent) * math.sqrt(k / (k + 1.0))
    phi = (float(a[0]) - float(b[0])) / d
    return amp * array_response(phi, element_count, params, spacing_m)


def snr(direct_amplitude: float, uav_ris, ris_ue, phases, params: ChannelParams) -> float:
    uav_ris = np.asarray(uav_ris)
    ris_ue = np.asarray(ris_ue)
    phases = np.asarray(phases, dtype=np.float64)
    if not (uav_ris.shape == ris_ue.shape == phases.shape) or uav_ris.ndim != 1:
        raise ValueError(f"channel/phase length mismatch: {uav_ris.shape}, {ris_ue.shape}, {phases.shape}")
    field = direct_amplitude + np.sum(np.conj(uav_ris) * np.exp(1j * phases) * ris_ue)
    return params.snr_scale * float(abs(field) ** 2)


def is_covered(snr_linear, service_class: int, params: ChannelParams) -> bool:
    """SNR meets the class threshold (inclusive); compared in the linear domain."""
    if snr_linear <= 0:
        return False
    return bool(snr_linear >= params.thresholds_linear[int(service_class) - 1])


def ue_thresholds(service_classes, params: ChannelParams) -> np.ndarray:
    """Linear SNR threshold of every UE."""
    return params.thresholds_linear[np.asarray(service_classes, dtype=np.int64) - 1]


def covered_mask(snr_linear: np.ndarray, service_classes: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Vectorised :func:`is_covered` over UEs (last axis)."""
    snr_linear = np.asarray(snr_linear, dtype=np.float64)
    return (snr_linear > 0) & (snr_linear >= ue_thresholds(service_classes, params))


def data_rate(snr_linear, params: ChannelParams):
    return params.bandwidth_hz * np.log2(1.0 + np.asarray(snr_linear, dtype=np.float64))


def link_tensors(uav_positions, ue_positions, ris: Sequence[RisDescriptor], params: ChannelParams):
    """Direct amplitudes ``[L, N]`` and cascade coefficients ``[L, R, N, M]``.

    ``coef[l, r, n, m] = conj(h_ur[m]) * h_ri[m]`` for the UAV at ``uav_positions[l]``.
    The direct amplitude is the square root of the direct power gain, with zero phase.
    """
    uav = np.asarray(uav_positions, dtype=np.float64).reshape(-1, 3)
    ue = np.asarray(ue_positions, dtype=np.float64).reshape(-1, 3)
    L, N = uav.shape[0], ue.shape[0]

    diff = uav[:, None, :] - ue[None, :, :]
    d = np.sqrt(np.sum(diff ** 2, axis=-1))
    if np.any(d == 0):
        raise ChannelDomainError("a UAV coincides with a UE")
    theta = np.degrees(np.arcsin(np.minimum(1.0, uav[:, 2][:, None] / d)))
    p_los = los_probability(theta, params)
    gain = (p_los + (1.0 - p_los) * params.alpha2) * d ** -params.alpha1
    direct = np.sqrt(gain)

    R = len(ris)
    M = ris[0].element_count if R else 0
    coef = np.zeros((L, R, N, M), dtype=np.complex128)
    k = params.rician_k
    rician = math.sqrt(k / (k + 1.0))
    wavenumber = 2.0 * np.pi / params.carrier_wavelength_m
    for r, desc in enumerate(ris):
        rp = np.asarray(desc.position, dtype=np.float64)
        m = np.arange(M)
        d_ur = np.sqrt(np.sum((uav - rp) ** 2, axis=-1))
        d_ri = np.sqrt(np.sum((rp - ue) ** 2, axis=-1))
        if np.any(d_ur == 0) or np.any(d_ri == 0):
            raise ChannelDomainError(f"RIS {desc.id} coincides with a UAV or UE")
        phi_ur = (uav[:, 0] - rp[0]) / d_ur
        phi_ri = (rp[0] - ue[:, 0]) / d_ri
        amp_ur = np.sqrt(params.mu * d_ur ** -params.ris_exponent) * rician
        amp_ri = np.sqrt(params.mu * d_ri ** -params.ris_exponent) * rician
        kt = wavenumber * desc.element_spacing_m
        # conj(e^{-j k m phi_ur}) * e^{-j k m phi_ri}
        phase = kt * m[None, None, :] * (phi_ur[:, None, None] - phi_ri[None, :, None])
        coef[:, r] = (amp_ur[:, None, None] * amp_ri[None, :, None]) * np.exp(1j * phase)
    return direct, coef


def best_link(ue_pos, uav_positions, ris: Sequence[RisDescriptor], phases, params: ChannelParams):
    """Best (UAV, RIS) pair for one UE: returns ``(uav_index, ris_index, snr, rate)``.

    ``phases`` is ``[R, M]``. Ties go to the lowest ``(uav, ris)`` pair.
    """
    uav_positions = np.asarray(uav_positions, dtype=np.float64).reshape(-1, 3)
    if uav_positions.shape[0] == 0:
        raise ValueError("best_link needs at least one UAV")
    direct, coef = link_tensors(uav_positions, np.asarray(ue_pos).reshape(1, 3), ris, params)
    snr_, u, r = kernels.best_snr(direct[None], coef[None], phase_matrix(phases, ris), params.snr_scale)
    s = float(snr_[0, 0])
    return int(u[0, 0]), int(r[0, 0]), s, float(data_rate(s, params))


def phase_matrix(phases, ris: Sequence[RisDescriptor]) -> np.ndarray:
    R = len(ris)
    M = ris[0].element_count if R else 0
    if phases is None:
        return np.zeros((R, M))
    phases = np.asarray(getattr(phases, "phases_rad", phases), dtype=np.float64)
    if phases.size != R * M:
        raise ValueError(f"expected {R}x{M} phases, got shape {phases.shape}")
    return phases.reshape(R, M)
