"""Generative signal model for a mobile UE observed through a reflective RIS.

The pilot observed at instant ``l`` is ``y_l = alpha * h_l(p, v) + n_l`` with
``h_l = sum_m w_lm exp(-j 2 pi/lambda f_lm(p, v))``, where ``w_l`` folds the
RIS reflection coefficients and the static BS-to-RIS steering together, and
``f_lm`` is the first-order mobility approximation of the path-length
difference (:func:`flm_approx`).
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import kernels
from .errors import DegenerateGeometry, ValidationError
from .geometry import RisArray, as_vec3, build_upa, direction

SPEED_OF_LIGHT = 299_792_458.0

#: UE direction used by every canonical scenario: [-1, 2, 1] / sqrt(6).
UE_DIRECTION = as_vec3(np.array([-1.0, 2.0, 1.0]) / math.sqrt(6.0))


class ScenarioValidityWarning(UserWarning):
    """The UE moves too far during one frame for the mobility approximation."""


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class RfConstants:
    """Radio constants, all in SI units and linear ratios.

    ``symbol_period`` defaults to ``1 / bandwidth``; pass a value to override
    it (``ts_overridden`` then reports True).
    """

    carrier_freq: float = 28e9
    bandwidth: float = 1e6
    tx_power: float = dbm_to_watt(20.0)
    noise_psd: float = dbm_to_watt(-174.0)
    noise_figure: float = db_to_linear(8.0)
    tx_gain: float = 1.0
    rx_gain: float = 1.0
    global_phase: float = 0.0
    symbol_period: Optional[float] = None

    def __post_init__(self):
        for name in ("carrier_freq", "bandwidth", "tx_power", "noise_psd", "noise_figure", "tx_gain", "rx_gain"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValidationError(f"{name} must be positive and finite, got {val}")
        if self.symbol_period is not None and not (self.symbol_period >= 0 and math.isfinite(self.symbol_period)):
            raise ValidationError(f"symbol_period must be >= 0, got {self.symbol_period}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def ts(self) -> float:
        return 1.0 / self.bandwidth if self.symbol_period is None else float(self.symbol_period)

    @property
    def ts_overridden(self) -> bool:
        return self.symbol_period is not None

    @property
    def noise_variance(self) -> float:
        """Per-pilot noise power ``N0 * W * nf`` in watts."""
        return self.noise_psd * self.bandwidth * self.noise_figure


@dataclass(frozen=True, eq=False)
class UeState:
    position: np.ndarray
    velocity: np.ndarray
    gain: complex

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "position"))
        object.__setattr__(self, "velocity", as_vec3(self.velocity, "velocity"))
        g = complex(self.gain)
        if not (math.isfinite(g.real) and math.isfinite(g.imag)):
            raise ValidationError("gain must be finite")
        object.__setattr__(self, "gain", g)


@dataclass(frozen=True, eq=False)
class RisPhaseProfile:
    """Per-pilot RIS phases, shape ``(L, M)`` in radians."""

    phases: np.ndarray

    def __post_init__(self):
        ph = np.array(self.phases, dtype=np.float64)
        if ph.ndim != 2 or min(ph.shape) < 1:
            raise ValidationError(f"phases must be a non-empty (L, M) matrix, got {ph.shape}")
        if not np.all(np.isfinite(ph)):
            raise ValidationError("phases must be finite")
        ph.setflags(write=False)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def random(cls, num_pilots, num_elements, seed):
        """I.i.d. uniform phases on [0, 2 pi) from a dedicated seeded stream."""
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x9A5E,)))
        return cls(rng.uniform(0.0, 2.0 * math.pi, size=(num_pilots, num_elements)))

    @property
    def coefficients(self) -> np.ndarray:
        """Unit-modulus reflection coefficients ``omega_l``, shape ``(L, M)``."""
        return np.exp(1j * self.phases)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Static description of one experiment.

    Attributes:
        rf: radio constants.
        ris: surface geometry.
        bs_position: BS location (m).
        ue: true UE state, including the complex gain used to generate data.
        profile: RIS phase profile; its row count is the number of pilots L.
        rician_k: Rician factor of the RIS-UE link, or None for a pure
            specular channel.
    """

    rf: RfConstants
    ris: RisArray
    bs_position: np.ndarray
    ue: UeState
    profile: RisPhaseProfile
    rician_k: Optional[float] = None
    warn_validity: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "bs_position", as_vec3(self.bs_position, "bs_position"))
        L, M = self.profile.phases.shape
        if M != self.ris.element_count:
            raise ValidationError(f"profile has {M} columns but the RIS has {self.ris.element_count} elements")
        if L < 3:
            raise ValidationError(f"at least 3 pilots are required, got L={L}")
        if self.rician_k is not None and not (self.rician_k > 0):
            raise ValidationError(f"rician_k must be > 0, got {self.rician_k}")
        dmin = self.ris.min_distance(self.ue.position)
        if dmin == 0.0:
            raise DegenerateGeometry("UE coincides with an RIS element")
        if self.ris.min_distance(self.bs_position) == 0.0:
            raise DegenerateGeometry("BS coincides with an RIS element")
        if self.warn_validity and self.is_mobility_stressed():
            warnings.warn(
                f"||v|| L Ts = {np.linalg.norm(self.ue.velocity) * L * self.rf.ts:.3g} m is not small "
                f"compared with the UE-RIS distance {dmin:.3g} m",
                ScenarioValidityWarning,
                stacklevel=3,
            )

    @property
    def num_pilots(self) -> int:
        return self.profile.phases.shape[0]

    @property
    def wavenumber(self) -> float:
        return self.rf.wavenumber

    def is_mobility_stressed(self) -> bool:
        """True when ``||v|| L Ts >= 0.1 min_m ||p_m - p||``."""
        travel = float(np.linalg.norm(self.ue.velocity)) * self.num_pilots * self.rf.ts
        return travel >= 0.1 * self.ris.min_distance(self.ue.position)

    @cached_property
    def bs_steering(self) -> np.ndarray:
        """Static RIS response toward the BS, ``a(p_b)``."""
        return kernels.static_steering(
            self.bs_position[None, :], self.ris.elements, self.ris.reference, self.wavenumber
        )[0]

    @cached_property
    def weights(self) -> np.ndarray:
        """``w_l = omega_l * a(p_b)`` stacked as rows, shape ``(L, M)``."""
        w = self.profile.coefficients * self.bs_steering[None, :]
        w.setflags(write=False)
        return w

    @cached_property
    def fingerprint(self) -> str:
        """Digest of everything the noise-free dictionaries depend on."""
        h = hashlib.blake2b(digest_size=16)
        h.update(np.ascontiguousarray(self.weights).tobytes())
        h.update(np.ascontiguousarray(self.ris.elements).tobytes())
        h.update(self.ris.reference.tobytes())
        h.update(np.float64(self.wavenumber).tobytes())
        return h.hexdigest()

    def with_ue(self, **changes) -> "Scenario":
        """Copy with some UE fields replaced (position, velocity, gain)."""
        return replace(self, ue=replace(self.ue, **changes))


@dataclass(frozen=True, eq=False)
class Observation:
    y: np.ndarray
    noise_variance: float
    seed: Optional[int]

    def __post_init__(self):
        y = np.array(self.y, dtype=np.complex128).reshape(-1)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)


# ---------------------------------------------------------------------------
# path-length model


def _check_indices(ell, m, ris):
    if int(ell) != ell or ell < 1:
        raise ValidationError(f"pilot index must be a positive integer, got {ell}")
    if int(m) != m or not 1 <= m <= ris.element_count:
        raise ValidationError(f"element index must be in 1..{ris.element_count}, got {m}")


def flm_exact(p, v, ell, m, ris: RisArray, ts) -> float:
    """Exact ``||p_m - (p + v l Ts)|| - ||p_r - p||`` (indices are 1-based)."""
    _check_indices(ell, m, ris)
    p = as_vec3(p)
    v = as_vec3(v)
    pm = ris.elements[m - 1]
    if np.array_equal(pm, p):
        raise DegenerateGeometry("UE coincides with an RIS element")
    return float(np.linalg.norm(pm - (p + v * ell * ts)) - np.linalg.norm(ris.reference - p))


def flm_approx(p, v, ell, m, ris: RisArray, ts) -> float:
    """First-order mobility model ``d_m - d_r + u_m(p) . v l Ts``."""
    _check_indices(ell, m, ris)
    p = as_vec3(p)
    v = as_vec3(v)
    diff = p - ris.elements[m - 1]
    dm = float(np.linalg.norm(diff))
    if dm == 0.0:
        raise DegenerateGeometry("UE coincides with an RIS element")
    dr = float(np.linalg.norm(p - ris.reference))
    return dm - dr + float(diff @ v) / dm * ell * ts


def flm_table(p, v, ris: RisArray, num_pilots, ts) -> np.ndarray:
    """``flm_approx`` for every pilot and element, shape ``(L, M)``."""
    p = as_vec3(p)
    v = as_vec3(v)
    diff = p - ris.elements
    d = np.linalg.norm(diff, axis=1)
    if np.any(d == 0.0):
        raise DegenerateGeometry("UE coincides with an RIS element")
    dr = np.linalg.norm(p - ris.reference)
    ell = np.arange(1, num_pilots + 1) * ts
    return (d - dr)[None, :] + ell[:, None] * ((diff @ v) / d)[None, :]


def velocity_limit(ris: RisArray, p, num_pilots, ts) -> float:
    """Speed scale ``min_m ||p_m - p|| / (L Ts)`` that ``||v||`` must stay well below."""
    if num_pilots < 1 or not ts > 0:
        raise ValidationError("num_pilots must be >= 1 and ts > 0")
    return ris.min_distance(p) / (num_pilots * ts)


# ---------------------------------------------------------------------------
# steering vectors and responses


def steering_nf(p, v, ell, scenario: Scenario) -> np.ndarray:
    """Near-field RIS response ``a(p_l)`` at pilot ``ell`` (1-based), length M."""
    if int(ell) != ell or ell < 1:
        raise ValidationError(f"pilot index must be a positive integer, got {ell}")
    p = as_vec3(p)
    v = as_vec3(v)
    ris = scenario.ris
    diff = p - ris.elements
    d = np.linalg.norm(diff, axis=1)
    if np.any(d == 0.0):
        raise DegenerateGeometry("UE coincides with an RIS element")
    f = d - np.linalg.norm(p - ris.reference) + (diff @ v) / d * ell * scenario.rf.ts
    return np.exp(-1j * scenario.wavenumber * f)


def steering_ff(theta, phi, ris: RisArray, wavelength) -> np.ndarray:
    """Far-field (planar wavefront) response toward azimuth/elevation, length M."""
    k = 2.0 * math.pi / wavelength
    return kernels.planar_steering(direction(theta, phi)[None, :], ris.offsets, k)[0]


def channel_gain(p, scenario: Scenario) -> complex:
    """Free-space cascaded gain of the BS-RIS-UE path."""
    rf = scenario.rf
    d_ue = float(np.linalg.norm(scenario.ris.reference - as_vec3(p)))
    d_bs = float(np.linalg.norm(scenario.ris.reference - scenario.bs_position))
    if d_ue == 0.0 or d_bs == 0.0:
        raise DegenerateGeometry("UE or BS coincides with the RIS reference point")
    mag = rf.wavelength**2 * math.sqrt(rf.tx_power * rf.tx_gain * rf.rx_gain) / ((4 * math.pi) ** 2 * d_ue * d_bs)
    return mag * complex(math.cos(rf.global_phase), math.sin(rf.global_phase))


def h_vector(p, v, scenario: Scenario) -> np.ndarray:
    """Noise-free unit-gain pilot responses ``h(p, v)``, length L."""
    p = as_vec3(p)
    v = as_vec3(v)
    if scenario.ris.min_distance(p) == 0.0:
        raise DegenerateGeometry("UE coincides with an RIS element")
    return kernels.mobile_response(
        p, v, scenario.ris.elements, scenario.ris.reference, scenario.weights, scenario.wavenumber, scenario.rf.ts
    )


def response_jacobian(p, v, scenario: Scenario):
    """``h(p, v)`` and its analytic derivatives.

    Returns:
        ``(h, dh_dp, dh_dv)`` with shapes ``(L,)``, ``(L, 3)``, ``(L, 3)``.
    """
    p = as_vec3(p)
    v = as_vec3(v)
    ris = scenario.ris
    k = scenario.wavenumber
    L = scenario.num_pilots
    diff = p - ris.elements
    d = np.linalg.norm(diff, axis=1)
    if np.any(d == 0.0):
        raise DegenerateGeometry("UE coincides with an RIS element")
    dr_vec = p - ris.reference
    dr = float(np.linalg.norm(dr_vec))
    if dr == 0.0:
        raise DegenerateGeometry("UE coincides with the RIS reference point")
    u = diff / d[:, None]
    ur = dr_vec / dr
    radial = u @ v
    t = np.arange(1, L + 1) * scenario.rf.ts
    phase = -k * ((d - dr)[None, :] + t[:, None] * radial[None, :])
    g = scenario.weights * np.exp(1j * phase)
    h = g.sum(axis=1)
    # d(u_m . v)/dp = (v - u_m (u_m . v)) / d_m
    curv = (v[None, :] - u * radial[:, None]) / d[:, None]
    dh_dp = -1j * k * (g @ (u - ur) + t[:, None] * (g @ curv))
    dh_dv = -1j * k * t[:, None] * (g @ u)
    return h, dh_dp, dh_dv


def diffuse_component(scenario: Scenario, seed) -> np.ndarray:
    """The diffuse RIS-UE term ``h~ ~ CN(0, I_M)`` drawn for observation ``seed``."""
    _, mp_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(mp_ss)
    M = scenario.ris.element_count
    return (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / math.sqrt(2.0)


def mixed_steering(p, v, scenario: Scenario, diffuse) -> np.ndarray:
    """Rician mixture ``sqrt(K/(K+1)) a(p_l) + sqrt(1/(K+1)) h~`` per pilot, shape ``(L, M)``."""
    K = float(scenario.rician_k)
    a = np.exp(-1j * scenario.wavenumber * flm_table(p, v, scenario.ris, scenario.num_pilots, scenario.rf.ts))
    return math.sqrt(K / (K + 1.0)) * a + math.sqrt(1.0 / (K + 1.0)) * np.asarray(diffuse)[None, :]


def observe(scenario: Scenario, seed, noise=True) -> Observation:
    """Draw one observation ``y = alpha h + n``.

    The noise and the diffuse multipath component come from two independent
    substreams of ``seed``, so the same seed yields the same noise with or
    without multipath. Passing ``noise=False`` returns the noise-free mean.
    """
    ue = scenario.ue
    los = ue.gain * h_vector(ue.position, ue.velocity, scenario)
    if scenario.rician_k is None:
        mean = los
    else:
        # w_l . mixed_l, split so the specular part reuses the fast kernel
        K = float(scenario.rician_k)
        diffuse = scenario.weights @ diffuse_component(scenario, seed)
        mean = math.sqrt(K / (K + 1.0)) * los + ue.gain * math.sqrt(1.0 / (K + 1.0)) * diffuse
    if not noise:
        return Observation(mean, 0.0, seed)
    sigma2 = scenario.rf.noise_variance
    noise_ss, _ = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(noise_ss)
    L = scenario.num_pilots
    n = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) * math.sqrt(sigma2 / 2.0)
    return Observation(mean + n, sigma2, seed)


def snr(alpha, rf: RfConstants) -> float:
    """Per-pilot SNR ``|alpha|^2 / (N0 nf W)`` in dB."""
    return 10.0 * math.log10(abs(alpha) ** 2 / rf.noise_variance)


# ---------------------------------------------------------------------------
# canonical scenario


def default_scenario(
    rho=2.0,
    speed=1.0,
    *,
    num_pilots=40,
    profile_seed=0,
    rf: Optional[RfConstants] = None,
    ris: Optional[RisArray] = None,
    rows=32,
    cols=32,
    bs_position=(3.0, 3.0, 1.0),
    ue_direction=UE_DIRECTION,
    velocity_direction=None,
    gain_offset_db=0.0,
    rician_k=None,
    profile: Optional[RisPhaseProfile] = None,
    warn_validity=True,
) -> Scenario:
    """Indoor reference scenario (28 GHz, 32x32 half-wavelength RIS, L = 40).

    The UE sits at ``rho * ue_direction`` and moves with ``speed`` along
    ``velocity_direction`` (the UE direction by default). Its gain is the
    free-space cascaded gain scaled by ``gain_offset_db``.
    """
    rf = rf or RfConstants()
    ris = ris or build_upa(rows, cols, rf.wavelength / 2.0)
    udir = np.asarray(ue_direction, dtype=np.float64)
    udir = udir / np.linalg.norm(udir)
    vdir = udir if velocity_direction is None else np.asarray(velocity_direction, dtype=np.float64)
    nv = np.linalg.norm(vdir)
    vdir = vdir / nv if nv > 0 else vdir
    if profile is None:
        profile = RisPhaseProfile.random(num_pilots, ris.element_count, profile_seed)
    position = rho * udir
    placeholder = UeState(position, speed * vdir, 1.0)
    scen = Scenario(rf, ris, bs_position, placeholder, profile, rician_k, warn_validity)
    gain = channel_gain(position, scen) * 10.0 ** (gain_offset_db / 20.0)
    return scen.with_ue(gain=gain)
