"""Fisher information and error bounds for ``[p, v, Re(alpha), Im(alpha)]``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .channel import Scenario, h_vector, response_jacobian
from .errors import Unidentifiable

PARAMETERS = ("p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "alpha_r", "alpha_i")

# Reciprocal condition limit for inverting an equilibrated FIM.
MAX_CONDITION = 1e14


@dataclass(frozen=True, eq=False)
class Fim:
    """8x8 Fisher information in :data:`PARAMETERS` order."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (8, 8):
            raise ValueError(f"FIM must be 8x8, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def scaled(self, factor) -> "Fim":
        return Fim(self.matrix * factor)


@dataclass(frozen=True)
class BoundReport:
    peb: float
    veb: float
    fim: Fim
    condition_number: float


def mu_jacobian(scenario: Scenario) -> np.ndarray:
    """Derivatives of the noise-free mean ``alpha h(p, v)`` (L x 8, complex)."""
    ue = scenario.ue
    h, dh_dp, dh_dv = response_jacobian(ue.position, ue.velocity, scenario)
    a = complex(ue.gain)
    return np.column_stack([a * dh_dp, a * dh_dv, h, 1j * h])


def mean_response(scenario: Scenario, zeta) -> np.ndarray:
    """Noise-free mean evaluated at a real parameter vector ``zeta``."""
    zeta = np.asarray(zeta, dtype=np.float64)
    return complex(zeta[6], zeta[7]) * h_vector(zeta[:3], zeta[3:6], scenario)


def true_parameters(scenario: Scenario) -> np.ndarray:
    ue = scenario.ue
    g = complex(ue.gain)
    return np.concatenate([ue.position, ue.velocity, [g.real, g.imag]])


def fd_jacobian(scenario: Scenario, steps=1e-6) -> np.ndarray:
    """Central-difference Jacobian of :func:`mean_response` at the truth.

    Gain steps are scaled by ``|alpha|`` so all columns see comparable
    relative perturbations.
    """
    zeta = true_parameters(scenario)
    st = np.full(8, float(steps))
    st[6:] *= abs(complex(scenario.ue.gain))
    cols = []
    for i in range(8):
        e = np.zeros(8)
        e[i] = st[i]
        cols.append((mean_response(scenario, zeta + e) - mean_response(scenario, zeta - e)) / (2 * st[i]))
    return np.column_stack(cols)


def fim_from_jacobian(jac, noise_variance) -> Fim:
    jac = np.asarray(jac)
    m = (2.0 / noise_variance) * np.real(np.conj(jac).T @ jac)
    return Fim(0.5 * (m + m.T))


def fim(scenario: Scenario) -> Fim:
    """``(2 / sigma^2) Re(J^H J)`` with ``J`` from :func:`mu_jacobian`."""
    sigma2 = scenario.rf.noise_variance
    if not sigma2 > 0:
        raise ValueError("noise variance must be positive")
    return fim_from_jacobian(mu_jacobian(scenario), sigma2)


def peb_veb(f: Fim) -> BoundReport:
    """Position and velocity error bounds from an FIM.

    The matrix is diagonally equilibrated before a Cholesky solve; the
    reported condition number is that of the equilibrated matrix.

    Raises:
        Unidentifiable: if the FIM is not positive definite or its
            equilibrated condition number reaches ``MAX_CONDITION``.
    """
    m = f.matrix
    d = np.sqrt(np.diag(m))
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise Unidentifiable("FIM has a zero or non-finite diagonal entry")
    scaled = m / np.outer(d, d)
    eig = np.linalg.eigvalsh(scaled)
    cond = float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")
    if not cond < MAX_CONDITION:
        raise Unidentifiable(f"FIM is singular or ill-conditioned (condition {cond:.3g})")
    try:
        factor = cho_factor(scaled)
    except LinAlgError as exc:
        raise Unidentifiable("FIM is not positive definite") from exc
    inv = cho_solve(factor, np.eye(8)) / np.outer(d, d)
    peb = float(np.sqrt(np.trace(inv[:3, :3])))
    veb = float(np.sqrt(np.trace(inv[3:6, 3:6])))
    return BoundReport(peb, veb, f, cond)


def bounds(scenario: Scenario) -> BoundReport:
    return peb_veb(fim(scenario))
