"""Four-stage maximum-likelihood estimation of UE position and velocity.

Pipeline (:func:`find_pos_vel`):

1. :func:`init_pos_gain` -- static-UE grid search: far-field angles, then
   alternating near-field range / angle searches.
2. :func:`ref_vel` and :func:`ref_pos_gain` -- alternating closed-form
   refinements of the velocity and position residuals, each linearizing the
   channel around the current anchor.
3. :func:`gradient_descent_6d` -- quasi-Newton polish of the concentrated
   cost over (p, v), followed by a final closed-form gain.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import kernels
from .channel import Scenario, h_vector, response_jacobian
from .errors import DegenerateModel, NumericalFailure, RankDeficient, ValidationError
from .geometry import Spherical, as_vec3, direction, spherical_to_cartesian, unit_vector_jacobian, unit_vector_to

log = logging.getLogger(__name__)

_ZERO3 = np.zeros(3)


@dataclass(frozen=True)
class SearchRegion:
    """Admissible UE positions: within ``max_range`` of the RIS reference and,
    if ``front_only``, on the reflective (z >= 0) side of the surface."""

    max_range: float = 12.0
    front_only: bool = True

    def contains(self, p, reference=_ZERO3) -> bool:
        d = np.asarray(p) - reference
        if not np.all(np.isfinite(d)):
            return False
        if self.front_only and d[2] < 0:
            return False
        return float(np.linalg.norm(d)) <= self.max_range


@dataclass(frozen=True)
class GridSpec:
    """Search grids of the initialization stage.

    Azimuth uses ``n_theta`` points over [0, 2 pi). Elevation uses ``n_phi``
    points over [0, ``ff_phi_max``] for the far-field stage and over
    [0, ``nf_phi_max``] for the near-field stage (endpoints included).
    Range uses ``n_rho`` points ``rho_max * (k + 1) / n_rho``.
    """

    n_theta: int = 180
    n_phi: int = 90
    n_rho: int = 200
    rho_max: float = 12.0
    ff_phi_max: float = math.pi / 2
    nf_phi_max: float = math.pi

    def __post_init__(self):
        if min(self.n_theta, self.n_phi, self.n_rho) < 2:
            raise ValidationError("grid counts must all be >= 2")
        if not self.rho_max > 0:
            raise ValidationError("rho_max must be > 0")

    def thetas(self):
        return 2.0 * math.pi * np.arange(self.n_theta) / self.n_theta

    def ff_phis(self):
        return np.linspace(0.0, self.ff_phi_max, self.n_phi)

    def nf_phis(self):
        return np.linspace(0.0, self.nf_phi_max, self.n_phi)

    def rhos(self):
        return self.rho_max * np.arange(1, self.n_rho + 1) / self.n_rho

    def region(self) -> SearchRegion:
        """The part of space this grid covers, used to bound later stages."""
        return SearchRegion(self.rho_max, True)


@dataclass(frozen=True)
class ConvergenceConfig:
    """Stopping rules.

    The grid, refinement and outer loops stop when their objective (in the
    units of ``|y|^2``) changes by at most ``objective_tolerance`` between
    iterations, or at their iteration cap. The 6D descent works on the cost
    divided by ``||y||^2`` and applies the same tolerance to that
    scale-free value. ``relinearize`` rebuilds the linear models on every
    refinement iteration instead of once per call.
    """

    objective_tolerance: float = 1e-15
    max_grid_iterations: int = 20
    max_refine_iterations: int = 100
    max_outer_iterations: int = 50
    max_descent_iterations: int = 500
    gradient_tolerance: float = 1e-10
    fd_step_position: float = 1e-6
    fd_step_velocity: float = 1e-6
    relinearize: bool = False

    def __post_init__(self):
        if not self.objective_tolerance > 0:
            raise ValidationError("objective_tolerance must be > 0")
        for name in ("max_grid_iterations", "max_refine_iterations", "max_outer_iterations", "max_descent_iterations"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass
class LoopTrace:
    """Objective history of one iterative stage."""

    objectives: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    failure: Optional[str] = None
    hit_boundary: bool = False


class Refinement(NamedTuple):
    estimate: np.ndarray
    alpha: complex
    trace: LoopTrace


@dataclass(frozen=True, eq=False)
class LinearizedModel:
    """``h(p0 + d, v) ~ response + j slopes^T d`` around the anchor ``p0``.

    ``slopes`` is the complex (3, L) matrix with ``dh/dp = j slopes^T``.
    """

    response: np.ndarray
    slopes: np.ndarray
    anchor: np.ndarray
    velocity: np.ndarray

    def predict(self, delta):
        return self.response + 1j * (self.slopes.T @ delta)

    def normal_matrix(self):
        return np.real(np.conj(self.slopes) @ self.slopes.T)


@dataclass(frozen=True, eq=False)
class VelocityLinearModel:
    """``h(p, v0 + d) ~ response + j slopes^T d`` around the anchor ``v0``."""

    response: np.ndarray
    slopes: np.ndarray
    anchor: np.ndarray
    position: np.ndarray

    def predict(self, delta):
        return self.response + 1j * (self.slopes.T @ delta)

    def normal_matrix(self):
        return np.real(np.conj(self.slopes) @ self.slopes.T)


@dataclass
class StageRecord:
    name: str
    objective: float
    iterations: int
    seconds: float = 0.0


@dataclass
class EstimationResult:
    """Output of :func:`find_pos_vel`.

    ``stage_trace`` lists, in order, the grid stage, every outer iteration's
    velocity and position refinements and the descent. ``iterations`` holds
    the counters ``outer``, ``grid``, ``ref_vel``, ``ref_pos`` (summed over
    outer iterations) and ``descent``. ``failures`` lists stages that
    aborted; ``flags`` lists benign events such as a rejected outer step.
    """

    position: np.ndarray
    velocity: np.ndarray
    alpha: complex
    grid_estimate: Spherical
    grid_position: np.ndarray
    refined_position: np.ndarray
    refined_velocity: np.ndarray
    stage_trace: List[StageRecord]
    grid_trace: List[float]
    outer_trace: List[float]
    descent_trace: List[float]
    iterations: dict
    failures: List[str]
    flags: List[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failures)


# ---------------------------------------------------------------------------
# concentrated ML pieces


def _alpha_ls(h, y):
    hh = float(np.real(np.vdot(h, h)))
    if not hh > 0:
        raise DegenerateModel("zero channel vector")
    return complex(np.vdot(h, y) / hh)


def alpha_hat(p, v, y, scenario: Scenario) -> complex:
    """Least-squares gain ``h^H y / ||h||^2`` for fixed (p, v)."""
    return _alpha_ls(h_vector(p, v, scenario), np.asarray(y))


def _residual_energy(h, y):
    a = _alpha_ls(h, y)
    r = y - a * h
    return float(np.real(np.vdot(r, r)))


def concentrated_objective(p, v, y, scenario: Scenario) -> float:
    """``||y - alpha_hat h(p, v)||^2`` (the projection of y off h)."""
    return _residual_energy(h_vector(p, v, scenario), np.asarray(y))


def static_objective(theta, phi, y, scenario: Scenario, model="NF", rho=None) -> float:
    """Static (v = 0) concentrated cost under the far- or near-field model.

    ``model="FF"`` ignores ``rho``; ``model="NF"`` requires it.
    """
    y = np.asarray(y)
    if model == "FF":
        a = kernels.planar_steering(direction(theta, phi)[None, :], scenario.ris.offsets, scenario.wavenumber)[0]
        h = scenario.weights @ a
    elif model == "NF":
        if rho is None:
            raise ValidationError("near-field objective needs a range")
        h = h_vector(spherical_to_cartesian(Spherical(rho, theta, phi)), _ZERO3, scenario)
    else:
        raise ValidationError(f"model must be 'FF' or 'NF', got {model!r}")
    return _residual_energy(h, y)


# ---------------------------------------------------------------------------
# grid search


class _DictionaryCache:
    """LRU store of noise-free response dictionaries keyed by scenario digest.

    Dictionaries depend only on the RIS weights and the grid, so they can be
    shared by every trial that reuses a phase profile.
    """

    def __init__(self, maxsize=48):
        self.maxsize = maxsize
        self._data = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key, build):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
        value = build()
        with self._lock:
            value = self._data.setdefault(key, value)
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._data.clear()


dictionary_cache = _DictionaryCache()


def _dictionary(steering, weights):
    h = steering @ weights.T
    norms = np.real(np.sum(h * np.conj(h), axis=1))
    h.setflags(write=False)
    return h, norms


def _ff_dictionary(scenario, grid):
    def build():
        th, ph = np.meshgrid(grid.thetas(), grid.ff_phis(), indexing="ij")
        dirs = direction(th.ravel(), ph.ravel())
        return _dictionary(kernels.planar_steering(dirs, scenario.ris.offsets, scenario.wavenumber), scenario.weights)

    return dictionary_cache.get((scenario.fingerprint, "ff", grid), build)


def _nf_points_dictionary(scenario, points):
    st = kernels.static_steering(points, scenario.ris.elements, scenario.ris.reference, scenario.wavenumber)
    return _dictionary(st, scenario.weights)


def _nf_angle_dictionary(scenario, grid, rho):
    def build():
        th, ph = np.meshgrid(grid.thetas(), grid.nf_phis(), indexing="ij")
        return _nf_points_dictionary(scenario, rho * direction(th.ravel(), ph.ravel()))

    return dictionary_cache.get((scenario.fingerprint, "nf-angle", grid, float(rho)), build)


def _nf_range_dictionary(scenario, grid, theta, phi):
    def build():
        return _nf_points_dictionary(scenario, grid.rhos()[:, None] * direction(theta, phi)[None, :])

    return dictionary_cache.get((scenario.fingerprint, "nf-range", grid, float(theta), float(phi)), build)


def _grid_costs(dictionary, y, yy):
    h, norms = dictionary
    proj = np.conj(h) @ y
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = yy - np.abs(proj) ** 2 / norms
    cost = np.where(norms > 0, cost, yy)
    if not np.all(np.isfinite(cost)):
        raise NumericalFailure("non-finite grid objective")
    return cost


def init_pos_gain(y, scenario: Scenario, grid: GridSpec = GridSpec(), conv: ConvergenceConfig = ConvergenceConfig()):
    """Coarse static position and gain by alternating grid searches.

    Far-field angles seed an alternation between a near-field range search
    and a near-field angle search, repeated until the objective stops
    changing. Argmin ties go to the lowest linear index (azimuth-major).

    A surface lying in z = 0 sees ``(x, y, z)`` and ``(x, y, -z)``
    identically; near-field elevations beyond pi/2 are folded into the front
    half-space the reflective surface serves.

    Returns:
        ``(position, alpha, trace, spherical)`` where ``trace.objectives``
        holds the objective after each range/angle iteration.
    """
    y = np.asarray(y, dtype=np.complex128)
    yy = float(np.real(np.vdot(y, y)))
    thetas, ff_phis, nf_phis, rhos = grid.thetas(), grid.ff_phis(), grid.nf_phis(), grid.rhos()

    idx = int(np.argmin(_grid_costs(_ff_dictionary(scenario, grid), y, yy)))
    theta, phi = thetas[idx // grid.n_phi], ff_phis[idx % grid.n_phi]

    trace = LoopTrace()
    prev = None
    rho = rhos[0]
    for it in range(1, conv.max_grid_iterations + 1):
        k = int(np.argmin(_grid_costs(_nf_range_dictionary(scenario, grid, theta, phi), y, yy)))
        rho = rhos[k]
        cost = _grid_costs(_nf_angle_dictionary(scenario, grid, rho), y, yy)
        idx = int(np.argmin(cost))
        i, j = divmod(idx, grid.n_phi)
        if nf_phis[j] > math.pi / 2:
            j = grid.n_phi - 1 - j
        theta, phi = thetas[i], nf_phis[j]
        obj = float(cost[i * grid.n_phi + j])
        trace.objectives.append(obj)
        trace.iterations = it
        if prev is not None and abs(prev - obj) <= conv.objective_tolerance:
            trace.converged = True
            break
        prev = obj
    sph = Spherical(rho, theta, phi)
    p = spherical_to_cartesian(sph)
    return p, alpha_hat(p, _ZERO3, y, scenario), trace, sph


# ---------------------------------------------------------------------------
# linearized refinements


def grad_flm(p, v, ell, m, ris, ts) -> np.ndarray:
    """Gradient w.r.t. p of the first-order path-length model (1-based ell, m).

    ``u_m - u_r + J_m^T v l Ts`` with ``J_m`` the Jacobian of the unit vector
    from element m toward p.
    """
    p = as_vec3(p)
    v = as_vec3(v)
    pm = ris.elements[m - 1]
    um = unit_vector_to(p, pm)
    ur = unit_vector_to(p, ris.reference)
    return um - ur + unit_vector_jacobian(p, pm).T @ v * (ell * ts)


def build_linearized_model(p0, v, scenario: Scenario) -> LinearizedModel:
    """First-order model of ``h(., v)`` around position ``p0``."""
    p0 = as_vec3(p0)
    v = as_vec3(v)
    h, dh_dp, _ = response_jacobian(p0, v, scenario)
    # dh/dp = j slopes^T
    return LinearizedModel(h, (-1j * dh_dp).T.copy(), p0, v)


def build_velocity_model(p, v0, scenario: Scenario) -> VelocityLinearModel:
    """First-order model of ``h(p, .)`` around velocity ``v0``."""
    p = as_vec3(p)
    v0 = as_vec3(v0)
    h, _, dh_dv = response_jacobian(p, v0, scenario)
    return VelocityLinearModel(h, (-1j * dh_dv).T.copy(), v0, p)


def _residual_step(base, jac, alpha, y):
    """Real ``d`` minimizing ``||y - alpha (base + j jac^T d)||^2``.

    Solved as a stacked real least-squares problem with an SVD rather than
    through the normal equations, whose conditioning is the square of the
    Jacobian's (velocity columns scale with ``l Ts``).
    """
    if abs(alpha) == 0.0:
        raise DegenerateModel("gain estimate is zero")
    a = 1j * jac.T
    r = y / alpha - base
    mat = np.vstack([a.real, a.imag])
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size < 3 or not sv[0] > 0 or sv[-1] ** 2 <= 1e-13 * sv[0] ** 2:
        raise RankDeficient(f"normal matrix is singular (singular values {sv})")
    d, *_ = np.linalg.lstsq(mat, np.concatenate([r.real, r.imag]), rcond=None)
    return d


def pd_hat(model: LinearizedModel, alpha, y) -> np.ndarray:
    """Closed-form position residual for a fixed gain."""
    return _residual_step(model.response, model.slopes, complex(alpha), np.asarray(y))


def vd_hat(model: VelocityLinearModel, alpha, y) -> np.ndarray:
    """Closed-form velocity residual for a fixed gain."""
    return _residual_step(model.response, model.slopes, complex(alpha), np.asarray(y))


def alpha_from_pd(model: LinearizedModel, delta, y) -> complex:
    return _alpha_ls(model.predict(delta), np.asarray(y))


def alpha_from_vd(model: VelocityLinearModel, delta, y) -> complex:
    return _alpha_ls(model.predict(delta), np.asarray(y))


def _alternate(y, anchor, alpha0, build, step, conv, admissible=None):
    """Alternate closed-form residual and gain updates on a linear model.

    An update whose estimate fails ``admissible`` ends the loop and the last
    admissible iterate is kept.
    """
    y = np.asarray(y, dtype=np.complex128)
    model = build(anchor)
    delta = np.zeros(3)
    alpha = complex(alpha0)
    trace = LoopTrace()
    prev = float(np.sum(np.abs(y - alpha * model.predict(delta)) ** 2))
    for it in range(1, conv.max_refine_iterations + 1):
        if conv.relinearize and it > 1:
            anchor = anchor + delta
            model = build(anchor)
            delta = np.zeros(3)
        try:
            new_delta = step(model, alpha, y)
            pred = model.predict(new_delta)
            new_alpha = _alpha_ls(pred, y)
            if new_alpha == 0:
                raise DegenerateModel("gain estimate is zero")
        except (DegenerateModel, RankDeficient) as exc:
            trace.failure = str(exc)
            break
        if admissible is not None and not admissible(anchor + new_delta):
            trace.hit_boundary = True
            break
        delta, alpha = new_delta, new_alpha
        obj = float(np.sum(np.abs(y - alpha * pred) ** 2))
        if not math.isfinite(obj):
            raise NumericalFailure("non-finite refinement objective")
        trace.objectives.append(obj)
        trace.iterations = it
        if abs(prev - obj) <= conv.objective_tolerance:
            trace.converged = True
            break
        prev = obj
    return Refinement(as_vec3(anchor + delta), alpha, trace)


def ref_pos_gain(
    y,
    v,
    p0,
    alpha0,
    scenario: Scenario,
    conv: ConvergenceConfig = ConvergenceConfig(),
    region: Optional[SearchRegion] = None,
) -> Refinement:
    """Refine position and gain with the velocity held fixed.

    If the gain collapses to zero or the normal matrix is singular, the loop
    stops and the last good iterate is returned with ``trace.failure`` set.
    With a ``region``, an update leaving it stops the loop likewise
    (``trace.hit_boundary``).
    """
    admissible = None if region is None else (lambda p: region.contains(p, scenario.ris.reference))
    return _alternate(
        y, as_vec3(p0), alpha0, lambda a: build_linearized_model(a, v, scenario), pd_hat, conv, admissible
    )


def ref_vel(y, v0, p, alpha0, scenario: Scenario, conv: ConvergenceConfig = ConvergenceConfig()) -> Refinement:
    """Refine velocity and gain with the position held fixed."""
    return _alternate(y, as_vec3(v0), alpha0, lambda a: build_velocity_model(p, a, scenario), vd_hat, conv)


# ---------------------------------------------------------------------------
# quasi-Newton polish


def _gauss_newton_curvature(x, y, scenario, yy):
    """Gauss-Newton Hessian of the normalized concentrated cost at ``x``."""
    h, dp, dv = response_jacobian(x[:3], x[3:], scenario)
    jac = np.hstack([dp, dv])
    hh = float(np.real(np.vdot(h, h)))
    alpha = np.vdot(h, y) / hh
    proj = jac - np.outer(h, np.conj(h) @ jac) / hh
    return 2.0 * abs(alpha) ** 2 * np.real(np.conj(proj).T @ proj) / yy


def _inverse_psd(mat):
    w, V = np.linalg.eigh(0.5 * (mat + mat.T))
    floor = max(w[-1], 1e-300) * 1e-12
    w = np.maximum(w, floor)
    return (V / w) @ V.T


def gradient_descent_6d(
    p_init,
    v_init,
    y,
    scenario: Scenario,
    conv: ConvergenceConfig = ConvergenceConfig(),
    region: Optional[SearchRegion] = None,
):
    """Quasi-Newton minimization of the concentrated cost over (p, v).

    BFGS on the cost normalized by ``||y||^2``. Gradients are central
    finite differences; the inverse-curvature estimate starts from the
    Gauss-Newton matrix at the initial point and is then updated from
    successive gradient differences. Steps are halved until the cost
    decreases, so the returned point is never worse than the start. With a
    ``region``, positions outside it count as infinitely costly.

    Returns:
        ``(position, velocity, trace)``.
    """
    y = np.asarray(y, dtype=np.complex128)
    yy = float(np.real(np.vdot(y, y)))
    if not yy > 0:
        raise DegenerateModel("zero observation")
    steps = np.array([conv.fd_step_position] * 3 + [conv.fd_step_velocity] * 3)

    def cost(x):
        if region is not None and not region.contains(x[:3], scenario.ris.reference):
            return math.inf
        val = concentrated_objective(x[:3], x[3:], y, scenario) / yy
        if not math.isfinite(val):
            raise NumericalFailure("non-finite objective in descent")
        return val

    def fd(x, i, e):
        # one-sided near the region boundary
        fp, fm = cost(x + e), cost(x - e)
        if math.isinf(fp) and math.isinf(fm):
            return 0.0
        if math.isinf(fp):
            return (cost(x) - fm) / e[i]
        if math.isinf(fm):
            return (fp - cost(x)) / e[i]
        return (fp - fm) / (2.0 * e[i])

    def grad(x):
        g = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = steps[i]
            g[i] = fd(x, i, e)
        return g

    x = np.concatenate([as_vec3(p_init), as_vec3(v_init)])
    fx = cost(x)
    if math.isinf(fx):
        raise ValidationError("descent start lies outside the search region")
    trace = LoopTrace(objectives=[fx * yy])
    hinv0 = _inverse_psd(_gauss_newton_curvature(x, y, scenario, yy))
    hinv = hinv0.copy()
    g = grad(x)
    for it in range(1, conv.max_descent_iterations + 1):
        trace.iterations = it
        if np.linalg.norm(g) < conv.gradient_tolerance:
            trace.converged = True
            break
        d = -hinv @ g
        if g @ d >= 0:
            hinv = hinv0.copy()
            d = -hinv @ g
        t = 1.0
        accepted = False
        for _ in range(60):
            xn = x + t * d
            fn = cost(xn)
            if fn < fx:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            trace.converged = True
            break
        gn = grad(xn)
        s, yk = xn - x, gn - g
        sy = float(s @ yk)
        if sy > 1e-300:
            rho = 1.0 / sy
            I = np.eye(6)
            hinv = (I - rho * np.outer(s, yk)) @ hinv @ (I - rho * np.outer(yk, s)) + rho * np.outer(s, s)
        change = fx - fn
        x, fx, g = xn, fn, gn
        trace.objectives.append(fx * yy)
        if change <= conv.objective_tolerance:
            trace.converged = True
            break
    return as_vec3(x[:3]), as_vec3(x[3:]), trace


# ---------------------------------------------------------------------------
# full pipeline


def find_pos_vel(
    y,
    scenario: Scenario,
    grid: GridSpec = GridSpec(),
    conv: ConvergenceConfig = ConvergenceConfig(),
    init: Optional[Tuple] = None,
    region: Optional[SearchRegion] = None,
) -> EstimationResult:
    """Joint position / velocity / gain estimate from one observation.

    Grid initialization (velocity zero), then alternating velocity and
    position refinements until the full ML objective stops changing, then a
    6D quasi-Newton polish and a final least-squares gain. An outer
    iteration that would raise the objective is rejected and ends the loop.

    ``init`` may carry a precomputed :func:`init_pos_gain` result for the
    same ``y``. Position updates are confined to ``region``, by default the
    region covered by ``grid``.
    """
    if region is None:
        region = grid.region()
    y = np.asarray(y, dtype=np.complex128)
    t0 = time.perf_counter()
    if init is None:
        init = init_pos_gain(y, scenario, grid, conv)
    grid_seconds = time.perf_counter() - t0
    return _refine_pipeline(y, scenario, grid, conv, init, region, grid_seconds)


def _refine_pipeline(y, scenario, grid, conv, init, region, grid_seconds=0.0) -> EstimationResult:
    yy = float(np.real(np.vdot(y, y)))
    failures: List[str] = []
    flags: List[str] = []
    stages: List[StageRecord] = []
    counts = {"outer": 0, "grid": 0, "ref_vel": 0, "ref_pos": 0, "descent": 0}

    p, alpha, grid_trace, sph = init
    grid_p = p
    counts["grid"] = grid_trace.iterations
    stages.append(StageRecord("grid", grid_trace.objectives[-1], grid_trace.iterations, grid_seconds))

    v = _ZERO3.copy()

    def full_objective(pp, vv, aa):
        r = y - aa * h_vector(pp, vv, scenario)
        return float(np.real(np.vdot(r, r)))

    prev = full_objective(p, v, alpha)
    outer_trace = [prev]
    for it in range(1, conv.max_outer_iterations + 1):
        t1 = time.perf_counter()
        v_new, a_new, tr_v = ref_vel(y, v, p, alpha, scenario, conv)
        t2 = time.perf_counter()
        p_new, a_new, tr_p = ref_pos_gain(y, v_new, p, a_new, scenario, conv, region)
        t3 = time.perf_counter()
        counts["ref_vel"] += tr_v.iterations
        counts["ref_pos"] += tr_p.iterations
        for tr, label in ((tr_v, "ref_vel"), (tr_p, "ref_pos")):
            if tr.failure:
                failures.append(f"{label}@{it}: {tr.failure}")
        obj = full_objective(p_new, v_new, a_new)
        stages.append(StageRecord("ref_vel", tr_v.objectives[-1] if tr_v.objectives else math.nan, tr_v.iterations, t2 - t1))
        stages.append(StageRecord("ref_pos", tr_p.objectives[-1] if tr_p.objectives else math.nan, tr_p.iterations, t3 - t2))
        counts["outer"] = it
        if not math.isfinite(obj):
            failures.append(f"outer@{it}: non-finite objective")
            break
        if obj > prev + conv.objective_tolerance:
            flags.append(f"outer@{it}: objective increased, iteration rejected")
            break
        p, v, alpha = p_new, v_new, a_new
        outer_trace.append(obj)
        if abs(prev - obj) <= conv.objective_tolerance:
            break
        prev = obj
    refined_p, refined_v = p, v

    t4 = time.perf_counter()
    try:
        p, v, dtrace = gradient_descent_6d(p, v, y, scenario, conv, region)
        counts["descent"] = dtrace.iterations
        descent_trace = dtrace.objectives
    except (NumericalFailure, DegenerateModel) as exc:
        failures.append(f"descent: {exc}")
        descent_trace = []
    alpha = alpha_hat(p, v, y, scenario)
    final = concentrated_objective(p, v, y, scenario)
    stages.append(StageRecord("descent", final, counts["descent"], time.perf_counter() - t4))
    return EstimationResult(
        position=p,
        velocity=v,
        alpha=alpha,
        grid_estimate=sph,
        grid_position=grid_p,
        refined_position=refined_p,
        refined_velocity=refined_v,
        stage_trace=stages,
        grid_trace=list(grid_trace.objectives),
        outer_trace=outer_trace,
        descent_trace=descent_trace,
        iterations=counts,
        failures=failures,
        flags=flags,
    )
