"""Delay SPDE ``dx = -Ax dt + F(x_t) dt + sigma dW`` with a Girsanov shift coupling.

The coupled process adds ``eps * (phi on [0, T-tau), psi on [T-tau, T])`` to the
drift so that it ends at ``x_T + eps * eta`` on the final segment.  Functions
here build that shift, simulate both processes, and evaluate the Girsanov
density, the integration-by-parts weight, and the shift-Harnack exponent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .control import (
    ControlFunction,
    DEFAULT_REFINEMENT,
    apply_LT,
    duhamel_nodes,
    lemma3_bound,
    lemma3_control,
    min_energy_control,
    min_energy_norm_sq,
    remark_control,
    _interp_nodes,
)
from .ensemble import brownian_increments
from .scheme import (
    PathRecord,
    StepCoefficients,
    check_finite,
    discrete_control,
    step_coefficients,
)
from .spectral import (
    DimensionError,
    DomainError,
    Segment,
    SpectralOperator,
    as_state,
    grid_count,
    half_norm_sq,
)


class MissingDerivativeError(TypeError):
    """Raised when a drift without a Gateaux derivative is asked for one."""


# --- drift catalogue -------------------------------------------------------
# Segments arrive as arrays of shape (P, m+1, N): oldest node first, so
# seg[:, 0] is x(t - tau) and seg[:, -1] is x(t).

class ZeroDrift:
    kind = "zero"
    lipschitz = 0.0
    stencil = (0,)

    def value(self, seg):
        return np.zeros(seg.shape[:1] + seg.shape[2:])

    def derivative(self, seg, direction):
        return np.zeros(seg.shape[:1] + seg.shape[2:])

    def modulus(self, r):
        return 0.0 * r


@dataclass(frozen=True)
class LinearDrift:
    """``F(x_t) = C1 x(t) + C2 x(t - tau)`` with diagonal C1, C2."""

    c_now: np.ndarray
    c_delay: np.ndarray
    kind = "linear"
    stencil = (0, -1)  # segment nodes the drift reads

    def __post_init__(self):
        object.__setattr__(self, "c_now", np.asarray(self.c_now, dtype=float))
        object.__setattr__(self, "c_delay", np.asarray(self.c_delay, dtype=float))

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.c_now)) + np.max(np.abs(self.c_delay)))

    def value(self, seg):
        return self.c_now * seg[:, -1] + self.c_delay * seg[:, 0]

    def derivative(self, seg, direction):
        d = np.broadcast_to(direction, seg.shape)
        return self.c_now * d[:, -1] + self.c_delay * d[:, 0]

    def modulus(self, r):
        return self.lipschitz * r


@dataclass(frozen=True)
class SineDrift:
    """Bounded smooth drift ``F(x_t)_k = c sin(x_k(t - tau))``; Lipschitz ``|c|``."""

    c: float
    kind = "bounded-smooth"
    stencil = (0,)

    @property
    def lipschitz(self) -> float:
        return abs(self.c)

    def value(self, seg):
        return self.c * np.sin(seg[:, 0])

    def derivative(self, seg, direction):
        d = np.broadcast_to(direction, seg.shape)
        return self.c * np.cos(seg[:, 0]) * d[:, 0]

    def modulus(self, r):
        return abs(self.c) * r


@dataclass(frozen=True)
class ModulusDrift:
    """``F(x_t) = c sqrt(min(1, |x_t|_inf)) v``: continuous but not Lipschitz.

    ``|F(x) - F(y)| <= |c| |v| sqrt(|x - y|_inf)``.
    """

    c: float
    direction: np.ndarray
    kind = "modulus"
    lipschitz = float("inf")
    stencil = None  # reads the whole segment

    def __post_init__(self):
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))

    def value(self, seg):
        sup = np.max(np.linalg.norm(seg, axis=-1), axis=1)
        return self.c * np.sqrt(np.minimum(1.0, sup))[:, None] * self.direction

    def derivative(self, seg, direction):
        raise MissingDerivativeError("modulus drift is not differentiable")

    def modulus(self, r):
        return abs(self.c) * float(np.linalg.norm(self.direction)) * np.sqrt(r)


@dataclass(frozen=True)
class DelayModel:
    A: SpectralOperator
    tau: float
    drift: object = field(default_factory=ZeroDrift)
    sigma: float = 1.0
    a_plus: float = 0.0
    noise: str = "endpoint"

    def __post_init__(self):
        if self.tau <= 0:
            raise DomainError("tau must be positive")
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")
        if self.a_plus < 0:
            raise DomainError("a_plus must be nonnegative")

    @property
    def dim(self) -> int:
        return self.A.dim

    @property
    def L(self) -> float:
        return self.drift.lipschitz

    @property
    def M(self) -> float:
        return 1.0 / self.sigma

    def coefficients(self, step: float) -> StepCoefficients:
        return step_coefficients(self.A, step, self.noise)


# --- shift direction -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EtaProfile:
    """Closed-form shift direction on ``[-tau, 0]`` with optional exact derivative."""

    value: Callable[[float], np.ndarray]
    derivative: Callable[[float], np.ndarray] | None = None
    name: str = "custom"

    @classmethod
    def zero(cls, dim: int):
        z = np.zeros(dim)
        return cls(lambda s: z.copy(), lambda s: z.copy(), "zero")

    @classmethod
    def constant(cls, v):
        v = as_state(v)
        return cls(lambda s: v.copy(), lambda s: np.zeros_like(v), "constant")

    @classmethod
    def semigroup(cls, A: SpectralOperator, v, tau: float):
        """``eta(s) = e^{-(s+tau)A} v``; then ``eta' + A eta = 0``."""
        v = as_state(v, A.dim)
        lam = A.eigenvalues

        def value(s):
            return np.exp(-(s + tau) * lam) * v

        return cls(value, lambda s: -lam * value(s), "semigroup")

    @classmethod
    def polynomial(cls, coeffs, v):
        """``eta(s) = p(s) v`` with ``p(s) = sum_j coeffs[j] s^j``."""
        v = as_state(v)
        p = np.polynomial.Polynomial(coeffs)
        dp = p.deriv()
        return cls(lambda s: p(s) * v, lambda s: dp(s) * v, "polynomial")

    def segment(self, tau: float, step: float) -> Segment:
        return Segment.from_function(self.value, tau, step)


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    """Shift direction ``eta`` with the controls that realise it.

    ``phi`` lives on ``[0, T - tau]`` and steers 0 to ``eta(-tau)``;
    ``psi = eta'(. - T) + A eta(. - T)`` lives on ``[T - tau, T]``.
    """

    eta: Segment
    phi: ControlFunction
    psi: ControlFunction
    profile: EtaProfile | None = None
    variant: str = "theorem"
    _gamma_cache: dict = field(default_factory=dict, repr=False)

    @property
    def tau(self) -> float:
        return self.eta.tau

    @property
    def T(self) -> float:
        return self.psi.end

    def eta_at(self, s: float) -> np.ndarray:
        if self.profile is not None:
            return np.asarray(self.profile.value(s), dtype=float)
        return self.eta.at(s)

    @property
    def is_zero(self) -> bool:
        return (not np.any(self.eta.values) and not np.any(self.phi.values)
                and not np.any(self.psi.values))


def psi_from_eta(A: SpectralOperator, eta: Segment, T: float) -> ControlFunction:
    """``psi(t) = eta'(t - T) + A eta(t - T)`` on ``[T - tau, T]`` by finite differences.

    Second-order central differences inside, second-order one-sided at the ends.
    """
    if eta.n_intervals < 2:
        raise DomainError("eta needs at least 3 grid nodes")
    if eta.dim != A.dim:
        raise DimensionError("eta and operator dimensions differ")
    d = np.gradient(eta.values, eta.step, axis=0, edge_order=2)
    return ControlFunction(d + A.eigenvalues * eta.values, eta.step, T - eta.tau)


def psi_from_profile(A: SpectralOperator, profile: EtaProfile, tau: float, T: float,
                     step: float) -> ControlFunction:
    if profile.derivative is None:
        return psi_from_eta(A, profile.segment(tau, step), T)
    lam = A.eigenvalues

    def psi(t):
        s = t - T
        return np.asarray(profile.derivative(s)) + lam * np.asarray(profile.value(s))

    return ControlFunction.from_function(psi, T - tau, T, step)


def make_shift(A: SpectralOperator, eta, T: float, step: float, variant: str = "theorem",
               u=None, h: ControlFunction | None = None,
               control_step: float | None = None, tau: float | None = None) -> ShiftSpec:
    """Build a :class:`ShiftSpec` for ``eta`` (an :class:`EtaProfile` or a Segment).

    ``variant`` selects the control on ``[0, T - tau]``: ``theorem`` is the
    minimal-energy control, ``lemma3`` the explicit one, ``remark`` the
    ``u``/``h`` construction.
    """
    if isinstance(eta, EtaProfile):
        if tau is None:
            raise ValueError("tau is required with an EtaProfile")
        profile, seg = eta, eta.segment(tau, step)
    else:
        profile, seg = None, eta
    tau = seg.tau
    if T <= tau:
        raise DomainError("T must exceed tau")
    head = T - tau
    cstep = head * 2.0 ** -DEFAULT_REFINEMENT if control_step is None else control_step
    x = profile.value(-tau) if profile is not None else seg.values[0]
    x = as_state(x, A.dim)
    if variant == "theorem":
        phi = min_energy_control(A, None, head, x, cstep)
    elif variant == "lemma3":
        phi = lemma3_control(A, None, head, x, cstep)
    elif variant == "remark":
        phi = remark_control(A, head, x, u if u is not None else (lambda t: t / head),
                             h, step=cstep)
    else:
        raise ValueError(f"unknown control variant {variant!r}")
    psi = (psi_from_profile(A, profile, tau, T, step) if profile is not None
           else psi_from_eta(A, seg, T))
    reached = apply_LT(A, None, head, phi)
    if np.linalg.norm(reached - x) > 1e-6 * (1.0 + np.linalg.norm(x)):
        raise ValueError("control does not steer 0 to eta(-tau) within tolerance")
    return ShiftSpec(seg, phi, psi, profile, variant)


def gamma_profile(A: SpectralOperator, shift: ShiftSpec, T: float, t: float) -> np.ndarray:
    """Shift profile: ``eta(t - T)`` for ``t >= T - tau``, else ``int_0^t e^{-(t-s)A} phi``."""
    if t < -1e-12 or t > T + 1e-12:
        raise DomainError(f"t={t} outside [0, T]")
    head = T - shift.tau
    if t >= head - 1e-12:
        return shift.eta_at(min(t, T) - T)
    if t <= 0:
        return np.zeros(A.dim)
    if shift.phi.response is not None:
        return np.asarray(shift.phi.response(t), dtype=float)
    nodes = shift._gamma_cache.get("phi_nodes")
    if nodes is None:
        nodes = duhamel_nodes(A, shift.phi)
        shift._gamma_cache["phi_nodes"] = nodes
    return _interp_nodes(nodes, t / shift.phi.step)


def gamma_trajectory(A: SpectralOperator, shift: ShiftSpec, step: float) -> np.ndarray:
    """Profile at ``-tau, ..., 0, step, ..., T`` (zero for nonpositive times)."""
    T = shift.T
    m = grid_count(shift.tau, step)
    n = grid_count(T, step)
    out = np.zeros((m + n + 1, A.dim))
    for j in range(1, n + 1):
        out[m + j] = gamma_profile(A, shift, T, j * step)
    return out


def shift_control_at(shift: ShiftSpec, t: float) -> np.ndarray:
    """``phi(t)`` before ``T - tau`` and ``psi(t)`` from there on."""
    head = shift.T - shift.tau
    if t < head - 1e-12:
        return shift.phi.at(t)
    return shift.psi.at(t)


# --- simulation ------------------------------------------------------------

def _resolve_extra(extra, n: int, step: float, dim: int):
    if extra is None:
        return None
    if isinstance(extra, ControlFunction) or callable(extra):
        fn = extra.at if isinstance(extra, ControlFunction) else extra
        return np.array([np.asarray(fn(j * step), dtype=float) for j in range(n)])
    arr = np.asarray(extra, dtype=float)
    if arr.shape[-2:] != (n, dim):
        raise DimensionError(f"extra drift must have shape (..., {n}, {dim})")
    return arr


def simulate(model: DelayModel, xi: Segment, T: float, step: float, seed: int,
             extra_drift=None, *, n_paths: int = 1, first_path: int = 0,
             dW: np.ndarray | None = None, frozen_drift: np.ndarray | None = None,
             refine: int = 1) -> PathRecord:
    """Exponential-Euler trajectories of the delay equation.

    ``extra_drift`` is an array of per-step values ``(n, N)`` or ``(P, n, N)``,
    a :class:`ControlFunction`, or a callable of time (sampled at left points).
    ``frozen_drift`` replaces ``F`` by given per-step values, e.g. those of a
    reference path.  ``dW`` overrides the seeded increments.
    """
    m = grid_count(model.tau, step)
    n = grid_count(T, step)
    if abs(xi.step - step) > 1e-12 or abs(xi.tau - model.tau) > 1e-12:
        raise DomainError("initial segment must be sampled on the simulation grid")
    N = model.dim
    if xi.dim != N:
        raise DimensionError("initial segment dimension differs from the model")
    if dW is None:
        dW = brownian_increments(seed, first_path, n_paths, n, N, step, refine)
    P = dW.shape[0]
    coef = model.coefficients(step)
    extra = _resolve_extra(extra_drift, n, step, N)
    traj = np.empty((P, m + n + 1, N))
    traj[:, : m + 1] = xi.values
    noise = coef.noise * model.sigma
    for j in range(n):
        seg = traj[:, j: j + m + 1]
        b = frozen_drift[:, j] if frozen_drift is not None else model.drift.value(seg)
        if extra is not None:
            b = b + (extra[..., j, :])
        nxt = coef.decay * seg[:, -1] + coef.drift * b + noise * dW[:, j]
        check_finite(nxt, j + 1, first_path)
        traj[:, m + j + 1] = nxt
    return PathRecord(step, m, traj, dW, seed, first_path)


def drift_along(model: DelayModel, path: PathRecord) -> np.ndarray:
    """``F(x_{t_n})`` for every step, shape ``(P, n, N)``."""
    return np.stack([model.drift.value(path.segment(j)) for j in range(path.n_steps)], axis=1)


def shift_forcing(model: DelayModel, shift: ShiftSpec, step: float):
    """Profile on the simulation grid and the scheme-exact forcing reproducing it."""
    key = ("forcing", step, model.noise)
    if key not in shift._gamma_cache:
        gam = gamma_trajectory(model.A, shift, step)
        m = grid_count(shift.tau, step)
        g = discrete_control(model.coefficients(step), gam[m:])
        shift._gamma_cache[key] = (gam, g)
    return shift._gamma_cache[key]


def coupled_path(model: DelayModel, shift: ShiftSpec, eps: float, x_path: PathRecord,
                 xi: Segment) -> PathRecord:
    """The coupled process driven by the same noise with ``F`` frozen at ``x``'s segments."""
    _, g = shift_forcing(model, shift, x_path.step)
    return simulate(model, xi, shift.T, x_path.step, x_path.seed, eps * g,
                    dW=x_path.dW, frozen_drift=drift_along(model, x_path))


def coupling_drift(model: DelayModel, shift: ShiftSpec, eps: float, t: float,
                   x_seg, y_seg) -> np.ndarray:
    """``eps sigma^{-1}(phi 1_[0,T-tau) + psi 1_[T-tau,T]) + sigma^{-1}(F(x_t) - F(y_t))``.

    Segments may be single ``(m+1, N)`` arrays or batches ``(P, m+1, N)``.
    """
    x_seg = np.asarray(x_seg, dtype=float)
    y_seg = np.asarray(y_seg, dtype=float)
    if x_seg.shape != y_seg.shape:
        raise DimensionError("segments are misaligned")
    single = x_seg.ndim == 2
    if single:
        x_seg, y_seg = x_seg[None], y_seg[None]
    if x_seg.shape[1] != shift.eta.n_intervals + 1:
        raise DimensionError("segments are not on the shift grid")
    c = shift_control_at(shift, t) if eps != 0 else 0.0
    h = (eps * c + model.drift.value(x_seg) - model.drift.value(y_seg)) / model.sigma
    return h[0] if single else h


def coupling_increments(model: DelayModel, shift: ShiftSpec, eps: float,
                        path: PathRecord) -> np.ndarray:
    """Per-step Girsanov drift ``h_n`` that turns ``x + eps Gamma`` into a solution.

    ``h_n = rho sigma^{-1} (eps g_n + F(x_{t_n}) - F(x_{t_n} + eps Gamma_{t_n}))``
    where ``g_n`` is the scheme-exact forcing; as the step shrinks this tends to
    the continuous-time drift of :func:`coupling_drift`.
    """
    gam, g = shift_forcing(model, shift, path.step)
    coef = model.coefficients(path.step)
    m = path.n_history
    out = np.empty_like(path.dW)
    for j in range(path.n_steps):
        seg = path.segment(j)
        shifted = seg + eps * gam[j: j + m + 1]
        diff = model.drift.value(seg) - model.drift.value(shifted)
        out[:, j] = coef.rho * (eps * g[j] + diff) / model.sigma
    return out


def coupling_log_weights(model: DelayModel, shift: ShiftSpec, path: PathRecord,
                         scales) -> list:
    """``log R`` for the shifts ``s * eta`` (``s`` in ``scales``), sharing ``F(x_{t_n})``
    across scales; each entry equals ``girsanov_log_weight(path,
    coupling_increments(model, shift, s, path))``."""
    gam, g = shift_forcing(model, shift, path.step)
    coef = model.coefficients(path.step)
    m = path.n_history
    logs = [np.zeros(path.n_paths) for _ in scales]
    stencil = getattr(model.drift, "stencil", None)
    for j in range(path.n_steps):
        seg = path.segment(j)
        direction = gam[j: j + m + 1]
        if stencil is not None:
            seg, direction = seg[:, list(stencil)], direction[list(stencil)]
        base = model.drift.value(seg)
        dW = path.dW[:, j]
        for k, sc in enumerate(scales):
            h = coef.rho * (sc * g[j] + base - model.drift.value(seg + sc * direction)) \
                / model.sigma
            logs[k] -= np.sum(h * dW, axis=-1) + 0.5 * path.step * np.sum(h * h, axis=-1)
    return logs


def girsanov_log_weight(path: PathRecord, h: np.ndarray) -> np.ndarray:
    """``log R = -sum <h_n, dW_n> - 1/2 sum |h_n|^2 step`` (left-point sums)."""
    h = np.broadcast_to(h, path.dW.shape)
    return -np.einsum("pnk,pnk->p", h, path.dW) - 0.5 * path.step * np.einsum(
        "pnk,pnk->p", h, h)


def path_shift_weight(model: DelayModel, path: PathRecord, gam: np.ndarray,
                      forcing: np.ndarray, controls: np.ndarray | None = None,
                      form: str = "discrete") -> np.ndarray:
    """``sum <sigma^{-1}(c_n - grad_{Gamma_{t_n}} F(x_{t_n})), dW_n>`` for a shift path.

    ``gam`` is the shift path on the trajectory grid (history included).  With
    ``form="discrete"`` the forcing is ``rho * g_n`` (scheme-exact); with
    ``form="continuous"`` it is the given ``controls`` sampled at left points.
    """
    m = path.n_history
    coef = model.coefficients(path.step)
    total = np.zeros(path.n_paths)
    for j in range(path.n_steps):
        direction = gam[j: j + m + 1]
        if np.any(direction):
            grad = model.drift.derivative(path.segment(j), direction)
        else:
            grad = 0.0
        if form == "discrete":
            integrand = coef.rho * (forcing[j] - grad)
        elif form == "continuous":
            integrand = controls[j] - grad
        else:
            raise ValueError(f"unknown weight form {form!r}")
        total += np.sum(integrand * path.dW[:, j], axis=-1)
    return total / model.sigma


def deterministic_integrands(model: DelayModel, gam: np.ndarray, forcing: np.ndarray,
                             step: float, controls: np.ndarray | None = None,
                             form: str = "discrete") -> np.ndarray:
    """Weight integrands ``(n, N)`` when the drift derivative does not depend on the state.

    Valid for the linear and zero drifts, where the weight is a Wiener integral
    of a deterministic function.
    """
    if model.drift.kind not in ("linear", "zero"):
        raise TypeError("integrands are random for a nonlinear drift")
    n = forcing.shape[0]
    m = gam.shape[0] - n - 1
    coef = model.coefficients(step)
    dummy = np.zeros((1, m + 1, model.dim))
    out = np.empty((n, model.dim))
    for j in range(n):
        grad = model.drift.derivative(dummy, gam[j: j + m + 1])[0]
        out[j] = coef.rho * (forcing[j] - grad) if form == "discrete" else controls[j] - grad
    return out / model.sigma


def ibp_weight_delay(model: DelayModel, shift: ShiftSpec, path: PathRecord,
                     form: str = "discrete") -> np.ndarray:
    """Integration-by-parts weight for the shift, one value per path."""
    gam, g = shift_forcing(model, shift, path.step)
    controls = None
    if form == "continuous":
        controls = np.array([shift_control_at(shift, j * path.step)
                             for j in range(path.n_steps)])
    return path_shift_weight(model, path, gam, g, controls, form)


# --- shift Harnack exponent ------------------------------------------------

HARNACK_VARIANTS = ("theorem", "lemma3", "selfadjoint", "modulus")


def gramian_term(model: DelayModel, shift: ShiftSpec, T: float, variant: str) -> float:
    """The quantity standing for ``|R_{T-tau}^{-1/2} eta(-tau)|^2`` in each variant."""
    A = model.A
    head = T - shift.tau
    x = shift.eta_at(-shift.tau)
    if variant in ("theorem", "modulus"):
        return min_energy_norm_sq(A, None, head, x)
    if variant == "lemma3":
        return lemma3_bound(A, None, head, x)
    if variant == "selfadjoint":
        return 2.0 * 2.0 * half_norm_sq(A, x) / -np.expm1(-2.0 * head * A.gap)
    raise ValueError(f"unknown Harnack variant {variant!r}")


def harnack_exponent_delay(model: DelayModel, shift: ShiftSpec, T: float, p: float,
                           variant: str = "theorem", modulus=None) -> float:
    """Exponent ``C`` with ``(P_T f)^p <= P_T f^p(. + eta) e^C``.

    ``modulus`` (a callable gamma) is used by the ``modulus`` variant and
    defaults to the drift's own modulus of continuity.
    """
    if p <= 1:
        raise DomainError("p must exceed 1")
    if T <= shift.tau:
        raise DomainError("T must exceed tau")
    if variant not in HARNACK_VARIANTS:
        raise ValueError(f"unknown Harnack variant {variant!r}")
    head = T - shift.tau
    E = gramian_term(model, shift, T, variant)
    psi_sq = shift.psi.norm_sq()
    eta_inf = shift.eta.sup_norm()
    pref = p * model.M ** 2 / (p - 1)
    if variant == "modulus":
        gamma = modulus if modulus is not None else model.drift.modulus
        arg = max(eta_inf, np.sqrt(head * E))
        return pref * (E + T * float(gamma(arg)) ** 2 + psi_sq)
    L = model.L
    return pref * ((2.0 + L ** 2 * head ** 2) / 2.0 * E + psi_sq
                   + shift.tau * max(head * E, eta_inf ** 2))
