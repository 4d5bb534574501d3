"""Evolution equation ``dx = -Ax dt + B(x) dt + Q dW`` with a Burgers-type quadratic term.

Coordinates are taken in the orthonormal Dirichlet sine basis
``e_k(x) = sqrt(2/pi) sin(kx)`` on ``[0, pi]``, so ``A = (-Laplacian)^beta``
is diagonal with ``lambda_k = k^(2 beta)`` and ``B(u) = -P_N(u u_x)`` is a
symmetric bilinear form ``B(u)_k = sum_ij C_kij u_i u_j``.  The coupling
shift is ``Gamma(t) = (t/T) e^{-(T-t)A} e``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .control import ControlFunction, DEFAULT_REFINEMENT, lemma3_control
from .ensemble import brownian_increments
from .scheme import PathRecord, check_finite, discrete_control, step_coefficients
from .spectral import (
    DimensionError,
    DomainError,
    SpectralOperator,
    as_state,
    grid_count,
    v_norm,
)

NONLINEARITIES = ("burgers", "zero")


class ConfigurationError(ValueError):
    """Raised when a model descriptor cannot support the requested constant."""


@lru_cache(maxsize=8)
def burgers_tensor(n: int) -> np.ndarray:
    """Symmetrised coefficients ``C[k, i, j]`` of ``-P_N(u u_x)`` (0-based modes).

    ``u u_x`` pairs ``sin(ix) * j cos(jx) = j/2 [sin((i+j)x) + sin((i-j)x)]``;
    projecting on ``e_k`` gives ``-(c/2) j [d(i+j,k) + d(i-j,k) - d(j-i,k)]``
    with ``c = sqrt(2/pi)``.
    """
    c = np.sqrt(2.0 / np.pi)
    k = np.arange(1, n + 1)
    K, I, J = np.meshgrid(k, k, k, indexing="ij")
    raw = -(c / 2.0) * J * ((I + J == K).astype(float) + (I - J == K) - (J - I == K))
    sym = 0.5 * (raw + raw.transpose(0, 2, 1))
    sym.setflags(write=False)
    return sym


@dataclass(frozen=True)
class RadialBeta:
    """``beta(v) = profile(|v|_V)`` for the Lipschitz-type bound on ``B``.

    The supremum of ``beta`` over a V-ball is certified only for nondecreasing
    profiles vanishing at 0; anything else is rejected.
    """

    profile: Callable[[float], float]
    name: str = "custom"

    @classmethod
    def linear(cls, c: float) -> "RadialBeta":
        if c < 0:
            raise ConfigurationError("beta slope must be nonnegative")
        return cls(lambda r, c=c: c * r, f"linear({c:g})")

    @classmethod
    def zero(cls) -> "RadialBeta":
        return cls(lambda r: 0.0 * r, "zero")

    def __call__(self, A: SpectralOperator, v) -> float | np.ndarray:
        return self.profile(v_norm(A, v))

    def sup_ball(self, radius: float, samples: int = 257) -> float:
        r = np.linspace(0.0, radius, samples)
        vals = np.array([float(self.profile(ri)) for ri in r])
        if abs(vals[0]) > 1e-14:
            raise ConfigurationError("beta must vanish at 0")
        if np.any(np.diff(vals) < -1e-12 * max(1.0, np.max(np.abs(vals)))):
            raise ConfigurationError("beta profile is not monotone; its sup is not certified")
        return float(vals[-1])


@dataclass(frozen=True)
class EvolutionModel:
    A: SpectralOperator
    q: np.ndarray
    theta: float = 0.5
    nonlinearity: str = "burgers"
    strength: float = 1.0
    gamma: float = 1.0
    alpha: float = 1.0
    K1: float = 0.0
    K2: float | None = None
    K3: float | None = None
    K4: float | None = None
    K5: float = 0.0
    beta: RadialBeta = field(default_factory=RadialBeta.zero)

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        if q.size != self.A.dim:
            raise DimensionError("noise coefficients do not match the operator")
        if np.any(q <= 0) or not np.all(np.isfinite(q)):
            raise DomainError("noise coefficients must be finite and positive")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        if not 0 < self.theta <= 1:
            raise DomainError("theta must lie in (0, 1]")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigurationError(f"nonlinearity must be one of {NONLINEARITIES}")
        if not 0 <= self.gamma < 2 or not 0 <= self.alpha <= 1:
            raise DomainError("need gamma in [0, 2) and alpha in [0, 1]")

    @classmethod
    def default(cls, n: int = 16, beta: float = 1.5, theta: float = 0.5, q0: float = 1.0,
                nonlinearity: str = "burgers", **kw) -> "EvolutionModel":
        """``q_k = q0 lambda_k^(-theta/2)`` so the Q-norm bound holds with ``K3 = q0^-2``."""
        A = SpectralOperator.power_law(n, beta)
        q = q0 * A.eigenvalues ** (-theta / 2.0)
        kw.setdefault("K3", q0 ** -2)
        return cls(A, q, theta, nonlinearity, **kw)

    @property
    def dim(self) -> int:
        return self.A.dim

    @property
    def q_op(self) -> float:
        return float(np.max(self.q))

    @property
    def q_hs_sq(self) -> float:
        return float(np.sum(self.q ** 2))

    @property
    def tensor(self) -> np.ndarray:
        return self.strength * burgers_tensor(self.dim)

    def q_norm(self, u):
        return np.linalg.norm(np.asarray(u) / self.q, axis=-1)

    def K3_exact(self) -> float:
        """Best constant in ``|u|_Q^2 <= K3 |u|_{V_theta}^2``."""
        return float(np.max(1.0 / (self.q ** 2 * self.A.eigenvalues ** self.theta)))


def bilinear(model: EvolutionModel, u, v) -> np.ndarray:
    """Symmetric form ``C(u, v)`` for batches ``(..., N)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if model.nonlinearity == "zero":
        return np.zeros(np.broadcast_shapes(u.shape, v.shape))
    n = model.dim
    if u.shape[-1] != n or v.shape[-1] != n:
        raise DimensionError("vector dimension differs from the model")
    u, v = np.broadcast_arrays(u, v)
    lead = u.shape[:-1]
    outer = (u.reshape(-1, n)[:, :, None] * v.reshape(-1, n)[:, None, :]).reshape(-1, n * n)
    C = model.tensor.reshape(n, n * n)
    return (outer @ C.T).reshape(*lead, n)


def burgers_B(model: EvolutionModel, u) -> np.ndarray:
    return bilinear(model, u, u)


def grad_B(model: EvolutionModel, v, h) -> np.ndarray:
    """Gateaux derivative ``lim (B(v + eps h) - B(v)) / eps = 2 C(h, v)``."""
    return 2.0 * bilinear(model, h, v)


def B_difference(model: EvolutionModel, x, g) -> np.ndarray:
    """``B(x + g) - B(x) = 2 C(g, x) + B(g)``, exact for the quadratic form."""
    return 2.0 * bilinear(model, g, x) + bilinear(model, g, g)


# --- control and shift profile -----------------------------------------------

def phi_evolution(A: SpectralOperator, T: float, e, step: float | None = None) -> ControlFunction:
    """``phi(t) = e^{-(T-t)A} e / T + (2t/T) A e^{-(T-t)A} e``."""
    if T <= 0:
        raise DomainError("T must be positive")
    return lemma3_control(A, None, T, e, step)


def gamma_evolution(A: SpectralOperator, T: float, e, t) -> np.ndarray:
    """``Gamma(t) = (t/T) e^{-(T-t)A} e``; ``t`` may be an array of times."""
    e = as_state(e, A.dim)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > T + 1e-12):
        raise DomainError("t outside [0, T]")
    tt = t_arr[..., None]
    return (tt / T) * np.exp(-(T - tt) * A.eigenvalues) * e


def phi_vtheta_bound(A: SpectralOperator, T: float, e, theta: float) -> float:
    """``2(1+T)/T |A^{(1+theta)/2} e|^2``, bounding ``int |phi|_{V_theta}^2``."""
    return 2.0 * (1.0 + T) / T * v_norm(A, e, 1.0 + theta) ** 2


# --- simulation ---------------------------------------------------------------

def simulate_evolution(model: EvolutionModel, x0, T: float, step: float, seed: int,
                       extra_drift=None, *, n_paths: int = 1, first_path: int = 0,
                       dW: np.ndarray | None = None, frozen_drift: np.ndarray | None = None,
                       noise: str = "exact", refine: int = 1) -> PathRecord:
    """Exponential-Euler paths; ``extra_drift`` has shape ``(n, N)`` or ``(P, n, N)``."""
    n = grid_count(T, step)
    N = model.dim
    x0 = as_state(x0, N)
    if dW is None:
        dW = brownian_increments(seed, first_path, n_paths, n, N, step, refine)
    P = dW.shape[0]
    coef = step_coefficients(model.A, step, noise)
    traj = np.empty((P, n + 1, N))
    traj[:, 0] = x0
    sq = coef.noise * model.q
    extra = None if extra_drift is None else np.asarray(extra_drift, dtype=float)
    for j in range(n):
        x = traj[:, j]
        b = frozen_drift[:, j] if frozen_drift is not None else burgers_B(model, x)
        if extra is not None:
            b = b + extra[..., j, :]
        nxt = coef.decay * x + coef.drift * b + sq * dW[:, j]
        check_finite(nxt, j + 1, first_path)
        traj[:, j + 1] = nxt
    return PathRecord(step, 0, traj, dW, seed, first_path)


@dataclass(frozen=True, eq=False)
class EvolutionShift:
    A: SpectralOperator
    T: float
    e: np.ndarray
    phi: ControlFunction

    @classmethod
    def build(cls, A: SpectralOperator, T: float, e, step: float | None = None):
        e = as_state(e, A.dim)
        return cls(A, T, e, phi_evolution(A, T, e, step))

    def nodes(self, step: float) -> np.ndarray:
        n = grid_count(self.T, step)
        return gamma_evolution(self.A, self.T, self.e, step * np.arange(n + 1))

    def forcing(self, step: float, noise: str = "exact") -> np.ndarray:
        """Per-step forcing that reproduces ``Gamma`` exactly at the grid nodes."""
        return discrete_control(step_coefficients(self.A, step, noise), self.nodes(step))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.e)


def coupled_evolution(model: EvolutionModel, shift: EvolutionShift, x0,
                      path: PathRecord, noise: str = "exact") -> PathRecord:
    """Same-noise process with the drift frozen at ``x`` plus the shift forcing."""
    frozen = np.stack([burgers_B(model, path.states[:, j]) for j in range(path.n_steps)], 1)
    return simulate_evolution(model, x0, shift.T, path.step, path.seed,
                              shift.forcing(path.step, noise), dW=path.dW,
                              frozen_drift=frozen, noise=noise)


def shift_functionals(model: EvolutionModel, shift: EvolutionShift, path: PathRecord,
                      scales=(1.0,), noise: str = "exact", form: str = "discrete"):
    """Girsanov log-densities for the shifts ``s * e`` (``s`` in ``scales``) and the
    integration-by-parts weight for ``e``, from one bilinear evaluation per step.

    Uses ``B(x + s Gamma) - B(x) = 2 s C(Gamma, x) + s^2 B(Gamma)`` and
    ``grad_Gamma B(x) = 2 C(Gamma, x)``.
    """
    coef = step_coefficients(model.A, path.step, noise)
    gam = shift.nodes(path.step)
    g = shift.forcing(path.step, noise)
    logs = [np.zeros(path.n_paths) for _ in scales]
    weight = np.zeros(path.n_paths)
    rq = coef.rho / model.q
    for j in range(path.n_steps):
        if not np.any(gam[j]) and not np.any(g[j]):
            continue
        dW = path.dW[:, j]
        cx = bilinear(model, gam[j], path.states[:, j])
        bg = bilinear(model, gam[j], gam[j])
        for k, sc in enumerate(scales):
            h = rq * (sc * g[j] - 2.0 * sc * cx - sc * sc * bg)
            logs[k] -= np.sum(h * dW, axis=-1) + 0.5 * path.step * np.sum(h * h, axis=-1)
        if form == "discrete":
            w = rq * (g[j] - 2.0 * cx)
        elif form == "continuous":
            w = (shift.phi.at(j * path.step) - 2.0 * cx) / model.q
        else:
            raise ValueError(f"unknown weight form {form!r}")
        weight += np.sum(w * dW, axis=-1)
    return logs, weight


def entropy_and_ibp_weights(model: EvolutionModel, shift: EvolutionShift, path: PathRecord,
                            noise: str = "exact", scale: float = 1.0, form: str = "discrete"):
    """``(log R_T, N)`` per path.

    ``log R_T = -sum <h_n, dW_n> - 1/2 sum |h_n|^2 step`` for the shift
    ``scale * e``, with ``h_n = rho Q^{-1}(g_n + B(x_n) - B(x_n + Gamma_n))``, and
    ``N = sum <rho Q^{-1}(g_n - grad_{Gamma_n} B(x_n)), dW_n>`` for ``e``, where
    ``g_n`` is the scheme-exact forcing.  ``form="continuous"`` evaluates ``N``
    with ``Q^{-1}(phi(t_n) - grad B)`` instead.
    """
    logs, weight = shift_functionals(model, shift, path, (scale,), noise, form)
    return logs[0], weight


# --- explicit constants -----------------------------------------------------

def psi_constant(model: EvolutionModel, x0, T: float, e, C: float) -> float:
    """Log-Harnack correction ``Psi(x, T, e)`` for a caller-supplied constant ``C``."""
    if C <= 0:
        raise DomainError("C must be positive")
    if T <= 0:
        raise DomainError("T must be positive")
    A = model.A
    x0 = as_state(x0, A.dim)
    e = as_state(e, A.dim)
    g, a = model.gamma, model.alpha
    b_e = model.beta.sup_ball(v_norm(A, e))
    lead = (T + 1.0) / T * v_norm(A, e, 1.0 + model.theta) ** 2
    frac = v_norm(A, e, (2 * a + g - 2) / 2.0)
    b0 = burgers_B(model, np.zeros(A.dim))
    poly = ((model.q_hs_sq + float(b0 @ b0) + float(np.linalg.norm(x0))) * T
            + float(e @ e) / 2.0
            + np.sqrt(2.0 - g) / 4.0 * v_norm(A, e, 0.5) ** 2 * frac ** (2.0 / (2.0 - g)))
    growth = np.exp(C * T * (1.0 + (2.0 - g) / 4.0 * frac ** (4.0 / (2.0 - g))))
    return float(C * (lead + b_e + b_e * poly * growth))


def delta_e(model: EvolutionModel, T: float, e) -> float:
    if model.K4 is None or model.K4 <= 0:
        raise DomainError("K4 must be positive for delta_e to be finite")
    e = as_state(e, model.dim)
    ev = v_norm(model.A, e)
    if ev == 0:
        return float("inf")
    neg = max(0.0, -(model.A.gap - 2 * model.K5))
    return float(np.exp(neg * T) / (18.0 * model.K4 * model.q_op ** 2 * ev ** 2 * T))


def p_threshold(delta: float, r: float) -> float:
    """Smallest admissible ``p`` (exclusive) for the scale ``r``; needs ``r^2 < 2 delta``."""
    r2 = r * r
    if 2 * delta - r2 <= 0:
        return float("inf")
    return (np.sqrt(8 * delta * r2 + r2 * r2) + 2 * delta + r2) / (2 * delta - r2)


def max_scale(delta: float, p: float) -> float:
    """Largest ``r`` in ``(0, sqrt(delta))`` with ``p`` above the threshold (bisection)."""
    if p <= 1:
        raise DomainError("p must exceed 1")
    hi = np.sqrt(delta)
    if p_threshold(delta, hi) < p:
        return float(hi)
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if p_threshold(delta, mid) < p:
            lo = mid
        else:
            hi = mid
    return float(lo)


def beta_integral(model: EvolutionModel, T: float, e, n: int = 2 ** 12) -> float:
    t = np.linspace(0.0, T, n + 1)
    vals = np.array([float(model.beta(model.A, g)) for g in gamma_evolution(model.A, T, e, t)])
    return float(integrate.simpson(vals, x=t))


def harnack_exponent_evolution(model: EvolutionModel, x0, T: float, e, r: float | None,
                               p: float, variant: str = "delta") -> float:
    """Exponent ``C`` with ``(P_T f)^p <= P_T f^p(r e + .) e^C``.

    ``variant="delta"`` evaluates the bound valid for ``r in (0, sqrt(delta_e))``
    and ``p`` above the admissibility threshold, with the shift ``r e``.
    ``variant="beta"`` is the bound under ``|B(u) - B(v)|_Q <= beta(u - v)``,
    valid for every ``p > 1`` and the shift ``e`` itself (``r`` is ignored).
    """
    if p <= 1:
        raise DomainError("p must exceed 1")
    if T <= 0:
        raise DomainError("T must be positive")
    A = model.A
    x0 = as_state(x0, A.dim)
    e = as_state(e, A.dim)
    if variant == "beta":
        lead = 2.0 * v_norm(A, e, 1.0 + model.theta) ** 2 / -np.expm1(-2.0 * A.gap * T)
        return float(p / (p - 1) * (lead + beta_integral(model, T, e)))
    if variant != "delta":
        raise ValueError(f"unknown variant {variant!r}")
    delta = delta_e(model, T, e)
    if r is None or not 0 < r < np.sqrt(delta):
        raise DomainError(f"r must lie in (0, sqrt(delta_e)) = (0, {np.sqrt(delta):.6g})")
    thr = p_threshold(delta, r)
    if not p > thr:
        raise DomainError(f"p={p} is not above the admissible threshold {thr:.6g}")
    re = r * e
    K3 = model.K3 if model.K3 is not None else model.K3_exact()
    gap = A.gap - 2 * model.K5
    first = (p - 1) / (4 * model.q_op ** 2) * (
        float(x0 @ x0) / T + (model.q_hs_sq + 2 * model.K5) * max(max(gap, 0.0) * T, 1.0))
    second = p * (p + 1) / (2 * (p - 1)) * (
        2 * K3 * (T + 1) / T * v_norm(A, re, 1.0 + model.theta) ** 2
        + 1.5 * v_norm(A, re, 0.5) ** 4 + 1.5 * model.K4 * v_norm(A, re) ** 2)
    return float(first + second)


# --- condition probe ----------------------------------------------------------

def _random_vectors(rng: np.random.Generator, A: SpectralOperator, count: int) -> np.ndarray:
    """Gaussian directions with random spectral decay and log-uniform overall scale."""
    z = rng.standard_normal((count, A.dim))
    decay = rng.uniform(0.0, 1.0, (count, 1))
    scale = 10.0 ** rng.uniform(-2.0, 2.0, (count, 1))
    return scale * z * A.eigenvalues ** (-decay / 2.0)


def condition_ratios(model: EvolutionModel):
    """Homogeneous ratio forms whose suprema are structural constants of ``B``.

    Each maps batches ``(u, v)`` to a ratio; the name says which bound it probes.
    """
    A = model.A

    def vn(x, s=1.0):
        return np.sqrt(np.sum(A.eigenvalues ** s * x * x, axis=-1))

    def hn(x):
        return np.linalg.norm(x, axis=-1)

    def monotone(u, v):
        # <B(u) - B(v), u - v> against (rho(v) + K1) |u - v|_V^gamma |u - v|^(2 - gamma)
        w = u - v
        lhs = np.sum((burgers_B(model, u) - burgers_B(model, v)) * w, axis=-1)
        return lhs / (vn(v) * vn(w) ** model.gamma * hn(w) ** (2 - model.gamma))

    def cross(u, v):
        w = u - v
        lhs = np.sum(burgers_B(model, w) * v, axis=-1)
        return lhs / (vn(v, model.alpha) * vn(w) ** model.gamma * hn(w) ** (2 - model.gamma))

    def energy(u, v):
        return np.abs(np.sum(burgers_B(model, u) * u, axis=-1)) / hn(u) ** 3

    return {"monotone_rho": monotone, "cross_K2": cross, "energy_K5": energy}


def bilinear_sup(model: EvolutionModel, out_w, first_w, second_w, starts, iters: int = 60):
    """``sup |out_w * C(a / first_w, b / second_w)| / (|a| |b|)`` by alternating
    singular-vector updates from each start pair ``(a, b)``.

    Every iterate is an admissible pair, so the result is a lower bound of the
    supremum that is monotone in the number of starts.
    """
    C = model.tensor
    best = 0.0
    for a, b in starts:
        a = a / np.linalg.norm(a)
        b = b / np.linalg.norm(b)
        val = 0.0
        for _ in range(iters):
            M = out_w[:, None] * np.einsum("kij,j->ki", C, b / second_w) / first_w
            _, sv, vt = np.linalg.svd(M)
            a = vt[0]
            M = out_w[:, None] * np.einsum("kij,i->kj", C, a / first_w) / second_w
            _, sv, vt = np.linalg.svd(M)
            b = vt[0]
            if sv[0] <= val * (1 + 1e-13):
                val = max(val, sv[0])
                break
            val = sv[0]
        best = max(best, float(val))
    return best


@dataclass
class ProbeReport:
    n_samples: int
    maxima: dict
    maxima_doubled: dict
    growth: dict
    stable: bool
    K3: float
    notes: list = field(default_factory=list)

    @property
    def fitted(self) -> dict:
        m = self.maxima_doubled
        return {"c_rho": m["monotone_rho"], "K1": 0.0, "K2": m["cross_K2"], "K3": self.K3,
                "K4": m["gradient_K4"], "K4_H": m["lipschitz_K4_H"],
                "c_beta": 0.5 * m["gradient_K4"], "K5": m["energy_K5"]}


def _polish(fn, u, v, iters: int = 200) -> float:
    n = u.size

    def neg(z):
        val = fn(z[None, :n], z[None, n:])[0]
        return -val if np.isfinite(val) else 0.0

    res = optimize.minimize(neg, np.concatenate([u, v]), method="L-BFGS-B",
                            options={"maxiter": iters})
    return max(-float(res.fun), float(fn(u[None], v[None])[0]))


def _probe_max(fn, u, v, top: int) -> float:
    vals = fn(u, v)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    best = float(np.max(vals))
    for i in np.argsort(vals)[::-1][:top]:
        best = max(best, _polish(fn, u[i], v[i]))
    return best


def condition_probe(model: EvolutionModel, n_samples: int = 2000, seed: int = 0,
                    top: int = 4, tolerance: float = 0.05) -> ProbeReport:
    """Empirical suprema of the structural ratios, and their stability when the
    sample count doubles (the first half of the doubled sample is the base sample).

    The gradient bound ``|grad_h B(v)|_Q <= K4 |h|_V |v|_V`` and the H-Lipschitz
    bound ``|B(u) - B(v)|_Q <= K4_H |u - v| |u + v|_V`` are bilinear, so their
    suprema are refined by alternating singular-vector updates.  Since
    ``B(u) - B(v) = C(u - v, u + v)``, the Lipschitz bounds with the factor
    ``|u|_V + |v|_V`` follow with constants ``K4 / 2`` and ``K4_H``.
    """
    if model.nonlinearity != "burgers":
        raise ConfigurationError("the condition probe needs the Burgers nonlinearity")
    rng = np.random.default_rng(seed)
    u = _random_vectors(rng, model.A, 2 * n_samples)
    v = _random_vectors(rng, model.A, 2 * n_samples)
    maxima, doubled, growth = {}, {}, {}

    def record(name, a, b):
        b = max(a, b)
        maxima[name], doubled[name] = a, b
        growth[name] = 0.0 if a <= 1e-12 else b / a - 1.0

    for name, fn in condition_ratios(model).items():
        a = _probe_max(fn, u[:n_samples], v[:n_samples], top)
        record(name, a, _probe_max(fn, u, v, top))

    sq = np.sqrt(model.A.eigenvalues)
    forms = {"gradient_K4": (2.0 / model.q, sq, sq),
             "lipschitz_K4_H": (1.0 / model.q, np.ones_like(sq), sq)}
    for name, (w0, w1, w2) in forms.items():
        def ratio(a, b):
            val = w0 * bilinear(model, a / w1, b / w2)
            return np.linalg.norm(val, axis=-1) / (
                np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))

        def starts(count):
            r = ratio(u[:count] * w1, v[:count] * w2)
            idx = np.argsort(r)[::-1][:top]
            return [(u[i] * w1, v[i] * w2) for i in idx]

        record(name, bilinear_sup(model, w0, w1, w2, starts(n_samples)),
               bilinear_sup(model, w0, w1, w2, starts(2 * n_samples)))
    stable = all(np.isfinite(list(doubled.values()))) and all(
        g < tolerance for g in growth.values())
    return ProbeReport(n_samples, maxima, doubled, growth, stable, model.K3_exact())


# --- density score --------------------------------------------------------------

@dataclass
class DensityBins:
    edges: np.ndarray
    counts: np.ndarray
    score: np.ndarray
    stderr: np.ndarray
    mean: float
    var: float
    oracle_avg: np.ndarray | None = None
    diff_stderr: np.ndarray | None = None

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def oracle(self) -> np.ndarray:
        """Gaussian score ``-(x - m)/s^2`` at bin centres; compare with ``oracle_avg``."""
        return -(self.centers - self.mean) / self.var


MIN_BIN = 50


def ou_moments(model: EvolutionModel, x0, T: float, mode: int = 0):
    """Mean and variance of mode ``mode`` of ``x(T)`` when ``B = 0``."""
    lam = model.A.eigenvalues[mode]
    x0 = as_state(x0, model.dim)
    return (float(np.exp(-T * lam) * x0[mode]),
            float(model.q[mode] ** 2 * -np.expm1(-2 * T * lam) / (2 * lam)))


def bin_scores(x: np.ndarray, weight: np.ndarray, edges: np.ndarray, mean: float,
               var: float) -> DensityBins:
    nb = edges.size - 1
    idx = np.digitize(x, edges) - 1
    counts = np.zeros(nb, dtype=int)
    score, stderr, avg, dse = (np.full(nb, np.nan) for _ in range(4))
    gauss = -(x - mean) / var
    for b in range(nb):
        inside = idx == b
        sel = weight[inside]
        counts[b] = sel.size
        if sel.size >= MIN_BIN:
            score[b] = -sel.mean()
            stderr[b] = sel.std(ddof=1) / np.sqrt(sel.size)
            # the Gaussian score averaged over the bin, paired with the weights
            avg[b] = gauss[inside].mean()
            dse[b] = (-sel - gauss[inside]).std(ddof=1) / np.sqrt(sel.size)
    return DensityBins(edges, counts, score, stderr, mean, var, avg, dse)


def density_score(model: EvolutionModel, T: float, step: float, n_paths: int, n_bins: int,
                  seed: int, shift_e=None, x0=None, width: float = 2.0,
                  jobs: int = 1) -> DensityBins:
    """Binned estimate of the mode-1 log-density gradient of ``x(T)``.

    The score at ``x`` is ``-E(N | x_1(T) = x)`` with ``N`` the integration-by-parts
    weight for the unit mode-1 shift.  Bins span ``m +- width * s`` of the
    Gaussian reference; bins with fewer than 50 samples are left empty.
    """
    from .ensemble import map_batches

    N = model.dim
    x0 = np.zeros(N) if x0 is None else as_state(x0, N)
    e = np.eye(N)[0] if shift_e is None else as_state(shift_e, N)
    shift = EvolutionShift.build(model.A, T, e)

    def run(first, count):
        path = simulate_evolution(model, x0, T, step, seed, n_paths=count, first_path=first)
        _, w = entropy_and_ibp_weights(model, shift, path)
        return {"x": path.final[:, 0], "w": w}

    out = map_batches(run, n_paths, jobs)
    m, s2 = ou_moments(model, x0, T)
    s = np.sqrt(s2)
    edges = np.linspace(m - width * s, m + width * s, n_bins + 1)
    return bin_scores(out["x"], out["w"], edges, m, s2)
