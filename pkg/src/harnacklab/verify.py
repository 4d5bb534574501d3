"""Monte-Carlo and oracle checks of the shift-Harnack, integration-by-parts,
log-Harnack, log-Sobolev and maximal-regularity statements.

Every two-sided check evaluates both sides on the same trajectories and takes
its standard error from the per-path difference (or, for nonlinear
combinations of means, from the delta-method influence values).  A check
fails only when the violation exceeds three combined standard errors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .control import ControlFunction
from .delay_sde import (
    DelayModel,
    EtaProfile,
    MissingDerivativeError,
    ShiftSpec,
    coupling_increments,
    coupling_log_weights,
    deterministic_integrands,
    girsanov_log_weight,
    harnack_exponent_delay,
    ibp_weight_delay,
    make_shift,
    path_shift_weight,
    shift_control_at,
    shift_forcing,
    simulate,
)
from .ensemble import map_batches
from .evolution_sde import (
    EvolutionModel,
    EvolutionShift,
    entropy_and_ibp_weights,
    harnack_exponent_evolution,
    psi_constant,
    shift_functionals,
    simulate_evolution,
)
from .scheme import discrete_control, step_coefficients
from .spectral import DomainError, Segment, SpectralOperator, grid_count, phi_function
from .testfunctions import TestFunction, path_nodes, segment_nodes

Z_LIMIT = 3.0
VERDICTS = ("pass", "fail", "inconclusive")


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    seed: int | None = None

    @classmethod
    def from_samples(cls, x, seed: int | None = None) -> "MCEstimate":
        x = np.asarray(x, dtype=float)
        se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
        return cls(float(x.mean()), se, int(x.size), seed)

    @classmethod
    def exact(cls, value: float, n: int = 0, seed: int | None = None) -> "MCEstimate":
        return cls(float(value), 0.0, n, seed)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n}


@dataclass
class CheckReport:
    check: str
    tag: str
    verdict: str
    estimates: dict
    constant: float | None = None
    variant: str | None = None
    slack: float | None = None
    z: float | None = None
    seed: int | None = None
    runtime: float = 0.0
    trivial: bool = False
    details: dict = field(default_factory=dict)
    paths: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        est = {k: (v.to_dict() if isinstance(v, MCEstimate) else _plain(v))
               for k, v in self.estimates.items()}
        return {"check": self.check, "tag": self.tag, "verdict": self.verdict,
                "estimates": est, "constant": _plain(self.constant), "variant": self.variant,
                "slack": _plain(self.slack), "z": _plain(self.z), "seed": self.seed,
                "trivial": self.trivial, "details": _plain(self.details)}


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, MCEstimate):
        return x.to_dict()
    return x


def identity_verdict(z: float, stderr: float, resolution: float | None) -> str:
    if z > Z_LIMIT:
        return "fail"
    if resolution is not None and stderr > resolution:
        return "inconclusive"
    return "pass"


def inequality_verdict(violation: float, stderr: float, resolution: float | None) -> str:
    """Violation is ``LHS - RHS``; positive means the inequality is broken."""
    if violation > Z_LIMIT * stderr:
        return "fail"
    if resolution is not None and stderr > resolution:
        return "inconclusive"
    return "pass"


def z_score(diff_mean: float, diff_se: float) -> float:
    if diff_se == 0:
        return 0.0 if abs(diff_mean) < 1e-12 else float("inf")
    return abs(diff_mean) / diff_se


def paired(lhs, rhs, seed=None):
    """Estimates of both sides and of their per-path difference."""
    return (MCEstimate.from_samples(lhs, seed), MCEstimate.from_samples(rhs, seed),
            MCEstimate.from_samples(np.asarray(lhs) - np.asarray(rhs), seed))


def _trivial(check: str, tag: str, seed, t0, **details) -> CheckReport:
    return CheckReport(check, tag, "pass", {"lhs": MCEstimate.exact(0.0),
                                            "rhs": MCEstimate.exact(0.0)},
                       slack=0.0, z=0.0, seed=seed, runtime=time.perf_counter() - t0,
                       trivial=True, details=details)


# --- Gaussian oracles for linear dynamics ------------------------------------

def impulse_responses(decay, drift, noise, c_now, c_delay, m: int, n: int) -> np.ndarray:
    """Per-mode response ``G[k]`` of the state ``k+1`` steps after a unit noise input.

    Solves ``x_{j+1} = E x_j + K (c_now x_j + c_delay x_{j-m})`` from a zero
    history with ``x_1 = S``; returns an array ``(n, N)``.
    """
    N = np.size(decay)
    x = np.zeros((m + n + 1, N))
    x[m + 1] = noise
    for j in range(1, n):
        x[m + j + 1] = decay * x[m + j] + drift * (c_now * x[m + j] + c_delay * x[j])
    return x[m + 1:]


def linear_covariance_oracle(G: np.ndarray, weights: np.ndarray, node_steps, directions,
                             step: float) -> float:
    """``E[sum_i <x(t_i), v_i> * sum_j <w_j, dW_j>]`` for linear dynamics.

    ``G`` from :func:`impulse_responses` (noise factor included), ``weights``
    the deterministic integrands ``(n, N)``, ``node_steps`` the grid index of
    each node (states before step 0 are deterministic).
    """
    total = 0.0
    for ni, v in zip(node_steps, np.atleast_2d(directions)):
        for j in range(max(0, int(ni))):
            total += float(np.sum(v * G[ni - 1 - j] * weights[j]))
    return total * step


def gaussian_expectation(fn, mean: float, var: float) -> float:
    """``E fn(Z)`` for ``Z ~ N(mean, var)`` by adaptive quadrature."""
    if var <= 0:
        return float(fn(mean))
    s = np.sqrt(var)
    val, _ = integrate.quad(lambda z: fn(mean + s * z) * np.exp(-0.5 * z * z),
                            -12, 12, limit=200, epsabs=1e-13, epsrel=1e-12)
    return float(val / np.sqrt(2 * np.pi))


# --- delay ensembles ------------------------------------------------------------

def _delay_runs(model, xi, T, step, seed, n_paths, jobs, body, refine=1):
    keep = {}

    def run(first, count):
        path = simulate(model, xi, T, step, seed, n_paths=count, first_path=first,
                        refine=refine)
        if first == 0:
            keep["paths"] = path
        return body(path)

    out = map_batches(run, n_paths, jobs)
    return out, keep.get("paths")


def _resolve_xi(model: DelayModel, xi, step: float) -> Segment:
    if xi is None:
        return Segment.constant(np.zeros(model.dim), model.tau, step)
    if isinstance(xi, Segment):
        return xi
    return Segment.constant(xi, model.tau, step)


def _linear_delay_oracle(model, gam, g, controls, step, fn, node_steps, form):
    coef = model.coefficients(step)
    drift = model.drift
    m = grid_count(model.tau, step)
    n = g.shape[0]
    if drift.kind == "zero":
        c_now = c_delay = np.zeros(model.dim)
    else:
        c_now, c_delay = drift.c_now, drift.c_delay
    G = impulse_responses(coef.decay, coef.drift, coef.noise * model.sigma,
                          c_now, c_delay, m, n)
    w = deterministic_integrands(model, gam, g, step, controls, form)
    return linear_covariance_oracle(G, w, node_steps, fn.directions, step)


def check_ibp_delay(model: DelayModel, shift: ShiftSpec, f: TestFunction, T: float,
                    step: float, n_paths: int, seed: int, xi=None, jobs: int = 1,
                    form: str = "discrete", resolution: float | None = None,
                    refine: int = 1, fd_eps: float | None = None) -> CheckReport:
    """``E grad_eta f(x_T) = E f(x_T) * weight`` on the final segment.

    With ``fd_eps`` the left side is also estimated as
    ``E f(x_T) (R^{-eps} - R^{eps}) / (2 eps)`` from the coupling densities of
    the shifts ``+-eps eta``, at ``eps`` and ``eps/2``, Richardson-combined.
    """
    t0 = time.perf_counter()
    tag = "ibp-delay"
    if shift.is_zero:
        return _trivial("ibp_delay", tag, seed, t0, reason="zero shift")
    if not f.differentiable:
        raise TypeError("the integration-by-parts check needs a differentiable test function")
    if model.drift.kind == "modulus":
        raise MissingDerivativeError("drift has no Gateaux derivative")
    xi = _resolve_xi(model, xi, step)
    eta_nodes = segment_nodes(f, shift.eta.values, step)

    def body(path):
        nodes = segment_nodes(f, path.final_segment, step)
        w = ibp_weight_delay(model, shift, path, form)
        path.ibp_integral = w
        fx = f.value(nodes)
        res = {"lhs": f.directional(nodes, eta_nodes), "rhs": fx * w}
        if fd_eps:
            h = fd_eps
            lp1, lm1, lp2, lm2 = coupling_log_weights(model, shift, path,
                                                      (h, -h, h / 2, -h / 2))
            res["gfd1"] = fx * (np.exp(lm1) - np.exp(lp1)) / (2 * h)
            res["gfd2"] = fx * (np.exp(lm2) - np.exp(lp2)) / h
        return res

    out, paths = _delay_runs(model, xi, T, step, seed, n_paths, jobs, body, refine)
    lhs, rhs, diff = paired(out["lhs"], out["rhs"], seed)
    z = z_score(diff.mean, diff.stderr)
    est = {"lhs": lhs, "rhs": rhs, "difference": diff}
    details = {"form": form, "step": step, "n_paths": n_paths}
    verdict = identity_verdict(z, diff.stderr, resolution)
    if fd_eps:
        rich = (4 * out["gfd2"] - out["gfd1"]) / 3
        est["girsanov_fd_eps"] = MCEstimate.from_samples(out["gfd1"], seed)
        est["girsanov_fd_half"] = MCEstimate.from_samples(out["gfd2"], seed)
        est["girsanov_fd_richardson"] = MCEstimate.from_samples(rich, seed)
        fd_diff = MCEstimate.from_samples(out["lhs"] - rich, seed)
        z_fd = z_score(fd_diff.mean, fd_diff.stderr)
        details.update(fd_eps=fd_eps, z_fd=z_fd)
        if z_fd > Z_LIMIT:
            verdict = "fail"
    if f.kind == "coordinate" and model.drift.kind in ("linear", "zero"):
        gam, g = shift_forcing(model, shift, step)
        controls = np.array([shift_control_at(shift, j * step) for j in range(g.shape[0])])
        n = grid_count(T, step)
        node_steps = n + f.indices(step, -model.tau, shift.eta.n_intervals + 1) \
            - shift.eta.n_intervals
        oracle = _linear_delay_oracle(model, gam, g, controls, step, f, node_steps, form)
        closed = float(np.sum(eta_nodes * f.directions))
        z_oracle = z_score(rhs.mean - oracle, rhs.stderr)
        details.update(oracle=oracle, closed_form=closed, oracle_gap=abs(oracle - closed),
                       z_oracle=z_oracle,
                       rel_stderr=rhs.stderr / abs(oracle) if oracle else float("inf"))
        if z_oracle > Z_LIMIT:
            verdict = "fail"
    return CheckReport("ibp_delay", tag, verdict, est, variant=shift.variant,
                       slack=-abs(diff.mean), z=z, seed=seed,
                       runtime=time.perf_counter() - t0, details=details, paths=paths)


def check_ibp_pathspace(model: DelayModel, eta: EtaProfile, G: TestFunction, T: float,
                        step: float, n_paths: int, seed: int, xi=None, jobs: int = 1,
                        form: str = "discrete", resolution: float | None = None) -> CheckReport:
    """``E grad_eta G(x) = E G(x) * int <eta' + A eta - grad_{eta_t} F(x_t), dW>``
    for a path ``eta`` on ``[0, T]`` with ``eta(0) = 0``, extended by zero to the past."""
    t0 = time.perf_counter()
    tag = "ibp-pathspace"
    if np.linalg.norm(eta.value(0.0)) > 1e-12:
        raise DomainError("the path shift must vanish at time 0")
    n = grid_count(T, step)
    m = grid_count(model.tau, step)
    times = step * np.arange(n + 1)
    nodes = np.array([np.asarray(eta.value(t), float) for t in times])
    if not np.any(nodes):
        return _trivial("ibp_pathspace", tag, seed, t0, reason="zero shift")
    if model.drift.kind == "modulus":
        raise MissingDerivativeError("drift has no Gateaux derivative")
    gam = np.vstack([np.zeros((m, model.dim)), nodes])
    g = discrete_control(model.coefficients(step), nodes)
    lam = model.A.eigenvalues
    controls = None
    if form == "continuous":
        if eta.derivative is None:
            raise ValueError("the continuous weight needs the derivative of eta")
        controls = np.array([np.asarray(eta.derivative(t)) + lam * nodes[j]
                             for j, t in enumerate(times[:-1])])
    xi = _resolve_xi(model, xi, step)
    eta_nodes = path_nodes(G, nodes, step)

    def body(path):
        x = path_nodes(G, path.states, step)
        w = path_shift_weight(model, path, gam, g, controls, form)
        return {"lhs": G.directional(x, eta_nodes), "rhs": G.value(x) * w}

    out, paths = _delay_runs(model, xi, T, step, seed, n_paths, jobs, body)
    lhs, rhs, diff = paired(out["lhs"], out["rhs"], seed)
    z = z_score(diff.mean, diff.stderr)
    details = {"form": form, "step": step, "n_paths": n_paths}
    verdict = identity_verdict(z, diff.stderr, resolution)
    if G.kind == "coordinate" and model.drift.kind in ("linear", "zero"):
        node_steps = G.indices(step, 0.0, n + 1)
        oracle = _linear_delay_oracle(model, gam, g, controls, step, G, node_steps, form)
        details.update(oracle=oracle, closed_form=float(np.sum(eta_nodes * G.directions)),
                       z_oracle=z_score(rhs.mean - oracle, rhs.stderr))
        if details["z_oracle"] > Z_LIMIT:
            verdict = "fail"
    return CheckReport("ibp_pathspace", tag, verdict,
                       {"lhs": lhs, "rhs": rhs, "difference": diff}, slack=-abs(diff.mean),
                       z=z, seed=seed, runtime=time.perf_counter() - t0, details=details,
                       paths=paths)


def _log_harnack_stats(a, b, p, C):
    """Log-domain violation ``p log mean(a) - log mean(b) - C`` with delta-method error."""
    abar, bbar = a.mean(), b.mean()
    if abar == 0:
        return -np.inf, 0.0
    if bbar == 0:
        return np.inf, 0.0
    infl = p * a / abar - b / bbar
    se = float(infl.std(ddof=1) / np.sqrt(a.size))
    return float(p * np.log(abar) - np.log(bbar) - C), se


def check_shift_harnack(model: DelayModel, shift: ShiftSpec, f: TestFunction, p: float,
                        T: float, step: float, n_paths: int, seed: int,
                        variant: str = "theorem", xi=None, jobs: int = 1,
                        resolution: float | None = None, modulus=None) -> CheckReport:
    """``(E f(x_T))^p <= E f^p(x_T + eta) * exp(C)``, compared in log form.

    ``slack`` is ``log RHS - log LHS`` so huge exponents stay finite.
    """
    t0 = time.perf_counter()
    if p <= 1:
        raise DomainError("p must exceed 1")
    if not f.nonnegative:
        raise ValueError("the Harnack check needs a nonnegative test function")
    C = harnack_exponent_delay(model, shift, T, p, variant, modulus)
    tag = "shift-harnack-delay"
    if f.kind == "constant":
        return CheckReport("shift_harnack", tag, "pass",
                           {"lhs": MCEstimate.exact(1.0), "rhs": MCEstimate.exact(np.exp(C))},
                           constant=C, variant=variant, slack=C, z=0.0, seed=seed,
                           runtime=time.perf_counter() - t0, trivial=True,
                           details={"p": p, "reason": "constant test function"})
    xi = _resolve_xi(model, xi, step)
    eta_nodes = segment_nodes(f, shift.eta.values, step)

    def body(path):
        x = segment_nodes(f, path.final_segment, step)
        return {"a": f.value(x), "b": f.value(x + eta_nodes) ** p}

    out, paths = _delay_runs(model, xi, T, step, seed, n_paths, jobs, body)
    violation, se = _log_harnack_stats(out["a"], out["b"], p, C)
    a = MCEstimate.from_samples(out["a"], seed)
    b = MCEstimate.from_samples(out["b"], seed)
    verdict = inequality_verdict(violation, se, resolution)
    return CheckReport("shift_harnack", tag, verdict,
                       {"mean_f": a, "mean_fp_shifted": b,
                        "log_lhs": p * np.log(a.mean) if a.mean > 0 else -np.inf,
                        "log_rhs": np.log(b.mean) + C if b.mean > 0 else -np.inf},
                       constant=C, variant=variant, slack=-violation, z=violation / se if se else 0.0,
                       seed=seed, runtime=time.perf_counter() - t0, trivial=shift.is_zero,
                       details={"p": p, "kind": f.kind, "stderr_log": se}, paths=paths)


def check_girsanov_delay(model: DelayModel, shift: ShiftSpec, T: float, step: float,
                         n_paths: int, seed: int, eps: float = 1.0, xi=None,
                         jobs: int = 1) -> CheckReport:
    """``E R_T = 1`` for the delay coupling density."""
    t0 = time.perf_counter()
    xi = _resolve_xi(model, xi, step)

    def body(path):
        lr = girsanov_log_weight(path, coupling_increments(model, shift, eps, path))
        path.girsanov_log = lr
        return {"R": np.exp(lr), "logR": lr}

    out, paths = _delay_runs(model, xi, T, step, seed, n_paths, jobs, body)
    R = MCEstimate.from_samples(out["R"], seed)
    z = z_score(R.mean - 1.0, R.stderr)
    return CheckReport("girsanov_delay", "girsanov-delay", identity_verdict(z, R.stderr, None),
                       {"R": R, "logR": MCEstimate.from_samples(out["logR"], seed)},
                       z=z, seed=seed, runtime=time.perf_counter() - t0,
                       details={"eps": eps}, paths=paths)


# --- evolution checks ----------------------------------------------------------

def _evolution_runs(model, x0, T, step, seed, n_paths, jobs, body, refine=1):
    keep = {}

    def run(first, count):
        path = simulate_evolution(model, x0, T, step, seed, n_paths=count, first_path=first,
                                  refine=refine)
        if first == 0:
            keep["paths"] = path
        return body(path)

    return map_batches(run, n_paths, jobs), keep.get("paths")


def _evolution_linear_oracle(model, shift, step, f, form):
    """Exact ``E f(x_T) N`` for ``B = 0`` and a coordinate functional of ``x_T``."""
    coef = step_coefficients(model.A, step, "exact")
    n = grid_count(shift.T, step)
    zero = np.zeros(model.dim)
    G = impulse_responses(coef.decay, coef.drift, coef.noise * model.q, zero, zero, 0, n)
    if form == "discrete":
        w = coef.rho * shift.forcing(step) / model.q
    else:
        w = np.array([shift.phi.at(j * step) for j in range(n)]) / model.q
    return linear_covariance_oracle(G, w, [n], f.directions, step)


def ou_projection(model: EvolutionModel, x0, T: float, v, step: float | None = None):
    """Mean and variance of ``<x(T), v>`` when ``B = 0`` (exact in the scheme)."""
    lam = model.A.eigenvalues
    mean = float(np.sum(np.exp(-T * lam) * np.asarray(x0) * v))
    var = float(np.sum(v * v * model.q ** 2 * -np.expm1(-2 * T * lam) / (2 * lam)))
    return mean, var


def check_ibp_evolution(model: EvolutionModel, shift: EvolutionShift, f: TestFunction, x0,
                        step: float, n_paths: int, seed: int, jobs: int = 1,
                        form: str = "discrete", fd_eps: float | None = 0.1,
                        resolution: float | None = None, refine: int = 1) -> CheckReport:
    """``E grad_e f(x_T) = E f(x_T) N``, with a finite-difference cross-check.

    The cross-check differentiates the Girsanov density in the shift size,
    ``E f(x_T) (R^{-eps} - R^{eps}) / (2 eps)``, which has the same mean as the
    central difference ``(E f(x_T + eps e) - E f(x_T - eps e)) / (2 eps)``; runs
    at ``eps`` and ``eps/2`` are combined by Richardson extrapolation.
    """
    t0 = time.perf_counter()
    tag = "ibp-evolution"
    if shift.is_zero:
        return _trivial("ibp_evolution", tag, seed, t0, reason="zero shift")
    x0 = np.asarray(x0, dtype=float)
    e = shift.e[None]
    T = shift.T

    def body(path):
        x = path.final[:, None]
        scales = (1.0, fd_eps, -fd_eps, fd_eps / 2, -fd_eps / 2) if fd_eps else (1.0,)
        logs, w = shift_functionals(model, shift, path, scales, form=form)
        fx = f.value(x)
        out = {"lhs": f.directional(x, e), "rhs": fx * w, "logR": logs[0]}
        if fd_eps:
            for k, (name, h) in enumerate((("fd1", fd_eps), ("fd2", fd_eps / 2))):
                lp, lm = logs[1 + 2 * k], logs[2 + 2 * k]
                out["g" + name] = fx * (np.exp(lm) - np.exp(lp)) / (2 * h)
                out["s" + name] = (f.value(x + h * e) - f.value(x - h * e)) / (2 * h)
        return out

    out, paths = _evolution_runs(model, x0, T, step, seed, n_paths, jobs, body, refine)
    lhs, rhs, diff = paired(out["lhs"], out["rhs"], seed)
    z = z_score(diff.mean, diff.stderr)
    verdict = identity_verdict(z, diff.stderr, resolution)
    est = {"lhs": lhs, "rhs": rhs, "difference": diff}
    details = {"form": form, "step": step, "n_paths": n_paths}
    if fd_eps:
        rich = (4 * out["gfd2"] - out["gfd1"]) / 3
        est["girsanov_fd_eps"] = MCEstimate.from_samples(out["gfd1"], seed)
        est["girsanov_fd_half"] = MCEstimate.from_samples(out["gfd2"], seed)
        est["girsanov_fd_richardson"] = MCEstimate.from_samples(rich, seed)
        est["spatial_fd_eps"] = MCEstimate.from_samples(out["sfd1"], seed)
        est["spatial_fd_half"] = MCEstimate.from_samples(out["sfd2"], seed)
        fd_diff = MCEstimate.from_samples(out["lhs"] - rich, seed)
        z_fd = z_score(fd_diff.mean, fd_diff.stderr)
        details.update(fd_eps=fd_eps, z_fd=z_fd)
        if z_fd > Z_LIMIT:
            verdict = "fail"
    if f.kind == "coordinate" and model.nonlinearity == "zero":
        oracle = _evolution_linear_oracle(model, shift, step, f, form)
        closed = float(np.sum(shift.e * f.directions))
        z_oracle = z_score(rhs.mean - oracle, rhs.stderr)
        details.update(oracle=oracle, closed_form=closed, oracle_gap=abs(oracle - closed),
                       z_oracle=z_oracle,
                       rel_stderr=rhs.stderr / abs(oracle) if oracle else float("inf"))
        if z_oracle > Z_LIMIT:
            verdict = "fail"
    return CheckReport("ibp_evolution", tag, verdict, est, slack=-abs(diff.mean), z=z,
                       seed=seed, runtime=time.perf_counter() - t0, details=details,
                       paths=paths)


def check_girsanov_evolution(model: EvolutionModel, shift: EvolutionShift, x0, step: float,
                             n_paths: int, seed: int, jobs: int = 1) -> CheckReport:
    t0 = time.perf_counter()

    def body(path):
        lr, _ = entropy_and_ibp_weights(model, shift, path)
        path.girsanov_log = lr
        return {"R": np.exp(lr), "logR": lr}

    out, paths = _evolution_runs(model, np.asarray(x0, float), shift.T, step, seed, n_paths,
                                 jobs, body)
    R = MCEstimate.from_samples(out["R"], seed)
    z = z_score(R.mean - 1.0, R.stderr)
    return CheckReport("girsanov_evolution", "girsanov-evolution",
                       identity_verdict(z, R.stderr, None),
                       {"R": R, "logR": MCEstimate.from_samples(out["logR"], seed)}, z=z,
                       seed=seed, runtime=time.perf_counter() - t0, paths=paths)


def entropy_estimate(R: np.ndarray):
    """Normalised ``E[R log R]`` (``R`` divided by its sample mean) and its
    delta-method influence values."""
    b = R.mean()
    with np.errstate(divide="ignore", invalid="ignore"):
        rlr = np.where(R > 0, R * np.log(R), 0.0)
    a = rlr.mean()
    H = a / b - np.log(b)
    infl = (rlr - a) / b - a * (R - b) / b ** 2 - (R - b) / b
    return float(H), infl


def check_log_harnack_evolution(model: EvolutionModel, shift: EvolutionShift, f: TestFunction,
                                x0, step: float, n_paths: int, seed: int, jobs: int = 1,
                                C_psi: float | None = None,
                                resolution: float | None = None) -> CheckReport:
    """``E log f(x_T) <= log E f(x_T + e) + E[R_T log R_T]`` on common paths."""
    t0 = time.perf_counter()
    tag = "log-harnack-evolution"
    if not f.lower_bound > 0:
        raise ValueError("the log-Harnack check needs a test function bounded below by a "
                         "positive constant")
    x0 = np.asarray(x0, dtype=float)
    details = {"kind": f.kind, "entropy_normalised": True}
    if C_psi is not None:
        details["psi_annotation"] = psi_constant(model, x0, shift.T, shift.e, C_psi)
    if shift.is_zero:
        rep = _trivial("log_harnack_evolution", tag, seed, t0, **details)
        rep.details["reason"] = "zero shift"
        return rep
    e = shift.e[None]

    def body(path):
        x = path.final[:, None]
        lr, _ = entropy_and_ibp_weights(model, shift, path)
        return {"lf": np.log(f.value(x)), "fe": f.value(x + e), "R": np.exp(lr)}

    out, paths = _evolution_runs(model, x0, shift.T, step, seed, n_paths, jobs, body)
    H, h_infl = entropy_estimate(out["R"])
    fbar = out["fe"].mean()
    lhs = MCEstimate.from_samples(out["lf"], seed)
    violation = lhs.mean - np.log(fbar) - H
    infl = out["lf"] - out["fe"] / fbar - h_infl
    se = float(infl.std(ddof=1) / np.sqrt(infl.size))
    verdict = inequality_verdict(violation, se, resolution)
    est = {"E_log_f": lhs, "log_E_f_shifted": float(np.log(fbar)),
           "mean_f_shifted": MCEstimate.from_samples(out["fe"], seed),
           "entropy": MCEstimate(H, float(h_infl.std(ddof=1) / np.sqrt(h_infl.size)),
                                 h_infl.size, seed),
           "R": MCEstimate.from_samples(out["R"], seed)}
    if model.nonlinearity == "zero" and len(f.times) == 1:
        v = f.directions[0]
        m, s2 = ou_projection(model, x0, shift.T, v)
        shift_v = float(shift.e @ v)
        o_lhs = gaussian_expectation(lambda z: np.log(f.g(z)), m, s2)
        o_fe = gaussian_expectation(lambda z: f.g(z + shift_v), m, s2)
        coef = step_coefficients(model.A, step, "exact")
        g = shift.forcing(step)
        o_ent = 0.5 * step * float(np.sum((coef.rho * g / model.q) ** 2))
        z_parts = {"E_log_f": z_score(lhs.mean - o_lhs, lhs.stderr),
                   "mean_f_shifted": z_score(est["mean_f_shifted"].mean - o_fe,
                                             est["mean_f_shifted"].stderr),
                   "entropy": z_score(H - o_ent, est["entropy"].stderr)}
        o_slack = np.log(o_fe) + o_ent - o_lhs
        details.update(oracle={"E_log_f": o_lhs, "mean_f_shifted": o_fe, "entropy": o_ent,
                               "slack": o_slack}, z_oracle=z_parts)
        if o_slack < 0 or max(z_parts.values()) > Z_LIMIT:
            verdict = "fail"
    return CheckReport("log_harnack_evolution", tag, verdict, est, constant=H,
                       variant="entropy", slack=-violation, z=violation / se if se else 0.0,
                       seed=seed, runtime=time.perf_counter() - t0, details=details,
                       paths=paths)


def check_harnack_evolution(model: EvolutionModel, f: TestFunction, x0, T: float, e, p: float,
                            step: float, n_paths: int, seed: int, r: float | None = None,
                            variant: str = "delta", jobs: int = 1,
                            resolution: float | None = None) -> CheckReport:
    """``(E f(x_T))^p <= E f^p(x_T + r e) exp(C)`` with the explicit exponent."""
    t0 = time.perf_counter()
    if p <= 1:
        raise DomainError("p must exceed 1")
    if not f.nonnegative:
        raise ValueError("the Harnack check needs a nonnegative test function")
    x0 = np.asarray(x0, dtype=float)
    e = np.asarray(e, dtype=float)
    C = harnack_exponent_evolution(model, x0, T, e, r, p, variant)
    shift = (r if variant == "delta" else 1.0) * e

    def body(path):
        x = path.final[:, None]
        return {"a": f.value(x), "b": f.value(x + shift) ** p}

    out, paths = _evolution_runs(model, x0, T, step, seed, n_paths, jobs, body)
    violation, se = _log_harnack_stats(out["a"], out["b"], p, C)
    return CheckReport("harnack_evolution", "shift-harnack-evolution",
                       inequality_verdict(violation, se, resolution),
                       {"mean_f": MCEstimate.from_samples(out["a"], seed),
                        "mean_fp_shifted": MCEstimate.from_samples(out["b"], seed)},
                       constant=C, variant=variant, slack=-violation,
                       z=violation / se if se else 0.0, seed=seed,
                       runtime=time.perf_counter() - t0, trivial=not np.any(shift),
                       details={"p": p, "r": r, "kind": f.kind}, paths=paths)


# --- log-Sobolev ---------------------------------------------------------------

def log_sobolev_constant(L: float, T: float, a_plus: float = 0.0,
                         segment: bool = False) -> float:
    """``2 exp(2 T a + T^2 a^2 e^{2 T a}) (1 + L T e^{T (L + a)})``, times ``T + 1``
    for functionals of the whole segment."""
    if L < 0 or T <= 0 or a_plus < 0:
        raise DomainError("need L >= 0, T > 0 and a_plus >= 0")
    a = a_plus
    c = 2.0 * np.exp(2 * T * a + T * T * a * a * np.exp(2 * T * a)) * (
        1.0 + L * T * np.exp(T * (L + a)))
    return float(c * (T + 1.0) if segment else c)


def gaussian_log_sobolev(g: TestFunction, mean: float, var: float):
    """Entropy of ``g^2`` and ``E |grad g|^2`` for a single-node functional of a
    Gaussian state whose projection has the given mean and variance."""
    vv = float(np.sum(g.directions ** 2))
    G2 = gaussian_expectation(lambda z: g.g(z) ** 2, mean, var)
    ent = gaussian_expectation(lambda z: g.g(z) ** 2 * np.log(g.g(z) ** 2), mean, var) \
        - G2 * np.log(G2)
    grad = gaussian_expectation(lambda z: g.dg(z) ** 2 * vv, mean, var)
    return ent, grad


def check_log_sobolev(model: DelayModel, g: TestFunction, T: float, step: float,
                      n_paths: int, seed: int, xi=None, jobs: int = 1,
                      resolution: float | None = None) -> CheckReport:
    """``Ent(g^2)(x(T)) <= C E |grad g|^2(x(T))`` with the explicit constant."""
    t0 = time.perf_counter()
    if model.sigma != 1.0:
        raise DomainError("the log-Sobolev inequality is stated for unit noise")
    if len(g.times) != 1 or g.times[0] != 0.0:
        raise ValueError("the log-Sobolev check takes a functional of x(T) only")
    if not g.lower_bound > 0:
        raise ValueError("g must be bounded away from 0")
    C = log_sobolev_constant(model.L, T, model.a_plus)
    xi = _resolve_xi(model, xi, step)
    details = {"kind": g.kind, "L": model.L}
    if g.kind == "constant":
        return CheckReport("log_sobolev", "log-sobolev", "pass",
                           {"entropy": MCEstimate.exact(0.0), "rhs": MCEstimate.exact(0.0)},
                           constant=C, slack=0.0, z=0.0, seed=seed,
                           runtime=time.perf_counter() - t0, trivial=True, details=details)

    def body(path):
        x = path.final[:, None]
        G = g.value(x) ** 2
        return {"G": G, "GlogG": G * np.log(G), "grad": g.gradient_norm_sq(x)}

    out, paths = _delay_runs(model, xi, T, step, seed, n_paths, jobs, body)
    mG = out["G"].mean()
    ent = out["GlogG"].mean() - mG * np.log(mG)
    grad = MCEstimate.from_samples(out["grad"], seed)
    violation = ent - C * grad.mean
    infl = out["GlogG"] - (np.log(mG) + 1.0) * out["G"] - C * out["grad"]
    se = float(infl.std(ddof=1) / np.sqrt(infl.size))
    ent_infl = out["GlogG"] - (np.log(mG) + 1.0) * out["G"]
    est = {"entropy": MCEstimate(float(ent), float(ent_infl.std(ddof=1) / np.sqrt(n_paths)),
                                 n_paths, seed),
           "grad_sq": grad, "rhs": C * grad.mean}
    verdict = inequality_verdict(violation, se, resolution)
    if model.drift.kind == "zero":
        v = g.directions[0]
        lam = model.A.eigenvalues
        x0 = xi.values[-1]
        # continuous-time law of x(T) for the oracle, scheme law for the MC comparison
        mean = float(np.sum(np.exp(-T * lam) * x0 * v))
        var = float(np.sum(v * v * -np.expm1(-2 * T * lam) / (2 * lam)))
        o_ent, o_grad = gaussian_log_sobolev(g, mean, var)
        coef = model.coefficients(step)
        n = grid_count(T, step)
        zero = np.zeros(model.dim)
        G = impulse_responses(coef.decay, coef.drift, coef.noise, zero, zero, 0, n)
        d_var = float(step * np.sum(v * v * G ** 2))
        d_ent, d_grad = gaussian_log_sobolev(g, mean, d_var)
        o_slack = C * o_grad - o_ent
        z_parts = {"entropy": z_score(ent - d_ent, est["entropy"].stderr),
                   "grad_sq": z_score(grad.mean - d_grad, grad.stderr)}
        details.update(oracle={"entropy": o_ent, "grad_sq": o_grad, "slack": o_slack,
                               "variance": var},
                       scheme_oracle={"entropy": d_ent, "grad_sq": d_grad, "variance": d_var},
                       z_oracle=z_parts)
        if o_slack <= 0 or max(z_parts.values()) > Z_LIMIT:
            verdict = "fail"
    return CheckReport("log_sobolev", "log-sobolev", verdict, est, constant=C,
                       slack=-violation, z=violation / se if se else 0.0, seed=seed,
                       runtime=time.perf_counter() - t0, details=details, paths=paths)


# --- maximal regularity --------------------------------------------------------

def regularity_integrals(A: SpectralOperator, f: ControlFunction, subdivide: int = 16):
    """``(int |A v|^2, int |v'|^2, int |f|^2)`` for ``v' = -A v + f``, ``v(0) = 0``,
    with ``f`` linear between its nodes.

    ``v`` is exact at every sub-node (exponential integrator for linear
    forcing) and the first two integrals use composite Simpson on the
    subdivided grid; ``int |f|^2`` is exact.
    """
    if subdivide % 2:
        raise ValueError("subdivide must be even for Simpson's rule")
    lam = A.eigenvalues
    h = f.step
    vals = f.values
    s = h * np.arange(subdivide + 1) / subdivide
    z = np.outer(s, lam)
    p1 = s[:, None] * phi_function(1, z)
    p2 = s[:, None] ** 2 / h * phi_function(2, z)
    decay = np.exp(-z)
    v = np.zeros(A.dim)
    Av2 = dv2 = 0.0
    w = np.ones(subdivide + 1)
    w[1:-1:2], w[2:-1:2] = 4, 2
    w *= h / subdivide / 3
    for i in range(f.n_intervals):
        fi, df = vals[i], vals[i + 1] - vals[i]
        sub = decay * v + p1 * fi + p2 * df
        forcing = fi + (s / h)[:, None] * df
        Av2 += float(w @ np.sum((lam * sub) ** 2, axis=1))
        dv2 += float(w @ np.sum((forcing - lam * sub) ** 2, axis=1))
        v = sub[-1]
    a, b = vals[:-1], vals[1:]
    f2 = float(h / 3 * np.sum(a * a + a * b + b * b))
    return Av2, dv2, f2


def check_regularity(A: SpectralOperator, f: ControlFunction, M_resolvent: float = 1.0,
                     subdivide: int = 16) -> CheckReport:
    """``int |J v|^2 <= (M+1)^2 int |f|^2`` and ``int |v'|^2 <= M^2 int |f|^2`` for
    ``J = -A``; deterministic, so the verdict is exact."""
    t0 = time.perf_counter()
    Av2, dv2, f2 = regularity_integrals(A, f, subdivide)
    b1 = (M_resolvent + 1) ** 2 * f2
    b2 = M_resolvent ** 2 * f2
    r1 = Av2 / b1 if b1 > 0 else 0.0
    r2 = dv2 / b2 if b2 > 0 else 0.0
    ok = Av2 <= b1 * (1 + 1e-12) and dv2 <= b2 * (1 + 1e-12)
    return CheckReport("regularity", "maximal-regularity", "pass" if ok else "fail",
                       {"int_Jv_sq": Av2, "int_dv_sq": dv2, "int_f_sq": f2},
                       constant=M_resolvent, slack=float(min(b1 - Av2, b2 - dv2)),
                       runtime=time.perf_counter() - t0,
                       details={"ratio_Jv": r1, "ratio_dv": r2, "tightest": max(r1, r2)})


# --- refinement --------------------------------------------------------------------

def refinement_levels(run, step: float, levels: int = 3):
    """Run ``run(step_k, refine_k)`` at ``step / 2^k``, all levels sharing the
    Brownian path sampled at the finest step."""
    out = []
    for k in range(levels):
        out.append(run(step / 2 ** k, 2 ** (levels - 1 - k)))
    return out


def check_refinement(reports: list, check: str = "refinement") -> CheckReport:
    """``|LHS - RHS|`` central estimates must be non-increasing within one stderr."""
    res = [abs(r.estimates["difference"].mean) for r in reports]
    se = [r.estimates["difference"].stderr for r in reports]
    ok = all(res[k + 1] <= res[k] + max(se[k], se[k + 1]) for k in range(len(res) - 1))
    return CheckReport(check, "refinement", "pass" if ok else "fail",
                       {f"level{k}": r.estimates["difference"] for k, r in enumerate(reports)},
                       slack=float(min(res[k] + max(se[k], se[k + 1]) - res[k + 1]
                                       for k in range(len(res) - 1))),
                       runtime=sum(r.runtime for r in reports),
                       details={"steps": [r.details.get("step") for r in reports],
                                "residuals": res, "stderrs": se})


def ibp_delay_refinement(model: DelayModel, profile: EtaProfile, f: TestFunction, T: float,
                         step: float, n_paths: int, seed: int, xi=None, form: str = "continuous",
                         variant: str = "theorem", levels: int = 3, jobs: int = 1):
    """Delay integration-by-parts residuals at ``step``, ``step/2``, ... on one Brownian path."""
    def run(h, refine):
        shift = make_shift(model.A, profile, T, h, variant, tau=model.tau)
        x = None if xi is None else (xi if not isinstance(xi, Segment) else xi.values[-1])
        return check_ibp_delay(model, shift, f, T, h, n_paths, seed, x, jobs, form,
                               refine=refine)

    reports = refinement_levels(run, step, levels)
    return check_refinement(reports, "refinement_ibp_delay"), reports


def ibp_evolution_refinement(model: EvolutionModel, e, f: TestFunction, x0, T: float,
                             step: float, n_paths: int, seed: int, form: str = "continuous",
                             levels: int = 3, jobs: int = 1):
    shift = EvolutionShift.build(model.A, T, e)

    def run(h, refine):
        return check_ibp_evolution(model, shift, f, x0, h, n_paths, seed, jobs, form,
                                   fd_eps=None, refine=refine)

    reports = refinement_levels(run, step, levels)
    return check_refinement(reports, "refinement_ibp_evolution"), reports
