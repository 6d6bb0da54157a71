"""Discrete local minimizers of E_ε under Dirichlet data.

The objective is the edge-based discrete energy

    E_h(Q) = ½ Σ_edges |Q_i - Q_j|² h^(n-2) + Σ_nodes f(Q)/ε² h^n,

whose L² gradient at a free node is -Δ_h Q + Df(Q)/ε² (standard Laplacian
stencil), i.e. the discrete Euler-Lagrange residual divided by ε².

Three schemes share the same backtracking acceptance rule (a step is only
taken if E_h does not increase):

``explicit``
    Q <- Q - τ g with τ below the stability bound min(h²/2n, ε²/L_f).
``semi-implicit``
    stabilized flow (1/τ + S/ε² - Δ_h) δ = -g; the constant-coefficient
    operator is inverted by a type-I sine transform when only the grid edge
    is fixed, and by preconditioned CG otherwise.
``lbfgs``
    limited-memory quasi-Newton directions with the same operator as the
    initial inverse Hessian.  Much faster on domains that are large compared
    to ε, where the flow is throttled by slow director rotations.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import fft
from scipy.sparse.linalg import LinearOperator, cg

from .field import FieldQ, laplacian
from .tensor import bulk_gradient, bulk_lipschitz, bulk_potential

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "semi-implicit", "lbfgs")


class NonFiniteEnergy(RuntimeError):
    pass


class NotConverged(RuntimeError):
    """Raised on request when max_iters is exhausted; carries the last iterate."""

    def __init__(self, msg, field=None, report=None):
        super().__init__(msg)
        self.field = field
        self.report = report


@dataclass
class SolveOptions:
    max_iters: int = 2000
    residual_tol: float = 1e-6
    step_safety: float = 0.9
    scheme: str = "semi-implicit"
    seed: int = 0
    log_every: int = 0
    noise: float = 0.0
    tau: float = np.inf
    history: int = 8
    checkpoint: str | None = None

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.step_safety <= 1:
            raise ValueError("step_safety must lie in (0, 1]")
        if self.scheme not in SCHEMES:
            raise ValueError("unknown scheme %r" % self.scheme)


@dataclass
class ConvergenceReport:
    scheme: str
    seed: int
    iterations: int = 0
    converged: bool = False
    final_residual: float = np.inf
    energies: list = dc_field(default_factory=list)
    residuals: list = dc_field(default_factory=list)
    steps: list = dc_field(default_factory=list)
    max_norms: list = dc_field(default_factory=list)
    message: str = ""

    @property
    def final_energy(self):
        return self.energies[-1] if self.energies else np.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "energy", "residual", "step"])
            for i, (e, r, s) in enumerate(zip(self.energies, self.residuals, self.steps)):
                w.writerow([i, repr(e), repr(r), repr(s)])


def norm_bound(mp):
    """The L∞ bound M = 2 sqrt(2/3) s_* watched along the flow."""
    return 2.0 * np.sqrt(2.0 / 3.0) * mp.s_star


def discrete_energy(values, h, eps, mp):
    nd = values.ndim - 1
    e = 0.0
    for ax in range(1, nd + 1):
        d = np.diff(values, axis=ax)
        e += 0.5 * np.sum(d * d)
    e *= h ** (nd - 2)
    return e + np.sum(bulk_potential(values, mp)) * h ** nd / eps ** 2


def energy_gradient(values, h, eps, mp, free):
    """L² gradient -Δ_h Q + Df(Q)/ε², zeroed on fixed nodes."""
    g = -laplacian(values, h) + bulk_gradient(values, mp) / eps ** 2
    g[:, ~free] = 0.0
    return g


class _Preconditioner:
    """Inverse of (σ - Δ_h) on the free nodes with homogeneous Dirichlet data."""

    def __init__(self, grid, free, sigma):
        self.free = free
        self.sigma = sigma
        self.h = grid.h
        nd = grid.ndim
        inner = (slice(1, -1),) * nd
        self.inner = inner
        self.axes = tuple(range(1, nd + 1))
        lam = 0.0
        for ax, d in enumerate(grid.dims):
            n = d - 2
            k = np.arange(1, n + 1)
            lk = 4.0 / grid.h ** 2 * np.sin(np.pi * k / (2.0 * (n + 1))) ** 2
            shape = [1] * nd
            shape[ax] = -1
            lam = lam + lk.reshape(shape)
        self.den = sigma + lam
        box_free = np.zeros(grid.dims, dtype=bool)
        box_free[inner] = True
        self.box = bool(np.array_equal(free, box_free))

    def _dst_solve(self, g):
        out = np.zeros_like(g)
        gi = g[(slice(None),) + self.inner]
        out[(slice(None),) + self.inner] = fft.idstn(
            fft.dstn(gi, type=1, axes=self.axes) / self.den, type=1, axes=self.axes)
        return out

    def __call__(self, g):
        if self.box:
            return self._dst_solve(g)
        # general fixed set: CG on the free nodes, box solve as preconditioner
        free = self.free
        shape = g.shape
        nfree = int(free.sum())

        def op(v):
            u = np.zeros(shape)
            u[:, free] = v.reshape(5, nfree)
            r = self.sigma * u - laplacian(u, self.h)
            return r[:, free].ravel()

        def prec(v):
            u = np.zeros(shape)
            u[:, free] = v.reshape(5, nfree)
            return self._dst_solve(u)[:, free].ravel()

        n = 5 * nfree
        A = LinearOperator((n, n), matvec=op, dtype=float)
        M = LinearOperator((n, n), matvec=prec, dtype=float)
        x, _ = cg(A, g[:, free].ravel(), M=M, rtol=1e-10, maxiter=200)
        out = np.zeros(shape)
        out[:, free] = x.reshape(5, nfree)
        return out


def _vdot(a, b):
    return float(np.vdot(a, b))


def minimize(init, opts=None, raise_on_fail=False):
    """Minimize E_ε from ``init`` keeping fixed nodes bit-identical.

    Returns (field, ConvergenceReport).  When max_iters is hit the last
    iterate is returned with ``report.converged == False`` (or NotConverged
    is raised if ``raise_on_fail``).
    """
    from .qf1 import write_qf1  # local import: qf1 depends on field only

    opts = opts or SolveOptions()
    g0 = init.grid
    h, eps, mp = g0.h, init.epsilon, init.mp
    if not np.all(init.boundary_mask[g0.edge_mask()]):
        raise ValueError("grid edge nodes must be fixed")
    free = ~init.boundary_mask
    Q = np.array(init.values)
    if opts.noise > 0:
        rng = np.random.default_rng(opts.seed)
        Q[:, free] += opts.noise * rng.standard_normal((5, int(free.sum())))
    dv = h ** g0.ndim
    report = ConvergenceReport(opts.scheme, opts.seed)
    bound = norm_bound(mp)

    lip = bulk_lipschitz(mp, bound)
    stab = 0.5 * lip
    sigma = (0.0 if not np.isfinite(opts.tau) else 1.0 / opts.tau) + stab / eps ** 2
    precond = _Preconditioner(g0, free, sigma) if opts.scheme != "explicit" else None
    tau_explicit = opts.step_safety * min(h * h / (2 * g0.ndim), eps * eps / lip)

    E = discrete_energy(Q, h, eps, mp)
    g = energy_gradient(Q, h, eps, mp, free)
    hist_s, hist_y = [], []
    t = 1.0
    step_taken = 0.0

    def record(E, res, step):
        report.energies.append(float(E))
        report.residuals.append(float(res))
        report.steps.append(float(step))
        report.max_norms.append(float(np.sqrt(np.max(np.sum(Q * Q, axis=0)))))

    for it in range(opts.max_iters + 1):
        if not np.isfinite(E):
            raise NonFiniteEnergy("energy is not finite at iteration %d" % it)
        res = eps * eps * float(np.sqrt(np.max(np.sum(g * g, axis=0))))
        record(E, res, step_taken)
        if opts.log_every and it % opts.log_every == 0:
            log.info("iter %d energy %.10g residual %.3e step %.3e", it, E, res, step_taken)
            if opts.checkpoint:
                write_qf1(opts.checkpoint, init.with_values(Q))
        if res <= opts.residual_tol:
            report.converged = True
            break
        if it == opts.max_iters:
            break

        if opts.scheme == "explicit":
            d = -g
            t_try = tau_explicit
        elif opts.scheme == "semi-implicit":
            d = -precond(g)
            t_try = min(1.0, 2.0 * t)
        else:
            d = -_lbfgs_direction(g, hist_s, hist_y, precond)
            t_try = 1.0
        gd = _vdot(g, d) * dv
        if gd >= 0:  # not a descent direction: restart from the preconditioned gradient
            hist_s.clear()
            hist_y.clear()
            d = -precond(g) if precond else -g
            gd = _vdot(g, d) * dv

        t = t_try
        while True:
            Qn = Q + t * d
            En = discrete_energy(Qn, h, eps, mp)
            if np.isfinite(En) and En <= E + 1e-4 * t * gd:
                break
            t *= 0.5
            if t < 1e-14 * max(1.0, t_try):
                if np.isfinite(En) and En <= E:
                    break
                if not np.isfinite(En):
                    raise NonFiniteEnergy("no finite energy along the search direction")
                report.message = "line search stalled"
                Qn = None
                break
        if Qn is None:
            break
        gn = energy_gradient(Qn, h, eps, mp, free)
        if opts.scheme == "lbfgs":
            s, y = t * d, gn - g
            sy = _vdot(s, y)
            if sy > 1e-12 * np.sqrt(_vdot(s, s) * _vdot(y, y)):
                hist_s.append(s)
                hist_y.append(y)
                if len(hist_s) > opts.history:
                    hist_s.pop(0)
                    hist_y.pop(0)
        Q, E, g = Qn, En, gn
        step_taken = t
        report.iterations = it + 1

    report.final_residual = report.residuals[-1]
    if not report.converged and not report.message:
        report.message = "max_iters reached"
    out = init.with_values(Q)
    if not report.converged and raise_on_fail:
        raise NotConverged(report.message, out, report)
    return out, report


def _lbfgs_direction(g, hist_s, hist_y, precond):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(hist_s), reversed(hist_y)):
        rho = 1.0 / _vdot(y, s)
        a = rho * _vdot(s, q)
        q -= a * y
        alphas.append((rho, a))
    r = precond(q)
    for (s, y), (rho, a) in zip(zip(hist_s, hist_y), reversed(alphas)):
        b = rho * _vdot(y, r)
        r += s * (a - b)
    return r


def flow_step(fq, tau):
    """One explicit step Q <- Q - τ(-Δ_h Q + Df(Q)/ε²) on the free nodes."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return fq
    free = ~fq.boundary_mask
    g = energy_gradient(np.array(fq.values), fq.grid.h, fq.epsilon, fq.mp, free)
    return fq.with_values(fq.values - tau * g)


def explicit_step_bound(fq, step_safety=1.0):
    lip = bulk_lipschitz(fq.mp, norm_bound(fq.mp))
    return step_safety * min(fq.grid.h ** 2 / (2 * fq.grid.ndim), fq.epsilon ** 2 / lip)


def continuation_sweep(start, eps_list, opts=None):
    """Solve for each ε (strictly decreasing), warm-starting from the previous one.

    Returns a list of (field, report) pairs; a failed ε is recorded as
    (None, exception) and the sweep continues from the last good field.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if min(eps_list) < 2 * start.grid.h:
        raise ValueError("every ε must be at least 2h")
    out = []
    current = start
    for eps in eps_list:
        try:
            fq, rep = minimize(current.with_values(current.values, epsilon=eps), opts)
        except (NonFiniteEnergy, NotConverged) as exc:
            out.append((None, exc))
            continue
        out.append((fq, rep))
        current = fq
    return out


@dataclass
class PerturbationAudit:
    trials: int
    worst_change: float
    worst_curvature: float

    @property
    def passed(self):
        return self.worst_curvature >= 0.0


def perturbation_audit(fq, trials=8, amplitude=1e-3, seed=0):
    """Random free-node perturbations δ of a converged field.

    Reports the smallest E(Q ± δ) - E(Q) and the smallest second difference
    E(Q+δ) + E(Q-δ) - 2E(Q).  A local minimizer has nonnegative second
    differences; the first quantity also carries the O(residual·δ) term.
    """
    g = fq.grid
    h, eps, mp = g.h, fq.epsilon, fq.mp
    Q = np.array(fq.values)
    free = ~fq.boundary_mask
    E0 = discrete_energy(Q, h, eps, mp)
    rng = np.random.default_rng(seed)
    worst_change, worst_curv = np.inf, np.inf
    for _ in range(trials):
        d = np.zeros_like(Q)
        d[:, free] = amplitude * rng.standard_normal((5, int(free.sum())))
        ep = discrete_energy(Q + d, h, eps, mp)
        em = discrete_energy(Q - d, h, eps, mp)
        worst_change = min(worst_change, ep - E0, em - E0)
        worst_curv = min(worst_curv, ep + em - 2 * E0)
    return PerturbationAudit(trials, float(worst_change), float(worst_curv))
