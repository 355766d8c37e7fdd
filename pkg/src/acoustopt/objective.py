"""Parasitic-power loss, its adjoint gradient and frequency-quadrature objectives.

The loss at one frequency is the normalised power of every outgoing
propagating mode except the planar wave transmitted to the right.  Its
derivative with respect to an element density follows from one adjoint
solve per outgoing mode against the already factorised state matrix:

    dB_m / d alpha_E = z_m[E]^T (k^2 M_E - K_E) p[E] / a_in,
    A z_m = M^X v_m.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import DensityFilter, PenaltyConfig, penalty_value_grad
from .fem import FrequencyContext, Problem, StateSolution, _K_H, _K_R, _M_H, _M_R, assemble_bulk, solve_state
from .waves import AmplitudeSet, PowerSet, incident_amplitude, modal_amplitudes, outgoing_powers, power_factors

__all__ = [
    "FrequencyLoss",
    "AdjointSolution",
    "DesignGradient",
    "Evaluator",
    "adjoint_solves",
    "loss_weights",
    "cutoff_frequencies",
    "nudge_off_cutoffs",
    "GradCheck",
    "gradient_check",
    "reference_frequencies",
]


@dataclass(eq=False)
class FrequencyLoss:
    f: float
    value: float
    amplitudes: AmplitudeSet
    powers: PowerSet
    state: StateSolution


@dataclass(eq=False)
class AdjointSolution:
    """Adjoint fields, left modes first then right modes."""

    z_left: np.ndarray  # (n_dof, M_L^p)
    z_right: np.ndarray  # (n_dof, M_R^p)

    @property
    def z_vectors(self) -> list[np.ndarray]:
        return [self.z_left[:, m] for m in range(self.z_left.shape[1])] + [
            self.z_right[:, n] for n in range(self.z_right.shape[1])
        ]


@dataclass(eq=False)
class DesignGradient:
    g: np.ndarray
    f_sampled: float | None
    includes_penalty: bool
    value: float = float("nan")
    loss: float = float("nan")


def adjoint_solves(ctx: FrequencyContext) -> AdjointSolution:
    """Back-substitutions with right-hand sides ``M^X v_m`` for the propagating modes."""
    n = ctx.mesh.n_dof
    out = []
    for basis, mp in ((ctx.left, ctx.Mp_left), (ctx.right, ctx.Mp_right)):
        rhs = np.zeros((n, mp), dtype=complex)
        rhs[basis.nodes, :] = basis.projectors[:, :mp]
        out.append(ctx.solve(rhs).reshape(n, mp) if mp else rhs)
    return AdjointSolution(z_left=out[0], z_right=out[1])


def loss_weights(amps: AmplitudeSet, ctx: FrequencyContext):
    """Power weights of each outgoing amplitude in the loss (0 for the transmitted planar wave)."""
    wl, wr = power_factors(ctx)
    wl = wl.copy()
    wl[0] = 1.0
    wr = wr.copy()
    wr[0] = 0.0
    return wl, wr


def cutoff_frequencies(problem: Problem) -> np.ndarray:
    lam = np.concatenate([problem.left.eigenvalues[1:], problem.right.eigenvalues[1:]])
    return np.sort(problem.spec.c * np.sqrt(lam) / (2 * np.pi))


def nudge_off_cutoffs(f: float, cutoffs: np.ndarray, tol: float = 1.0) -> float:
    """Shift ``f`` by +tol Hz while it lies within ``tol`` of a modal cutoff."""
    for _ in range(len(cutoffs) + 1):
        if not np.any(np.abs(cutoffs - f) < tol):
            return f
        f += tol
    return f


@dataclass(eq=False)
class Evaluator:
    """Objective and gradient evaluations on one problem with one filter.

    ``evaluations`` counts primal factorisations; adjoint solves reuse them.
    """

    problem: Problem
    filter: DensityFilter
    evaluations: int = 0
    _tmats: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, mesh, radius: float = 1e-3, mode: str = "linear", p: float = 8.0):
        problem = Problem(mesh)
        return cls(problem=problem, filter=DensityFilter.for_mesh(mesh, radius=radius, mode=mode, p=p))

    @property
    def mesh(self):
        return self.problem.mesh

    @property
    def n_design(self) -> int:
        return self.mesh.n_design

    @property
    def epsilon(self) -> float:
        return self.filter.epsilon

    def densities(self, d) -> np.ndarray:
        """Design-cylinder densities ``F(d)``."""
        return self.filter.apply(d)

    def full_alpha(self, design_alpha) -> np.ndarray:
        return self.problem.full_alpha(np.clip(design_alpha, self.epsilon, 1.0))

    # -- per frequency ------------------------------------------------------
    def frequency_loss(self, alpha, f: float) -> FrequencyLoss:
        """``alpha`` is either a full per-element field or a BulkMatrices snapshot."""
        ctx = self.problem.context(alpha, f)
        sol = solve_state(ctx)
        self.evaluations += 1
        amps = modal_amplitudes(sol)
        powers = outgoing_powers(amps, ctx)
        return FrequencyLoss(f=float(f), value=powers.parasitic, amplitudes=amps, powers=powers, state=sol)

    def _element_operator(self, k: float):
        h = self.mesh.h
        return (k * k * h * h * _M_R - _K_R), (k * k * h ** 3 * _M_H - h * _K_H)

    def loss_gradient(self, loss: FrequencyLoss) -> np.ndarray:
        """Derivative of ``loss.value`` with respect to the design-cylinder densities."""
        ctx = loss.state.context
        adj = adjoint_solves(ctx)
        wl, wr = loss_weights(loss.amplitudes, ctx)
        a_in = incident_amplitude(ctx.left)
        # combine per-mode adjoints: d loss = 2 Re sum_m w_m conj(B_m) dB_m
        lam = adj.z_left @ (wl * np.conj(loss.amplitudes.B_left)) + adj.z_right @ (wr * np.conj(loss.amplitudes.B_right))
        lam /= a_in
        return self._sensitivity(ctx.k, loss.state.p, lam)

    def _sensitivity(self, k, p, lam) -> np.ndarray:
        mesh = self.mesh
        conn = mesh.elements[mesh.design_elements]
        r0 = mesh.element_origin[mesh.design_elements, 1]
        T_r, T_h = self._element_operator(k)
        P = p[conn]
        TP = r0[:, None] * (P @ T_r.T) + P @ T_h.T
        return 2.0 * np.real(np.sum(lam[conn] * TP, axis=1))

    def amplitude_gradients(self, loss: FrequencyLoss) -> tuple[np.ndarray, np.ndarray]:
        """Complex ``dB/d alpha`` per propagating mode, shape ``(modes, N^D)`` for each side."""
        ctx = loss.state.context
        adj = adjoint_solves(ctx)
        a_in = incident_amplitude(ctx.left)
        mesh = self.mesh
        conn = mesh.elements[mesh.design_elements]
        r0 = mesh.element_origin[mesh.design_elements, 1]
        T_r, T_h = self._element_operator(ctx.k)
        P = loss.state.p[conn]
        TP = r0[:, None] * (P @ T_r.T) + P @ T_h.T
        out = []
        for Z in (adj.z_left, adj.z_right):
            out.append(np.einsum("eim,ei->me", Z[conn], TP) / a_in)
        return out[0], out[1]

    def frequency_gradient(self, alpha, f: float) -> tuple[float, np.ndarray]:
        loss = self.frequency_loss(alpha, f)
        return loss.value, self.loss_gradient(loss)

    # -- with respect to raw design variables -----------------------------
    def design_gradient(self, d, f: float, cfg: PenaltyConfig = PenaltyConfig()) -> DesignGradient:
        a = self.densities(d)
        loss = self.frequency_loss(self.full_alpha(a), f)
        g_alpha = self.loss_gradient(loss)
        pen, pen_grad = penalty_value_grad(a, cfg)
        g = self.filter.backprop(d, g_alpha + pen_grad)
        return DesignGradient(g=g, f_sampled=float(f), includes_penalty=cfg.gamma != 0, value=loss.value + pen, loss=loss.value)

    def objective(self, d, freqs, cfg: PenaltyConfig = PenaltyConfig(), mode: str = "sum", gradient: bool = True):
        """Quadrature objective over ``freqs`` plus penalty.

        ``mode="sum"`` adds the per-frequency losses (the optimisation
        objective); ``mode="mean"`` divides them by the number of
        frequencies.  Returns ``(value, gradient, losses)`` with gradient
        ``None`` when not requested.
        """
        if mode not in ("sum", "mean"):
            raise ValueError(f"mode must be 'sum' or 'mean', got {mode!r}")
        freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
        if freqs.size == 0:
            raise ValueError("no frequencies given")
        a = self.densities(d)
        bulk = assemble_bulk(self.mesh, self.full_alpha(a))
        scale = 1.0 if mode == "sum" else 1.0 / freqs.size
        losses = np.empty(freqs.size)
        g_alpha = np.zeros(self.n_design) if gradient else None
        for i, f in enumerate(freqs):  # fixed order keeps sums reproducible
            loss = self.frequency_loss(bulk, f)
            losses[i] = loss.value
            if gradient:
                g_alpha += scale * self.loss_gradient(loss)
        pen, pen_grad = penalty_value_grad(a, cfg)
        value = scale * float(np.sum(losses)) + pen
        grad = None
        if gradient:
            grad = self.filter.backprop(d, g_alpha + pen_grad)
        return value, grad, losses

    def quadrature_objective(self, d, freqs, cfg: PenaltyConfig = PenaltyConfig(), mode: str = "sum") -> float:
        return self.objective(d, freqs, cfg, mode=mode, gradient=False)[0]

    def mean_loss(self, design_alpha, freqs) -> float:
        """Mean loss of a fixed density field (no filter, no penalty)."""
        bulk = assemble_bulk(self.mesh, self.full_alpha(design_alpha))
        return float(np.mean([self.frequency_loss(bulk, f).value for f in np.asarray(freqs, dtype=float)]))


def reference_frequencies(f_min: float = 4000.0, f_max: float = 16000.0, count: int = 150) -> np.ndarray:
    return np.linspace(f_min, f_max, count)


@dataclass
class GradCheck:
    elements: np.ndarray
    adjoint: np.ndarray
    finite_difference: np.ndarray

    @property
    def relative_errors(self) -> np.ndarray:
        scale = np.maximum(np.abs(self.adjoint), np.abs(self.finite_difference))
        scale[scale == 0] = 1.0
        return np.abs(self.adjoint - self.finite_difference) / scale

    @property
    def max_relative_error(self) -> float:
        return float(np.max(self.relative_errors))


def gradient_check(evaluator: Evaluator, d, f: float, cfg: PenaltyConfig = PenaltyConfig(), n_elements: int = 10, step: float = 1e-5, seed: int = 0) -> GradCheck:
    """Compare the adjoint design gradient with central differences on random design variables."""
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(d.size, size=min(n_elements, d.size), replace=False))
    g = evaluator.design_gradient(d, f, cfg).g[idx]
    fd = np.empty(idx.size)
    for i, e in enumerate(idx):
        vals = []
        for s in (step, -step):
            dp = d.copy()
            dp[e] += s
            vals.append(evaluator.objective(dp, [f], cfg, gradient=False)[0])
        fd[i] = (vals[0] - vals[1]) / (2 * step)
    return GradCheck(elements=idx, adjoint=g, finite_difference=fd)
