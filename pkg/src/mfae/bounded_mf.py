"""Mean-field predictions for bounded activations on two-block spectra.

The limiting law of the weights factorizes into two radial coordinates,
one per block.  At large dimension their evolution closes into two
deterministic scalars (the fast path used for all predictions); at finite
dimension the radii stay random through their chi-distributed initial
values, and a particle cloud integrates the measure-valued flow with the
chi expectations taken by quadrature.
"""

import math
from dataclasses import dataclass

import numpy as np

from .activations import gaussian_derivative_mean
from .rng import stream

__all__ = [
    "QKernel",
    "BoundedMfState",
    "ParticleCloud",
    "IntegrationError",
    "q_check",
    "integrate_two_scalar",
    "integrate_particles",
    "bounded_risk",
    "out_of_sample_risk",
    "sphere_mc_q",
]

# Beyond this dimension the chi variables are treated as point masses;
# below, the chi expectations use per-axis Gauss-Legendre quadrature.
POINT_MASS_DIM = 200
CHI_QUAD_NODES = 32
FD_STEP = 1e-6
STATE_LIMIT = 1e6


class IntegrationError(RuntimeError):
    """RK4 state escaped the stable region; carries the failing time."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"radial ODE integration became unstable at t = {t:g}")


@dataclass(frozen=True)
class BoundedMfState:
    """Deterministic radial pair of the large-d two-scalar reduction."""

    r1: float
    r2: float
    t: float


@dataclass(frozen=True)
class ParticleCloud:
    """Empirical cloud of radial pairs approximating the radial law."""

    r1: np.ndarray
    r2: np.ndarray
    t: float

    @property
    def n_particles(self):
        return self.r1.shape[0]


class QKernel:
    """Large-d reduction kernels for a two-block law.

    q1(a, b) = (a/alpha1) * E[sigma'(s g)],  s = sqrt(a^2/alpha1 + b^2/alpha2),
    and symmetrically for q2.  Partial derivatives are analytic for ReLU
    (the Gaussian mean is constant) and central differences otherwise.
    """

    def __init__(self, activation, alpha1, alpha2):
        if not (0 < alpha1 < 1 and 0 < alpha2 < 1):
            raise ValueError("alpha weights must lie in (0, 1)")
        if abs(alpha1 + alpha2 - 1.0) > 1e-12:
            raise ValueError("alpha1 + alpha2 must equal 1")
        self.activation = activation
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)

    @property
    def phi_const(self):
        return self.activation.gauss_derivative_constant

    def phi(self, s):
        """E_{g~N(0,1)}[sigma'(s g)] on nonnegative s (scalar or array)."""
        return gaussian_derivative_mean(self.activation, s)

    def _s(self, a, b):
        return np.sqrt(np.square(a) / self.alpha1 + np.square(b) / self.alpha2)

    def q(self, a, b, phi=None):
        """(q1, q2) at (a, b); a custom phi evaluator may be supplied."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.phi_const is not None:
            return self.phi_const * a / self.alpha1, self.phi_const * b / self.alpha2
        phi_s = (phi or self.phi)(self._s(a, b))
        return a / self.alpha1 * phi_s, b / self.alpha2 * phi_s

    def q_partials(self, a, b, phi=None):
        """(d1q1, d2q1, d1q2, d2q2) at (a, b)."""
        if self.phi_const is not None:
            shape = np.broadcast_shapes(np.shape(a), np.shape(b))
            d1q1 = np.broadcast_to(self.phi_const / self.alpha1, shape)
            d2q2 = np.broadcast_to(self.phi_const / self.alpha2, shape)
            zero = np.zeros(shape)
            return d1q1, zero, zero, d2q2
        h = FD_STEP
        q1_ap, q2_ap = self.q(a + h, b, phi)
        q1_am, q2_am = self.q(a - h, b, phi)
        q1_bp, q2_bp = self.q(a, b + h, phi)
        q1_bm, q2_bm = self.q(a, b - h, phi)
        inv = 0.5 / h
        return (
            (q1_ap - q1_am) * inv,
            (q1_bp - q1_bm) * inv,
            (q2_ap - q2_am) * inv,
            (q2_bp - q2_bm) * inv,
        )


def q_check(kernel, a, b):
    """Kernel pair (q1, q2) at nonnegative arguments (the spec surface)."""
    if np.any(np.asarray(a) < 0) or np.any(np.asarray(b) < 0):
        raise ValueError("kernel arguments must be nonnegative")
    q1, q2 = kernel.q(a, b)
    if np.ndim(q1) == 0:
        return float(q1), float(q2)
    return q1, q2


def _two_scalar_rhs(kernel, s1, s2, l2, r1, r2):
    a1, a2 = kernel.alpha1, kernel.alpha2
    a1r = math.sqrt(a1)
    a2r = math.sqrt(a2)
    a = s1 * a1r * r1
    b = s2 * a2r * r2
    if kernel.phi_const is not None:
        q1, q2 = kernel.q(a, b)
        d1q1, d2q1, d1q2, d2q2 = kernel.q_partials(a, b)
    else:
        # one batched quadrature call covers the kernels and all four
        # central-difference shifts of this evaluation point
        h = FD_STEP
        s5 = kernel._s(
            np.array([a, a + h, a - h, a, a]), np.array([b, b, b, b + h, b - h])
        )
        p0, pa1, pa2, pb1, pb2 = kernel.phi(s5)
        q1 = a / a1 * p0
        q2 = b / a2 * p0
        inv = 0.5 / h
        d1q1 = ((a + h) * pa1 - (a - h) * pa2) * inv / a1
        d2q1 = a * (pb1 - pb2) * inv / a1
        d1q2 = b * (pa1 - pa2) * inv / a2
        d2q2 = ((b + h) * pb1 - (b - h) * pb2) * inv / a2
    delta1 = r1 * q1 - s1 * a1r
    delta2 = r2 * q2 - s2 * a2r
    dr1 = -delta1 * (q1 + s1 * a1r * r1 * d1q1) - delta2 * s1 * a1r * r2 * d1q2 - 2.0 * l2 * r1
    dr2 = -delta2 * (q2 + s2 * a2r * r2 * d2q2) - delta1 * s2 * a2r * r1 * d2q1 - 2.0 * l2 * r2
    return float(dr1), float(dr2)


def default_step(sigma1_sq, sigma2_sq, l2):
    """Fixed RK4 step: 1e-3 * min(1, 1/(S1^2 + S2^2 + 2*l2))."""
    return 1e-3 * min(1.0, 1.0 / (sigma1_sq + sigma2_sq + 2.0 * l2))


def _check_grid(t_grid):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-d sequence")
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must ascend from 0")
    return t_grid


def _rk4_span(state, t0, t1, h, rhs):
    """Advance state over [t0, t1] with ceil((t1-t0)/h) equal RK4 steps."""
    n_sub = max(1, math.ceil((t1 - t0) / h - 1e-12))
    dt = (t1 - t0) / n_sub
    for _ in range(n_sub):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * dt * k1)
        k3 = rhs(state + 0.5 * dt * k2)
        k4 = rhs(state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state


def integrate_two_scalar(kernel, sigma1_sq, sigma2_sq, l2, r0, t_grid, step=None):
    """Integrate the deterministic two-scalar radial reduction.

    Starts from r_j = r0 * sqrt(alpha_j) and returns one BoundedMfState per
    grid time.  Fixed-step RK4; each grid interval is covered by equal
    substeps no longer than the step size, so runs are reproducible and
    land on the grid exactly.
    """
    t_grid = _check_grid(t_grid)
    s1 = math.sqrt(sigma1_sq)
    s2 = math.sqrt(sigma2_sq)
    h = step if step is not None else default_step(sigma1_sq, sigma2_sq, l2)

    def rhs(state):
        dr1, dr2 = _two_scalar_rhs(kernel, s1, s2, l2, state[0], state[1])
        return np.array([dr1, dr2])

    state = np.array([r0 * math.sqrt(kernel.alpha1), r0 * math.sqrt(kernel.alpha2)])
    out = [BoundedMfState(r1=float(state[0]), r2=float(state[1]), t=float(t_grid[0]))]
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        state = _rk4_span(state, t0, t1, h, rhs)
        if not np.all(np.isfinite(state)) or np.abs(state).max() > STATE_LIMIT:
            raise IntegrationError(t1)
        out.append(BoundedMfState(r1=float(state[0]), r2=float(state[1]), t=float(t1)))
    return out


# ---------------------------------------------------------------------------
# chi quadrature and the finite-d particle method


def _chi_mean(df):
    return math.sqrt(2.0) * math.exp(math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0))


def _chi_log_pdf(z, df):
    return (
        (1.0 - df / 2.0) * math.log(2.0)
        + (df - 1.0) * np.log(z)
        - 0.5 * z * z
        - math.lgamma(df / 2.0)
    )


def _scaled_chi_quadrature(sigma, df, dim, nodes):
    """Nodes/weights for E over sigma * chi_df / sqrt(dim), weights sum to 1."""
    mean = _chi_mean(df)
    sd = math.sqrt(max(df - mean * mean, 1e-12))
    lo = max(mean - 8.0 * sd, 1e-9)
    hi = mean + 8.0 * sd
    x, w = np.polynomial.legendre.leggauss(nodes)
    z = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    weights = 0.5 * (hi - lo) * w * np.exp(_chi_log_pdf(z, df))
    weights /= weights.sum()
    return sigma * z / math.sqrt(dim), weights


class _PhiTable:
    """Linear-interpolation tables for phi and its slope, for big arrays.

    Exact quadrature per particle per chi node would cost as much as the
    training runs themselves; on a 65k uniform grid the interpolation error
    is ~3e-9 on phi and ~4e-9 on the central-difference slope, both far
    inside the particle method's own O(P^-1/2) noise.
    """

    def __init__(self, kernel, s_max, points=65537):
        self.kernel = kernel
        self.points = points
        self._rebuild(max(s_max, 1.0))

    def _rebuild(self, s_max):
        self.s_max = s_max
        self.grid = np.linspace(0.0, s_max, self.points)
        self.step = self.grid[1] - self.grid[0]
        self.values = self.kernel.phi(self.grid)
        slope = np.empty_like(self.values)
        slope[1:-1] = (self.values[2:] - self.values[:-2]) / (2.0 * self.step)
        slope[0] = 0.0  # phi is even in s, so the slope vanishes at 0
        slope[-1] = slope[-2]
        self.slopes = slope

    def _locate(self, s):
        peak = float(s.max()) if s.size else 0.0
        if peak > self.s_max:
            self._rebuild(1.25 * peak)
        pos = s * (1.0 / self.step)
        idx = pos.astype(np.int64)
        np.clip(idx, 0, self.points - 2, out=idx)
        frac = pos - idx
        return idx, frac

    def __call__(self, s):
        idx, frac = self._locate(s)
        return self.values[idx] * (1.0 - frac) + self.values[idx + 1] * frac

    def with_slope(self, s):
        """(phi(s), phi'(s)) sharing one index computation."""
        idx, frac = self._locate(s)
        phi = self.values[idx] * (1.0 - frac) + self.values[idx + 1] * frac
        dphi = self.slopes[idx] * (1.0 - frac) + self.slopes[idx + 1] * frac
        return phi, dphi


def _cloud_rhs(kernel, l2, chi1, w1, chi2, w2, phi):
    """Vectorized drift of the radial particle cloud.

    chi nodes enter through both the ensemble deltas and each particle's
    own kernel arguments, so the chi expectation couples them; the relu
    branch collapses every matrix to scalar coefficients because phi is
    constant and the cross partials vanish.
    """
    a1, a2 = kernel.alpha1, kernel.alpha2
    nodes1 = chi1[:, None] * np.ones_like(chi2)[None, :]
    nodes2 = np.ones_like(chi1)[:, None] * chi2[None, :]
    weights = (w1[:, None] * w2[None, :]).ravel()
    c1 = nodes1.ravel()
    c2 = nodes2.ravel()

    if kernel.phi_const is not None:
        phi_c = kernel.phi_const

        def rhs(state):
            r1, r2 = state
            m1 = float(np.mean(r1 * r1))
            m2 = float(np.mean(r2 * r2))
            delta1 = c1 * (phi_c * m1 / a1 - 1.0)
            delta2 = c2 * (phi_c * m2 / a2 - 1.0)
            coeff1 = 2.0 * phi_c / a1 * float(np.dot(weights, delta1 * c1))
            coeff2 = 2.0 * phi_c / a2 * float(np.dot(weights, delta2 * c2))
            return np.array([-(coeff1 + 2.0 * l2) * r1, -(coeff2 + 2.0 * l2) * r2])

        return rhs

    table = phi if isinstance(phi, _PhiTable) else None

    def rhs(state):
        r1, r2 = state
        a = c1[:, None] * r1[None, :]
        b = c2[:, None] * r2[None, :]
        inv_p = 1.0 / r1.size
        if table is None:
            q1, q2 = kernel.q(a, b, phi=phi)
            d1q1, d2q1, d1q2, d2q2 = kernel.q_partials(a, b, phi=phi)
        else:
            # tabulated phi and slope, exact chain rule for the partials
            s = kernel._s(a, b)
            p, dp = table.with_slope(s)
            ratio = np.divide(dp, s, out=np.zeros_like(dp), where=s > 0.0)
            q1 = a / a1 * p
            q2 = b / a2 * p
            d1q1 = p / a1 + (a * a) * ratio / (a1 * a1)
            d2q2 = p / a2 + (b * b) * ratio / (a2 * a2)
            d2q1 = (a * b) * ratio / (a1 * a2)
            d1q2 = d2q1
        delta1 = inv_p * (q1 @ r1) - c1
        delta2 = inv_p * (q2 @ r2) - c2
        wd1 = weights * delta1
        wd2 = weights * delta2
        drift1 = -(
            wd1 @ (q1 + a * d1q1) + ((wd2 * c1) @ d1q2) * r2
        ) - 2.0 * l2 * r1
        drift2 = -(
            wd2 @ (q2 + b * d2q2) + ((wd1 * c2) @ d2q1) * r1
        ) - 2.0 * l2 * r2
        return np.array([drift1, drift2])

    return rhs


def _chi_setup(kernel, sigma1_sq, sigma2_sq, d1, d2, nodes):
    s1 = math.sqrt(sigma1_sq)
    s2 = math.sqrt(sigma2_sq)
    dim = d1 + d2
    if dim > POINT_MASS_DIM:
        chi1 = np.array([s1 * math.sqrt(kernel.alpha1)])
        chi2 = np.array([s2 * math.sqrt(kernel.alpha2)])
        w1 = np.array([1.0])
        w2 = np.array([1.0])
    else:
        chi1, w1 = _scaled_chi_quadrature(s1, d1, dim, nodes)
        chi2, w2 = _scaled_chi_quadrature(s2, d2, dim, nodes)
    return chi1, w1, chi2, w2


def integrate_particles(
    kernel,
    sigma1_sq,
    sigma2_sq,
    d1,
    d2,
    l2,
    r0,
    n_particles,
    seed,
    t_grid,
    step=None,
    chi_nodes=CHI_QUAD_NODES,
):
    """Self-consistent particle integration of the finite-d radial flow.

    Initial radii follow r0 * chi_{d_j} / sqrt(d); beyond POINT_MASS_DIM
    both the initialization and the chi expectation collapse to their
    large-d point masses (and with a single particle the flow then reduces
    to integrate_two_scalar exactly).  Returns one ParticleCloud per grid
    time.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    t_grid = _check_grid(t_grid)
    dim = d1 + d2
    if abs(d1 / dim - kernel.alpha1) > 1e-9:
        raise ValueError("kernel alpha1 inconsistent with d1/(d1+d2)")
    h = step if step is not None else default_step(sigma1_sq, sigma2_sq, l2)

    if dim > POINT_MASS_DIM:
        r1 = np.full(n_particles, r0 * math.sqrt(kernel.alpha1))
        r2 = np.full(n_particles, r0 * math.sqrt(kernel.alpha2))
    else:
        rng = stream(seed)
        r1 = r0 / math.sqrt(dim) * np.sqrt(rng.chisquare(d1, size=n_particles))
        r2 = r0 / math.sqrt(dim) * np.sqrt(rng.chisquare(d2, size=n_particles))

    chi1, w1, chi2, w2 = _chi_setup(kernel, sigma1_sq, sigma2_sq, d1, d2, nodes=chi_nodes)
    exact_phi = chi1.size * chi2.size == 1 or kernel.phi_const is not None
    if exact_phi:
        phi = kernel.phi
    else:
        s_guess = max(chi1.max(), chi2.max()) * max(r0, 2.0) * 4.0
        phi = _PhiTable(kernel, s_guess / math.sqrt(min(kernel.alpha1, kernel.alpha2)))
    rhs = _cloud_rhs(kernel, l2, chi1, w1, chi2, w2, phi)

    state = np.stack([r1, r2])
    clouds = [ParticleCloud(r1=state[0].copy(), r2=state[1].copy(), t=float(t_grid[0]))]
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        state = _rk4_span(state, t0, t1, h, rhs)
        if not np.all(np.isfinite(state)) or np.abs(state).max() > STATE_LIMIT:
            raise IntegrationError(t1)
        clouds.append(ParticleCloud(r1=state[0].copy(), r2=state[1].copy(), t=float(t1)))
    return clouds


# ---------------------------------------------------------------------------
# risks


def _state_deltas(kernel, r1, r2, sigma1_sq, sigma2_sq):
    s1 = math.sqrt(sigma1_sq)
    s2 = math.sqrt(sigma2_sq)
    a1r = math.sqrt(kernel.alpha1)
    a2r = math.sqrt(kernel.alpha2)
    q1, q2 = kernel.q(s1 * a1r * r1, s2 * a2r * r2)
    return r1 * q1 - s1 * a1r, r2 * q2 - s2 * a2r


def bounded_risk(kernel, state, sigma1_sq, sigma2_sq, d1=None, d2=None, chi_nodes=CHI_QUAD_NODES):
    """Predicted reconstruction error of a radial state.

    Two-scalar states use 0.5 * (D1^2 + D2^2) with the deterministic
    deltas; particle clouds evaluate E_chi of the ensemble deltas (block
    dimensions d1, d2 are then required to build the chi law).
    """
    if isinstance(state, ParticleCloud):
        if d1 is None or d2 is None:
            raise ValueError("particle-cloud risk needs the block dimensions d1, d2")
        chi1, w1, chi2, w2 = _chi_setup(kernel, sigma1_sq, sigma2_sq, d1, d2, nodes=chi_nodes)
        weights = (w1[:, None] * w2[None, :]).ravel()
        c1 = (chi1[:, None] * np.ones_like(chi2)[None, :]).ravel()
        c2 = (np.ones_like(chi1)[:, None] * chi2[None, :]).ravel()
        r1, r2 = state.r1, state.r2
        a = c1[:, None] * r1[None, :]
        b = c2[:, None] * r2[None, :]
        q1, q2 = kernel.q(a, b)
        inv_p = 1.0 / r1.size
        delta1 = inv_p * (q1 @ r1) - c1
        delta2 = inv_p * (q2 @ r2) - c2
        return 0.5 * float(weights @ (delta1 * delta1 + delta2 * delta2))
    delta1, delta2 = _state_deltas(kernel, state.r1, state.r2, sigma1_sq, sigma2_sq)
    return 0.5 * float(delta1 * delta1 + delta2 * delta2)


def out_of_sample_risk(kernel, state, sigma1_sq_q, sigma2_sq_q):
    """Reconstruction error of a trained two-scalar state on another law.

    The kernels are evaluated at the foreign spectrum's scales; when the
    foreign law equals the training law this is exactly bounded_risk.
    """
    delta1, delta2 = _state_deltas(kernel, state.r1, state.r2, sigma1_sq_q, sigma2_sq_q)
    return 0.5 * float(delta1 * delta1 + delta2 * delta2)


# ---------------------------------------------------------------------------
# finite-d validation oracle


def sphere_mc_q(act, a, b, d1, d2, n_samples, seed):
    """Monte-Carlo estimate of the exact finite-d kernel pair.

    q_j(a, b) = E[ k * w_j1 * sigma(k*a*w_11 + k*b*w_21) ], k = sqrt(d1+d2),
    with w_11, w_21 the first coordinates of independent uniform points on
    the two unit spheres (sampled via their Beta-distributed squares).
    Returns ((q1, q2), (se1, se2)).  Validation only; the production path
    is the large-d reduction in QKernel.
    """
    rng = stream(seed)
    kappa = math.sqrt(d1 + d2)
    w11 = _sphere_coordinate(rng, d1, n_samples)
    w21 = _sphere_coordinate(rng, d2, n_samples)
    act_val = act(kappa * (a * w11 + b * w21))
    v1 = kappa * w11 * act_val
    v2 = kappa * w21 * act_val
    est = (float(v1.mean()), float(v2.mean()))
    ses = (
        float(v1.std(ddof=1) / math.sqrt(n_samples)),
        float(v2.std(ddof=1) / math.sqrt(n_samples)),
    )
    return est, ses


def _sphere_coordinate(rng, dim, n):
    sq = rng.beta(0.5, (dim - 1) / 2.0, size=n)
    sign = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return sign * np.sqrt(sq)
