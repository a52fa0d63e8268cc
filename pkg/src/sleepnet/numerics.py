"""Numerical substrate: adaptive quadrature, the exponential integral,
compensated summation, n-fold convolution densities and histograms.

Everything here is a pure function of its arguments and deterministic,
so it is safe to call from any number of workers concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EULER_GAMMA = 0.5772156649015328606


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and limits shared by all quadrature routines."""

    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 60
    tail_mass_tol: float = 1e-9

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "tail_mass_tol"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be strictly positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_SPEC = QuadratureSpec()


class QuadratureError(ArithmeticError):
    """Quadrature did not converge; carries the best available estimate."""

    def __init__(self, message: str, estimate: float = math.nan):
        super().__init__(f"{message} (best estimate {estimate!r})")
        self.estimate = estimate


def _vectorized(f):
    """Adapt a scalar or vector callable to ndarray-in / ndarray-out."""
    state = {"vector": None}

    def call(xs: np.ndarray) -> np.ndarray:
        if state["vector"] is not False:
            try:
                ys = np.asarray(f(xs), dtype=float)
                if ys.shape == xs.shape:
                    state["vector"] = True
                    return ys
            except (TypeError, ValueError, IndexError):
                pass
            state["vector"] = False
        return np.fromiter((float(f(float(x))) for x in xs), dtype=float,
                           count=len(xs))

    return call


def _neumaier_step(s: float, c: float, x: float) -> tuple[float, float]:
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


def _adaptive_simpson_stack(fv, edges: np.ndarray, spec: QuadratureSpec,
                            noise_scale: float = 0.0) -> float:
    """Adaptive Simpson with Richardson extrapolation over a list of panels.

    All pending subintervals are processed as flat arrays so the integrand
    is evaluated in large batches.  Panels share the absolute tolerance in
    proportion to their width.

    Initial panel endpoints are sampled a 2^-40 relative inset inside the
    panel, so integrands with jumps exactly at the supplied edges (one-sided
    limits differing) still converge; the bias is far below the tolerances.

    ``noise_scale`` is the absolute rounding-noise amplitude of a single
    integrand evaluation (e.g. machine epsilon times the term magnitude of
    a cancelling series).  Refinement stops once the Richardson defect is
    at that noise level; without it, noisy integrands subdivide forever.
    """
    edges = np.asarray(edges, dtype=float)
    widths = np.diff(edges)
    if np.any(widths <= 0):
        raise ValueError("panel edges must be strictly increasing")
    a = edges[:-1].copy()
    b = edges[1:].copy()
    span = edges[-1] - edges[0]

    inset = 2.0 ** -40
    fa = fv(a + inset * widths)
    fb = fv(b - inset * widths)
    m = 0.5 * (a + b)
    fm = fv(m)
    f_scale = max(float(np.max(np.abs(fa))), float(np.max(np.abs(fb))),
                  float(np.max(np.abs(fm))), 1e-300)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    eps = np.maximum(spec.abs_tol * (b - a) / span,
                     spec.rel_tol * np.abs(whole))
    eps = np.maximum(eps, 1e-300)
    depth = np.zeros(len(a), dtype=np.int64)

    total, comp = 0.0, 0.0
    failed = False
    while len(a):
        if len(a) > 2_000_000:
            raise QuadratureError("pending-interval stack exploded",
                                  total + comp + float(np.sum(whole)))
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        fhalf = fv(np.concatenate([lm, rm]))
        if not np.all(np.isfinite(fhalf)):
            raise QuadratureError("integrand returned a non-finite value",
                                  total + comp + float(np.sum(whole)))
        flm, frm = fhalf[: len(a)], fhalf[len(a):]
        f_scale = max(f_scale, float(np.max(np.abs(fhalf))))
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        # floor at integrand rounding noise so noisy-but-converged panels
        # cannot split forever
        noise = (b - a) * max(100.0 * np.finfo(float).eps * f_scale,
                              4.0 * noise_scale)
        converged = np.abs(delta) <= np.maximum(15.0 * eps, noise)
        exhausted = depth >= spec.max_subdivisions
        accept = converged | exhausted
        failed = failed or bool(np.any(exhausted & ~converged))

        if np.any(accept):
            chunk = float(np.sum(left[accept] + right[accept]
                                 + delta[accept] / 15.0))
            total, comp = _neumaier_step(total, comp, chunk)

        keep = ~accept
        a, b, m = (np.concatenate([a[keep], m[keep]]),
                   np.concatenate([m[keep], b[keep]]),
                   np.concatenate([lm[keep], rm[keep]]))
        fa, fb, fm = (np.concatenate([fa[keep], fm[keep]]),
                      np.concatenate([fm[keep], fb[keep]]),
                      np.concatenate([flm[keep], frm[keep]]))
        whole = np.concatenate([left[keep], right[keep]])
        eps = np.concatenate([eps[keep] / 2.0, eps[keep] / 2.0])
        depth = np.concatenate([depth[keep] + 1, depth[keep] + 1])

    result = total + comp
    if failed:
        raise QuadratureError(
            f"no convergence after {spec.max_subdivisions} subdivisions", result)
    return result


def integrate_panel_doubling(fv, lo: float, hi: float, *,
                             abs_tol: float, rel_tol: float,
                             max_points: int = 16384) -> float:
    """Integrate a smooth integrand over one panel by composite Simpson
    with grid doubling and Richardson extrapolation.

    Unlike depth-adaptive splitting this scheme detects the rounding-noise
    plateau of the integrand: when doubling stops improving the defect the
    current extrapolation is returned instead of refining forever.  Meant
    for integrands whose evaluations are themselves quadratures, accurate
    only to some absolute noise level.
    """
    if not (hi > lo):
        raise ValueError("require hi > lo")
    width = hi - lo
    prev = None
    prev_err = math.inf
    n = 8
    while n <= max_points:
        xs = np.linspace(lo, hi, n + 1)
        xs[0] += width * 2.0 ** -40     # jump-at-edge tolerance
        xs[-1] -= width * 2.0 ** -40
        ys = fv(xs)
        if not np.all(np.isfinite(ys)):
            raise QuadratureError("integrand returned a non-finite value",
                                  math.nan)
        h = width / n
        s = h / 3.0 * (ys[0] + ys[-1] + 4.0 * float(np.sum(ys[1:-1:2]))
                       + 2.0 * float(np.sum(ys[2:-1:2])))
        if prev is not None:
            err = abs(s - prev) / 15.0
            value = s + (s - prev) / 15.0
            if err <= max(abs_tol, rel_tol * abs(s)):
                return value
            if n >= 64 and err >= 0.25 * prev_err:
                return value            # defect stopped shrinking: noise floor
            prev_err = err
        prev = s
        n *= 2
    raise QuadratureError("panel refinement exhausted", prev)


def integrate_adaptive(f, lo: float, hi: float,
                       spec: QuadratureSpec = DEFAULT_SPEC,
                       *, split_points=()) -> float:
    """Integrate f over [lo, hi] by adaptive Simpson quadrature.

    ``split_points`` lists interior abscissae (e.g. kinks of a piecewise
    integrand) at which the initial panels are cut before adaptation.
    Raises QuadratureError (carrying the best estimate) on non-convergence.
    """
    if not (lo < hi):
        raise ValueError("require lo < hi")
    interior = sorted(x for x in split_points if lo < x < hi)
    edges = np.array([lo, *interior, hi], dtype=float)
    edges = np.unique(edges)
    return _adaptive_simpson_stack(_vectorized(f), edges, spec)


def integrate_semi_infinite(f, lo: float,
                            spec: QuadratureSpec = DEFAULT_SPEC,
                            *, scale: float = 1.0) -> float:
    """Integrate f over [lo, inf) for integrands with (sub)exponential tails.

    The upper limit starts at lo + 10*scale and the integrated span doubles
    until the newest panel contributes less than ``tail_mass_tol`` of the
    running total.
    """
    if not (scale > 0):
        raise ValueError("scale must be positive")
    fv = _vectorized(f)
    hi = lo + 10.0 * scale
    total = _adaptive_simpson_stack(fv, np.array([lo, hi]), spec)
    for _ in range(40):
        new_hi = lo + 2.0 * (hi - lo)
        panel = _adaptive_simpson_stack(fv, np.array([hi, new_hi]), spec)
        total += panel
        hi = new_hi
        if abs(panel) < spec.tail_mass_tol * max(abs(total), 1e-300):
            return total
    raise QuadratureError("tail still contributing after 40 doublings", total)


def exp_integral_e1(z: float) -> float:
    """E1(z) = integral of exp(-t)/t from z to infinity, z > 0.

    Power series for z <= 1, modified-Lentz continued fraction above;
    relative error is at the 1e-14 level over the tested range.
    """
    if not (z > 0):
        raise ValueError("exp_integral_e1 requires z > 0")
    if z <= 1.0:
        total = -_EULER_GAMMA - math.log(z)
        term = 1.0
        for k in range(1, 60):
            term *= -z / k
            contrib = -term / k
            total += contrib
            if abs(contrib) < 1e-18 * abs(total):
                break
        return total
    # continued fraction e^{-z}/(z+1- 1/(z+3- 4/(z+5- ...)))
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 200):
        an = -i * i
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-z)


def compensated_sum(terms) -> tuple[float, float]:
    """Neumaier-compensated sum with a cancellation diagnostic.

    Returns (sum, cancellation_index) where the index is
    sum(|terms|) / max(|sum|, tiny); values near 1 mean well-conditioned,
    large values flag catastrophic cancellation.
    """
    s, c = 0.0, 0.0
    abs_total = 0.0
    for x in terms:
        x = float(x)
        s, c = _neumaier_step(s, c, x)
        abs_total += abs(x)
    result = s + c
    if abs_total == 0.0:
        return 0.0, 1.0
    return result, abs_total / max(abs(result), 1e-300)


@dataclass
class Histogram:
    """Fixed-width bin counts over [lo, hi); out-of-range samples count
    toward ``total`` but not toward any bin."""

    lo: float
    hi: float
    bin_width: float
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise ValueError("require hi > lo")
        if not (self.bin_width > 0):
            raise ValueError("bin_width must be positive")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if int(self.counts.sum()) > self.total:
            raise ValueError("bin counts exceed the recorded total")

    @classmethod
    def from_samples(cls, samples, lo: float, hi: float,
                     bin_width: float) -> "Histogram":
        samples = np.asarray(samples, dtype=float)
        n_bins = int(round((hi - lo) / bin_width))
        if n_bins < 1:
            raise ValueError("range shorter than one bin")
        hi = lo + n_bins * bin_width  # snap so bins tile [lo, hi) exactly
        idx = np.floor((samples - lo) / bin_width).astype(np.int64)
        in_range = (idx >= 0) & (idx < n_bins)
        counts = np.bincount(idx[in_range], minlength=n_bins)
        return cls(lo=lo, hi=hi, bin_width=bin_width, counts=counts,
                   total=len(samples))

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.bin_width * np.arange(len(self.counts) + 1)

    @property
    def in_range(self) -> int:
        return int(self.counts.sum())

    def density(self) -> np.ndarray:
        """Per-bin density; integrates to in_range/total over [lo, hi)."""
        if self.total == 0:
            return np.zeros(len(self.counts))
        return self.counts / (self.total * self.bin_width)


def trunc_exp_pdf(x, rho: float, r0: float) -> np.ndarray:
    """Density of an exponential(rho) conditioned on (0, r0]."""
    x = np.asarray(x, dtype=float)
    norm = -math.expm1(-rho * r0)
    out = np.where((x > 0) & (x <= r0), rho * np.exp(-rho * x) / norm, 0.0)
    # closed lower endpoint uses the right limit so grids sampled at 0 behave
    out = np.where(x == 0.0, rho / norm, out)
    return out


def trunc_exp_nfold_pdf(n: int, rho: float, r0: float,
                        grid: np.ndarray) -> np.ndarray:
    """Density of the sum of n iid truncated exponentials on a uniform grid.

    Computed by repeated trapezoid convolution; transparent O(n * G^2) cost.
    The grid must start at 0 with at least 64 points per r0; values are
    exact-to-trapezoid wherever x <= grid[-1] even if the support extends
    beyond the grid.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = np.asarray(grid, dtype=float)
    dx = grid[1] - grid[0]
    if not np.allclose(np.diff(grid), dx, rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform")
    if dx > r0 / 64.0:
        raise ValueError(
            f"grid too coarse: spacing {dx:g} exceeds r0/64 = {r0 / 64.0:g}")
    if grid[0] != 0.0:
        raise ValueError("grid must start at 0")

    base = trunc_exp_pdf(grid, rho, r0)
    # mean-of-limits sample at the r0 jump keeps the trapezoid rule O(dx^2)
    base_w = base.copy()
    at_jump = np.isclose(grid, r0, rtol=0.0, atol=1e-9 * r0)
    base_w[at_jump] *= 0.5
    out = base.copy()
    out_w = base_w
    for _ in range(n - 1):
        full = np.convolve(out_w, base_w)[: len(grid)]
        full -= 0.5 * (out_w[0] * base_w[: len(grid)] + out_w * base_w[0])
        out = full * dx
        out[0] = 0.0
        out_w = out
    return out
