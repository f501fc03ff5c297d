"""Alternative smooth ansätze for quality versus size.

Polynomials go through the linear least-squares kernel. The power law
``C0 + C1 N**C2`` and the shifted logarithm ``D0 + D1 ln(N + D2)`` are fitted
with a Levenberg-Marquardt loop using analytic Jacobians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConvergenceError, CritMassError, DomainError, ValidationError
from .ols import fit_linear, r_squared

ANSATZE = ("quadratic", "cubic", "power", "logshift")
ARITY = {"quadratic": 3, "cubic": 4, "power": 3, "logshift": 3}
PARAM_NAMES = {
    "piecewise": ("a1", "b1", "a2", "b2", "N_c"),
    "quadratic": ("A0", "A1", "A2"),
    "cubic": ("B0", "B1", "B2", "B3"),
    "power": ("C0", "C1", "C2"),
    "logshift": ("D0", "D1", "D2"),
}

LAMBDA0 = 1e-3
LAMBDA_MAX = 1e16
MAX_ITER = 500
FTOL = 1e-12
GTOL = 1e-8
SHIFT_MARGIN = 1e-6
N_RESTARTS = 8
RESTART_SEED = 7


@dataclass(frozen=True)
class AnsatzFit:
    ansatz: str
    parameters: np.ndarray
    standard_errors: np.ndarray
    r_squared: float
    converged: bool
    iterations: int
    sse: float = math.nan
    gradient_norm: float = 0.0
    start: int = 0

    def __post_init__(self):
        if len(self.parameters) != ARITY[self.ansatz]:
            raise ValidationError(f"{self.ansatz} takes {ARITY[self.ansatz]} parameters")

    def named(self) -> dict:
        return dict(zip(PARAM_NAMES[self.ansatz], map(float, self.parameters)))

    def named_errors(self) -> dict:
        return dict(zip(PARAM_NAMES[self.ansatz], map(float, self.standard_errors)))

    def predict(self, N):
        return model(self.ansatz, self.parameters, N)


def model(ansatz, p, N):
    N = np.asarray(N, dtype=float)
    if ansatz in ("quadratic", "cubic"):
        return np.polynomial.polynomial.polyval(N, p)
    if ansatz == "power":
        return p[0] + p[1] * N ** p[2]
    if ansatz == "logshift":
        return p[0] + p[1] * np.log(N + p[2])
    raise ValidationError(f"unknown ansatz {ansatz!r}")


def jacobian(ansatz, p, N):
    """d model / d parameters, one row per observation."""
    N = np.asarray(N, dtype=float)
    if ansatz in ("quadratic", "cubic"):
        return np.vander(N, ARITY[ansatz], increasing=True)
    if ansatz == "power":
        Np = N ** p[2]
        return np.column_stack([np.ones_like(N), Np, p[1] * Np * np.log(N)])
    if ansatz == "logshift":
        u = N + p[2]
        return np.column_stack([np.ones_like(N), np.log(u), p[1] / u])
    raise ValidationError(f"unknown ansatz {ansatz!r}")


def curvature(ansatz, p, N, r):
    """sum_i r_i * Hessian of the model at N_i (the part J'J leaves out)."""
    N = np.asarray(N, dtype=float)
    k = ARITY[ansatz]
    H = np.zeros((k, k))
    if ansatz == "power":
        Np_log = N ** p[2] * np.log(N)
        H[1, 2] = H[2, 1] = r @ Np_log
        H[2, 2] = r @ (p[1] * Np_log * np.log(N))
    elif ansatz == "logshift":
        u = N + p[2]
        H[1, 2] = H[2, 1] = r @ (1.0 / u)
        H[2, 2] = r @ (-p[1] / u ** 2)
    return H


@dataclass
class LMResult:
    params: np.ndarray
    sse: float
    iterations: int
    converged: bool
    gradient_norm: float
    history: list = field(default_factory=list)


def _newton_polish(p, r, sse, residual, jac, second, feasible, gtol, steps=10):
    """Drive the gradient down once SSE changes fall below float resolution."""
    J = jac(p)
    gnorm = 2.0 * float(np.linalg.norm(J.T @ r))
    slack = 64 * np.finfo(float).eps * max(sse, 1.0)
    for _ in range(steps):
        if gnorm < gtol:
            break
        H = J.T @ J + second(p, r)
        try:
            step = -np.linalg.solve(H, J.T @ r)
        except np.linalg.LinAlgError:
            break
        trial = p + step
        if feasible is not None and not feasible(trial):
            break
        r_new = residual(trial)
        sse_new = float(r_new @ r_new)
        J_new = jac(trial)
        g_new = 2.0 * float(np.linalg.norm(J_new.T @ r_new))
        if not (sse_new <= sse + slack and g_new < gnorm):
            break
        p, r, sse, J, gnorm = trial, r_new, min(sse, sse_new), J_new, g_new
    return p, r, sse, gnorm


def levenberg_marquardt(residual, jac, p0, feasible=None, second=None, lam=LAMBDA0,
                        max_iter=MAX_ITER, ftol=FTOL, gtol=GTOL) -> LMResult:
    """Minimise ``sum(residual(p)**2)`` where ``jac`` is d residual / dp.

    Damping is Marquardt's: the diagonal of J'J scales the penalty. A step
    that raises the SSE or leaves the feasible region is rejected and the
    damping grows tenfold; accepted steps shrink it tenfold. The loop stops
    when the SSE gradient norm drops below ``gtol`` or an accepted step
    changes the SSE by less than ``ftol`` relative. In the second case,
    ``second(p, r)`` (the residual-weighted model Hessian), if given, is used
    for a few Newton steps, because near a nonzero-residual minimum the SSE
    stops resolving progress long before the gradient is small.
    ``history`` records the SSE after every accepted LM step.
    """
    p = np.asarray(p0, dtype=float).copy()
    if feasible is not None and not feasible(p):
        raise DomainError(f"initial parameters {p} are outside the model domain")
    r = residual(p)
    sse = float(r @ r)
    history = [sse]
    it = 0
    while it < max_iter:
        J = jac(p)
        if 2.0 * float(np.linalg.norm(J.T @ r)) < gtol:
            break
        it += 1
        scale = np.sqrt(np.maximum(np.einsum("ij,ij->j", J, J), 1e-300))
        accepted = False
        while lam <= LAMBDA_MAX:
            A = np.vstack([J, np.diag(math.sqrt(lam) * scale)])
            b = np.concatenate([-r, np.zeros(p.size)])
            trial = p + np.linalg.lstsq(A, b, rcond=None)[0]
            if feasible is None or feasible(trial):
                r_new = residual(trial)
                sse_new = float(r_new @ r_new)
                if np.isfinite(sse_new) and sse_new <= sse:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            break
        change = (sse - sse_new) / max(sse, 1e-300)
        p, r, sse = trial, r_new, sse_new
        history.append(sse)
        lam = max(lam / 10.0, 1e-12)
        if change < ftol:
            break
    gnorm = 2.0 * float(np.linalg.norm(jac(p).T @ r))
    if gnorm >= gtol and second is not None:
        p, r, sse, gnorm = _newton_polish(p, r, sse, residual, jac, second, feasible, gtol)
    return LMResult(p, sse, it, gnorm < gtol, gnorm, history)


def default_init(ansatz, N, y):
    N = np.asarray(N, dtype=float)
    y = np.asarray(y, dtype=float)
    if ansatz == "power":
        denom = np.sqrt(N.max()) - np.sqrt(N.min())
        return np.array([y.min(), np.ptp(y) / denom if denom > 0 else 1.0, 0.5])
    if ansatz == "logshift":
        span = np.ptp(N)
        denom = math.log(span) if span > 1 else 1.0
        return np.array([y.min(), np.ptp(y) / denom, max(1.0, -N.min() + 1e-3)])
    raise ValidationError(f"no default start for {ansatz!r}")


def _restarts(p0, N, ansatz):
    rng = np.random.default_rng(RESTART_SEED)
    starts = []
    for _ in range(N_RESTARTS):
        jitter = rng.uniform(-1.0, 1.0, size=p0.size)
        p = p0 + 0.5 * np.maximum(np.abs(p0), 1.0) * jitter
        if ansatz == "power":
            p[2] = 0.5 * math.exp(jitter[2])
        if ansatz == "logshift":
            p[2] = max(p[2], -N.min() + 0.1)
        starts.append(p)
    return starts


def _nls(ansatz, N, y, p0):
    def residual(p):
        with np.errstate(all="ignore"):
            return model(ansatz, p, N) - y

    def jac(p):
        with np.errstate(all="ignore"):
            return jacobian(ansatz, p, N)

    feasible = None
    if ansatz == "logshift":
        bound = -N.min() + SHIFT_MARGIN

        def feasible(p):
            return p[2] > bound

    def second(p, r):
        with np.errstate(all="ignore"):
            return curvature(ansatz, p, N, r)

    return levenberg_marquardt(residual, jac, p0, feasible, second)


def _covariance(J, sse, dof):
    sigma2 = sse / dof
    Q, R = np.linalg.qr(J)
    Rinv = np.linalg.pinv(R)
    return sigma2 * (Rinv @ Rinv.T)


def fit_ansatz(dataset: Dataset, ansatz: str, init=None) -> AnsatzFit:
    if ansatz not in ANSATZE:
        raise ValidationError(f"unknown ansatz {ansatz!r}; expected one of {ANSATZE}")
    N, y = dataset.arrays()
    k = ARITY[ansatz]
    if N.size < k + 2:
        raise ValidationError(f"{ansatz} needs at least {k + 2} active records, got {N.size}")

    if ansatz in ("quadratic", "cubic"):
        lf = fit_linear(N, y, k - 1)
        return AnsatzFit(ansatz, lf.coefficients, lf.standard_errors, lf.r_squared,
                         True, 0, lf.sse, 0.0)

    if init is not None:
        p0 = np.asarray(init, dtype=float)
        if p0.size != k:
            raise ValidationError(f"{ansatz} init needs {k} values")
        if ansatz == "logshift" and np.any(N + p0[2] <= 0):
            bad = dataset.active[int(np.argmin(N))]
            raise DomainError(f"ln(N + D2) undefined for record {bad.index} ({bad.name}) "
                              f"with D2 = {p0[2]}")
    else:
        p0 = default_init(ansatz, N, y)

    res = _nls(ansatz, N, y, p0)
    start = 0
    if not res.converged:
        best = None
        for j, p in enumerate(_restarts(p0, N, ansatz), start=1):
            try:
                cand = _nls(ansatz, N, y, p)
            except CritMassError:
                continue
            if cand.converged and (best is None or cand.sse < best[1].sse):
                best = (j, cand)
        if best is None:
            raise ConvergenceError(
                f"{ansatz} fit did not converge from the default start or {N_RESTARTS} restarts "
                f"(last: params={res.params}, sse={res.sse:.6g}, |grad|={res.gradient_norm:.3g})",
                state=res)
        start, res = best

    J = jacobian(ansatz, res.params, N)
    cov = _covariance(J, res.sse, N.size - k)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return AnsatzFit(ansatz, res.params, se, r_squared(y, model(ansatz, res.params, N)),
                     res.converged, res.iterations, res.sse, res.gradient_norm, start)


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    parameters: dict
    standard_errors: dict
    r_squared: float
    converged: bool
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "parameters": self.parameters,
            "standard_errors": self.standard_errors,
            "r_squared": self.r_squared,
            "converged": self.converged,
            "error": self.error,
        }


def _piecewise_row(fit):
    names = PARAM_NAMES["piecewise"]
    vals = [fit.a1, fit.b1, fit.a2, fit.b2, fit.breakpoint]
    errs = [fit.se_a1, fit.se_b1, fit.se_a2, fit.se_b2, fit.se_breakpoint]
    return ComparisonRow("piecewise", dict(zip(names, vals)), dict(zip(names, errs)),
                         fit.r_squared, True)


def compare_ansaetze(dataset: Dataset, mode: str = "continuous", piecewise=None) -> list[ComparisonRow]:
    """Fit the two-segment model and every smooth ansatz; best R^2 first.

    A model that cannot be fitted yields a row carrying the error message;
    such rows sort last. Pass a bootstrapped ``piecewise`` fit to report its
    standard errors.
    """
    from .segmented import fit_piecewise

    rows = []
    try:
        rows.append(_piecewise_row(piecewise if piecewise is not None else fit_piecewise(dataset, mode)))
    except CritMassError as exc:
        rows.append(ComparisonRow("piecewise", {}, {}, math.nan, False, str(exc)))
    for ansatz in ANSATZE:
        try:
            f = fit_ansatz(dataset, ansatz)
        except CritMassError as exc:
            rows.append(ComparisonRow(ansatz, {}, {}, math.nan, False, str(exc)))
            continue
        rows.append(ComparisonRow(ansatz, f.named(), f.named_errors(), f.r_squared, f.converged))
    ok = sorted((r for r in rows if r.error is None), key=lambda r: -r.r_squared)
    return ok + [r for r in rows if r.error is not None]
