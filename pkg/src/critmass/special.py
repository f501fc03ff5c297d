"""Special functions behind the p-values: erf, regularized incomplete beta,
and the Kolmogorov distribution.

Continued fractions use the modified Lentz algorithm.
"""
import math

from .errors import ConvergenceError, DomainError

EPS = 1e-16
TINY = 1e-300
MAX_TERMS = 10_000


def _lentz(a_n, b_n, b0):
    """Evaluate b0 + a1/(b1 + a2/(b2 + ...)) with coefficient callables."""
    f = b0 if b0 != 0 else TINY
    C, D = f, 0.0
    for n in range(1, MAX_TERMS):
        an, bn = a_n(n), b_n(n)
        D = bn + an * D
        D = 1.0 / (D if D != 0 else TINY)
        C = bn + an / C
        if C == 0:
            C = TINY
        delta = C * D
        f *= delta
        if abs(delta - 1.0) < EPS:
            return f
    raise ConvergenceError("continued fraction did not converge")


def regularized_gamma_p(a, x):
    """Lower regularized incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise DomainError(f"P(a, x) needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 0.0
    log_pref = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(MAX_TERMS):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * EPS:
                return total * math.exp(log_pref)
        raise ConvergenceError("incomplete gamma series did not converge")
    # Q(a, x) = exp(log_pref) / (x + 1 - a - 1*(1-a)/(x + 3 - a - ...))
    cf = _lentz(lambda n: -n * (n - a), lambda n: x + 2.0 * n + 1.0 - a, x + 1.0 - a)
    return 1.0 - math.exp(log_pref) / cf


def erf(x):
    if math.isnan(x):
        raise DomainError("erf of NaN")
    if x == 0:
        return 0.0
    v = regularized_gamma_p(0.5, x * x)
    return v if x > 0 else -v


def regularized_incomplete_beta(a, b, x):
    """I_x(a, b), the regularized incomplete beta function."""
    if a <= 0 or b <= 0 or not (0.0 <= x <= 1.0):
        raise DomainError(f"I_x(a, b) needs a, b > 0 and 0 <= x <= 1, got a={a}, b={b}, x={x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x > (a + 1.0) / (a + b + 2.0):
        return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)

    def a_n(n):
        m = n // 2
        if n % 2 == 0:
            return m * (b - m) * x / ((a + 2 * m - 1) * (a + 2 * m))
        return -(a + m) * (a + b + m) * x / ((a + 2 * m) * (a + 2 * m + 1))

    # 1 / (1 + d1/(1 + d2/(1 + ...)))
    cf = _lentz(a_n, lambda n: 1.0, 1.0)
    return math.exp(log_front) / (a * cf)


def kolmogorov_cdf(x, max_terms=100):
    """P(K <= x) for the limiting Kolmogorov distribution."""
    if math.isnan(x):
        raise DomainError("kolmogorov_cdf of NaN")
    if x <= 0:
        return 0.0
    if x < 1.0:
        # Jacobi-theta form, fast for small x
        c = math.pi ** 2 / (8.0 * x * x)
        total = 0.0
        for k in range(1, max_terms + 1):
            term = math.exp(-(2 * k - 1) ** 2 * c)
            total += term
            if term < 1e-12 * max(total, TINY):
                break
        return math.sqrt(2.0 * math.pi) / x * total
    total = 0.0
    for k in range(1, max_terms + 1):
        term = math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term < 1e-12:
            break
    return min(1.0, max(0.0, 1.0 - 2.0 * total))


def f_sf(F, d1, d2):
    """Upper tail of the F(d1, d2) distribution."""
    if F <= 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F))


def t_two_sided(t, dof):
    """Two-sided p-value for Student's t."""
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def normal_cdf(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
