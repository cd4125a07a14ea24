"""Seasonal ARIMA fitted by conditional sum of squares (CSS).

Model, on the differenced series ``w = (1-B)^d (1-B^s)^D y`` with
``x = w - mu``::

    phi(B) Phi(B^s) x_t = theta(B) Theta(B^s) e_t

``phi(z) = 1 - sum phi_j z^j`` and ``theta(z) = 1 + sum theta_j z^j`` (same
signs for the seasonal factors).  ``mu`` is the mean of ``w``.  Residuals
start after ``p + s*P`` conditioning observations, with earlier residuals
taken as zero.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .errors import FitError, StabilityError

INVERTIBILITY_TOL = 1e-8
_RESTART_OFFSETS = (0.0, 0.1, -0.1)


@dataclass(frozen=True, order=True)
class SarimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 7

    def __post_init__(self):
        if min(self.p, self.d, self.q, self.P, self.D, self.Q) < 0:
            raise ValueError("orders must be non-negative")
        if (self.P or self.D or self.Q) and self.s < 2:
            raise ValueError("season length must be at least 2 with seasonal terms")

    @property
    def n_coef(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def n_diff(self) -> int:
        """Observations consumed by differencing."""
        return self.d + self.D * self.s

    @property
    def n_cond(self) -> int:
        """Differenced observations used only as AR conditioning."""
        return self.p + self.s * self.P

    def key(self) -> tuple:
        return (self.p, self.d, self.q, self.P, self.D, self.Q, self.s)

    def __str__(self) -> str:
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q})[{self.s}]"


def default_grid(s: int = 7) -> list[SarimaOrder]:
    r3, r2 = range(3), range(2)
    return [SarimaOrder(p, d, q, P, D, Q, s)
            for p, d, q, P, D, Q in itertools.product(r3, r2, r3, r3, r2, r3)]


@dataclass
class SarimaFit:
    order: SarimaOrder
    ar: list
    ma: list
    sar: list
    sma: list
    intercept: float
    sigma2: float
    aic: float
    sse: float = 0.0
    n_resid: int = 0

    @property
    def coefficients(self) -> np.ndarray:
        return np.array(self.ar + self.ma + self.sar + self.sma, dtype=np.float64)

    def to_json(self) -> str:
        d = asdict(self)
        d["order"] = asdict(self.order)
        return json.dumps(d, indent=2) + "\n"


# --- differencing ------------------------------------------------------------

def diff_polynomial(d: int, D: int, s: int) -> np.ndarray:
    """Coefficients of ``(1-B)^d (1-B^s)^D`` in ascending powers of B."""
    poly = np.array([1.0])
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    seasonal = np.zeros(s + 1)
    seasonal[0], seasonal[s] = 1.0, -1.0
    for _ in range(D):
        poly = np.convolve(poly, seasonal)
    return poly


def difference(series, d: int, D: int = 0, s: int = 7) -> np.ndarray:
    y = np.asarray(series, dtype=np.float64)
    if d < 0 or D < 0 or (D and s < 1):
        raise ValueError("invalid differencing orders")
    if y.size <= d + D * s:
        raise ValueError(f"series of length {y.size} is too short to difference with d={d}, D={D}, s={s}")
    for _ in range(d):
        y = y[1:] - y[:-1]
    for _ in range(D):
        y = y[s:] - y[:-s]
    return y


def undifference(diffed, head, d: int, D: int = 0, s: int = 7) -> np.ndarray:
    """Rebuild a series from its first ``d + D*s`` values and its differences."""
    poly = diff_polynomial(d, D, s)
    m = len(poly) - 1
    head = np.asarray(head, dtype=np.float64)
    if head.size != m:
        raise ValueError(f"need exactly {m} leading values, got {head.size}")
    w = np.asarray(diffed, dtype=np.float64)
    out = np.empty(m + w.size)
    out[:m] = head
    _integrate(out, w, poly, m)
    return out


def _integrate(out: np.ndarray, w: np.ndarray, poly: np.ndarray, start: int) -> None:
    # y_t = w_t - sum_{j>=1} poly_j y_{t-j}
    m = len(poly) - 1
    for i in range(w.size):
        t = start + i
        acc = w[i]
        for j in range(1, m + 1):
            acc -= poly[j] * out[t - j]
        out[t] = acc


# --- CSS ---------------------------------------------------------------------

@njit(cache=True)
def _residuals(x, ar, ma, start):
    # ar[j], ma[j] for lags j >= 1; index 0 unused
    n = x.shape[0]
    e = np.zeros(n)
    for t in range(start, n):
        v = x[t]
        for j in range(1, ar.shape[0]):
            v -= ar[j] * x[t - j]
        for j in range(1, ma.shape[0]):
            if t - j >= 0:
                v -= ma[j] * e[t - j]
        e[t] = v
    return e


def _split(order: SarimaOrder, coef) -> tuple:
    c = np.asarray(coef, dtype=np.float64).ravel()
    if c.size != order.n_coef:
        raise ValueError(f"order {order} takes {order.n_coef} coefficients, got {c.size}")
    i = 0
    parts = []
    for k in (order.p, order.q, order.P, order.Q):
        parts.append(c[i:i + k])
        i += k
    return tuple(parts)


def _seasonal(coefs: np.ndarray, s: int, sign: float) -> np.ndarray:
    poly = np.zeros(s * coefs.size + 1)
    poly[0] = 1.0
    poly[s::s] = sign * coefs
    return poly


def _lag_polynomials(order: SarimaOrder, coef):
    ar, ma, sar, sma = _split(order, coef)
    ar_poly = np.convolve(np.concatenate([[1.0], -ar]), _seasonal(sar, order.s, -1.0))
    ma_poly = np.convolve(np.concatenate([[1.0], ma]), _seasonal(sma, order.s, 1.0))
    # x_t = sum a_j x_{t-j} + e_t + sum b_j e_{t-j}
    a = -ar_poly
    a[0] = 0.0
    b = ma_poly.copy()
    b[0] = 0.0
    return a, b


def _invertible(ma: np.ndarray) -> bool:
    # roots of 1 + sum c_j z^j must lie outside the unit circle
    if ma.size == 0 or not np.any(ma):
        return True
    poly = np.concatenate([[1.0], ma])
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 - INVERTIBILITY_TOL))


def _check_invertible(order: SarimaOrder, coef) -> Optional[str]:
    _, ma, _, sma = _split(order, coef)
    if not _invertible(ma):
        return f"MA polynomial {list(ma)} has a root inside the unit circle"
    if not _invertible(sma):
        return f"seasonal MA polynomial {list(sma)} has a root inside the unit circle"
    return None


def _prepare(series, order: SarimaOrder, mean: Optional[float]):
    w = difference(series, order.d, order.D, order.s)
    if w.size <= order.n_cond:
        raise ValueError(f"series too short for order {order}")
    mu = float(np.mean(w)) if mean is None else float(mean)
    return w - mu, mu


def residuals(series, order: SarimaOrder, coef, mean: Optional[float] = None) -> np.ndarray:
    """CSS residuals on the differenced scale (conditioning entries are zero)."""
    x, _ = _prepare(series, order, mean)
    a, b = _lag_polynomials(order, coef)
    return _residuals(x, a, b, order.n_cond)


def css_loss(series, order: SarimaOrder, coef, mean: Optional[float] = None) -> float:
    """Sum of squared one-step residuals; ``mean`` defaults to the differenced mean."""
    problem = _check_invertible(order, coef)
    if problem:
        raise StabilityError(problem)
    e = residuals(series, order, coef, mean)
    tail = e[order.n_cond:]
    return float(np.dot(tail, tail))


def aic(sse: float, n: int, k: int) -> float:
    """``n ln(SSE/n) + 2(k+1)``, with SSE floored so exact fits stay finite."""
    sse = max(sse, n * np.finfo(float).tiny)
    return n * math.log(sse / n) + 2 * (k + 1)


def _fit_order(y: np.ndarray, order: SarimaOrder, first: Optional[int] = None) -> SarimaFit:
    # ``first`` is the first scored observation on the original scale; a
    # shared value keeps AIC comparable across orders
    x, mu = _prepare(y, order, None)
    start = order.n_cond
    skip = start if first is None else first - order.n_diff
    if skip < start or skip >= x.size:
        raise ValueError(f"cannot score {order} from observation {first}")
    n = x.size - skip
    k = order.n_coef

    def loss(c):
        if _check_invertible(order, c):
            return math.inf
        a, b = _lag_polynomials(order, c)
        e = _residuals(x, a, b, start)[skip:]
        return float(np.dot(e, e))

    if k == 0:
        best_c, best_sse = np.zeros(0), loss(np.zeros(0))
    else:
        best_c, best_sse = None, math.inf
        for off in _RESTART_OFFSETS:
            x0 = np.full(k, off)
            if not math.isfinite(loss(x0)):
                continue
            res = minimize(loss, x0, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000 * k,
                                    "maxfev": 4000 * k})
            if res.fun < best_sse:
                best_c, best_sse = np.asarray(res.x, dtype=np.float64), float(res.fun)
        if best_c is None or not math.isfinite(best_sse):
            raise StabilityError(f"{order}: no invertible starting point converged")
    ar, ma, sar, sma = (list(map(float, v)) for v in _split(order, best_c))
    sigma2 = max(best_sse, n * np.finfo(float).tiny) / n
    return SarimaFit(order, ar, ma, sar, sma, mu, sigma2, aic(best_sse, n, k), best_sse, n)


def fit(series, grid: Iterable[SarimaOrder] = None) -> SarimaFit:
    """Fit every order in ``grid`` and keep the lowest AIC (ties: smallest order).

    All orders are scored on the same residual window, the one left after the
    most demanding order's differencing and conditioning lags.
    """
    y = np.asarray(series, dtype=np.float64)
    orders = sorted(set(default_grid() if grid is None else grid), key=SarimaOrder.key)
    if not orders:
        raise ValueError("empty order grid")
    first = max(o.n_diff + o.n_cond for o in orders)
    best, failures = None, []
    for order in orders:
        try:
            f = _fit_order(y, order, first)
        except (StabilityError, ValueError) as exc:
            failures.append(f"{order}: {exc}")
            continue
        if best is None or f.aic < best.aic:
            best = f
    if best is None:
        raise FitError("no order could be fitted:\n  " + "\n  ".join(failures))
    return best


# --- forecasting -------------------------------------------------------------

def forecast(fit: SarimaFit, series, horizon: int) -> np.ndarray:
    """Iterated multi-step forecast after the end of ``series``.

    Future shocks are zero; the result is on the original (undifferenced)
    scale.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    order = fit.order
    y = np.asarray(series, dtype=np.float64)
    x, mu = _prepare(y, order, fit.intercept)
    a, b = _lag_polynomials(order, fit.coefficients)
    e = _residuals(x, a, b, order.n_cond)
    xs = np.concatenate([x, np.zeros(horizon)])
    es = np.concatenate([e, np.zeros(horizon)])
    n = x.size
    for h in range(horizon):
        t = n + h
        acc = 0.0
        for j in range(1, a.size):
            acc += a[j] * xs[t - j]
        for j in range(1, b.size):
            if t - j >= 0:
                acc += b[j] * es[t - j]
        xs[t] = acc
    w_future = xs[n:] + mu
    poly = diff_polynomial(order.d, order.D, order.s)
    out = np.concatenate([y, np.empty(horizon)])
    _integrate(out, w_future, poly, y.size)
    return out[y.size:]


def rolling_one_step(fit: SarimaFit, series, start: int) -> np.ndarray:
    """One-day-ahead forecasts for ``series[start:]``, each using all prior observations.

    Equivalent to calling :func:`forecast` with horizon 1 on every prefix,
    without refitting; computed in a single residual pass.
    """
    order = fit.order
    y = np.asarray(series, dtype=np.float64)
    first = order.n_diff + order.n_cond
    if start < first or start > y.size:
        raise ValueError(f"start must lie in [{first}, {y.size}] for order {order}")
    e = residuals(y, order, fit.coefficients, fit.intercept)
    idx = np.arange(start, y.size)
    return y[idx] - e[idx - order.n_diff]
