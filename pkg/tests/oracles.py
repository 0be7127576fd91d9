"""Independent reference implementations used as test oracles.

Everything here is deliberately brute-force and written against the
plain formulas, not against the library code paths it checks.
"""

import math

import numpy as np

from evspad.spad import EPS_LOG


def mle_flux(detections: int, n_gates: int, q: float, t_bin: float) -> float:
    """Binary-frame maximum-likelihood flux estimate."""
    p_hat = detections / n_gates
    return -math.log1p(-p_hat) / (q * t_bin)


def riemann_exp_integral(event_times, event_pols, f, T, c, n_steps=100_000):
    """Dense Riemann sum of exp(c * E(t)) over the exposure window."""
    a = f - T / 2.0
    dt = T / n_steps
    total = 0.0
    for i in range(n_steps):
        t = a + (i + 0.5) * dt
        e = 0
        for u, s in zip(event_times, event_pols):
            if f < u <= t:
                e += s
            elif t < u <= f:
                e -= s
        total += math.exp(c * e) * dt
    return total


def riemann_nedi_forward(n_f, event_times, event_pols, f, T, q, t_bin, tau, c,
                         n_steps=100_000):
    """Dense quadrature of the nonlinear blur model for one pixel."""
    a = f - T / 2.0
    dt = T / n_steps
    total = 0.0
    for i in range(n_steps):
        t = a + (i + 0.5) * dt
        e = 0
        for u, s in zip(event_times, event_pols):
            if f < u <= t:
                e += s
            elif t < u <= f:
                e -= s
        g = math.exp(c * e)
        total += g / (q * t_bin + tau * n_f * g) * dt
    return n_f / T * total


def batch_wls_mean(prior_mean, prior_var, measurements, r):
    """Weighted least squares including the prior as a pseudo-measurement."""
    info = 1.0 / prior_var + len(measurements) / r
    num = prior_mean / prior_var + sum(measurements) / r
    return num / info, 1.0 / info


class ScalarPixelFilter:
    """Scalar replay of the per-pixel asynchronous filter semantics.

    Used as the dense-time reference: walk a merged, time-sorted list of
    ('event', t, pol), ('frame', t, z, r), and ('query', t) entries for
    one pixel and record the published (n_hat, variance) at each query.
    """

    def __init__(self, params, t0):
        self.params = params
        self.n_hat = math.log(EPS_LOG)
        self.p = 1.0
        self.t_last = t0
        self.flux_est = EPS_LOG
        self.initialized = False

    def event(self, t, pol):
        dt = t - self.t_last
        q_shot = self.params.sigma_shot ** 2 / (self.flux_est + self.params.phi_0) * dt
        q_isol = self.params.sigma_iso ** 2 * dt
        q_ref = 0.0 if dt > self.params.rho else self.params.rho_ref
        self.p = self.p + (q_shot + q_isol + q_ref + self.params.sigma_theta ** 2)
        self.n_hat = self.n_hat + self.params.c * pol
        self.t_last = t
        self.flux_est = math.exp(self.n_hat)

    def frame(self, t, z, r):
        if not math.isfinite(z):
            return
        if not self.initialized:
            self.n_hat = z
            self.p = r
        else:
            k = self.p / (self.p + r)
            self.n_hat = self.n_hat + k * (z - self.n_hat)
            self.p = (1.0 - k) * self.p
        self.t_last = t
        self.flux_est = math.exp(self.n_hat)
        self.initialized = True

    def query(self, t):
        growth = (self.params.sigma_shot ** 2 / (self.flux_est + self.params.phi_0)
                  + self.params.sigma_iso ** 2) * max(t - self.t_last, 0.0)
        return self.n_hat, self.p + growth


def two_pass_mse(a, b):
    """Textbook two-pass mean squared error."""
    total = 0.0
    flat_a = np.asarray(a, dtype=np.float64).reshape(-1)
    flat_b = np.asarray(b, dtype=np.float64).reshape(-1)
    for x, y in zip(flat_a, flat_b):
        total += (x - y) ** 2
    return total / flat_a.size


def reference_event_simulator(log_lum_fn, duration, step, c_p, rho):
    """Single-pixel dense-time change detector, written independently.

    log_lum_fn(t) -> log luminance; returns a list of (t, polarity).
    """
    l_ref = log_lum_fn(0.0)
    t_ok = 0.0
    out = []
    n = int(round(duration / step))
    for k in range(1, n + 1):
        t = k * step
        delta = log_lum_fn(t) - l_ref
        if abs(delta) >= c_p and t >= t_ok:
            pol = 1 if delta > 0 else -1
            l_ref += pol * c_p
            t_ok = t + rho
            out.append((t, pol))
    return out
