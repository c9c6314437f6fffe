"""Decoy-state finite-key estimation for mode-pairing QKD.

Chain: observed pair counts -> Chernoff expected-value bounds -> decoy
linear combinations -> lower bound on single-photon Z pairs and upper
bound on their phase-error rate -> finite-size secret key rate.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

from scipy.optimize import brentq

from .model import SystemConfig, TallyTable

# Per-party pair label -> multiset of the two round classes
# (0 = vacuum, 1 = decoy, 2 = signal).
PAIR_LABEL_CLASSES = {
    "mu": (0, 2),
    "nu": (0, 1),
    "o": (0, 0),
    "2nu": (1, 1),
}


class EstimationError(ArithmeticError):
    """The estimation chain cannot produce a bound (e.g. no single-photon X pairs)."""


class ChernoffSolverError(EstimationError):
    pass


# --- elementary functions -------------------------------------------------------


def poisson_weight(i: int, tau: float) -> float:
    """P(i photons) for a coherent state of mean photon number ``tau``."""
    if tau == 0.0:
        return 1.0 if i == 0 else 0.0
    return math.exp(-tau + i * math.log(tau) - math.lgamma(i + 1))


def binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def plob_bound(total_loss_db: float) -> float:
    """Repeaterless secret-key capacity -log2(1 - eta) in bits per pulse."""
    if total_loss_db < 0:
        raise ValueError("loss must be non-negative")
    eta = 10.0 ** (-total_loss_db / 10.0)
    if eta >= 1.0:
        return math.inf
    return -math.log2(1.0 - eta)


def gamma(a: float, b: float, c: float, d: float) -> float:
    """Random-sampling (without replacement) correction to an observed error rate.

    a: failure probability, b: observed error rate, c, d: sizes of the two
    populations. Returns 0 at b = 0 (the limit of the expression) and
    whenever the logarithm argument drops below 1.
    """
    if b <= 0.0:
        return 0.0
    b = min(b, 0.5)
    if c <= 0 or d <= 0:
        raise EstimationError("gamma needs positive population sizes")
    v = b * (1.0 - b)
    log_arg = math.log(c + d) - math.log(2 * math.pi) - math.log(c) - math.log(d) \
        - math.log(v) - 2.0 * math.log(a)
    if log_arg <= 0.0:
        return 0.0
    return math.sqrt((c + d) * v / (c * d) * log_arg)


def error_correction_leakage(n_z: float, e_z: float, f: float) -> float:
    """Bits disclosed by error correction: f * n_z * H2(e_z)."""
    if not 0.0 <= e_z <= 0.5:
        raise ValueError("e_z must lie in [0, 0.5]")
    if f < 1.0:
        raise ValueError("f must be >= 1")
    return f * n_z * binary_entropy(e_z)


# --- Chernoff bounds ------------------------------------------------------------


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float
    eps_l: float
    eps_u: float
    chi_l: float = math.nan
    chi_u: float = math.nan


def _expm1_minus_x(u: float) -> float:
    # e^u - 1 - u without cancellation for small u
    if u < 0.05:
        term, total = u * u / 2.0, 0.0
        k = 2
        while abs(term) > 1e-18 * max(total, 1e-300):
            total += term
            k += 1
            term *= u / k
        return total
    return math.expm1(u) - u


def _x_plus_expm1_neg(v: float) -> float:
    # v + e^-v - 1 without cancellation for small v
    if v < 0.05:
        term, total = v * v / 2.0, 0.0
        k = 2
        while abs(term) > 1e-18 * max(abs(total), 1e-300):
            total += term
            k += 1
            term *= -v / k
        return total
    return v + math.expm1(-v)


def _solve_increasing(h, target: float, what: str) -> float:
    hi = 1.0
    while h(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise ChernoffSolverError(f"{what}: no bracket found up to {hi:g}")
    lo = 0.0
    try:
        return brentq(lambda x: h(x) - target, lo, hi, xtol=1e-300, rtol=4 * sys.float_info.epsilon, maxiter=500)
    except (RuntimeError, ValueError) as exc:
        raise ChernoffSolverError(f"{what}: no convergence on bracket [{lo}, {hi}]: {exc}") from exc


def _solve_upper(target: float) -> float:
    if target > 1e6:
        # e^u = target + 1 + u; the fixed-point map is a strong contraction here
        u = math.log(target)
        for _ in range(100):
            nxt = math.log(target + 1.0 + u)
            if nxt == u:
                break
            u = nxt
        return u
    return _solve_increasing(_expm1_minus_x, target, "chi_U")


def _solve_lower(target: float) -> float:
    if target > 50.0:
        # v = target + 1 - e^-v and e^-v is below double resolution of v
        return target + 1.0
    return _solve_increasing(_x_plus_expm1_neg, target, "chi_L")


def chernoff_bounds(n: float, eps_u: float, eps_l: float) -> BoundPair:
    """Bounds on the expected value behind an observed count ``n``.

    The upper bound n/(1 - chi_U) and lower bound n/(1 + chi_L) use the
    chi values that solve

        [exp(-chi_U) / (1 - chi_U)^(1 - chi_U)]^(n / (1 - chi_U)) = eps_U
        [exp(chi_L) / (1 + chi_L)^(1 + chi_L)]^(n / (1 + chi_L)) = eps_L.

    With u = -ln(1 - chi_U) the first becomes e^u - 1 - u = ln(1/eps_U)/n,
    and with v = ln(1 + chi_L) the second becomes v + e^-v - 1 = ln(1/eps_L)/n;
    both left sides are increasing, so a bracketed root always exists.
    For n = 0 the lower bound is 0 and the upper bound is ln(1/eps_U).
    """
    if n < 0:
        raise ValueError("observed count must be non-negative")
    for name, e in (("eps_u", eps_u), ("eps_l", eps_l)):
        if not 0.0 < e < 1.0:
            raise ValueError(f"{name} must lie in (0, 1)")
    if n == 0:
        return BoundPair(0.0, math.log(1.0 / eps_u), eps_l, eps_u)
    u = _solve_upper(math.log(1.0 / eps_u) / n)
    v = _solve_lower(math.log(1.0 / eps_l) / n)
    chi_u = -math.expm1(-u)
    chi_l = math.expm1(v) if v < 700.0 else math.inf
    return BoundPair(lower=n * math.exp(-v), upper=n * math.exp(u),
                     eps_l=eps_l, eps_u=eps_u, chi_l=chi_l, chi_u=chi_u)


# --- pair-class probabilities ---------------------------------------------------


def pair_class_probability(key: tuple[str, str], cfg: SystemConfig, m_slices: int | None = None) -> float:
    """Relative probability of a pair landing in tally class ``key``.

    Sums p(tau_j) p(tau_k) over the ordered round assignments of each party
    (the common normalisation is dropped). The phase-sifted X class carries
    the extra acceptance factor 2/M.
    """
    m = cfg.m_slices if m_slices is None else m_slices
    prob = 1.0
    for label, party in zip(key, (cfg.alice, cfg.bob)):
        target = PAIR_LABEL_CLASSES[label]
        p = party.probabilities
        prob *= sum(p[c1] * p[c2] for c1 in range(3) for c2 in range(3)
                    if tuple(sorted((c1, c2))) == target)
    if key == ("2nu", "2nu"):
        prob *= 2.0 / m
    return prob


def pair_intensity(label: str, party) -> float:
    return {"mu": party.mu, "nu": party.nu, "o": 0.0, "2nu": 2.0 * party.nu}[label]


# --- the estimation chain -------------------------------------------------------


@dataclass
class EstimationResult:
    n11_z_lower: float
    e11_ph_upper: float
    intermediates: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class _Terms:
    """Bounded tallies and the per-class normalisers shared by both estimates."""

    def __init__(self, tallies: TallyTable, cfg: SystemConfig, finite: bool = True):
        self.cfg = cfg
        self.tallies = tallies
        eps = cfg.epsilons
        self.lower: dict[tuple[str, str], float] = {}
        self.upper: dict[tuple[str, str], float] = {}
        for key, n in tallies.n.items():
            if finite:
                b = chernoff_bounds(n, eps.eps_u, eps.eps_l)
                self.lower[key], self.upper[key] = b.lower, b.upper
            else:
                self.lower[key] = self.upper[key] = float(n)

    def p(self, key) -> float:
        return pair_class_probability(key, self.cfg)

    def weight(self, i: int, key) -> float:
        """Product of the two parties' i-photon Poisson weights for a pair class."""
        return (poisson_weight(i, pair_intensity(key[0], self.cfg.alice))
                * poisson_weight(i, pair_intensity(key[1], self.cfg.bob)))

    def scaled(self, key, bound: str) -> float:
        value = (self.lower if bound == "lower" else self.upper)[key]
        return value / (self.weight(0, key) * self.p(key))


def _photon_split(cfg: SystemConfig) -> tuple[int, int]:
    a, b = cfg.alice, cfg.bob
    return (1, 2) if a.nu * b.mu <= b.nu * a.mu else (2, 1)


def estimate_n11_z(tallies: TallyTable, cfg: SystemConfig, *, finite: bool = True) -> EstimationResult:
    """Lower bound on the number of Z pairs where both senders emitted one photon.

    The signal combination n_mu is bounded from above and the decoy
    combination n_nu from below, which keeps the difference a valid lower
    bound on the single-photon term.
    """
    t = _Terms(tallies, cfg, finite)
    a, b = cfg.alice, cfg.bob
    n_mu = (t.scaled(("mu", "mu"), "upper") - t.scaled(("o", "mu"), "lower")
            - t.scaled(("mu", "o"), "lower") + t.scaled(("o", "o"), "upper"))
    n_nu = (t.scaled(("nu", "nu"), "lower") - t.scaled(("o", "nu"), "upper")
            - t.scaled(("nu", "o"), "upper") + t.scaled(("o", "o"), "lower"))
    s_a, s_b = _photon_split(cfg)
    P = poisson_weight
    ps_nu = P(s_a, a.nu) * P(s_b, b.nu)
    ps_mu = P(s_a, a.mu) * P(s_b, b.mu)
    p_mm = t.p(("mu", "mu"))
    alpha_11 = (P(1, a.nu) * P(1, b.nu) / (ps_nu * P(1, a.mu) * P(1, b.mu)) - 1.0 / ps_mu) / p_mm
    n11 = (P(0, a.nu) * P(0, b.nu) / ps_nu * n_nu - P(0, a.mu) * P(0, b.mu) / ps_mu * n_mu) / alpha_11
    result = EstimationResult(n11, math.nan, {
        "n_mu": n_mu, "n_nu": n_nu, "alpha_11": alpha_11, "s_a": s_a, "s_b": s_b,
        "n11_z_unclamped": n11,
    })
    if not n11 > 0.0:
        result.n11_z_lower = 0.0
        result.warnings.append("n11_z lower bound was non-positive; clamped to 0")
    return result


def estimate_e11_ph(tallies: TallyTable, cfg: SystemConfig, n11_z: float, *,
                    finite: bool = True) -> EstimationResult:
    """Upper bound on the phase-error rate of the single-photon Z pairs."""
    t = _Terms(tallies, cfg, finite)
    a, b = cfg.alice, cfg.bob
    P = poisson_weight
    xx, ox, xo, oo = ("2nu", "2nu"), ("o", "2nu"), ("2nu", "o"), ("o", "o")
    p_xx = t.p(xx)
    w0_xx = t.weight(0, xx)
    m_2nu = (tallies.m_x / (w0_xx * p_xx)
             - t.scaled(ox, "lower") / 2.0 - t.scaled(xo, "lower") / 2.0
             + t.scaled(oo, "upper") / 2.0)
    m11_upper = w0_xx * p_xx * m_2nu
    n11_x_lower = (P(1, 2 * a.nu) * P(1, 2 * b.nu) * p_xx
                   / (P(1, a.mu) * P(1, b.mu) * t.p(("mu", "mu")))) * n11_z
    if not n11_x_lower > 0.0:
        raise EstimationError("lower bound on single-photon X pairs is zero; "
                              "phase-error rate cannot be bounded")
    warnings = []
    e11_x = m11_upper / n11_x_lower
    if e11_x < 0.0 or e11_x > 0.5:
        warnings.append(f"e11_x = {e11_x:.6g} clamped to [0, 0.5]")
        e11_x = min(max(e11_x, 0.0), 0.5)
    g = gamma(cfg.epsilons.eps_e, e11_x, n11_z, n11_x_lower) if finite else 0.0
    e_ph = min(e11_x + g, 1.0)
    return EstimationResult(n11_z, e_ph, {
        "m_2nu": m_2nu, "m11_upper": m11_upper, "n11_x_lower": n11_x_lower,
        "e11_x_upper": e11_x, "gamma": g,
    }, warnings)


@dataclass(frozen=True)
class KeyRate:
    bits_per_pulse: float
    bits_per_second: float
    secret_bits: float
    leak_ec: float
    penalty: float
    clamped: bool


def secret_key_rate(n11_z: float, e11_ph: float, tallies: TallyTable, cfg: SystemConfig,
                    n_total: float | None = None, *, finite: bool = True) -> KeyRate:
    """Finite-size key rate in bits per pulse (clamped at 0) and bits per second."""
    n_total = cfg.n_rounds if n_total is None else n_total
    eps = cfg.epsilons
    n_z = tallies.n[("mu", "mu")]
    leak = error_correction_leakage(n_z, min(tallies.error_rate_z, 0.5), cfg.f_ec)
    h_ph = 1.0 if e11_ph >= 0.5 else binary_entropy(e11_ph)
    penalty = 0.0
    if finite:
        penalty = (math.log2(2.0 / eps.eps_cor) + 2.0 * math.log2(2.0 / (eps.eps_prime * eps.eps_hat))
                   + 2.0 * math.log2(1.0 / eps.eps_pa))
    bits = n11_z * (1.0 - h_ph) - leak - penalty
    clamped = not bits > 0.0 or n_total <= 0
    bpp = 0.0 if clamped else bits / n_total
    return KeyRate(bpp, bpp * cfg.clock_hz, bits, leak, penalty, clamped)


@dataclass
class ChainResult:
    n11: EstimationResult
    e_ph: EstimationResult | None
    rate: KeyRate
    plob: float
    warnings: list[str]

    @property
    def skr_over_plob(self) -> float:
        return self.rate.bits_per_pulse / self.plob if self.plob > 0 else math.nan


def run_chain(tallies: TallyTable, cfg: SystemConfig, n_total: float | None = None, *,
              finite: bool = True) -> ChainResult:
    """Evaluate the whole estimation chain once.

    A failed phase-error bound (no single-photon X pairs) yields a zero key
    rate with a warning rather than an exception.
    """
    n11 = estimate_n11_z(tallies, cfg, finite=finite)
    warnings = list(n11.warnings)
    e_ph = None
    try:
        e_ph = estimate_e11_ph(tallies, cfg, n11.n11_z_lower, finite=finite)
        warnings += e_ph.warnings
        rate = secret_key_rate(n11.n11_z_lower, e_ph.e11_ph_upper, tallies, cfg, n_total, finite=finite)
    except EstimationError as exc:
        warnings.append(str(exc))
        rate = KeyRate(0.0, 0.0, 0.0, 0.0, 0.0, True)
    if rate.clamped:
        warnings.append("secret key rate clamped to 0")
    return ChainResult(n11, e_ph, rate, plob_bound(cfg.total_loss_db), warnings)
