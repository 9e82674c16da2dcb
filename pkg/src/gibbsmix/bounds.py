"""Closed-form quantities of the conductance-based mixing-time analysis.

All logarithms are natural. Every function validates its domain and raises
``ValueError`` outside it. Universal constants live in :class:`Constants`
and are recorded in every :class:`BoundReport`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

__all__ = [
    "Constants", "BoundReport", "MixingTimeBound", "VARIANTS", "ConstraintWarning",
    "radius_r", "nu", "nu_cap", "delta", "delta_sigma_form", "delta_isotropic", "alpha",
    "l_constraint_ok", "psi_c", "psi_pi", "big_psi", "big_psi_from_parts",
    "phi_s_lower", "ls_tv_bound", "mixing_time_bound", "log_mixing_time_bound",
    "displayed_bound", "bound_report", "chen_exponent",
]

VARIANTS = ("lee_vempala", "chen", "isotropic")
LOG2 = math.log(2.0)


class ConstraintWarning(UserWarning):
    """The smoothness constant violates the lower bound needed by the shrinkage."""


@dataclass(frozen=True)
class Constants:
    """Universal constants; ``psi_constant=None`` means log 2 / (2^5 3^3 c')."""

    c_prime: float = 1.0
    theorem_c: float = 1.0
    psi_constant: float | None = None
    c_delta: float = 8.0
    h: float = 1.0 / 3.0
    eps_per_s: float = 1.0 / 11.0

    @property
    def big_psi_constant(self) -> float:
        if self.psi_constant is not None:
            return self.psi_constant
        return LOG2 / (2 ** 5 * 3 ** 3 * self.c_prime)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["big_psi_constant"] = self.big_psi_constant
        return d


def _check_prob(name: str, value: float):
    if not (0.0 < value < 0.5):
        raise ValueError(f"{name} must lie in (0, 1/2), got {value!r}")


def _check_n(n: int, least: int = 2):
    if n < least:
        raise ValueError(f"dimension n must be >= {least}, got {n!r}")


def _max_term(epsilon: float, n: int) -> float:
    return max(1.0, math.sqrt(math.log(1.0 / epsilon) / n))


def radius_r(epsilon: float, n: int) -> float:
    """Multiplier r(eps) with Pi(ball of radius r sqrt(n/mu) at the mode) >= 1 - eps."""
    _check_prob("epsilon", epsilon)
    _check_n(n, 1)
    q = math.log(1.0 / epsilon) / n
    return 2.0 + 2.0 * max(q ** 0.25, q ** 0.5)


def nu_cap() -> float:
    return math.log(6.0 / 5.0)


def nu(n: int) -> float:
    """Cube approximation error 1/(8 log n) + 1/(2^13 n log n)."""
    _check_n(n)
    ln = math.log(n)
    value = 1.0 / (8.0 * ln) + 1.0 / (2 ** 13 * n * ln)
    assert value <= nu_cap(), f"nu({n}) = {value} exceeds log(6/5)"
    return value


def _check_kl(kappa: float, lipschitz: float):
    if not kappa >= 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa!r}")
    if not lipschitz > 0.0:
        raise ValueError(f"lipschitz must be positive, got {lipschitz!r}")


def delta(kappa: float, lipschitz: float, n: int, epsilon: float) -> float:
    """Cube side 1/(64 sqrt(kappa L) n log n max{1, sqrt(log(1/eps)/n)})."""
    _check_kl(kappa, lipschitz)
    _check_n(n)
    _check_prob("epsilon", epsilon)
    value = 1.0 / (64.0 * math.sqrt(kappa * lipschitz) * n * math.log(n) * _max_term(epsilon, n))
    other = delta_sigma_form(kappa, lipschitz, n, epsilon)
    assert math.isclose(value, other, rel_tol=1e-12), (value, other)
    return value


def delta_sigma_form(kappa: float, lipschitz: float, n: int, epsilon: float,
                     c: float = 8.0) -> float:
    """Cube side written with n^(1 + sigma), sigma = log log n / log n.

    n^sigma = exp(log log n) = log n for every n >= 2 (sigma < 0 at n = 2 is
    harmless), so this agrees with :func:`delta` when c = 8.
    """
    _check_n(n)
    sigma = math.log(math.log(n)) / math.log(n)
    return 1.0 / (8.0 * c * math.sqrt(kappa * lipschitz) * n ** (1.0 + sigma)
                  * _max_term(epsilon, n))


def delta_isotropic(n: int, epsilon: float) -> float:
    """Cube side for isotropic targets, with the same 1/64 prefactor."""
    _check_n(n)
    _check_prob("epsilon", epsilon)
    le = math.log(1.0 / epsilon)
    return 1.0 / (64.0 * math.sqrt(n) * math.log(n) * math.sqrt(le)
                  * max(n ** 0.25, math.sqrt(le)))


def l_constraint_ok(mu: float, lipschitz: float, n: int) -> bool:
    """L > 1/(n log^2 n) and L >= mu."""
    return lipschitz > 1.0 / (n * math.log(n) ** 2) and lipschitz >= mu


def alpha(kappa: float, lipschitz: float, n: int, epsilon: float,
          mu: float | None = None) -> float:
    """Shrinkage 1/(4 sqrt(kappa L) sqrt(n) log n max{1, sqrt(log(1/eps)/n)}).

    Emits :class:`ConstraintWarning` when L <= 1/(n log^2 n); the value is
    returned regardless.
    """
    _check_kl(kappa, lipschitz)
    _check_n(n)
    _check_prob("epsilon", epsilon)
    mu = lipschitz / kappa if mu is None else mu
    value = 1.0 / (4.0 * math.sqrt(kappa * lipschitz) * math.sqrt(n) * math.log(n)
                   * _max_term(epsilon, n))
    ok = l_constraint_ok(mu, lipschitz, n)
    if not ok:
        warnings.warn(f"L = {lipschitz!r} violates L > max(1/(n log^2 n), mu) at n = {n}",
                      ConstraintWarning, stacklevel=2)
    else:
        assert value <= 0.5
    assert value / (math.sqrt(n) * delta(kappa, lipschitz, n, epsilon)) >= 2.0
    return value


def psi_c(n: int) -> float:
    """Isoperimetric coefficient of the uniform cube, log 2 / sqrt(n)."""
    _check_n(n, 1)
    return LOG2 / math.sqrt(n)


def chen_exponent(n: float, c_prime: float = 1.0) -> float:
    """c' sqrt(log log n / log n)."""
    return c_prime * math.sqrt(math.log(math.log(n)) / math.log(n))


def psi_pi(n: int, mu: float, variant: str = "lee_vempala",
           c_prime: float = 1.0) -> float:
    """Isoperimetric coefficient lower bound for a mu-strongly log-concave measure."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    if variant in ("lee_vempala", "isotropic"):
        _check_n(n, 1)
        return math.sqrt(mu) / (c_prime * n ** 0.25)
    if variant == "chen":
        _check_n(n, 3)
        return math.sqrt(mu) / n ** chen_exponent(n, c_prime)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def big_psi(kappa: float, n: int, epsilon: float,
            constant_override: float | None = None, c_prime: float = 1.0) -> float:
    """C / (kappa n^2.75 log n max{1, sqrt(log(1/eps)/n)}), C = log 2/(2^5 3^3 c')."""
    if not kappa >= 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa!r}")
    _check_n(n)
    _check_prob("epsilon", epsilon)
    C = constant_override if constant_override is not None else LOG2 / (864.0 * c_prime)
    return C / (kappa * n ** 2.75 * math.log(n) * _max_term(epsilon, n))


def big_psi_from_parts(psi_c_value: float, psi_pi_value: float, delta_value: float,
                       n: int) -> float:
    """(2/27) psi_c psi_pi delta / n; reproduces :func:`big_psi` for matching inputs."""
    return (2.0 / 27.0) * psi_c_value * psi_pi_value * delta_value / n


def phi_s_lower(big_psi_value: float, n: int) -> float:
    """s-conductance lower bound Psi / (40 n)."""
    if not (big_psi_value > 0 and n > 0):
        raise ValueError("inputs must be positive")
    return big_psi_value / (40.0 * n)


def ls_tv_bound(M: float, s: float, phi_s: float, t: int) -> float:
    """M s + M (1 - phi_s^2/2)^t; not clamped to 1."""
    if not M >= 1.0:
        raise ValueError(f"M must be >= 1, got {M!r}")
    _check_prob("s", s)
    if not (0.0 < phi_s <= 1.0):
        raise ValueError(f"phi_s must lie in (0, 1], got {phi_s!r}")
    if t < 0:
        raise ValueError("t must be >= 0")
    return M * s + M * (1.0 - 0.5 * phi_s * phi_s) ** t


@dataclass(frozen=True)
class MixingTimeBound:
    tau: float
    displayed: float
    phi_s: float
    big_psi: float
    s: float
    epsilon: float
    variant: str

    def __float__(self) -> float:
        return self.tau

    @property
    def ratio(self) -> float:
        """tau / displayed form: a product of recorded constants and max-terms."""
        return self.tau / self.displayed


def _check_mixing_inputs(kappa, n, M, gamma, variant):
    _check_prob("gamma", gamma)
    if not M >= 1.0:
        raise ValueError(f"M must be >= 1, got {M!r}")
    _check_n(n)
    if not kappa >= 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa!r}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "chen" and n < 3:
        raise ValueError("chen variant needs n >= 3")
    if variant == "isotropic" and kappa != 1.0:
        raise ValueError("isotropic variant applies only to kappa = 1")


def _psi_for(kappa, n, epsilon, variant, c: Constants, mu: float = 1.0) -> float:
    if variant == "lee_vempala":
        return big_psi(kappa, n, epsilon, c.psi_constant, c.c_prime)
    if variant == "chen":
        L = kappa * mu
        return big_psi_from_parts(psi_c(n), psi_pi(n, mu, "chen", c.c_prime),
                                  delta(kappa, L, n, epsilon), n)
    return big_psi_from_parts(psi_c(n), psi_pi(n, 1.0, "isotropic", c.c_prime),
                              delta_isotropic(n, epsilon), n)


def displayed_bound(kappa: float, n: int, M: float, gamma: float,
                    variant: str = "lee_vempala", constants: Constants | None = None) -> float:
    """The headline closed forms, with the unspecified constant C = theorem_c."""
    c = constants or Constants()
    lg = math.log(2.0 * M / gamma)
    ln = math.log(n)
    if variant == "lee_vempala":
        m = max(1.0, math.sqrt(lg / n))
        return c.theorem_c * kappa ** 2 * n ** 7.5 * ln ** 2 * m * m * lg
    if variant == "chen":
        m = max(1.0, math.sqrt(lg / n))
        expo = 7.0 + 2.0 * chen_exponent(n, c.c_prime)
        return c.theorem_c * kappa ** 2 * n ** expo * ln ** 2 * m * m * lg
    m = max(n ** 0.25, math.sqrt(lg / n))
    return c.theorem_c * n ** 6.5 * ln ** 2 * m * m * lg * lg


def mixing_time_bound(kappa: float, n: int, M: float, gamma: float,
                      variant: str = "lee_vempala", constants: Constants | None = None,
                      mu: float = 1.0) -> MixingTimeBound:
    """tau = (2/phi_s^2) log(2M/gamma) with s = gamma/(2M), eps = s/11 and
    phi_s = Psi/(40 n) for the selected isoperimetric variant."""
    _check_mixing_inputs(kappa, n, M, gamma, variant)
    c = constants or Constants()
    s = gamma / (2.0 * M)
    eps = s * c.eps_per_s
    psi = _psi_for(kappa, n, eps, variant, c, mu)
    phi = phi_s_lower(psi, n)
    tau = (2.0 / phi ** 2) * math.log(2.0 * M / gamma)
    if not math.isfinite(tau):
        raise OverflowError("bound exceeds float range; use log_mixing_time_bound")
    return MixingTimeBound(tau, displayed_bound(kappa, n, M, gamma, variant, c), phi,
                           psi, s, eps, variant)


def log_mixing_time_bound(kappa: float, n: float, M: float, gamma: float,
                          variant: str = "lee_vempala",
                          constants: Constants | None = None) -> float:
    """Natural log of :func:`mixing_time_bound`'s tau, valid for astronomically large n."""
    c = constants or Constants()
    _check_prob("gamma", gamma)
    lg = math.log(2.0 * M / gamma)
    eps = gamma / (2.0 * M) * c.eps_per_s
    ln = math.log(n)
    le = math.log(1.0 / eps)
    log_m = math.log(max(1.0, math.sqrt(le / n)))
    if variant == "isotropic":
        raise ValueError("log form is provided for the lee_vempala and chen variants")
    # lee_vempala: log Psi = log C - log kappa - 2.75 log n - log log n - log m
    log_psi = (math.log(c.big_psi_constant) - math.log(kappa) - 2.75 * ln
               - math.log(ln) - log_m)
    if variant == "chen":
        # swap the 1/(c' n^(1/4)) factor for n^(-c' sqrt(log log n / log n))
        log_psi += math.log(c.c_prime) + 0.25 * ln - chen_exponent(n, c.c_prime) * ln
    elif variant != "lee_vempala":
        raise ValueError(f"unknown variant {variant!r}")
    log_phi = log_psi - math.log(40.0 * n)
    return math.log(2.0) - 2.0 * log_phi + math.log(lg)


@dataclass
class BoundReport:
    inputs: dict
    r_eps: float
    nu_n: float
    delta: float
    alpha: float
    psi_c: float
    psi_pi: float
    big_psi: float
    phi_s_lower: float
    tau_bound: float
    tau_displayed: float
    variant: str
    constants: dict
    delta_sigma_form: float = math.nan
    warnings: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, object]]:
        out = [(k, v) for k, v in self.inputs.items()]
        out += [("variant", self.variant), ("r_eps", self.r_eps), ("nu_n", self.nu_n),
                ("delta", self.delta), ("delta_sigma_form", self.delta_sigma_form),
                ("alpha", self.alpha), ("psi_c", self.psi_c), ("psi_pi", self.psi_pi),
                ("big_psi", self.big_psi), ("phi_s_lower", self.phi_s_lower),
                ("tau_bound", self.tau_bound), ("tau_displayed", self.tau_displayed)]
        out += [(f"const.{k}", v) for k, v in self.constants.items()]
        return out

    def as_text(self) -> str:
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {_fmt(v)}" for k, v in rows]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def bound_report(n: int, kappa: float, M: float, gamma: float, mu: float = 1.0,
                 lipschitz: float | None = None, variant: str = "lee_vempala",
                 constants: Constants | None = None) -> BoundReport:
    """Evaluate every quantity at eps = s/11, s = gamma/(2M)."""
    c = constants or Constants()
    L = kappa * mu if lipschitz is None else lipschitz
    if not math.isclose(L / mu, kappa, rel_tol=1e-9):
        raise ValueError(f"kappa={kappa} does not equal lipschitz/mu={L / mu}")
    mt = mixing_time_bound(kappa, n, M, gamma, variant, c, mu)
    eps = mt.epsilon
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        a = alpha(kappa, L, n, eps, mu=mu)
    notes += [str(w.message) for w in caught]
    d = delta_isotropic(n, eps) if variant == "isotropic" else delta(kappa, L, n, eps)
    return BoundReport(
        inputs={"n": n, "kappa": kappa, "mu": mu, "lipschitz": L, "M": M, "gamma": gamma,
                "s": mt.s, "epsilon": eps},
        r_eps=radius_r(eps, n), nu_n=nu(n), delta=d, alpha=a, psi_c=psi_c(n),
        psi_pi=psi_pi(n, mu, variant, c.c_prime), big_psi=mt.big_psi,
        phi_s_lower=mt.phi_s, tau_bound=mt.tau, tau_displayed=mt.displayed,
        variant=variant, constants=c.as_dict(),
        delta_sigma_form=delta_sigma_form(kappa, L, n, eps, c.c_delta), warnings=notes)
