"""Multi-scale bookkeeping: scale schedules, Monte Carlo checks of the
regularity probabilities, and certificate arithmetic for the scale-step lemmas."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import mpmath
import numpy as np
from scipy.stats import beta as beta_dist

from .disorder import DisorderSpec, sample_field
from .green import BoxResolvent, energy_window_from_box, eps_probe_grid, regularity_from_box
from .lattice import Box, GeometryError, LatticeSpec
from .operator import assemble
from .parallel import pool_map

RHO_KINDS = ("exp-power", "algebraic", "remark23", "exponential")
_PREC = 60


# -- schedules ----------------------------------------------------------------


@dataclass(frozen=True)
class ScaleSchedule:
    L0: float
    alpha: float
    depth: int

    def __post_init__(self):
        if not self.L0 > 1:
            raise ValueError("L0 must exceed 1")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.scale(k) for k in range(self.depth + 1)])

    def scale(self, k: int) -> float:
        return float(self.L0 ** (self.alpha**k))

    def radius(self, k: int) -> int:
        """Integer box radius used when a scale is tested on the lattice."""
        return math.ceil(self.scale(k))


def schedule(L0: float, alpha: float, K: int) -> ScaleSchedule:
    return ScaleSchedule(float(L0), float(alpha), int(K))


def k_of_eps(eps: float, sched: ScaleSchedule, nu: Optional[float] = None, n: Optional[float] = None) -> int:
    """Scale index selected by ``eps``.

    With ``nu``: the smallest ``k >= 1`` with ``L_{k-1}^nu <= log(1/eps) < L_k^nu``.
    With ``n`` (algebraic decay): ``L_{k-1}^n < 1/eps <= L_k^n``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if (nu is None) == (n is None):
        raise ValueError("give exactly one of nu, n")
    if nu is not None:
        x, power, strict_low = math.log(1 / eps), nu, False
    else:
        x, power, strict_low = 1 / eps, n, True
    k = 1
    while True:
        lo = sched.L0 ** (sched.alpha ** (k - 1) * power)
        hi = sched.L0 ** (sched.alpha**k * power)
        low_ok = lo < x if strict_low else lo <= x
        high_ok = x <= hi if strict_low else x < hi
        if not low_ok:
            raise ValueError(f"eps={eps:g} too large for this schedule (below the k=1 sandwich)")
        if high_ok:
            return k
        k += 1


# -- regularity probability parameters ----------------------------------------


@dataclass(frozen=True)
class MsaParams:
    """Decay function and exponents of a multi-scale assumption.

    ``rho`` kinds: ``exp-power`` is ``exp(-2 L^nu)``, ``algebraic`` is
    ``L^-m``, ``remark23`` is ``c_n L^(-2 n)`` and ``exponential`` is
    ``exp(-m L / 2)`` (the lattice choice for the Anderson model).
    """

    variant: str = "M2"
    rho_kind: str = "algebraic"
    alpha: float = 1.5
    p: float = 2.0
    dim: int = 1
    interval: tuple = (0.0, 0.0)
    nu: float = 1.0
    m: float = 6.0
    beta: float = 0.0
    n: float = 0.0
    c_n: float = 1.0

    def __post_init__(self):
        if self.variant not in ("M1", "M2"):
            raise ValueError("variant must be M1 or M2")
        if self.rho_kind not in RHO_KINDS:
            raise ValueError(f"rho kind must be one of {RHO_KINDS}")

    def rho(self, L: float) -> float:
        if self.rho_kind == "exp-power":
            return math.exp(-2 * L**self.nu)
        if self.rho_kind == "algebraic":
            return L ** (-self.m)
        if self.rho_kind == "remark23":
            return self.c_n * L ** (-2 * self.n)
        return math.exp(-self.m * L / 2)

    def threshold(self, L: float) -> float:
        return math.sqrt(self.rho(L))

    def violations(self) -> list[str]:
        out = []
        d = self.dim
        if self.variant == "M1":
            if not self.p > self.alpha * (d + 2):
                out.append(f"M1 needs p > alpha(d+2) = {self.alpha * (d + 2):g}, got p = {self.p:g}")
        else:
            bound = 3 + d + self.beta
            if not self.m > bound:
                out.append(f"M2 needs m > 3+d+beta = {bound:g}, got m = {self.m:g}")
            if not self.p > bound:
                out.append(f"M2 needs p > 3+d+beta = {bound:g}, got p = {self.p:g}")
        if self.rho_kind == "remark23" and not self.n > self.alpha * (d + 2):
            out.append(f"algebraic M1 needs n > alpha(d+2) = {self.alpha * (d + 2):g}, got n = {self.n:g}")
        return out

    @property
    def hypotheses_hold(self) -> bool:
        return not self.violations()


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


@dataclass
class ProbabilityEstimate:
    L: float
    radius: int
    samples: int
    passes: int
    ci_low: float
    ci_high: float
    bound: float  # 1 - L^-p
    records: list = field(default_factory=list, repr=False)  # (index, norm, guard_distance, passed)

    @property
    def fraction(self) -> float:
        return self.passes / self.samples

    @property
    def failure_rate(self) -> float:
        return 1 - self.fraction

    @property
    def verdict(self) -> bool:
        return self.ci_low >= self.bound


def _estimate(L: float, radius: int, passes: Sequence[bool], p: float) -> ProbabilityEstimate:
    k, n = int(np.sum(passes)), len(passes)
    lo, hi = clopper_pearson(k, n)
    return ProbabilityEstimate(L, radius, n, k, lo, hi, 1 - L ** (-p))


def separated_site(L: float, dim: int) -> tuple:
    """A site ``q`` with ``||q||_inf > 2L``."""
    return (math.floor(2 * L) + 1,) + (0,) * (dim - 1)


def lattice_for(center_extent: int, radius: int, dim: int) -> LatticeSpec:
    half = center_extent + radius + 1
    return LatticeSpec(dim, 2 * half + 1)


def _m2_job(job):
    spec, index, lattice, box, E, threshold, eps_grid = job
    op = assemble(lattice, sample_field(spec, index, lattice))
    v = regularity_from_box(BoxResolvent(op, box), E, threshold, eps_grid)
    return v.passed, v.measured_norm, v.guard_distance


def estimate_m2_probability(
    params: MsaParams,
    sched: ScaleSchedule,
    k: int,
    E: float,
    disorder: DisorderSpec,
    realizations: int,
    q: Optional[tuple] = None,
    eps_min: float = 1e-6,
    workers: int = 1,
    L: Optional[float] = None,
) -> ProbabilityEstimate:
    """Fraction of realizations for which the box ``Lambda_{L_k}(q)`` is regular at ``E``.

    ``L`` overrides the schedule scale (used to test a plain list of scales).
    """
    L = sched.scale(k) if L is None else float(L)
    radius = math.ceil(L)
    q = separated_site(L, params.dim) if q is None else tuple(q)
    if max(abs(c) for c in q) <= 2 * L:
        raise GeometryError(f"need ||q||_inf > 2L = {2 * L:g}")
    if realizations > disorder.samples:
        raise ValueError("more realizations requested than the disorder spec provides")
    lattice = lattice_for(max(abs(c) for c in q), radius, params.dim)
    box = Box(q, radius)
    grid = eps_probe_grid(eps_min)
    thr = params.threshold(L)
    jobs = [(disorder, i, lattice, box, E, thr, grid) for i in range(realizations)]
    results = pool_map(_m2_job, jobs, workers)
    est = _estimate(L, radius, [r[0] for r in results], params.p)
    est.records = [(i, r[1], r[2], r[0]) for i, r in enumerate(results)]
    return est


def _m1_job(job):
    spec, index, lattice, boxes, energies, threshold, eps_grid = job
    op = assemble(lattice, sample_field(spec, index, lattice))
    a, b = (energy_window_from_box(BoxResolvent(op, bx), energies, threshold, eps_grid) for bx in boxes)
    uniform = a.passed or b.passed
    per_energy = bool(np.all(a.passed_each | b.passed_each))
    return uniform, per_energy


@dataclass
class M1Estimate:
    uniform: ProbabilityEstimate
    per_energy: ProbabilityEstimate
    inclusion_holds: bool  # uniform pass implies per-energy pass on every realization

    @property
    def gap(self) -> float:
        return self.per_energy.fraction - self.uniform.fraction


def estimate_m1_probability(
    params: MsaParams,
    sched: ScaleSchedule,
    k: int,
    energies: Sequence[float],
    pair: tuple,
    disorder: DisorderSpec,
    realizations: int,
    eps_min: float = 1e-3,
    workers: int = 1,
) -> M1Estimate:
    """Both readings of the variable-energy event for the box pair ``(q, q')``."""
    L = sched.scale(k)
    radius = math.ceil(L)
    q, qp = (tuple(s) for s in pair)
    if max(abs(a - b) for a, b in zip(q, qp)) <= 2 * L:
        raise GeometryError(f"need ||q - q'||_inf > 2L = {2 * L:g}")
    reach = max(abs(c) for c in q + qp)
    lattice = lattice_for(reach, radius, params.dim)
    boxes = (Box(q, radius), Box(qp, radius))
    grid = eps_probe_grid(eps_min)
    energies = np.asarray(energies, dtype=float)
    jobs = [(disorder, i, lattice, boxes, energies, params.threshold(L), grid) for i in range(realizations)]
    results = pool_map(_m1_job, jobs, workers)
    uni = [r[0] for r in results]
    per = [r[1] for r in results]
    inclusion = all((not u) or v for u, v in zip(uni, per))
    return M1Estimate(_estimate(L, radius, uni, params.p), _estimate(L, radius, per, params.p), inclusion)


# -- bounds from the exponent and lemma arithmetic ----------------------------


@dataclass
class ExponentBound:
    value: float
    hypothesis: bool


def remark23_bound(alpha: float, d: int, n: float) -> ExponentBound:
    """``sigma^+ <= alpha (d + 2) / n``, asserted only when ``n > alpha (d + 2)``."""
    return ExponentBound(alpha * (d + 2) / n, n > alpha * (d + 2))


def msa_lemma_bound(
    sched: ScaleSchedule,
    eps: float,
    params: MsaParams,
    interval_length: float,
    lattice_form: bool = False,
    c0: float = 1.0,
) -> dict:
    """Arithmetic of the bound on ``E int_I eps || |X| R phi ||^2``.

    ``c0 (L_k^{d+2} + sum_{j>=k} L_{j+1}^{d+2} (term_j + L_j^{-p}))`` with
    ``k = k(eps)`` and ``term_j = rho(L_j) |I| / eps`` (general form) or
    ``2 pi rho(L_j)`` (lattice form, which removes all eps dependence from the
    tail).  The sum runs to the schedule depth.
    """
    if params.rho_kind == "exp-power":
        k = k_of_eps(eps, sched, nu=params.nu)
        reference = math.log(1 / eps) ** (sched.alpha * (params.dim + 2) / params.nu)
    elif params.rho_kind == "remark23":
        k = k_of_eps(eps, sched, n=params.n)
        reference = eps ** (-sched.alpha * (params.dim + 2) / params.n)
    else:
        raise ValueError("lemma arithmetic needs an exp-power or remark23 decay function")
    if k >= sched.depth:
        raise ValueError(f"schedule depth {sched.depth} too shallow for k(eps) = {k}")
    d = params.dim
    total = sched.scale(k) ** (d + 2)
    for j in range(k, sched.depth):
        Lj, Lj1 = sched.scale(j), sched.scale(j + 1)
        term = 2 * math.pi * params.rho(Lj) if lattice_form else params.rho(Lj) * interval_length / eps
        total += Lj1 ** (d + 2) * (term + Lj ** (-params.p))
    return {"k": k, "bound": c0 * total, "reference": reference, "ratio": c0 * total / reference}


def lemma44_bound(sched: ScaleSchedule, eps: float, beta: float, K: int, interval_length: float, C: float = 1.0) -> dict:
    """``C (eps L_{J0}^2 + |I| L_{J0}^{-beta})`` with ``J0 = J - K``, ``L_J < 1/eps <= L_{J+1}``."""
    if not 2 * sched.alpha ** (-K) < 1:
        raise ValueError("K must satisfy 2 alpha^-K < 1")
    x = 1 / eps
    J = None
    for j in range(sched.depth):
        if sched.scale(j) < x <= sched.scale(j + 1):
            J = j
            break
    if J is None:
        raise ValueError("1/eps outside the schedule range")
    J0 = J - K
    if J0 < 0:
        raise ValueError(f"J - K = {J0} < 0: eps too large for this K")
    LJ0 = sched.scale(J0)
    upsilon = min(beta * sched.alpha ** (-K - 1), 1 - 2 * sched.alpha ** (-K))
    return {"J": J, "J0": J0, "bound": C * (eps * LJ0**2 + interval_length * LJ0 ** (-beta)), "upsilon": upsilon,
            "eps_power": eps**upsilon}


# -- appendix certificates ----------------------------------------------------


@dataclass(frozen=True)
class CertificateParams:
    alpha: float = 1.5
    m: float = 33.0
    w: float = 8.0
    S: int = 4
    N: int = 14
    d: int = 1
    K0: int = 10
    theta: float = 3.0
    p: float = 5.5
    C_W: float = 1.0
    interval_length: float = 1.0
    c_NSd: float = 1.0  # c(N, S, d)
    c_dN: float = 1.0  # c_{d,N}
    c_check: float = 1.0  # the constant written with a check accent
    violations: tuple = field(default=(), compare=False)

    def __post_init__(self):
        bad = []
        if self.S % 2:
            bad.append("S must be even")
        if not 2 < self.S < self.N - 1:
            bad.append("need 2 < S < N - 1")
        if not self.N > 4:
            bad.append("need N > 4")
        object.__setattr__(self, "violations", tuple(bad))


def example3_params(**overrides) -> CertificateParams:
    """The d = 1 parameter set: K0 = 10, w = 2d + K0/2 + 1, m = 4w + 2(d-1) + 1."""
    d = overrides.pop("d", 1)
    K0 = overrides.pop("K0", 10)
    w = 2 * d + K0 / 2 + 1
    base = dict(alpha=1.5, m=4 * w + 2 * (d - 1) + 1, w=w, S=4, N=14, d=d, K0=K0, theta=3.0, p=5.5)
    base.update(overrides)
    return CertificateParams(**base)


@dataclass
class DeterministicCertificate:
    ell: float
    L: float
    condition: bool
    condition_lhs: float
    condition_rhs: float
    chain_lhs: str  # extended-precision values as decimal strings
    chain_rhs: str
    passed: bool
    smallest_L: Optional[float]


def deterministic_certificate(params: CertificateParams, ell: float) -> DeterministicCertificate:
    """Condition ``(S - alpha) m > alpha (S+1) w + S (d-1)(alpha-1)`` and the chain bound at ``L = N ell^alpha``."""
    if not ell > 1:
        raise ValueError("ell must exceed 1")
    a, m, w, S, N, d = params.alpha, params.m, params.w, params.S, params.N, params.d
    with mpmath.workdps(_PREC):
        A, M, W = mpmath.mpf(a), mpmath.mpf(m), mpmath.mpf(w)
        cond_lhs = (S - A) * M
        cond_rhs = A * (S + 1) * W + S * (d - 1) * (A - 1)
        ell_mp = mpmath.mpf(ell)
        L = N * ell_mp**A
        cc = mpmath.mpf(params.c_check)
        inner = L ** ((1 - 1 / A) * (d - 1)) * L**W * ell_mp ** (-M)
        lhs = (cc * params.c_dN) ** S * cc * inner**S * L**W
        rhs = L ** (-M)
        smallest = _smallest_chain_L(params)
        return DeterministicCertificate(
            float(ell), float(L), bool(cond_lhs > cond_rhs), float(cond_lhs), float(cond_rhs),
            mpmath.nstr(lhs, 20), mpmath.nstr(rhs, 20), bool(lhs <= rhs), smallest,
        )


def _smallest_chain_L(params: CertificateParams) -> Optional[float]:
    """Smallest ``L > N`` beyond which the chain bound holds.

    In log variables the bound reads ``A + B log L <= 0`` with ``B < 0``
    exactly when the condition holds, so the threshold is explicit.
    """
    a, m, w, S, N, d = params.alpha, params.m, params.w, params.S, params.N, params.d
    with mpmath.workdps(_PREC):
        A_ = mpmath.mpf(a)
        gap = (S - A_) * m - (A_ * (S + 1) * w + S * (d - 1) * (A_ - 1))
        cc = mpmath.mpf(params.c_check)
        num = A_ * S * mpmath.log(cc * params.c_dN) + A_ * mpmath.log(cc) + S * m * mpmath.log(N)
        if gap <= 0:
            return None
        return float(max(mpmath.e ** (num / gap), mpmath.mpf(N)))


@dataclass
class ProbabilisticCertificate:
    L1: float
    lower: str
    target: str
    deficit: str
    passed: bool
    hypothesis: bool
    hypothesis_window: tuple
    wegner_exponent: float
    counting_exponent: float


def probabilistic_certificate(params: CertificateParams, L0: float) -> ProbabilisticCertificate:
    """The lower bound on the probability of the good event at ``L1 = N L0^alpha``."""
    a, w, S, N, d, th, p = params.alpha, params.w, params.S, params.N, params.d, params.theta, params.p
    lo_p = (a - 1) * (d - 1) * (N - S) / (th - a) if th != a else math.inf
    hi_p = w - 2 * d
    hyp = bool(lo_p < p < hi_p)
    wegner_exp = -w + 2 * d
    count_exp = (1 - 1 / a) * (d - 1) * (N - S) - p * th / a
    with mpmath.workdps(_PREC):
        L1 = N * mpmath.mpf(L0) ** mpmath.mpf(a)
        binom = mpmath.binomial(N - 1, N - S)
        t1 = 2 ** (2 * d + 1) * binom * params.C_W * params.interval_length * L1 ** mpmath.mpf(wegner_exp)
        t2 = 3 * params.c_NSd * mpmath.mpf(N) ** (mpmath.mpf(p) * th / a) * L1 ** mpmath.mpf(count_exp)
        lower = 1 - t1 - t2
        target = 1 - L1 ** (-mpmath.mpf(p))
        return ProbabilisticCertificate(
            float(L1), mpmath.nstr(lower, 25), mpmath.nstr(target, 25), mpmath.nstr(target - lower, 20),
            bool(lower >= target), hyp, (lo_p, hi_p), float(wegner_exp), float(count_exp),
        )


def certificate_report(params: CertificateParams, ell: float, L0: float) -> dict:
    det = deterministic_certificate(params, ell)
    prob = probabilistic_certificate(params, L0)
    return {
        "inputs": {k: v for k, v in asdict(params).items() if k != "violations"},
        "parameter_violations": list(params.violations),
        "deterministic": asdict(det),
        "probabilistic": asdict(prob),
    }
