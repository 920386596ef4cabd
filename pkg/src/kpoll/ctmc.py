"""Truncated CTMC of the exponential two-queue k-limited polling model.

States are ``(n1, n2, h)`` with server phase ``h`` (1-based, as in the
usual numbering):

* ``1..k1``            serving the h-th customer of the current Q1 visit
* ``k1 + 1``           switching Q1 -> Q2
* ``k1+2..k1+k2+1``    serving at Q2
* ``k1 + k2 + 2``      switching Q2 -> Q1

Internally ``h`` is stored 0-based.  When the server finishes a switch-over
and finds the next queue empty it immediately starts the following
switch-over, so with both queues empty it keeps cycling.  Arrivals beyond the
truncation bounds are dropped.

States are ordered level by level in ``n2``.  Small chains are solved by
sparse LU; large ones by block elimination over the ``n2`` levels
(linear level reduction), which is exact for the truncated chain.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .htcalc import VacationModelSpec
from .model import PollingModel, load_report

DIRECT_LIMIT = 200_000
TAIL_WARNING = 1e-4


class OracleError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def _rate(spec) -> float:
    if not spec.is_exponential:
        raise OracleError(f"oracle requires exponential model, got {spec}")
    return spec.params[0]


def _exp_params(model: PollingModel):
    if model.n != 2:
        raise OracleError("the CTMC oracle handles two-queue models")
    out = []
    for i, q in enumerate(model.queues):
        if len(q.switchover) != 1:
            raise OracleError(f"oracle requires exponential model (queue {i + 1} has a compound switch-over)")
        lam, mu, sigma = _rate(q.arrival), _rate(q.service), _rate(q.switchover[0])
        if mu <= 0 or sigma <= 0:
            raise OracleError("service and switch-over rates must be positive")
        out.append((lam, mu, sigma, q.limit))
    return out


def default_truncation(model: PollingModel) -> tuple[int, int]:
    """``N1max = 40`` and ``N2max = 60 / (1 - u2)`` capped at 4000."""
    u2 = load_report(model).utilizations[1]
    k = max(model.limits) + 2
    n2 = 4000 if u2 >= 1 else min(4000, math.ceil(60.0 / (1.0 - u2)))
    return max(40, k), max(n2, k)


@dataclass
class Generator:
    model: PollingModel
    N1max: int
    N2max: int
    k1: int
    k2: int
    n1: np.ndarray
    n2: np.ndarray
    h: np.ndarray
    index: np.ndarray  # index[n2, n1, h] -> state number, -1 if invalid
    Q: sp.csr_matrix
    level_ptr: np.ndarray  # states of level n2 are level_ptr[n2]:level_ptr[n2 + 1]

    @property
    def phases(self) -> int:
        return self.k1 + self.k2 + 2

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def state(self, n1: int, n2: int, h: int) -> int:
        """State number for 1-based phase ``h``; raises KeyError if excluded."""
        if not (0 <= n1 <= self.N1max and 0 <= n2 <= self.N2max and 1 <= h <= self.phases):
            raise KeyError((n1, n2, h))
        s = self.index[n2, n1, h - 1]
        if s < 0:
            raise KeyError((n1, n2, h))
        return int(s)


def build_generator(model: PollingModel, N1max: int | None = None, N2max: int | None = None) -> Generator:
    (lam1, mu1, sig1, k1), (lam2, mu2, sig2, k2) = _exp_params(model)
    d1, d2 = default_truncation(model)
    N1max = d1 if N1max is None else int(N1max)
    N2max = d2 if N2max is None else int(N2max)
    need = max(k1, k2) + 2
    if N1max < need or N2max < need:
        raise ValueError(f"truncation bounds must be >= {need}")
    K = k1 + k2 + 2
    SW1, SW2 = k1, K - 1

    g2, g1, gh = np.meshgrid(np.arange(N2max + 1), np.arange(N1max + 1), np.arange(K), indexing="ij")
    valid = ~(((gh < k1) & (g1 == 0)) | ((gh > SW1) & (gh < SW2) & (g2 == 0)))
    index = np.full(valid.shape, -1, dtype=np.int64)
    index[valid] = np.arange(int(valid.sum()))
    n2, n1, h = g2[valid], g1[valid], gh[valid]
    S = n1.size

    src, dst, rate = [], [], []

    def add(mask, t1, t2, th, r):
        if r == 0 or not mask.any():
            return
        s = np.nonzero(mask)[0]
        d = index[t2[s], t1[s], th[s]]
        assert (d >= 0).all()
        src.append(s)
        dst.append(d)
        rate.append(np.full(s.size, r))

    add(n1 < N1max, n1 + 1, n2, h, lam1)
    add(n2 < N2max, n1, n2 + 1, h, lam2)

    # service completion at Q1 (slot = h + 1)
    m = h < k1
    nn1 = n1 - 1
    nh = np.where((h + 1 < k1) & (nn1 >= 1), h + 1, SW1)
    add(m, np.where(m, nn1, 0), n2, nh, mu1)

    # end of switch-over Q1 -> Q2
    add(h == SW1, n1, n2, np.where(n2 >= 1, SW1 + 1, SW2), sig1)

    # service completion at Q2 (slot = h - k1)
    m = (h > SW1) & (h < SW2)
    nn2 = n2 - 1
    nh = np.where((h - k1 < k2) & (nn2 >= 1), h + 1, SW2)
    add(m, n1, np.where(m, nn2, 0), nh, mu2)

    # end of switch-over Q2 -> Q1
    add(h == SW2, n1, n2, np.where(n1 >= 1, 0, SW1), sig2)

    src = np.concatenate(src)
    dst = np.concatenate(dst)
    rate = np.concatenate(rate)
    out = np.bincount(src, weights=rate, minlength=S)
    Q = sp.csr_matrix(
        (np.concatenate([rate, -out]), (np.concatenate([src, np.arange(S)]), np.concatenate([dst, np.arange(S)]))),
        shape=(S, S),
    )
    Q.sum_duplicates()
    level_ptr = np.searchsorted(n2, np.arange(N2max + 2))
    return Generator(model, N1max, N2max, k1, k2, n1, n2, h, index, Q, level_ptr)


@dataclass
class SteadyStateTable:
    generator: Generator
    pi: np.ndarray
    residual: float
    tail_mass: float
    method: str
    tail_warning: bool = field(default=False)

    def prob(self, n1, n2, h) -> float:
        try:
            return float(self.pi[self.generator.state(n1, n2, h)])
        except KeyError:
            return 0.0


def _solve_direct(Q: sp.csr_matrix) -> np.ndarray:
    # fix the last component to 1 and drop its equation; a dense
    # normalization row would destroy the sparsity of the LU factors
    QT = Q.T.tocsc()
    x = np.empty(Q.shape[0])
    x[:-1] = spla.spsolve(QT[:-1, :-1].tocsc(), -QT[:-1, -1].toarray().ravel())
    x[-1] = 1.0
    return x / x.sum()


def _solve_power(Q: sp.csr_matrix, tol: float, max_iter: int) -> np.ndarray:
    """Uniformized power iteration."""
    S = Q.shape[0]
    qmax = float(-Q.diagonal().min()) * 1.0001
    PT = (sp.identity(S, format="csr") + Q / qmax).T.tocsr()
    x = np.full(S, 1.0 / S)
    for _ in range(max_iter):
        y = PT @ x
        y /= y.sum()
        if np.abs(y - x).max() < tol * 1e-2:
            return y
        x = y
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def _null_row(U: np.ndarray) -> np.ndarray:
    """Row vector ``x`` with ``x U = 0`` and ``sum(x) = 1``."""
    A = U.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(U.shape[0])
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def _solve_levels(gen: Generator, checkpoint: int | None = None) -> np.ndarray:
    """Linear level reduction over n2 with checkpointed recomputation of R_n.

    With ``U_L = A1_L``, ``R_n = A0_{n-1} (-U_n)^{-1}`` and
    ``U_{n-1} = A1_{n-1} + R_n A2_n``, the solution is ``pi_0 U_0 = 0`` and
    ``pi_n = pi_{n-1} R_n``.
    """
    Q, p = gen.Q, gen.level_ptr
    L = gen.N2max
    c = checkpoint or max(8, int(math.sqrt(L + 1)))

    def rows(n):
        return Q[p[n]:p[n + 1]]

    def local(n):
        return rows(n)[:, p[n]:p[n + 1]].toarray()

    def up(n):  # level n -> n + 1
        return rows(n)[:, p[n + 1]:p[n + 2]].toarray()

    def down(n):  # level n -> n - 1, kept sparse
        return rows(n)[:, p[n - 1]:p[n]].tocsr()

    def step(n, U):
        R = np.linalg.solve(-U.T, up(n - 1).T).T
        U_prev = local(n - 1) + (down(n).T @ R.T).T
        return R, U_prev

    saved = {L: local(L)}
    U = saved[L]
    for n in range(L, 0, -1):
        _, U = step(n, U)
        if (n - 1) % c == 0:
            saved[n - 1] = U

    pi = np.empty(Q.shape[0])
    x = _null_row(saved[0])
    pi[p[0]:p[1]] = x
    for a in range(0, L, c):
        b = min(a + c, L)
        U = saved[b]
        Rs = {}
        for n in range(b, a, -1):
            Rs[n], U = step(n, U)
        for n in range(a + 1, b + 1):
            x = x @ Rs[n]
            pi[p[n]:p[n + 1]] = x
    return pi


def steady_state(gen: Generator, tolerance: float = 1e-10, method: str = "auto",
                 max_iter: int = 1_000_000) -> SteadyStateTable:
    """Stationary distribution of the truncated chain.

    ``method``: ``"direct"`` (sparse LU), ``"levels"`` (block elimination
    over n2), ``"power"`` (uniformized power iteration) or ``"auto"``
    (direct up to 2e5 states, otherwise levels).
    """
    if method == "auto":
        method = "direct" if gen.size <= DIRECT_LIMIT else "levels"
    if method == "direct":
        pi = _solve_direct(gen.Q)
    elif method == "levels":
        pi = _solve_levels(gen)
    elif method == "power":
        pi = _solve_power(gen.Q, tolerance, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.where(pi < 0, 0.0, pi)  # round-off only
    pi /= pi.sum()
    residual = float(np.abs(gen.Q.T @ pi).max())
    if residual > tolerance:
        raise ConvergenceError(f"stationary residual {residual:.3g} exceeds tolerance {tolerance:.3g}")
    tail = float(pi[(gen.n1 == gen.N1max) | (gen.n2 == gen.N2max)].sum())
    table = SteadyStateTable(gen, pi, residual, tail, method, tail > TAIL_WARNING)
    if table.tail_warning:
        warnings.warn(f"truncation boundary holds probability {tail:.3g}; enlarge N1max/N2max", RuntimeWarning)
    return table


@dataclass(frozen=True)
class BalanceReport:
    interior: float  # max |in-flow - out-flow| away from the truncation boundary
    boundary: float  # same on the boundary layer
    switch_family: float  # the (0, n2, k1+1) equations written out term by term

    @property
    def max(self) -> float:
        return max(self.interior, self.boundary)


def balance_residual(gen: Generator, table: SteadyStateTable | np.ndarray) -> BalanceReport:
    pi = table.pi if isinstance(table, SteadyStateTable) else np.asarray(table)
    r = np.abs(gen.Q.T @ pi)
    edge = (gen.n1 == gen.N1max) | (gen.n2 == gen.N2max)
    interior = float(r[~edge].max()) if (~edge).any() else 0.0
    boundary = float(r[edge].max()) if edge.any() else 0.0

    (lam1, mu1, sig1, k1), (lam2, _, sig2, k2) = _exp_params(gen.model)
    sw1, sw2 = k1 + 1, k1 + k2 + 2

    def p(n1, n2, h):
        s = gen.index[n2, n1, h - 1]
        return pi[s] if s >= 0 else 0.0

    worst = 0.0
    for n2 in range(2, gen.N2max):
        lhs = (lam1 + lam2 + sig1) * p(0, n2, sw1)
        rhs = lam2 * p(0, n2 - 1, sw1) + mu1 * sum(p(1, n2, h) for h in range(1, k1 + 1)) + sig2 * p(0, n2, sw2)
        worst = max(worst, abs(lhs - rhs))
    return BalanceReport(interior, boundary, worst)


def marginals(table: SteadyStateTable):
    """``(P[N1 = n], P[N2 = n], joint[n1, n2])``."""
    gen = table.generator
    joint = np.zeros((gen.N1max + 1, gen.N2max + 1))
    np.add.at(joint, (gen.n1, gen.n2), table.pi)
    return joint.sum(axis=1), joint.sum(axis=0), joint


def vacation_steady_state(spec: VacationModelSpec, Nmax: int = 200, tolerance: float = 1e-10) -> np.ndarray:
    """Queue-length distribution ``P[L = n], n = 0..Nmax`` of the k-limited
    multiple-vacation queue, with the vacation expanded into exponential phases."""
    lam = _rate(spec.arrival)
    mu = _rate(spec.service)
    vrates = [_rate(v) for v in spec.vacation]
    if mu <= 0 or min(vrates) <= 0:
        raise OracleError("service and vacation rates must be positive")
    k, V = spec.limit, len(vrates)
    if lam == 0:
        out = np.zeros(Nmax + 1)
        out[0] = 1.0
        return out
    P = k + V
    gn, gh = np.meshgrid(np.arange(Nmax + 1), np.arange(P), indexing="ij")
    valid = ~((gh < k) & (gn == 0))
    index = np.full(valid.shape, -1, dtype=np.int64)
    index[valid] = np.arange(int(valid.sum()))
    n, h = gn[valid], gh[valid]
    S = n.size
    src, dst, rate = [], [], []

    def add(mask, tn, th, r):
        s = np.nonzero(mask)[0]
        if s.size == 0:
            return
        d = index[tn[s], th[s]]
        assert (d >= 0).all()
        src.append(s)
        dst.append(d)
        rate.append(r[s] if isinstance(r, np.ndarray) else np.full(s.size, r))

    add(n < Nmax, n + 1, h, lam)
    m = h < k
    nn = np.where(m, n - 1, 0)
    add(m, nn, np.where((h + 1 < k) & (nn >= 1), h + 1, k), mu)
    m = h >= k
    last = h == P - 1
    nh = np.where(last, np.where(n >= 1, 0, k), h + 1)
    vr = np.asarray(vrates)[np.clip(h - k, 0, V - 1)]
    add(m, n, nh, vr)

    src, dst, rate = map(np.concatenate, (src, dst, rate))
    out = np.bincount(src, weights=rate, minlength=S)
    Q = sp.csr_matrix(
        (np.concatenate([rate, -out]), (np.concatenate([src, np.arange(S)]), np.concatenate([dst, np.arange(S)]))),
        shape=(S, S),
    )
    pi = _solve_direct(Q)
    pi = np.where(pi < 0, 0.0, pi)
    pi /= pi.sum()
    residual = float(np.abs(Q.T @ pi).max())
    if residual > tolerance:
        raise ConvergenceError(f"vacation chain residual {residual:.3g}")
    return np.bincount(n, weights=pi, minlength=Nmax + 1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


def correlation_from_joint(joint: np.ndarray) -> float:
    i = np.arange(joint.shape[0])
    j = np.arange(joint.shape[1])
    p1, p2 = joint.sum(1), joint.sum(0)
    m1, m2 = p1 @ i, p2 @ j
    v1 = p1 @ i**2 - m1**2
    v2 = p2 @ j**2 - m2**2
    cov = i @ joint @ j - m1 * m2
    return float(cov / math.sqrt(v1 * v2)) if v1 > 0 and v2 > 0 else 0.0


@dataclass(frozen=True)
class GapReport:
    u2: float
    tv_n1_vs_vacation: float
    mean_scaled_n2: float
    inv_eta: float
    tv_joint_vs_product: float
    correlation: float

    @property
    def rel_err_scaled_mean(self) -> float:
        return abs(self.mean_scaled_n2 * (1.0 / self.inv_eta) - 1.0)

    def csv_row(self) -> str:
        return (f"{self.u2:.6g},{self.tv_n1_vs_vacation:.6g},{self.mean_scaled_n2:.6g},"
                f"{self.inv_eta:.6g},{self.tv_joint_vs_product:.6g},{self.correlation:.6g}")


GAP_HEADER = "u2,tv_n1_vs_vacation,mean_scaled_n2,inv_eta,tv_joint_vs_product,correlation"


def product_form_gap(table: SteadyStateTable | np.ndarray, eta: float, vacation_dist: np.ndarray,
                     u2: float | None = None) -> GapReport:
    """Distance of the chain's joint law from the heavy-traffic product form.

    ``table`` may also be a joint probability array ``joint[n1, n2]``; then
    ``u2`` must be given.
    """
    if isinstance(table, SteadyStateTable):
        p1, p2, joint = marginals(table)
        u2 = load_report(table.generator.model).utilizations[1]
    else:
        joint = np.asarray(table, dtype=float)
        p1, p2 = joint.sum(1), joint.sum(0)
        if u2 is None:
            raise ValueError("u2 is required when passing a joint array")
    mean_n2 = float(p2 @ np.arange(p2.size))
    return GapReport(
        u2=u2,
        tv_n1_vs_vacation=total_variation(p1, vacation_dist),
        mean_scaled_n2=(1.0 - u2) * mean_n2,
        inv_eta=1.0 / eta,
        tv_joint_vs_product=0.5 * float(np.abs(joint - np.outer(p1, p2)).sum()),
        correlation=correlation_from_joint(joint),
    )
