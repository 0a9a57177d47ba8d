"""Exact cluster-expansion algebra on small tensor grids.

Set partitions and Moebius inversion give the classical correlation
functions G_{N,m}.  Deviations from the factorized mean-field density are
captured by direct cumulants kappa_{N,n} (expansion of F_N around
f^{tensor N} over particle subsets) and dual cumulants C_{N,n} (the same
subset expansion of a backward observable h_N).  Both families are fixed
uniquely by the f-slot cancellation condition, enforced here through the
projector P_n = (Id - Pi_1) ... (Id - Pi_n), where Pi_i averages slot i
against f.

All integrals are discrete sums over a tensor quadrature grid whose density
weights are normalized to total mass one, so every expansion/extraction
round trip below is exact up to floating-point rounding, independent of
quadrature accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .core import DensityModel

__all__ = [
    "Partition",
    "DiscreteMeasure",
    "DiscreteFunction",
    "CumulantTable",
    "enumerate_partitions",
    "bell_number",
    "marginals_to_G",
    "cluster_to_marginals",
    "projector_apply",
    "average_out",
    "fn_to_kappa",
    "kappa_table",
    "reconstruct_from_kappa",
    "h_to_dual_cumulants",
    "dual_table",
    "reconstruct_from_dual",
    "rescale",
    "max_slot_residual",
    "write_table_csv",
]

MAX_PARTITION_ORDER = 8
_F_FLOOR = 1e-12


# --- partitions --------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """A set partition of {1..m}; blocks are disjoint, nonempty, covering."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for b in self.blocks:
            if not b:
                raise ValueError("empty block")
            if seen & set(b):
                raise ValueError("overlapping blocks")
            seen |= set(b)
        if seen != set(range(1, len(seen) + 1)):
            raise ValueError("blocks must cover {1..m}")

    @property
    def m(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)


def enumerate_partitions(m: int) -> list[Partition]:
    """All set partitions of {1..m}; count is the Bell number."""
    if not 1 <= m <= MAX_PARTITION_ORDER:
        raise ValueError(f"m must be in 1..{MAX_PARTITION_ORDER}")
    parts: list[list[list[int]]] = [[[1]]]
    for elem in range(2, m + 1):
        grown: list[list[list[int]]] = []
        for p in parts:
            for i in range(len(p)):
                grown.append([b + [elem] if j == i else list(b) for j, b in enumerate(p)])
            grown.append([list(b) for b in p] + [[elem]])
        parts = grown
    return [Partition(tuple(tuple(b) for b in p)) for p in parts]


def bell_number(m: int) -> int:
    """Bell numbers via the triangle recurrence."""
    if m < 1:
        return 1
    row = [1]
    for _ in range(m - 1):
        new = [row[-1]]
        for val in row:
            new.append(new[-1] + val)
        row = new
    return row[-1]


# --- discrete grid machinery --------------------------------------------------


@dataclass(frozen=True)
class DiscreteMeasure:
    """Tensor quadrature grid over phase space with density weights.

    u: plain (Lebesgue) quadrature weights per node.
    fvals: density values, normalized so that sum(fvals * u) == 1 exactly.
    w = fvals * u are then probability weights for the slot averages Pi_i.
    """

    xg: np.ndarray
    vg: np.ndarray
    u: np.ndarray
    fvals: np.ndarray
    nx: int
    nv: int
    raw_mass: float = 1.0  # quadrature mass of the unnormalized density

    @property
    def size(self) -> int:
        return self.u.size

    @property
    def w(self) -> np.ndarray:
        return self.fvals * self.u

    @classmethod
    def from_model(cls, model: DensityModel, nx: int = 6, nv: int = 6,
                   vmax: float | None = None) -> "DiscreteMeasure":
        from .core import torus_nodes, velocity_nodes

        xn, xw = torus_nodes(nx)
        vn, vw = velocity_nodes(nv, vmax if vmax is not None else model.vmax)
        X, V = np.meshgrid(xn, vn, indexing="ij")
        U = np.outer(xw, vw)
        f = model.f(X, V)
        xg, vg, u, fv = (a.ravel().copy() for a in (X, V, U, f))
        fv = np.maximum(fv, _F_FLOOR)  # division guard before normalizing
        mass = float(np.sum(fv * u))
        if mass <= 0:
            raise ValueError("density has nonpositive grid mass")
        fv = fv / mass
        return cls(xg, vg, u, fv, nx, nv, raw_mass=mass)


@dataclass(frozen=True)
class DiscreteFunction:
    """A function of n phase points restricted to the tensor grid."""

    values: np.ndarray
    measure: DiscreteMeasure
    symmetric: bool = False

    def __post_init__(self):
        g = self.measure.size
        if self.values.shape != (g,) * self.values.ndim:
            raise ValueError("values must be a (G,)*n tensor over the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values")

    @property
    def arity(self) -> int:
        return self.values.ndim

    @classmethod
    def from_callable(cls, fn, measure: DiscreteMeasure, arity: int,
                      symmetric: bool = False) -> "DiscreteFunction":
        """Evaluate fn(x1, v1, ..., xn, vn) on the tensor grid."""
        g = measure.size
        grids = np.meshgrid(*([np.arange(g)] * arity), indexing="ij") if arity > 1 else [np.arange(g)]
        args = []
        for idx in grids:
            args.append(measure.xg[idx])
            args.append(measure.vg[idx])
        vals = np.asarray(fn(*args), dtype=np.float64)
        return cls(vals.reshape((g,) * arity), measure, symmetric=symmetric)


def _embed(values: np.ndarray, slots: tuple[int, ...], arity: int) -> np.ndarray:
    """Place a |slots|-ary tensor on the given (sorted) slots of an arity-wide
    tensor, broadcasting over the rest."""
    missing = tuple(i for i in range(arity) if i not in slots)
    return np.expand_dims(values, missing) if missing else values


def integrate_full(df: DiscreteFunction, weights: np.ndarray | None = None) -> float:
    """Contract every slot; default weights are the Lebesgue weights u."""
    w = df.measure.u if weights is None else weights
    vals = df.values
    for _ in range(df.arity):
        vals = np.tensordot(vals, w, axes=([-1], [0]))
    return float(vals)


def average_out(df: DiscreteFunction, slots, weighted: bool = True) -> DiscreteFunction:
    """Contract the listed slots (1-based) against f-weights (Pi_i) or plain
    quadrature weights; the arity drops accordingly."""
    slots = sorted(set(int(s) for s in slots))
    if any(s < 1 or s > df.arity for s in slots):
        raise ValueError("slot out of range")
    w = df.measure.w if weighted else df.measure.u
    vals = df.values
    for s in reversed(slots):
        vals = np.tensordot(vals, w, axes=([s - 1], [0]))
    return DiscreteFunction(vals, df.measure, symmetric=df.symmetric)


def projector_apply(df: DiscreteFunction, slots, model: DensityModel | None = None) -> DiscreteFunction:
    """Apply (Id - Pi_i) for each listed slot (1-based).

    Pi_i averages slot i against the grid density, so the output integrates
    to zero against f in every treated slot.
    """
    slots = sorted(set(int(s) for s in slots))
    if any(s < 1 or s > df.arity for s in slots):
        raise ValueError("slot out of range")
    w = df.measure.w
    vals = df.values
    for s in slots:
        avg = np.tensordot(vals, w, axes=([s - 1], [0]))
        vals = vals - np.expand_dims(avg, s - 1)
    return DiscreteFunction(vals, df.measure, symmetric=False)


def max_slot_residual(df: DiscreteFunction) -> float:
    """max over slots of max |Pi_i df|: the f-cancellation defect."""
    if df.arity == 0:
        return 0.0
    w = df.measure.w
    worst = 0.0
    for s in range(df.arity):
        avg = np.tensordot(df.values, w, axes=([s], [0]))
        worst = max(worst, float(np.max(np.abs(avg))))
    return worst


# --- cumulant tables ----------------------------------------------------------


@dataclass(frozen=True)
class CumulantTable:
    """Cumulants indexed by order; order-0 entries are scalars."""

    family: str  # "G" | "kappa" | "dual_C"
    entries: dict = field(default_factory=dict)
    rescaled: bool = False
    n_particles: int = 0

    def order(self, n: int):
        return self.entries[n]

    def orders(self):
        return sorted(self.entries)


def rescale(table: CumulantTable, n_particles: int) -> CumulantTable:
    """Multiply each order-n entry by binom(N, n)^(1/2)."""
    if table.rescaled:
        raise ValueError("table is already rescaled")
    out = {}
    for n, entry in table.entries.items():
        factor = math.sqrt(math.comb(n_particles, n))
        if isinstance(entry, DiscreteFunction):
            out[n] = replace(entry, values=entry.values * factor)
        else:
            out[n] = entry * factor
    return CumulantTable(table.family, out, rescaled=True, n_particles=n_particles)


# --- classical cumulants (Moebius inversion) ----------------------------------


def _check_normalized(df: DiscreteFunction, tol: float = 1e-8) -> None:
    mass = integrate_full(df)
    if abs(mass - 1.0) > tol:
        raise ValueError(f"marginal of arity {df.arity} integrates to {mass}, not 1")


def marginals_to_G(marginals: list[DiscreteFunction]) -> CumulantTable:
    """Moebius inversion G_m = sum_pi (|pi|-1)! (-1)^(|pi|-1) prod_sigma F_|sigma|.

    ``marginals[i]`` is the (i+1)-particle marginal; all orders through
    len(marginals) are produced.
    """
    m_top = len(marginals)
    if m_top < 1:
        raise ValueError("need at least the first marginal")
    for df in marginals:
        _check_normalized(df)
    measure = marginals[0].measure
    entries: dict = {}
    for m in range(1, m_top + 1):
        acc = np.zeros((measure.size,) * m)
        for part in enumerate_partitions(m):
            coef = math.factorial(len(part) - 1) * (-1) ** (len(part) - 1)
            term = np.ones((1,) * m)
            for block in part.blocks:
                slots = tuple(b - 1 for b in block)
                vals = marginals[len(block) - 1].values
                term = term * _embed(vals, slots, m)
            acc = acc + coef * term
        entries[m] = DiscreteFunction(acc, measure, symmetric=True)
    return CumulantTable("G", entries, rescaled=False)


def cluster_to_marginals(table: CumulantTable, m_top: int) -> list[DiscreteFunction]:
    """Inverse expansion F_m = sum_pi prod_sigma G_|sigma|."""
    first = table.entries[1]
    measure = first.measure
    out = []
    for m in range(1, m_top + 1):
        acc = np.zeros((measure.size,) * m)
        for part in enumerate_partitions(m):
            term = np.ones((1,) * m)
            for block in part.blocks:
                slots = tuple(b - 1 for b in block)
                term = term * _embed(table.entries[len(block)].values, slots, m)
            acc = acc + term
        out.append(DiscreteFunction(acc, measure, symmetric=True))
    return out


# --- direct cumulants ----------------------------------------------------------


def fn_to_kappa(f_n: DiscreteFunction, n: int) -> DiscreteFunction:
    """Extract kappa_{N,n} from the (exchangeable) N-particle density on the
    grid.

    Marginalize to n slots, divide by f^{tensor n}, and project:
    kappa_{N,n} = P_n [ F_{N,n} / f^{tensor n} ].  Exact on the grid because
    (Id - Pi_i) kills every expansion term missing slot i while Pi_i kills
    every term containing it.  Symmetry of F_N under particle permutation is
    what lets one order-n entry stand for every n-subset.
    """
    N = f_n.arity
    if n < 1 or n > N:
        raise ValueError("need 1 <= n <= N")
    measure = f_n.measure
    marg = average_out(f_n, range(n + 1, N + 1), weighted=False)
    denom = np.ones((1,) * n)
    for s in range(n):
        denom = denom * _embed(measure.fvals, (s,), n)
    ratio = DiscreteFunction(marg.values / denom, measure, symmetric=f_n.symmetric)
    return projector_apply(ratio, range(1, n + 1))


def kappa_table(f_n: DiscreteFunction) -> CumulantTable:
    """Direct cumulants of all orders 0..N; order 0 is the total mass."""
    N = f_n.arity
    entries: dict = {0: integrate_full(f_n)}
    for n in range(1, N + 1):
        entries[n] = fn_to_kappa(f_n, n)
    return CumulantTable("kappa", entries, rescaled=False, n_particles=N)


def reconstruct_from_kappa(table: CumulantTable, n_particles: int) -> DiscreteFunction:
    """F_N = f^{tensor N} sum_{A subset [N]} kappa_{|A|}(z_A)."""
    some = next(e for e in table.entries.values() if isinstance(e, DiscreteFunction))
    measure = some.measure
    N = n_particles
    acc = np.full((1,) * N, float(table.entries.get(0, 1.0)))
    for size in range(1, N + 1):
        if size not in table.entries:
            continue
        vals = table.entries[size].values
        for slots in combinations(range(N), size):
            acc = acc + _embed(vals, slots, N)
    dens = np.ones((1,) * N)
    for s in range(N):
        dens = dens * _embed(measure.fvals, (s,), N)
    return DiscreteFunction(np.broadcast_to(acc, (measure.size,) * N) * dens,
                            measure, symmetric=True)


# --- dual cumulants -------------------------------------------------------------


def h_to_dual_cumulants(h_n: DiscreteFunction, n: int) -> DiscreteFunction:
    """Extract C_{N,n} from an N-particle observable on the grid:
    C_{N,n} = P_n [ Pi_{n+1} ... Pi_N h_N ]."""
    N = h_n.arity
    if n < 0 or n > N:
        raise ValueError("need 0 <= n <= N")
    collapsed = average_out(h_n, range(n + 1, N + 1), weighted=True)
    if n == 0:
        return collapsed
    return projector_apply(collapsed, range(1, n + 1))


def dual_table(h_n: DiscreteFunction) -> CumulantTable:
    N = h_n.arity
    entries: dict = {0: float(h_to_dual_cumulants(h_n, 0).values)}
    for n in range(1, N + 1):
        entries[n] = h_to_dual_cumulants(h_n, n)
    return CumulantTable("dual_C", entries, rescaled=False, n_particles=N)


def reconstruct_from_dual(table: CumulantTable, n_particles: int) -> DiscreteFunction:
    """h_N = sum_n sum_{sigma} C_{N,n}(z_sigma)."""
    some = next(e for e in table.entries.values() if isinstance(e, DiscreteFunction))
    measure = some.measure
    N = n_particles
    acc = np.full((1,) * N, float(table.entries.get(0, 0.0)))
    for size in range(1, N + 1):
        if size not in table.entries:
            continue
        vals = table.entries[size].values
        for slots in combinations(range(N), size):
            acc = acc + _embed(vals, slots, N)
    return DiscreteFunction(np.broadcast_to(acc, (measure.size,) * N).copy(),
                            measure, symmetric=True)


# --- serialization ----------------------------------------------------------------


def write_table_csv(table: CumulantTable, path) -> None:
    """Rows: family, order, grid index (or "scalar"), value."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("family,order,index,value\n")
        for n in table.orders():
            entry = table.entries[n]
            if isinstance(entry, DiscreteFunction):
                flat = entry.values.ravel()
                for idx, val in enumerate(flat):
                    fh.write(f"{table.family},{n},{idx},{val:.17g}\n")
            else:
                fh.write(f"{table.family},{n},scalar,{entry:.17g}\n")
