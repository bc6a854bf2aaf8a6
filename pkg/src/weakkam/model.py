"""Grids on the flat torus, Hamiltonian models and the lattice Legendre transform."""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .expr import ExpressionError, Node, evaluate, free_variables, parse_expression, to_text


class BoundaryMaximizerError(ValueError):
    """The Legendre maximiser sits on the momentum-lattice boundary."""


class ConvexityWarning(UserWarning):
    pass


class CoercivityWarning(UserWarning):
    pass


# --- grids -------------------------------------------------------------


@dataclass(frozen=True)
class TorusGrid:
    """Uniform lattice ``{i/n}^dim`` on the unit flat torus.

    Nodes are flattened in C order (last axis fastest).
    """

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def n_nodes(self) -> int:
        return self.n ** self.dim

    @property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    @property
    def multi_indices(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.n), repeat=self.dim)), dtype=np.int64).reshape(-1, self.dim)

    @property
    def coords(self) -> np.ndarray:
        return self.multi_indices / self.n

    def flat_index(self, multi) -> np.ndarray:
        multi = np.mod(np.asarray(multi, dtype=np.int64), self.n)
        out = np.zeros(multi.shape[:-1], dtype=np.int64)
        for a in range(self.dim):
            out = out * self.n + multi[..., a]
        return out

    def node(self, i) -> np.ndarray:
        """Coordinates of node ``i``; periodic in each index."""
        return np.mod(np.asarray(self.multi_indices[i % self.n_nodes], dtype=float), self.n) / self.n

    def shift(self, k) -> np.ndarray:
        """Flat index of ``node(i) + k/n`` for every node ``i``."""
        return self.flat_index(self.multi_indices + np.asarray(k, dtype=np.int64))

    def distance(self, x, y) -> np.ndarray:
        """Euclidean length of the per-coordinate torus displacement."""
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        d = np.mod(d, 1.0)
        d = np.minimum(d, 1.0 - d)
        return np.sqrt(np.sum(d * d, axis=-1))

    def interpolation(self, positions) -> tuple[np.ndarray, np.ndarray]:
        """Periodic multilinear interpolation stencils.

        ``positions`` are in cell units (node ``i`` sits at ``i``), shape
        ``(..., dim)``.  Returns flat indices and weights of shape
        ``(..., 2**dim)``; corners are ordered with axis 0 most significant.
        """
        pos = np.asarray(positions, dtype=float)
        base = np.floor(pos)
        frac = pos - base
        base = base.astype(np.int64)
        shape = pos.shape[:-1] + (2 ** self.dim,)
        idx = np.zeros(shape, dtype=np.int64)
        wts = np.ones(shape)
        for c, bits in enumerate(itertools.product((0, 1), repeat=self.dim)):
            flat = np.zeros(pos.shape[:-1], dtype=np.int64)
            for a, bit in enumerate(bits):
                flat = flat * self.n + np.mod(base[..., a] + bit, self.n)
                wts[..., c] *= frac[..., a] if bit else 1.0 - frac[..., a]
            idx[..., c] = flat
        return idx, wts

    def interpolate(self, values, points) -> np.ndarray:
        """Evaluate a nodal field at arbitrary torus points (coordinates)."""
        idx, wts = self.interpolation(np.asarray(points, dtype=float) * self.n)
        return np.sum(wts * np.asarray(values)[idx], axis=-1)


@dataclass(frozen=True)
class VelocityGrid:
    """Symmetric lattice on ``[-bound, bound]^dim`` with ``m`` (odd) nodes per axis.

    Node ``a`` on an axis is ``(a - (m-1)/2) * step``, so ``-v`` is a node
    whenever ``v`` is, bit for bit.  Also used for the momentum lattice.
    """

    dim: int
    bound: float
    m: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.bound > 0:
            raise ValueError(f"lattice bound must be positive, got {self.bound}")
        if int(self.m) != self.m or self.m < 1 or self.m % 2 == 0:
            raise ValueError(f"m must be an odd positive integer, got {self.m}")

    @classmethod
    def from_step(cls, dim: int, bound: float, step: float) -> "VelocityGrid":
        """Smallest lattice with the given step whose bound reaches ``bound``."""
        half = int(math.ceil(bound / step - 1e-9))
        return cls(dim, half * step, 2 * half + 1)

    @property
    def vmax(self) -> float:
        return self.bound

    @property
    def center(self) -> int:
        return (self.m - 1) // 2

    @property
    def step(self) -> float:
        return self.bound / self.center if self.m > 1 else self.bound

    @property
    def axis(self) -> np.ndarray:
        return (np.arange(self.m) - self.center) * self.step

    @property
    def size(self) -> int:
        return self.m ** self.dim

    @property
    def multi_indices(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.m), repeat=self.dim)), dtype=np.int64).reshape(-1, self.dim)

    @property
    def nodes(self) -> np.ndarray:
        return self.axis[self.multi_indices]

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi, dtype=np.int64)
        out = np.zeros(multi.shape[:-1], dtype=np.int64)
        for a in range(self.dim):
            out = out * self.m + multi[..., a]
        return out

    @property
    def reflection(self) -> np.ndarray:
        """Permutation ``l -> index of -v_l``."""
        return self.flat_index(self.m - 1 - self.multi_indices)

    @property
    def zero_index(self) -> int:
        return int(self.flat_index(np.full(self.dim, self.center)))

    @property
    def boundary_mask(self) -> np.ndarray:
        mi = self.multi_indices
        return np.any((mi == 0) | (mi == self.m - 1), axis=1)


# --- Hamiltonians ------------------------------------------------------


def _check_variables(node: Node, dim: int, allowed: str) -> None:
    ok = {f"{c}{a + 1}" for c in allowed for a in range(dim)}
    extra = sorted(free_variables(node) - ok)
    if extra:
        raise ExpressionError(f"variable(s) {', '.join(extra)} not available (allowed: {', '.join(sorted(ok))})")


@dataclass(frozen=True)
class HamiltonianModel:
    """``H(x, p)``: either mechanical ``|p|^2/2 + V(x)`` or a free expression.

    ``reflected`` marks the hatted model ``H(x, -p)``.
    """

    kind: str
    expr: Node
    dim: int = 1
    pgrid: Optional[VelocityGrid] = None
    name: str = ""
    reflected: bool = False

    def __post_init__(self):
        if self.kind not in ("mechanical", "expression"):
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        _check_variables(self.expr, self.dim, "x" if self.kind == "mechanical" else "xp")

    @classmethod
    def mechanical(cls, potential: str, dim: int = 1, pgrid=None, name: str = "") -> "HamiltonianModel":
        return cls("mechanical", parse_expression(potential), dim, pgrid, name or f"mechanical({potential})")

    @classmethod
    def from_expression(cls, text: str, dim: int = 1, pgrid=None, name: str = "") -> "HamiltonianModel":
        return cls("expression", parse_expression(text), dim, pgrid, name or text)

    @property
    def text(self) -> str:
        return to_text(self.expr)

    def hatted(self) -> "HamiltonianModel":
        name = self.name[:-1] if self.reflected and self.name.endswith("^") else self.name + "^"
        return replace(self, reflected=not self.reflected, name=name)

    def with_pgrid(self, pgrid: VelocityGrid) -> "HamiltonianModel":
        return replace(self, pgrid=pgrid)

    def potential(self, x) -> np.ndarray:
        if self.kind != "mechanical":
            raise TypeError("only mechanical models carry a potential")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        env = {f"x{a + 1}": x[:, a] for a in range(self.dim)}
        return np.broadcast_to(np.asarray(evaluate(self.expr, env), dtype=float), (x.shape[0],)).copy()

    def evaluate(self, x, p) -> np.ndarray:
        """Table ``H(x_k, p_j)`` of shape ``(len(x), len(p))``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        p = np.asarray(p, dtype=float).reshape(-1, self.dim)
        if self.reflected:
            p = -p
        if self.kind == "mechanical":
            kinetic = 0.5 * np.sum(p * p, axis=1)
            out = kinetic[None, :] + self.potential(x)[:, None]
        else:
            env = {}
            for a in range(self.dim):
                env[f"x{a + 1}"] = x[:, a][:, None]
                env[f"p{a + 1}"] = p[:, a][None, :]
            out = np.broadcast_to(np.asarray(evaluate(self.expr, env), dtype=float), (x.shape[0], p.shape[0])).copy()
        return out

    def max_slope_estimate(self, xgrid: TorusGrid) -> float:
        """Largest central slope ``|H(x, e) - H(x, -e)| / 2`` over unit momenta."""
        e = np.eye(self.dim)
        h = self.evaluate(xgrid.coords, np.vstack([e, -e]))
        return float(np.max(np.abs(h[:, : self.dim] - h[:, self.dim:])) / 2.0)

    def default_pgrid(self, xgrid: TorusGrid, vgrid: VelocityGrid) -> VelocityGrid:
        """Momentum lattice with the velocity step and bound ``2 vmax + slope``."""
        pmax = 2.0 * vgrid.vmax + self.max_slope_estimate(xgrid)
        return VelocityGrid.from_step(self.dim, pmax, vgrid.step)

    def check_convexity(self, xgrid: TorusGrid, tol: float = 1e-9, warn: bool = True) -> float:
        """Worst midpoint-convexity defect over consecutive lattice triples on axis lines."""
        pg = self._require_pgrid()
        h = self.evaluate(xgrid.coords, pg.nodes).reshape((xgrid.n_nodes,) + (pg.m,) * self.dim)
        worst = 0.0
        for a in range(self.dim):
            ax = a + 1
            lo = np.take(h, range(0, pg.m - 2), axis=ax)
            mid = np.take(h, range(1, pg.m - 1), axis=ax)
            hi = np.take(h, range(2, pg.m), axis=ax)
            worst = max(worst, float(np.max(mid - 0.5 * (lo + hi))) if pg.m >= 3 else 0.0)
        if warn and worst > tol:
            warnings.warn(f"{self.name}: sampled convexity defect {worst:.3g} exceeds {tol:g}", ConvexityWarning, stacklevel=2)
        return worst

    def check_coercivity(self, xgrid: TorusGrid, warn: bool = True) -> float:
        """``min_x min_{|p|=pmax} H - min_x H(x, 0)``; positive when coercive on the lattice."""
        pg = self._require_pgrid()
        h = self.evaluate(xgrid.coords, pg.nodes)
        margin = float(np.min(h[:, pg.boundary_mask]) - np.min(h[:, pg.zero_index]))
        if warn and margin <= 0:
            warnings.warn(f"{self.name}: H on the momentum boundary does not exceed H(x, 0)", CoercivityWarning, stacklevel=2)
        return margin

    def _require_pgrid(self) -> VelocityGrid:
        if self.pgrid is None:
            raise ValueError("HamiltonianModel has no momentum lattice; use with_pgrid/default_pgrid")
        return self.pgrid


# --- Lagrangian tables -------------------------------------------------


@dataclass(frozen=True, eq=False)
class LagrangianTable:
    """``L(x_i, v_l)`` on the product grid, rows indexed by x-node."""

    values: np.ndarray
    xgrid: TorusGrid
    vgrid: VelocityGrid
    source: Optional[HamiltonianModel] = None
    reflected: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (self.xgrid.n_nodes, self.vgrid.size):
            raise ValueError(f"table shape {self.values.shape} does not match grids")

    def value_at(self, w) -> np.ndarray:
        """``L(x_i, w)`` at every node for an arbitrary velocity ``w``.

        Linear interpolation in ``v``, written so that the table of the
        reflected Lagrangian evaluated at ``w`` reproduces this table at
        ``-w`` bit for bit.
        """
        vg = self.vgrid
        w = np.asarray(w, dtype=float).reshape(self.xgrid.dim)
        lows, highs, fracs = [], [], []
        for a in range(vg.dim):
            r = w[a] / vg.step
            if abs(r - round(r)) <= 1e-9 * max(1.0, abs(r)):
                r = float(round(r))
            s = abs(r)
            if s > vg.center + 1e-12:
                raise ValueError(f"velocity {w} outside the velocity lattice")
            f = math.floor(s)
            frac = s - f
            sign = 1 if r >= 0 else -1
            lo = vg.center + sign * f
            hi = lo + sign if 0 <= lo + sign < vg.m else lo
            lows.append(lo)
            highs.append(hi)
            fracs.append(frac)
        out = np.zeros(self.values.shape[0])
        for bits in itertools.product((0, 1), repeat=vg.dim):
            weight = 1.0
            multi = []
            for a, bit in enumerate(bits):
                weight *= fracs[a] if bit else 1.0 - fracs[a]
                multi.append(highs[a] if bit else lows[a])
            if weight == 0.0:
                continue
            out = out + weight * self.values[:, int(vg.flat_index(np.array(multi)))]
        return out

    def at_points(self, points) -> np.ndarray:
        """Rows of the table interpolated in x at arbitrary points, shape ``(K, n_vel)``."""
        idx, wts = self.xgrid.interpolation(np.atleast_2d(points) * self.xgrid.n)
        return np.einsum("kc,kcl->kl", wts, self.values[idx])

    def fenchel_gap(self, model: Optional[HamiltonianModel] = None) -> float:
        """``min L(x,v) + H(x,p) - <p,v>`` over all grid triples (should be >= 0)."""
        model = model or self.source
        if model is None or model.pgrid is None:
            raise ValueError("need a Hamiltonian with a momentum lattice")
        h = model.evaluate(self.xgrid.coords, model.pgrid.nodes)
        pv = self.vgrid.nodes @ model.pgrid.nodes.T
        worst = np.inf
        for l in range(self.vgrid.size):
            worst = min(worst, float(np.min(self.values[:, l][:, None] + h - pv[l][None, :])))
        return worst

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["x_index", "v_index", "value"])
            for i in range(self.values.shape[0]):
                for l in range(self.values.shape[1]):
                    wr.writerow([i, l, repr(float(self.values[i, l]))])


def legendre_transform(model: HamiltonianModel, xgrid: TorusGrid, vgrid: VelocityGrid) -> LagrangianTable:
    """``L(x, v) = max_p <p, v> - H(x, p)`` by exhaustive search over the momentum lattice.

    Raises :class:`BoundaryMaximizerError` when, for some grid pair, every
    maximiser lies on the lattice boundary (``pmax`` too small for ``vmax``).
    """
    if model.dim != xgrid.dim or model.dim != vgrid.dim:
        raise ValueError("model, x-grid and v-grid dimensions differ")
    if model.pgrid is None:
        model = model.with_pgrid(model.default_pgrid(xgrid, vgrid))
    pg = model.pgrid
    h = model.evaluate(xgrid.coords, pg.nodes)
    if not np.all(np.isfinite(h)):
        raise ValueError(f"{model.name}: non-finite Hamiltonian value on the grid")
    interior = ~pg.boundary_mask
    pnodes = pg.nodes
    vnodes = vgrid.nodes
    nx, npn = h.shape
    out = np.empty((nx, vgrid.size))
    chunk = max(1, int(4_000_000 // max(1, nx * npn)))
    for s in range(0, vgrid.size, chunk):
        pv = vnodes[s:s + chunk] @ pnodes.T  # (chunk, P)
        vals = pv[None, :, :] - h[:, None, :]
        best = vals.max(axis=2)
        if interior.any():
            inner = vals[:, :, interior].max(axis=2)
        else:
            inner = np.full_like(best, -np.inf)
        bad = inner < best
        if bad.any():
            i, l = np.argwhere(bad)[0]
            raise BoundaryMaximizerError(
                f"{model.name}: Legendre maximiser on the momentum boundary (pmax={pg.bound:g}) "
                f"at x={xgrid.coords[i].tolist()}, v={vnodes[s + l].tolist()}; increase pmax"
            )
        out[:, s:s + chunk] = best
    return LagrangianTable(out, xgrid, vgrid, model, model.reflected)


def symmetric_dual(table: LagrangianTable) -> LagrangianTable:
    """``L^(x, v) = L(x, -v)``: an exact column permutation, paired with ``H(x, -p)``."""
    source = table.source.hatted() if table.source is not None else None
    return LagrangianTable(table.values[:, table.vgrid.reflection], table.xgrid, table.vgrid, source, not table.reflected, dict(table.meta))
