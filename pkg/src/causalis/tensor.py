"""Labeled dense operators over named finite-dimensional systems.

Every operator carries an ordered list of row systems and column systems.
Matrices are stored row-major, so the flat index of a basis state
``|i_1 i_2 ... i_n>`` is the usual Kronecker ordering with the first listed
system most significant.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import lru_cache
from math import prod
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_TOL = 1e-10


class LabelError(ValueError):
    """Raised for unknown, duplicated or inconsistent system labels."""


@dataclass(frozen=True)
class SystemId:
    name: str
    dim: int

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise LabelError("system name must be a non-empty string")
        if int(self.dim) != self.dim or self.dim < 1:
            raise LabelError(f"system {self.name!r} has invalid dimension {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))

    def to_json(self) -> dict:
        return {"name": self.name, "dim": self.dim}

    @classmethod
    def from_json(cls, obj: Mapping) -> "SystemId":
        return cls(str(obj["name"]), int(obj["dim"]))


@dataclass(frozen=True)
class SystemRegistry:
    """An ordered tuple of systems forming one tensor-factor order."""

    systems: tuple[SystemId, ...] = ()

    def __post_init__(self) -> None:
        systems = tuple(self.systems)
        object.__setattr__(self, "systems", systems)
        _check_unique(systems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.systems)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.systems)

    def __getitem__(self, name: str) -> SystemId:
        for s in self.systems:
            if s.name == name:
                return s
        raise LabelError(f"unknown system {name!r}")

    def __contains__(self, name: object) -> bool:
        return any(s.name == name for s in self.systems)

    def __iter__(self):
        return iter(self.systems)

    def __len__(self) -> int:
        return len(self.systems)


def _check_unique(systems: Sequence[SystemId]) -> None:
    names = [s.name for s in systems]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise LabelError(f"duplicate system labels: {dupes}")


def _as_systems(systems: Iterable[SystemId] | SystemId | None) -> tuple[SystemId, ...]:
    if systems is None:
        return ()
    if isinstance(systems, SystemId):
        return (systems,)
    return tuple(systems)


@dataclass(frozen=True, eq=False)
class LabeledOperator:
    """Dense complex matrix whose row and column spaces are labeled tensor products.

    ``rows`` label the output (codomain) factors and ``cols`` the input
    (domain) factors.  A square operator on a single space has
    ``rows == cols``.  A ket has ``cols == ()``.
    """

    rows: tuple[SystemId, ...]
    cols: tuple[SystemId, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        rows = _as_systems(self.rows)
        cols = _as_systems(self.cols)
        _check_unique(rows)
        _check_unique(cols)
        data = np.array(self.data, dtype=complex)
        if data.ndim == 1 and not cols:
            data = data.reshape(-1, 1)
        shape = (prod(s.dim for s in rows), prod(s.dim for s in cols))
        if data.shape != shape:
            raise LabelError(f"matrix shape {data.shape} does not match labels {shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("operator entries must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "data", data)

    # construction helpers

    @classmethod
    def identity(cls, systems: Iterable[SystemId] | SystemId) -> "LabeledOperator":
        systems = _as_systems(systems)
        return cls(systems, systems, np.eye(prod(s.dim for s in systems)))

    @classmethod
    def ket(cls, vector, systems: Iterable[SystemId] | SystemId) -> "LabeledOperator":
        return cls(_as_systems(systems), (), np.asarray(vector, dtype=complex).reshape(-1, 1))

    @classmethod
    def projector(cls, vector, systems: Iterable[SystemId] | SystemId) -> "LabeledOperator":
        v = np.asarray(vector, dtype=complex).reshape(-1)
        systems = _as_systems(systems)
        return cls(systems, systems, np.outer(v, v.conj()))

    # shape information

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def row_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.rows)

    @property
    def col_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.cols)

    @property
    def row_dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.rows)

    @property
    def col_dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.cols)

    @property
    def is_square_labeled(self) -> bool:
        return self.rows == self.cols

    def system(self, name: str) -> SystemId:
        for s in self.rows + self.cols:
            if s.name == name:
                return s
        raise LabelError(f"unknown system {name!r}")

    def tensor(self) -> np.ndarray:
        """Return the entries as an array with one axis per row then per column system."""
        return self.data.reshape(self.row_dims + self.col_dims)

    @classmethod
    def from_tensor(cls, t: np.ndarray, rows, cols) -> "LabeledOperator":
        rows, cols = _as_systems(rows), _as_systems(cols)
        return cls(rows, cols, np.asarray(t).reshape(prod(s.dim for s in rows), prod(s.dim for s in cols)))

    # algebra

    def dag(self) -> "LabeledOperator":
        return LabeledOperator(self.cols, self.rows, self.data.conj().T)

    def transpose(self) -> "LabeledOperator":
        return LabeledOperator(self.cols, self.rows, self.data.T)

    def conj(self) -> "LabeledOperator":
        return LabeledOperator(self.rows, self.cols, self.data.conj())

    def trace(self) -> complex:
        if self.rows != self.cols:
            raise LabelError("trace requires identical row and column systems")
        return complex(np.trace(self.data))

    def __matmul__(self, other: "LabeledOperator") -> "LabeledOperator":
        if set(self.col_names) != set(other.row_names):
            raise LabelError(f"cannot multiply: columns {self.col_names} vs rows {other.row_names}")
        other = reorder(other, rows=self.col_names)
        if self.cols != other.rows:
            raise LabelError("dimension mismatch between contracted systems")
        return LabeledOperator(self.rows, other.cols, self.data @ other.data)

    def __add__(self, other: "LabeledOperator") -> "LabeledOperator":
        other = align(other, self)
        return LabeledOperator(self.rows, self.cols, self.data + other.data)

    def __sub__(self, other: "LabeledOperator") -> "LabeledOperator":
        other = align(other, self)
        return LabeledOperator(self.rows, self.cols, self.data - other.data)

    def __mul__(self, scalar) -> "LabeledOperator":
        return LabeledOperator(self.rows, self.cols, self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "LabeledOperator":
        return LabeledOperator(self.rows, self.cols, -self.data)

    def __truediv__(self, scalar) -> "LabeledOperator":
        return LabeledOperator(self.rows, self.cols, self.data / scalar)

    def relabel(self, mapping: Mapping[str, SystemId | str]) -> "LabeledOperator":
        """Rename systems; dimensions must be preserved."""
        return relabel(self, mapping)

    def to_json(self) -> dict:
        return operator_to_json(self)


def align(op: LabeledOperator, like: LabeledOperator) -> LabeledOperator:
    """Permute ``op`` so that its row/column order equals that of ``like``."""
    if set(op.row_names) != set(like.row_names) or set(op.col_names) != set(like.col_names):
        raise LabelError("operators act on different systems")
    out = reorder(op, like.row_names, like.col_names)
    if out.rows != like.rows or out.cols != like.cols:
        raise LabelError("operators disagree on system dimensions")
    return out


def max_abs_diff(a: LabeledOperator, b: LabeledOperator) -> float:
    """Max-norm distance after aligning ``b`` to ``a``'s system order."""
    return float(np.max(np.abs(a.data - align(b, a).data), initial=0.0))


def tensor_product(*ops: LabeledOperator) -> LabeledOperator:
    """Kronecker product with concatenated system lists."""
    if not ops:
        return LabeledOperator((), (), np.ones((1, 1)))
    rows: tuple[SystemId, ...] = ()
    cols: tuple[SystemId, ...] = ()
    data = np.ones((1, 1), dtype=complex)
    for op in ops:
        clash = {s.name for s in rows} & set(op.row_names)
        clash |= {s.name for s in cols} & set(op.col_names)
        if clash:
            raise LabelError(f"label collision in tensor product: {sorted(clash)}")
        rows += op.rows
        cols += op.cols
        data = np.kron(data, op.data)
    return LabeledOperator(rows, cols, data)


def permute_systems(op: LabeledOperator, new_order: Sequence[str | SystemId]) -> LabeledOperator:
    """Reorder the tensor factors of ``op`` without changing the operator it represents.

    ``new_order`` lists every distinct label of ``op`` once.  Rows are
    reordered to the subsequence of ``new_order`` that labels rows, columns
    likewise; a square-labeled operator is therefore permuted consistently.
    """
    names = [n.name if isinstance(n, SystemId) else n for n in new_order]
    distinct = list(dict.fromkeys(op.row_names + op.col_names))
    if len(names) != len(set(names)) or set(names) != set(distinct):
        raise LabelError(f"{names} is not a permutation of {distinct}")
    return reorder(op, [n for n in names if n in op.row_names], [n for n in names if n in op.col_names])


def reorder(op: LabeledOperator, rows: Sequence[str] | None = None,
            cols: Sequence[str] | None = None) -> LabeledOperator:
    """Reorder row and column factors independently."""
    rows = list(op.row_names) if rows is None else list(rows)
    cols = list(op.col_names) if cols is None else list(cols)
    if sorted(rows) != sorted(op.row_names) or sorted(cols) != sorted(op.col_names):
        raise LabelError(f"{rows}/{cols} is not a permutation of {op.row_names}/{op.col_names}")
    row_perm = [op.row_names.index(n) for n in rows]
    col_perm = [op.col_names.index(n) for n in cols]
    if row_perm == sorted(row_perm) and col_perm == sorted(col_perm):
        return op
    nr = len(op.rows)
    t = op.tensor().transpose(row_perm + [nr + c for c in col_perm])
    return LabeledOperator.from_tensor(
        t, tuple(op.rows[i] for i in row_perm), tuple(op.cols[i] for i in col_perm)
    )


def partial_trace(op: LabeledOperator, traced: Iterable[str | SystemId]) -> LabeledOperator:
    """Trace out the listed systems, which must label both rows and columns."""
    names = [n.name if isinstance(n, SystemId) else n for n in traced]
    for n in names:
        if n not in op.row_names or n not in op.col_names:
            raise LabelError(f"cannot trace {n!r}: not a row and column system of the operator")
        if op.rows[op.row_names.index(n)] != op.cols[op.col_names.index(n)]:
            raise LabelError(f"row and column dimensions of {n!r} differ")
    if not names:
        return op
    nr, nc = len(op.rows), len(op.cols)
    letters = _letters(nr + nc)
    row_idx = letters[:nr]
    col_idx = letters[nr:]
    for n in names:
        col_idx[op.col_names.index(n)] = row_idx[op.row_names.index(n)]
    keep_rows = [i for i, n in enumerate(op.row_names) if n not in names]
    keep_cols = [i for i, n in enumerate(op.col_names) if n not in names]
    out_idx = [row_idx[i] for i in keep_rows] + [col_idx[i] for i in keep_cols]
    t = np.einsum("".join(row_idx + col_idx) + "->" + "".join(out_idx), op.tensor())
    return LabeledOperator.from_tensor(
        t, [op.rows[i] for i in keep_rows], [op.cols[i] for i in keep_cols]
    )


def partial_transpose(op: LabeledOperator, systems: Iterable[str]) -> LabeledOperator:
    names = list(systems)
    nr = len(op.rows)
    axes = list(range(nr + len(op.cols)))
    for n in names:
        r, c = op.row_names.index(n), nr + op.col_names.index(n)
        axes[r], axes[c] = axes[c], axes[r]
    return LabeledOperator.from_tensor(op.tensor().transpose(axes), op.rows, op.cols)


def relabel(op: LabeledOperator, mapping: Mapping[str, SystemId | str]) -> LabeledOperator:
    def sub(s: SystemId) -> SystemId:
        if s.name not in mapping:
            return s
        new = mapping[s.name]
        if isinstance(new, str):
            return SystemId(new, s.dim)
        if new.dim != s.dim:
            raise LabelError(f"relabel {s.name!r}->{new.name!r} changes dimension")
        return new

    unknown = set(mapping) - set(op.row_names) - set(op.col_names)
    if unknown:
        raise LabelError(f"unknown systems in relabel: {sorted(unknown)}")
    return LabeledOperator(tuple(map(sub, op.rows)), tuple(map(sub, op.cols)), op.data)


def split_system(op: LabeledOperator, name: str, parts: Sequence[SystemId]) -> LabeledOperator:
    """Reinterpret system ``name`` as the ordered tensor product ``parts`` (no data change)."""
    parts = tuple(parts)
    target = op.system(name)
    if prod(p.dim for p in parts) != target.dim:
        raise LabelError(f"parts of {name!r} do not multiply to dimension {target.dim}")

    def expand(systems):
        out = []
        for s in systems:
            out.extend(parts if s.name == name else (s,))
        return tuple(out)

    return LabeledOperator(expand(op.rows), expand(op.cols), op.data)


def merge_systems(op: LabeledOperator, names: Sequence[str], merged: str) -> LabeledOperator:
    """Fuse adjacent-after-permutation systems ``names`` into one system called ``merged``."""
    names = list(names)
    dim = prod(op.system(n).dim for n in names)
    new = SystemId(merged, dim)

    def fuse(systems):
        sys_names = [s.name for s in systems]
        if not any(n in sys_names for n in names):
            return sys_names, tuple(systems)
        if not all(n in sys_names for n in names):
            raise LabelError(f"systems {names} must all be present to merge")
        first = min(sys_names.index(n) for n in names)
        rest = [s for s in systems if s.name not in names]
        before = [s for s in rest if sys_names.index(s.name) < first]
        after = [s for s in rest if sys_names.index(s.name) > first]
        order = [s.name for s in before] + names + [s.name for s in after]
        return order, tuple(before) + (new,) + tuple(after)

    row_order, rows = fuse(op.rows)
    col_order, cols = fuse(op.cols)
    op = reorder(op, row_order, col_order)
    return LabeledOperator(rows, cols, op.data)


def identity_map(src: SystemId, dst: SystemId | str) -> LabeledOperator:
    """The identity isomorphism from ``src`` to a system of the same dimension."""
    if isinstance(dst, str):
        dst = SystemId(dst, src.dim)
    if dst.dim != src.dim:
        raise LabelError(f"identity map {src.name}->{dst.name} needs equal dimensions")
    return LabeledOperator((dst,), (src,), np.eye(src.dim))


def basis_projector(system: SystemId, k: int) -> LabeledOperator:
    p = np.zeros((system.dim, system.dim))
    p[k, k] = 1.0
    return LabeledOperator((system,), (system,), p)


def apply_gate(gate: LabeledOperator, state: LabeledOperator) -> LabeledOperator:
    """Compose ``gate`` after ``state`` (any operator), padding both with identities.

    Systems consumed by ``gate`` that ``state`` does not output enter as fresh
    inputs; outputs of ``state`` that ``gate`` does not consume pass through.
    """
    passing = [s for s in state.rows if s.name not in gate.col_names]
    fresh = [s for s in gate.cols if s.name not in state.row_names]
    left = tensor_product(gate, LabeledOperator.identity(passing)) if passing else gate
    right = tensor_product(state, LabeledOperator.identity(fresh)) if fresh else state
    return left @ right


def compose_circuit(gates: Sequence[LabeledOperator]) -> LabeledOperator:
    """Multiply a time-ordered gate list (first gate acts first)."""
    total = gates[0]
    for g in gates[1:]:
        total = apply_gate(g, total)
    return total


def link(a: LabeledOperator, b: LabeledOperator, shared: Iterable[str] | None = None) -> LabeledOperator:
    """Link product of two square-labeled operators over their ``shared`` systems.

    ``(a*b)_{xy,x'y'} = sum_{s,t} a_{xt,x's} b_{ty,sy'}``, i.e. a partial
    transpose on the shared factors of one operand followed by a partial
    trace.  It is symmetric in its arguments and, applied to Choi operators
    in either the transposed or the untransposed convention, returns the
    Choi operator of the sequential composition in that same convention.
    """
    for op in (a, b):
        if not op.is_square_labeled:
            raise LabelError("link product requires square-labeled operators")
    names = list(shared) if shared is not None else [n for n in a.row_names if n in b.row_names]
    for n in names:
        if n not in a.row_names or n not in b.row_names:
            raise LabelError(f"dangling shared system {n!r}")
        if a.system(n) != b.system(n):
            raise LabelError(f"shared system {n!r} has different dimensions")
    clash = (set(a.row_names) & set(b.row_names)) - set(names)
    if clash:
        raise LabelError(f"unshared label collision: {sorted(clash)}")
    na, nb = len(a.rows), len(b.rows)
    letters = _letters(2 * (na + nb))
    ar, ac = letters[:na], letters[na:2 * na]
    br, bc = letters[2 * na:2 * na + nb], letters[2 * na + nb:]
    for n in names:
        i, j = a.row_names.index(n), b.row_names.index(n)
        br[j] = ar[i]  # t
        bc[j] = ac[i]  # s
    keep_a = [i for i, n in enumerate(a.row_names) if n not in names]
    keep_b = [j for j, n in enumerate(b.row_names) if n not in names]
    out = [ar[i] for i in keep_a] + [br[j] for j in keep_b] + [ac[i] for i in keep_a] + [bc[j] for j in keep_b]
    spec = "".join(ar + ac) + "," + "".join(br + bc) + "->" + "".join(out)
    t = np.einsum(spec, a.tensor(), b.tensor(), optimize=True)
    systems = [a.rows[i] for i in keep_a] + [b.rows[j] for j in keep_b]
    return LabeledOperator.from_tensor(t, systems, systems)


def _letters(n: int) -> list[str]:
    pool = string.ascii_letters
    if n > len(pool):
        raise LabelError("too many systems for a single contraction")
    return list(pool[:n])


# Hilbert-Schmidt basis


@lru_cache(maxsize=None)
def _hs_elements(d: int) -> np.ndarray:
    """Identity plus generalized Gell-Mann matrices scaled to Tr s_m s_n = d delta_mn."""
    mats = [np.eye(d, dtype=complex)]
    scale = np.sqrt(d / 2.0)
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1.0
            mats.append(scale * m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k], m[k, j] = -1j, 1j
            mats.append(scale * m)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        mats.append(scale * np.sqrt(2.0 / (l * (l + 1))) * np.diag(diag).astype(complex))
    out = np.array(mats)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class HilbertSchmidtBasis:
    system: SystemId
    elements: np.ndarray = field(repr=False)

    @classmethod
    def for_system(cls, system: SystemId) -> "HilbertSchmidtBasis":
        return cls(system, _hs_elements(system.dim))

    def operators(self) -> list[LabeledOperator]:
        return [LabeledOperator((self.system,), (self.system,), m) for m in self.elements]

    def gram(self) -> np.ndarray:
        return np.einsum("mij,nji->mn", self.elements, self.elements)


def hs_basis(system: SystemId) -> HilbertSchmidtBasis:
    return HilbertSchmidtBasis.for_system(system)


def hs_decompose(op: LabeledOperator, bases: Sequence[HilbertSchmidtBasis] | None = None,
                 tol: float = DEFAULT_TOL) -> np.ndarray:
    """Real coefficient tensor ``w`` with ``op = sum w[m, n, ...] s_m (x) s_n (x) ...``.

    One axis per system of ``op`` (in row order), axis length ``d**2``.
    """
    if not op.is_square_labeled:
        raise LabelError("Hilbert-Schmidt expansion needs a square-labeled operator")
    if not is_hermitian(op, tol):
        raise ValueError("Hilbert-Schmidt expansion requires a Hermitian operator")
    if bases is None:
        bases = [hs_basis(s) for s in op.rows]
    if [b.system for b in bases] != list(op.rows):
        raise LabelError("one basis per operator system, in row order, is required")
    dims = op.row_dims
    n = len(dims)
    t = op.tensor().transpose([a for i in range(n) for a in (i, n + i)])
    t = t.reshape([d * d for d in dims])
    for axis, b in enumerate(bases):
        d = b.system.dim
        # w_m = Tr[op s_m] / d = sum_{rc} op[r,c] s_m[c,r] / d
        mat = b.elements.transpose(0, 2, 1).reshape(d * d, d * d) / d
        t = np.moveaxis(np.tensordot(mat, t, axes=([1], [axis])), 0, axis)
    return t.real.copy()


def hs_reconstruct(coeffs: np.ndarray, systems: Sequence[SystemId]) -> LabeledOperator:
    systems = tuple(systems)
    t = np.asarray(coeffs, dtype=complex)
    for axis, s in enumerate(systems):
        el = _hs_elements(s.dim)
        mat = el.reshape(s.dim ** 2, s.dim ** 2).T
        t = np.moveaxis(np.tensordot(mat, t, axes=([1], [axis])), 0, axis)
    n = len(systems)
    t = t.reshape([d for s in systems for d in (s.dim, s.dim)])
    t = t.transpose([2 * i for i in range(n)] + [2 * i + 1 for i in range(n)])
    return LabeledOperator.from_tensor(t, systems, systems)


# spectral predicates


def is_hermitian(op: LabeledOperator, tol: float = DEFAULT_TOL) -> bool:
    if op.rows != op.cols:
        return False
    return bool(np.max(np.abs(op.data - op.data.conj().T), initial=0.0) <= tol)


def is_isometry_matrix(m: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    if m.shape[0] < m.shape[1]:
        return False
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[1])), initial=0.0) <= tol)


def numerical_rank(m: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class MatrixPredicates:
    hermitian: bool
    psd: bool
    unitary: bool
    isometry: bool
    rank: int
    min_eigenvalue: float | None = None


def matrix_predicates(op: LabeledOperator | np.ndarray, tol: float = DEFAULT_TOL) -> MatrixPredicates:
    """Hermiticity, positivity, (co)isometry and numerical rank of an operator.

    Never raises on a well-formed operator; predicates that do not apply
    to the shape are reported as ``False``.
    """
    if isinstance(op, LabeledOperator):
        m = op.data
        square_labeled = op.rows == op.cols
    else:
        m = np.asarray(op, dtype=complex)
        square_labeled = m.shape[0] == m.shape[1]
    square = m.shape[0] == m.shape[1]
    herm = bool(square_labeled and np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)
    min_eig = None
    psd = False
    if herm:
        min_eig = float(np.linalg.eigvalsh((m + m.conj().T) / 2)[0]) if m.size else 0.0
        psd = min_eig >= -tol
    iso = is_isometry_matrix(m, tol)
    unitary = bool(square and iso)
    return MatrixPredicates(herm, psd, unitary, iso, numerical_rank(m, tol), min_eig)


def eigh_sorted(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix with a deterministic gauge.

    Eigenvalues are returned in descending order; each eigenvector is
    rescaled so that its first entry of non-negligible modulus is real and
    positive.
    """
    m = (m + m.conj().T) / 2
    vals, vecs = np.linalg.eigh(m)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    return vals, fix_phases(vecs)


def fix_phases(vecs: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vecs = np.array(vecs, dtype=complex)
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > tol * max(np.max(np.abs(col)), 1e-300))
        if nz.size:
            c = col[nz[0]]
            vecs[:, k] = col * (abs(c) / c)
    return vecs


# randomness


def as_generator(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def haar_unitary(d: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Haar-random ``d x d`` unitary as a plain array (QR with phase correction)."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    rng = as_generator(seed)
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def random_unitary(d: int, seed: int | np.random.Generator | None = None,
                   system: SystemId | None = None) -> LabeledOperator:
    """Seeded Haar-random unitary acting on ``system`` (default: a system named ``"U"``)."""
    if system is None:
        system = SystemId("U", d)
    elif system.dim != d:
        raise LabelError("system dimension does not match d")
    return LabeledOperator((system,), (system,), haar_unitary(d, seed))


def random_state_vector(d: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    rng = as_generator(seed)
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def random_density_matrix(d: int, seed: int | np.random.Generator | None = None,
                          rank: int | None = None) -> np.ndarray:
    rng = as_generator(seed)
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


# JSON


def operator_to_json(op: LabeledOperator) -> dict:
    return {
        "rows": [s.to_json() for s in op.rows],
        "cols": [s.to_json() for s in op.cols],
        "re": op.data.real.tolist(),
        "im": op.data.imag.tolist(),
    }


def operator_from_json(obj: Mapping, where: str = "operator") -> LabeledOperator:
    """Parse the operator JSON format; errors name the offending field."""
    if not isinstance(obj, Mapping):
        raise ValueError(f"{where}: expected an object")
    for key in ("rows", "cols", "re"):
        if key not in obj:
            raise ValueError(f"{where}: missing key {key!r}")
    try:
        rows = tuple(SystemId.from_json(s) for s in obj["rows"])
        cols = tuple(SystemId.from_json(s) for s in obj["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{where}.rows/cols: malformed system entry ({exc})") from None
    try:
        re = np.array(obj["re"], dtype=float)
        im = np.array(obj.get("im", np.zeros_like(re)), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}.re/im: entries must be numeric ({exc})") from None
    shape = (prod(s.dim for s in rows), prod(s.dim for s in cols))
    if re.shape != shape or im.shape != shape:
        raise ValueError(f"{where}: entries have shape {re.shape}/{im.shape}, labels need {shape}")
    try:
        return LabeledOperator(rows, cols, re + 1j * im)
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None
