"""Choi operators, instruments, composition and the generalized Born rule.

All Choi operators use the transposed convention

    M = [(id (x) M)(|phi+><phi+|)]^T,   |phi+> = sum_j |j>|j>  (unnormalized),

in the computational basis, on ``inputs (x) outputs``.  With this
convention the probability of outcomes ``(i, j, ...)`` under a process
matrix ``W`` is ``Tr[W (M_i (x) N_j (x) ...)]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import ceil, prod
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .tensor import (
    DEFAULT_TOL,
    LabelError,
    LabeledOperator,
    SystemId,
    haar_unitary,
    link,
    operator_from_json,
    operator_to_json,
    partial_trace,
    reorder,
)

if TYPE_CHECKING:
    from .process import ProcessMatrix

CONVENTIONS = ("transposed", "standard")


class InvalidProbabilityError(ValueError):
    """A Born-rule evaluation produced a probability below the rounding floor."""


def _systems(spec, default: str) -> tuple[SystemId, ...]:
    if spec is None:
        return ()
    if isinstance(spec, SystemId):
        return (spec,)
    if isinstance(spec, (int, np.integer)):
        return (SystemId(default, int(spec)),) if spec > 1 else ()
    return tuple(spec)


@dataclass(frozen=True, eq=False)
class ChoiOperator:
    """Choi operator (transposed convention) of a map ``inputs -> outputs``."""

    inputs: tuple[SystemId, ...]
    outputs: tuple[SystemId, ...]
    op: LabeledOperator

    def __post_init__(self) -> None:
        inputs, outputs = tuple(self.inputs), tuple(self.outputs)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        systems = inputs + outputs
        names = [s.name for s in systems]
        if sorted(names) != sorted(self.op.row_names) or not self.op.is_square_labeled:
            raise LabelError(f"Choi operator must act on {names}")
        op = reorder(self.op, names, names)
        if op.rows != systems:
            raise LabelError("Choi operator dimensions disagree with its system lists")
        object.__setattr__(self, "op", op)

    @property
    def d_in(self) -> int:
        return prod(s.dim for s in self.inputs)

    @property
    def d_out(self) -> int:
        return prod(s.dim for s in self.outputs)

    def tp_residual(self) -> float:
        red = partial_trace(self.op, [s.name for s in self.outputs])
        return float(np.max(np.abs(red.data - np.eye(self.d_in)), initial=0.0))

    def is_tp(self, tol: float = DEFAULT_TOL) -> bool:
        return self.tp_residual() <= tol

    def min_eigenvalue(self) -> float:
        m = self.op.data
        return float(np.linalg.eigvalsh((m + m.conj().T) / 2)[0])

    def is_cp(self, tol: float = DEFAULT_TOL) -> bool:
        m = self.op.data
        if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
            return False
        return self.min_eigenvalue() >= -tol

    def standard(self) -> np.ndarray:
        """Untransposed Choi matrix on ``inputs (x) outputs``."""
        return self.op.data.T

    def relabel(self, mapping: Mapping[str, str | SystemId]) -> "ChoiOperator":
        op = self.op.relabel(mapping)

        def new(s: SystemId) -> SystemId:
            target = mapping.get(s.name, s.name)
            return op.system(target if isinstance(target, str) else target.name)

        return ChoiOperator(tuple(map(new, self.inputs)), tuple(map(new, self.outputs)), op)

    def __add__(self, other: "ChoiOperator") -> "ChoiOperator":
        return ChoiOperator(self.inputs, self.outputs, self.op + other.op)

    def __mul__(self, scalar) -> "ChoiOperator":
        return ChoiOperator(self.inputs, self.outputs, self.op * scalar)

    __rmul__ = __mul__

    def to_json(self, convention: str = "transposed") -> dict:
        if convention not in CONVENTIONS:
            raise ValueError(f"unknown Choi convention {convention!r}")
        op = self.op if convention == "transposed" else self.op.transpose()
        return {
            "inputs": [s.to_json() for s in self.inputs],
            "outputs": [s.to_json() for s in self.outputs],
            "convention": convention,
            "operator": operator_to_json(op),
        }

    @classmethod
    def from_json(cls, obj: Mapping, where: str = "choi") -> "ChoiOperator":
        if "operator" not in obj:
            raise ValueError(f"{where}: missing key 'operator'")
        convention = obj.get("convention", "transposed")
        if convention not in CONVENTIONS:
            raise ValueError(f"{where}.convention: unknown value {convention!r}")
        op = operator_from_json(obj["operator"], f"{where}.operator")
        if convention == "standard":
            op = op.transpose()
        try:
            inputs = tuple(SystemId.from_json(s) for s in obj.get("inputs", []))
            outputs = tuple(SystemId.from_json(s) for s in obj.get("outputs", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{where}.inputs/outputs: {exc}") from None
        return cls(inputs, outputs, op)


def _kraus_arrays(kraus, inputs, outputs):
    mats = []
    for k in kraus:
        if isinstance(k, LabeledOperator):
            if inputs is None:
                inputs, outputs = k.cols, k.rows
            k = reorder(k, [s.name for s in outputs], [s.name for s in inputs])
            if k.rows != tuple(outputs) or k.cols != tuple(inputs):
                raise LabelError("Kraus operators act on different systems")
            mats.append(k.data)
        else:
            mats.append(np.asarray(k, dtype=complex))
    if inputs is None:
        raise LabelError("systems must be given for array Kraus operators")
    return mats, tuple(inputs), tuple(outputs)


def choi_from_map(kraus: Sequence[LabeledOperator | np.ndarray],
                  inputs: Sequence[SystemId] | None = None,
                  outputs: Sequence[SystemId] | None = None,
                  tol: float = DEFAULT_TOL) -> ChoiOperator:
    """Choi operator of the CP map ``rho -> sum_k K rho K^dag``.

    Kraus operators may be labeled (their column systems are the inputs)
    or plain arrays together with explicit ``inputs``/``outputs``.
    """
    mats, inputs, outputs = _kraus_arrays(kraus, inputs, outputs)
    d_in, d_out = prod(s.dim for s in inputs), prod(s.dim for s in outputs)
    total = np.zeros((d_in, d_in), dtype=complex)
    choi = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for k in mats:
        if k.shape != (d_out, d_in):
            raise LabelError(f"Kraus operator of shape {k.shape}, expected {(d_out, d_in)}")
        total += k.conj().T @ k
        # |K>> = sum_i |i> (x) K|i>, index (i, o) -> K[o, i]
        v = k.T.reshape(-1)
        choi += np.outer(v.conj(), v)  # transposed convention: conj of |K>><<K|
    if np.linalg.eigvalsh(total)[-1] > 1 + tol:
        raise ValueError("Kraus operators are trace increasing (sum K^dag K is not <= I)")
    systems = inputs + outputs
    return ChoiOperator(inputs, outputs, LabeledOperator(systems, systems, choi))


def kraus_from_choi(c: ChoiOperator, tol: float = DEFAULT_TOL) -> list[LabeledOperator]:
    vals, vecs = np.linalg.eigh(c.standard())
    out = []
    for lam, v in zip(vals[::-1], vecs[:, ::-1].T):
        if lam <= tol * max(vals[-1], 1.0):
            break
        k = np.sqrt(lam) * v.reshape(c.d_in, c.d_out).T
        out.append(LabeledOperator(c.outputs, c.inputs, k))
    return out


def apply_via_choi(c: ChoiOperator, rho: LabeledOperator) -> LabeledOperator:
    """Image of ``rho`` (an operator on ``c.inputs``) under the map encoded by ``c``."""
    names = [s.name for s in c.inputs]
    if sorted(rho.row_names) != sorted(names) or not rho.is_square_labeled:
        raise LabelError(f"input operator must act on {names}")
    rho = reorder(rho, names, names)
    if rho.rows != c.inputs:
        raise LabelError("input operator dimensions disagree with the channel")
    m = c.op.data.reshape(c.d_in, c.d_out, c.d_in, c.d_out)
    # E(|i><j|) = C[i,:,j,:] with C = M^T
    out = np.einsum("ij,jbia->ab", rho.data, m)
    return LabeledOperator(c.outputs, c.outputs, out)


def link_compose(a: ChoiOperator, b: ChoiOperator, shared: Iterable[str] | None = None) -> ChoiOperator:
    """Choi operator of the composition of ``a`` and ``b`` through ``shared`` systems.

    Each shared system must be an output of one map and an input of the
    other.  Unshared inputs and outputs of both maps remain open.
    """
    a_in, a_out = {s.name for s in a.inputs}, {s.name for s in a.outputs}
    b_in, b_out = {s.name for s in b.inputs}, {s.name for s in b.outputs}
    names = list(shared) if shared is not None else sorted((a_out & b_in) | (a_in & b_out))
    for n in names:
        if not ((n in a_out and n in b_in) or (n in a_in and n in b_out)):
            raise LabelError(f"shared system {n!r} must connect an output to an input")
    op = link(a.op, b.op, names)
    inputs = tuple(s for s in a.inputs + b.inputs if s.name not in names)
    outputs = tuple(s for s in a.outputs + b.outputs if s.name not in names)
    return ChoiOperator(inputs, outputs, op)


def random_isometry(d_in: int, d_out: int, seed=None) -> np.ndarray:
    """First ``d_in`` columns of a Haar unitary of dimension ``d_out``."""
    if d_out < d_in:
        raise ValueError("isometry needs d_out >= d_in")
    return haar_unitary(d_out, seed)[:, :d_in]


def random_cptp(inputs, outputs, env_dim: int = 1, seed=None) -> ChoiOperator:
    """Seeded random channel: random Stinespring isometry followed by tracing the environment.

    ``inputs``/``outputs`` are dimensions (systems named ``in``/``out``) or
    system lists.  The environment is enlarged when needed so the isometry
    exists, i.e. ``d_out * env >= d_in``.
    """
    inputs, outputs = _systems(inputs, "in"), _systems(outputs, "out")
    d_in, d_out = prod(s.dim for s in inputs), prod(s.dim for s in outputs)
    env = max(int(env_dim), ceil(d_in / d_out))
    v = random_isometry(d_in, d_out * env, seed).reshape(d_out, env, d_in)
    kraus = [v[:, e, :] for e in range(env)]
    return choi_from_map(kraus, inputs, outputs)


@dataclass(frozen=True, eq=False)
class Instrument:
    """A collection of CP maps (one per outcome) summing to a channel."""

    outcomes: tuple[tuple[str, ChoiOperator], ...]
    party: str | None = None

    def __post_init__(self) -> None:
        outcomes = tuple((str(lab), c) for lab, c in self.outcomes)
        if not outcomes:
            raise ValueError("an instrument needs at least one outcome")
        first = outcomes[0][1]
        for _, c in outcomes[1:]:
            if c.inputs != first.inputs or c.outputs != first.outputs:
                raise LabelError("instrument elements act on different systems")
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def inputs(self) -> tuple[SystemId, ...]:
        return self.outcomes[0][1].inputs

    @property
    def outputs(self) -> tuple[SystemId, ...]:
        return self.outcomes[0][1].outputs

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.outcomes)

    def total(self) -> ChoiOperator:
        c = self.outcomes[0][1]
        for _, other in self.outcomes[1:]:
            c = c + other
        return c

    def is_valid(self, tol: float = DEFAULT_TOL) -> bool:
        return all(c.is_cp(tol) for _, c in self.outcomes) and self.total().is_tp(tol)

    def coarse_grain(self, groups: Mapping[str, Sequence[str]]) -> "Instrument":
        lookup = dict(self.outcomes)
        merged = []
        for label, members in groups.items():
            c = lookup[members[0]]
            for m in members[1:]:
                c = c + lookup[m]
            merged.append((label, c))
        return Instrument(tuple(merged), self.party)

    def to_json(self, convention: str = "transposed") -> dict:
        return {
            "party": self.party,
            "outcomes": [{"label": lab, "choi": c.to_json(convention)} for lab, c in self.outcomes],
        }

    @classmethod
    def from_json(cls, obj: Mapping, where: str = "instrument") -> "Instrument":
        if "outcomes" not in obj or not isinstance(obj["outcomes"], list):
            raise ValueError(f"{where}: missing list 'outcomes'")
        outcomes = []
        for i, entry in enumerate(obj["outcomes"]):
            if "choi" not in entry:
                raise ValueError(f"{where}.outcomes[{i}]: missing 'choi'")
            outcomes.append((str(entry.get("label", i)), ChoiOperator.from_json(entry["choi"], f"{where}.outcomes[{i}].choi")))
        return cls(tuple(outcomes), obj.get("party"))


def deterministic_instrument(channel: ChoiOperator, party: str | None = None) -> Instrument:
    return Instrument((("0", channel),), party)


def random_instrument(inputs, outputs, n_outcomes: int = 2, env_dim: int = 1,
                      seed=None, party: str | None = None) -> Instrument:
    """Random instrument from one Stinespring isometry whose Kraus operators are split by outcome."""
    inputs, outputs = _systems(inputs, "in"), _systems(outputs, "out")
    d_in, d_out = prod(s.dim for s in inputs), prod(s.dim for s in outputs)
    per = max(int(env_dim), ceil(d_in / (d_out * n_outcomes)))
    v = random_isometry(d_in, d_out * per * n_outcomes, seed).reshape(d_out, n_outcomes, per, d_in)
    outcomes = []
    for k in range(n_outcomes):
        kraus = [v[:, k, e, :] for e in range(per)]
        outcomes.append((str(k), choi_from_map(kraus, inputs, outputs)))
    return Instrument(tuple(outcomes), party)


def measure_prepare_choi(effect: np.ndarray, state: np.ndarray,
                         inputs: Sequence[SystemId], outputs: Sequence[SystemId]) -> ChoiOperator:
    """Choi operator of ``rho -> Tr[effect rho] state``: ``effect (x) state^T``."""
    systems = tuple(inputs) + tuple(outputs)
    m = np.kron(np.asarray(effect, dtype=complex), np.asarray(state, dtype=complex).T)
    return ChoiOperator(tuple(inputs), tuple(outputs), LabeledOperator(systems, systems, m))


def state_preparation_choi(rho: np.ndarray, outputs: Sequence[SystemId]) -> ChoiOperator:
    return measure_prepare_choi(np.ones((1, 1)), rho, (), outputs)


@dataclass(frozen=True, eq=False)
class ProbabilityTable:
    parties: tuple[str, ...]
    labels: tuple[tuple[str, ...], ...]
    probs: np.ndarray

    def __getitem__(self, outcome: Sequence[str]) -> float:
        idx = tuple(self.labels[i].index(str(o)) for i, o in enumerate(outcome))
        return float(self.probs[idx])

    def items(self):
        for idx in itertools.product(*(range(len(l)) for l in self.labels)):
            yield tuple(self.labels[i][j] for i, j in enumerate(idx)), float(self.probs[idx])

    def marginal(self, party: str) -> np.ndarray:
        k = self.parties.index(party)
        axes = tuple(i for i in range(len(self.parties)) if i != k)
        return self.probs.sum(axis=axes)

    def to_json(self) -> dict:
        return {
            "parties": list(self.parties),
            "outcomes": [{"labels": list(lab), "p": p} for lab, p in self.items()],
        }


def _party_choi_stack(inst: Instrument, systems: Sequence[SystemId]) -> np.ndarray:
    names = [s.name for s in systems]
    mats = []
    for _, c in inst.outcomes:
        if sorted(s.name for s in c.inputs + c.outputs) != sorted(names):
            raise LabelError(f"instrument for party {inst.party!r} acts on the wrong systems")
        op = reorder(c.op, names, names)
        if op.rows != tuple(systems):
            raise LabelError(f"instrument for party {inst.party!r} has wrong dimensions")
        mats.append(op.data)
    return np.array(mats)


def born_probabilities(W: "ProcessMatrix", instruments: Sequence[Instrument],
                       clamp_tol: float = 1e-10) -> ProbabilityTable:
    """Joint outcome distribution ``p(i, j, ...) = Tr[W (M_i (x) N_j (x) ...)]``.

    ``instruments`` must contain exactly one instrument per party of
    ``W.layout`` (matched by ``Instrument.party``, or by position when the
    party field is unset).  Values in ``[-clamp_tol, 0)`` are clamped to 0.
    """
    layout = W.layout
    by_party = {}
    for i, inst in enumerate(instruments):
        name = inst.party if inst.party is not None else layout.parties[i].name
        if name in by_party:
            raise LabelError(f"two instruments for party {name!r}")
        by_party[name] = inst
    names = [p.name for p in layout.parties]
    if set(by_party) != set(names):
        raise LabelError(f"instruments cover {sorted(by_party)}, layout has {sorted(names)}")
    order, stacks = [], []
    for party in layout.parties:
        systems = party.systems
        order.extend(s.name for s in systems)
        stacks.append(_party_choi_stack(by_party[party.name], systems))
    w = reorder(W.W, order, order)
    dims = [st.shape[1] for st in stacks]
    n = len(stacks)
    t = w.data.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows, cols, outs = letters[:n], letters[n:2 * n], letters[2 * n:3 * n]
    spec = rows + cols + "," + ",".join(f"{outs[k]}{cols[k]}{rows[k]}" for k in range(n)) + "->" + outs
    p = np.einsum(spec, t, *stacks, optimize=True)
    if np.max(np.abs(p.imag), initial=0.0) > 1e-8:
        raise InvalidProbabilityError("probabilities have a non-negligible imaginary part")
    p = p.real
    if np.min(p, initial=0.0) < -clamp_tol:
        raise InvalidProbabilityError(f"negative probability {np.min(p):.3e}: invalid process or instrument")
    p = np.where(p < 0, 0.0, p)
    return ProbabilityTable(tuple(names), tuple(by_party[nm].labels for nm in names), p)
