"""Process matrices: validity, the process/channel duality, signaling and order diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Mapping, Sequence

import numpy as np

from .channels import ChoiOperator, born_probabilities, link_compose, measure_prepare_choi, random_cptp
from .tensor import (
    DEFAULT_TOL,
    LabelError,
    LabeledOperator,
    SystemId,
    as_generator,
    random_state_vector,
    hs_decompose,
    hs_reconstruct,
    is_hermitian,
    numerical_rank,
    operator_from_json,
    operator_to_json,
    partial_trace,
    reorder,
    tensor_product,
)


class LayoutError(LabelError):
    """The party layout does not fit the requested operation."""


class InvalidProcessError(ValueError):
    """The operator is not a valid process matrix."""


@dataclass(frozen=True)
class Party:
    name: str
    input: SystemId | None = None
    output: SystemId | None = None

    @property
    def systems(self) -> tuple[SystemId, ...]:
        return tuple(s for s in (self.input, self.output) if s is not None)

    @property
    def d_in(self) -> int:
        return self.input.dim if self.input is not None else 1

    @property
    def d_out(self) -> int:
        return self.output.dim if self.output is not None else 1

    @property
    def dim(self) -> int:
        return self.d_in * self.d_out

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "input": self.input.to_json() if self.input is not None else None,
            "output": self.output.to_json() if self.output is not None else None,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Party":
        get = lambda k: SystemId.from_json(obj[k]) if obj.get(k) is not None else None
        return cls(str(obj["name"]), get("input"), get("output"))


@dataclass(frozen=True)
class PartyLayout:
    parties: tuple[Party, ...]

    def __post_init__(self) -> None:
        parties = tuple(self.parties)
        object.__setattr__(self, "parties", parties)
        names = [p.name for p in parties]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate party names: {names}")
        labels = [s.name for p in parties for s in p.systems]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"system labels must be globally unique: {labels}")

    @classmethod
    def of(cls, *specs: tuple) -> "PartyLayout":
        """``PartyLayout.of(("A", A_I, A_O), ("C", C_I, None), ...)``."""
        return cls(tuple(Party(*s) for s in specs))

    def __getitem__(self, name: str) -> Party:
        for p in self.parties:
            if p.name == name:
                return p
        raise LayoutError(f"unknown party {name!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parties)

    @property
    def systems(self) -> tuple[SystemId, ...]:
        return tuple(s for p in self.parties for s in p.systems)

    @property
    def input_systems(self) -> tuple[SystemId, ...]:
        return tuple(p.input for p in self.parties if p.input is not None)

    @property
    def output_systems(self) -> tuple[SystemId, ...]:
        return tuple(p.output for p in self.parties if p.output is not None)

    @property
    def d_inputs(self) -> int:
        return prod(p.d_in for p in self.parties)

    @property
    def d_outputs(self) -> int:
        return prod(p.d_out for p in self.parties)

    def to_json(self) -> dict:
        return {"parties": [p.to_json() for p in self.parties]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "PartyLayout":
        return cls(tuple(Party.from_json(p) for p in obj["parties"]))


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    """Operator ``W`` on all party systems, stored in layout order."""

    layout: PartyLayout
    W: LabeledOperator

    def __post_init__(self) -> None:
        names = [s.name for s in self.layout.systems]
        w = self.W
        if not w.is_square_labeled or sorted(w.row_names) != sorted(names):
            raise LayoutError(f"process operator must act on {names}, got {list(w.row_names)}")
        w = reorder(w, names, names)
        if w.rows != self.layout.systems:
            raise LayoutError("process operator dimensions disagree with the layout")
        object.__setattr__(self, "W", w)

    @property
    def data(self) -> np.ndarray:
        return self.W.data

    def trace(self) -> float:
        return float(self.W.trace().real)

    def to_json(self) -> dict:
        return {"layout": self.layout.to_json(), "operator": operator_to_json(self.W)}

    @classmethod
    def from_json(cls, obj: Mapping, where: str = "process") -> "ProcessMatrix":
        if not isinstance(obj, Mapping) or "layout" not in obj or "operator" not in obj:
            raise ValueError(f"{where}: expected keys 'layout' and 'operator'")
        try:
            layout = PartyLayout.from_json(obj["layout"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{where}.layout: {exc}") from None
        return cls(layout, operator_from_json(obj["operator"], f"{where}.operator"))


@dataclass
class ValidationReport:
    hermitian: bool
    psd: bool
    min_eigenvalue: float
    identity_weight: float
    expected_identity_weight: float
    trace: float
    expected_trace: float
    forbidden_terms: list[dict] = field(default_factory=list)
    n_forbidden: int = 0
    max_forbidden_weight: float = 0.0
    sampled_normalization: float = 0.0
    n_samples: int = 0
    tol: float = DEFAULT_TOL

    @property
    def identity_weight_ok(self) -> bool:
        return abs(self.identity_weight - self.expected_identity_weight) <= self.tol

    @property
    def terms_ok(self) -> bool:
        return self.n_forbidden == 0

    @property
    def normalization_ok(self) -> bool:
        return self.sampled_normalization <= 1e-9

    @property
    def valid(self) -> bool:
        return self.psd and self.identity_weight_ok and self.terms_ok and self.normalization_ok

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "hermitian": self.hermitian,
            "psd": self.psd,
            "min_eigenvalue": self.min_eigenvalue,
            "identity_weight": {"value": self.identity_weight, "expected": self.expected_identity_weight,
                                "ok": self.identity_weight_ok},
            "trace": {"value": self.trace, "expected": self.expected_trace},
            "forbidden_terms": {"count": self.n_forbidden, "max_weight": self.max_forbidden_weight,
                                "examples": self.forbidden_terms[:10], "ok": self.terms_ok},
            "sampled_normalization": {"max_deviation": self.sampled_normalization,
                                      "samples": self.n_samples, "ok": self.normalization_ok},
        }


def _allowed_mask(layout: PartyLayout) -> np.ndarray:
    """Boolean mask over HS index tuples of terms permitted by the term-type rule.

    A term is permitted when it is the identity or when some party has a
    nontrivial factor on its input and the identity on its output.
    """
    shape = [s.dim ** 2 for s in layout.systems]
    allowed = np.zeros(shape, dtype=bool)
    axis = 0
    for p in layout.parties:
        if p.input is None:
            axis += len(p.systems)
            continue
        view = [1] * len(shape)
        view[axis] = shape[axis]
        cond = (np.arange(shape[axis]) != 0).reshape(view)
        if p.output is not None:
            view = [1] * len(shape)
            view[axis + 1] = shape[axis + 1]
            cond = cond & (np.arange(shape[axis + 1]) == 0).reshape(view)
        allowed |= np.broadcast_to(cond, shape)
        axis += len(p.systems)
    allowed[(0,) * len(shape)] = True
    return allowed


def forbidden_terms(W: ProcessMatrix, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """HS coefficients and the boolean mask of terms that violate the term-type rule."""
    coeffs = hs_decompose(W.W)
    bad = (np.abs(coeffs) > tol) & ~_allowed_mask(W.layout)
    return coeffs, bad


def project_to_valid_subspace(W: ProcessMatrix | LabeledOperator, layout: PartyLayout | None = None) -> ProcessMatrix:
    """Orthogonal projection onto the affine set of operators obeying the term rule and normalization.

    Forbidden HS coefficients are zeroed and the identity weight is set to
    ``1 / prod(d_in)``.  Positivity is not enforced.
    """
    if isinstance(W, LabeledOperator):
        if layout is None:
            raise LayoutError("a layout is required for a bare operator")
        W = ProcessMatrix(layout, W)
    herm = (W.W + W.W.dag()) * 0.5
    coeffs = hs_decompose(herm)
    coeffs = np.where(_allowed_mask(W.layout), coeffs, 0.0)
    coeffs[(0,) * coeffs.ndim] = 1.0 / W.layout.d_inputs
    return ProcessMatrix(W.layout, hs_reconstruct(coeffs, W.layout.systems))


def random_party_channels(layout: PartyLayout, seed=None, exclude: Sequence[str] = ()) -> dict[str, ChoiOperator]:
    rng = as_generator(seed)
    return {
        p.name: random_cptp(tuple(s for s in [p.input] if s), tuple(s for s in [p.output] if s), 1, rng)
        for p in layout.parties if p.name not in exclude
    }


def contract_parties(W: ProcessMatrix, chois: Mapping[str, ChoiOperator | np.ndarray]) -> LabeledOperator:
    """``Tr_X[W (M_X (x) 1)]`` over the parties ``X`` listed in ``chois``.

    Returns the remaining operator on the other parties' systems (a
    probability when every party is contracted).
    """
    layout = W.layout
    dims = [p.dim for p in layout.parties]
    n = len(dims)
    t = W.data.reshape(dims + dims)
    rows, cols = list(range(n)), list(range(n, 2 * n))
    operands: list = [t, rows + cols]
    for k, p in enumerate(layout.parties):
        if p.name not in chois:
            continue
        c = chois[p.name]
        m = c.op.data if isinstance(c, ChoiOperator) else np.asarray(c)
        if isinstance(c, ChoiOperator):
            names = [s.name for s in p.systems]
            m = reorder(c.op, names, names).data
        if m.shape != (dims[k], dims[k]):
            raise LabelError(f"operation for party {p.name!r} has wrong dimensions")
        operands += [m, [cols[k], rows[k]]]
    keep = [k for k, p in enumerate(layout.parties) if p.name not in chois]
    unknown = set(chois) - set(layout.names)
    if unknown:
        raise LayoutError(f"unknown parties {sorted(unknown)}")
    out = np.einsum(*operands, [rows[k] for k in keep] + [cols[k] for k in keep], optimize=True)
    systems = tuple(s for k in keep for s in layout.parties[k].systems)
    d = prod(s.dim for s in systems)
    return LabeledOperator(systems, systems, out.reshape(d, d))


def validate_process_matrix(W: ProcessMatrix, n_samples: int = 50, seed=0,
                            tol: float = DEFAULT_TOL) -> ValidationReport:
    """Check positivity, identity weight, the term-type rule and sampled normalization."""
    if not is_hermitian(W.W, 1e-9):
        raise InvalidProcessError("process operator is not Hermitian")
    layout = W.layout
    m = (W.data + W.data.conj().T) / 2
    min_eig = float(np.linalg.eigvalsh(m)[0])
    psd = min_eig >= -tol * max(1.0, float(np.abs(m).max()))
    coeffs, bad = forbidden_terms(W, tol)
    idx = np.argwhere(bad)
    weights = np.abs(coeffs[bad])
    order = np.argsort(-weights, kind="stable")
    names = [s.name for s in layout.systems]
    terms = [{"term": {names[a]: int(i) for a, i in enumerate(idx[k]) if i}, "weight": float(coeffs[tuple(idx[k])])}
             for k in order[:50]]
    rng = as_generator(seed)
    deviation = 0.0
    for _ in range(n_samples):
        p = contract_parties(W, random_party_channels(layout, rng)).data[0, 0]
        deviation = max(deviation, abs(p - 1.0))
    return ValidationReport(
        hermitian=True,
        psd=bool(psd),
        min_eigenvalue=min_eig,
        identity_weight=float(coeffs[(0,) * coeffs.ndim]),
        expected_identity_weight=1.0 / layout.d_inputs,
        trace=W.trace(),
        expected_trace=float(layout.d_outputs),
        forbidden_terms=terms,
        n_forbidden=int(idx.shape[0]),
        max_forbidden_weight=float(weights.max()) if weights.size else 0.0,
        sampled_normalization=float(deviation),
        n_samples=n_samples,
        tol=tol,
    )


def is_valid_process(W: ProcessMatrix, **kw) -> bool:
    return validate_process_matrix(W, **kw).valid


# process <-> channel duality


def process_to_channel(W: ProcessMatrix) -> ChoiOperator:
    """Choi operator of the channel from all party outputs to all party inputs.

    The process matrix is the untransposed Choi operator of that channel,
    so in the library convention the channel's Choi operator is ``W^T``.
    """
    layout = W.layout
    ins = [s.name for s in layout.output_systems]
    outs = [s.name for s in layout.input_systems]
    op = reorder(W.W.transpose(), ins + outs, ins + outs)
    return ChoiOperator(layout.output_systems, layout.input_systems, op)


def channel_to_process(channel: ChoiOperator, layout: PartyLayout) -> ProcessMatrix:
    if set(channel.inputs) != set(layout.output_systems) or set(channel.outputs) != set(layout.input_systems):
        raise LayoutError("channel must map every party output to every party input")
    return ProcessMatrix(layout, channel.op.transpose())


def process_channel_duality(obj: ProcessMatrix | ChoiOperator, layout: PartyLayout | None = None):
    """Map a process matrix to its channel, or a channel (with ``layout``) back to the process matrix."""
    if isinstance(obj, ProcessMatrix):
        return process_to_channel(obj)
    if layout is None:
        raise LayoutError("a layout is required to turn a channel into a process matrix")
    return channel_to_process(obj, layout)


def probabilities(W: ProcessMatrix, instruments) -> "np.ndarray":
    return born_probabilities(W, instruments).probs


# signaling and nonseparability


@dataclass
class SignalingResult:
    source: str
    target: str
    structural_no_signaling: bool
    structural_residual: float
    operational_gap: float
    samples: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def no_signaling_residual(W: ProcessMatrix, party: str) -> float:
    """``max|W - Tr_O(W)/d_O (x) 1_O|`` for the output ``O`` of ``party``."""
    p = W.layout[party]
    if p.output is None or p.output.dim == 1:
        return 0.0
    reduced = partial_trace(W.W, [p.output.name]) / p.output.dim
    rebuilt = tensor_product(reduced, LabeledOperator.identity(p.output))
    return float(np.max(np.abs(W.data - reorder(rebuilt, W.W.row_names, W.W.col_names).data)))


def _effective_input(W: ProcessMatrix, chois: Mapping[str, ChoiOperator], target: Party) -> np.ndarray:
    """Operator ``T`` on the target's input with ``p(E) = Tr[T E]`` for any effect ``E``.

    The target discards its input after measuring and prepares the maximally
    mixed state, so ``T`` is the (transposed) state arriving at its input.
    """
    r = contract_parties(W, chois)
    if target.output is None:
        return r.data
    t = r.data.reshape(target.d_in, target.d_out, target.d_in, target.d_out)
    return np.einsum("iajb,ab->ij", t, np.eye(target.d_out) / target.d_out)


def signaling_test(W: ProcessMatrix, source: str, target: str, samples: int = 64, seed=0,
                   tol: float = 1e-9) -> SignalingResult:
    """Structural and operational signaling from ``source`` to ``target``.

    The operational gap is the largest trace distance between the states
    reaching ``target``'s input as ``source`` applies ``samples`` seeded
    random operations, all other parties holding fixed random channels.  It
    equals the largest total-variation distance over ``target``'s
    measurements.  Even samples are random isometric channels and odd
    samples discard the input and prepare a random pure state, so the
    source can signal even when its own input is maximally mixed.
    """
    layout = W.layout
    if source == target:
        raise LayoutError("source and target must differ")
    src, tgt = layout[source], layout[target]
    residual = no_signaling_residual(W, source)
    gap = 0.0
    if tgt.input is not None and src.output is not None:
        rng = as_generator(seed)
        fixed = random_party_channels(layout, rng, exclude=(source, target))
        states = []
        ins = tuple(s for s in [src.input] if s)
        for k in range(samples):
            chois = dict(fixed)
            if k % 2 == 0:
                chois[source] = random_cptp(ins, (src.output,), 1, rng)
            else:
                v = random_state_vector(src.d_out, rng)
                chois[source] = measure_prepare_choi(np.eye(src.d_in), np.outer(v, v.conj()), ins, (src.output,))
            states.append(_effective_input(W, chois, tgt))
        stack = np.array(states)
        i, j = np.triu_indices(len(stack), 1)
        diff = stack[i] - stack[j]
        diff = (diff + diff.conj().transpose(0, 2, 1)) / 2
        gap = 0.5 * float(np.abs(np.linalg.eigvalsh(diff)).sum(axis=1).max()) if len(i) else 0.0
    return SignalingResult(source, target, residual <= tol, residual, gap, samples)


@dataclass
class NonseparabilityCertificate:
    certified: bool
    rank: int
    leading_eigenvalues: list[float]
    gap_ab: float
    gap_ba: float
    min_gap: float
    parties: tuple[str, str]

    @property
    def evidence(self) -> dict:
        a, b = self.parties
        return {
            "rank_one": self.rank == 1,
            "rank": self.rank,
            "leading_eigenvalues": self.leading_eigenvalues,
            f"signaling_{a}_to_{b}": self.gap_ab,
            f"signaling_{b}_to_{a}": self.gap_ba,
            "min_gap": self.min_gap,
            "note": ("a pure process with signaling in both directions cannot be a mixture of "
                     "fixed-order processes; absence of a certificate proves nothing"),
        }

    def to_json(self) -> dict:
        return {"certified": self.certified, "evidence": self.evidence}


def nonseparability_certificate(W: ProcessMatrix, min_gap: float = 1e-6, samples: int = 64,
                                seed=0, rank_tol: float = 1e-9) -> NonseparabilityCertificate:
    """Sufficient certificate of causal nonseparability: rank one plus two-way signaling.

    Expects three parties: two with input and output, and one with input only.
    """
    layout = W.layout
    full = [p for p in layout.parties if p.input is not None and p.d_out > 1]
    tail = [p for p in layout.parties if p not in full]
    if len(layout.parties) != 3 or len(full) != 2 or tail[0].input is None or tail[0].d_out != 1:
        raise LayoutError("certificate needs two parties with input and output plus one input-only party")
    a, b = full[0].name, full[1].name
    vals = np.linalg.eigvalsh((W.data + W.data.conj().T) / 2)[::-1]
    rank = numerical_rank(W.data, rank_tol)
    ab = signaling_test(W, a, b, samples, seed).operational_gap
    ba = signaling_test(W, b, a, samples, seed).operational_gap
    certified = rank == 1 and ab > min_gap and ba > min_gap
    return NonseparabilityCertificate(certified, rank, [float(v) for v in vals[:3]], ab, ba, min_gap, (a, b))


def fixed_order_form_check(W: ProcessMatrix, order: Sequence[str]) -> float:
    """Largest violation of the nested no-signaling conditions of a fixed party order.

    For the last party ``L`` the residual is ``max|W - Tr_{L_O}W/d (x) 1|``;
    ``L`` is then traced out and the condition is repeated for the
    preceding party.  Zero (to rounding) iff ``W`` is compatible with the
    order.  Every party must appear in ``order``.
    """
    layout = W.layout
    order = list(order)
    if sorted(order) != sorted(layout.names):
        raise LayoutError(f"order {order} must list each party of {list(layout.names)} once")
    op = W.W
    worst = 0.0
    for name in reversed(order):
        p = layout[name]
        if p.output is not None:
            reduced = partial_trace(op, [p.output.name]) / p.output.dim
            rebuilt = reorder(tensor_product(reduced, LabeledOperator.identity(p.output)), op.row_names, op.col_names)
            worst = max(worst, float(np.max(np.abs(op.data - rebuilt.data))))
            op = reduced
        if p.input is not None:
            op = partial_trace(op, [p.input.name])
    return worst


# circuit-built processes


def process_from_circuit(layout: PartyLayout, pieces: Sequence[ChoiOperator]) -> ProcessMatrix:
    """Process matrix of an acyclic circuit whose open wires are the parties' systems.

    ``pieces`` are the channels between the parties (including state
    preparations).  Internal memory wires are linked; what remains must map
    every party output to every party input.
    """
    total = pieces[0]
    for piece in pieces[1:]:
        total = link_compose(total, piece)
    return channel_to_process(total, layout)


def random_fixed_order_process(order: Sequence[str] = ("A", "B"), d: int = 2, memory: int = 2,
                               pure: bool = True, seed=None, c_dim: int | None = None) -> ProcessMatrix:
    """Random tripartite process ``first -> second -> C`` built from a seeded circuit.

    Parties ``A`` and ``B`` have ``d``-dimensional input and output; ``C``
    has input only.  With ``pure=True`` every piece is an isometry, so the
    process is rank one.
    """
    rng = as_generator(seed)
    first, second = order
    c_dim = d * memory if c_dim is None else c_dim
    layout = PartyLayout((
        Party("A", SystemId("A_I", d), SystemId("A_O", d)),
        Party("B", SystemId("B_I", d), SystemId("B_O", d)),
        Party("C", SystemId("C_I", c_dim), None),
    ))
    m1, m2 = SystemId("M1", memory), SystemId("M2", memory)
    env = 1 if pure else 2
    f, s = layout[first], layout[second]
    prep = random_cptp((), (f.input, m1), env, rng)
    mid = random_cptp((f.output, m1), (s.input, m2), env, rng)
    last = random_cptp((s.output, m2), (layout["C"].input,), env, rng)
    return process_from_circuit(layout, [prep, mid, last])


def mixture(processes: Sequence[ProcessMatrix], weights: Sequence[float]) -> ProcessMatrix:
    layout = processes[0].layout
    op = processes[0].W * weights[0]
    for p, w in zip(processes[1:], weights[1:]):
        op = op + p.W * w
    return ProcessMatrix(layout, op)
