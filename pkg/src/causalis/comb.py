"""Unitary and isometric four-party processes: comb factorization and delocalized subsystems.

A four-party process channel ``V : D_O A_O B_O -> A_I B_I C_I`` is split,
with Alice's slot open, into a first tooth ``D_O B_O -> A_I X`` and a second
tooth ``X A_O -> B_I C_I``.  When the first tooth is unitary it identifies
a tensor factor of ``D_O B_O`` with Alice's input, and the second tooth
embeds Alice's output into ``B_I C_I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Mapping, Sequence

import numpy as np

from .channels import choi_from_map
from .process import (Party, PartyLayout, ProcessMatrix, channel_to_process, mixture,
                      random_fixed_order_process)
from .switch import SubsystemEncoder, SubsystemEncoderPair, switch_process_unitary
from .tensor import (
    LabelError,
    LabeledOperator,
    SystemId,
    as_generator,
    eigh_sorted,
    haar_unitary,
    is_isometry_matrix,
    max_abs_diff,
    operator_to_json,
    partial_trace,
    random_density_matrix,
    reorder,
)

ROWS = ("A_I", "B_I", "C_I")
COLS = ("D_O", "A_O", "B_O")


class CombConditionError(ValueError):
    """The later input signals to the earlier output, so the cut is not a comb."""


class FactorizationError(ValueError):
    """A comb factorization could not be certified."""


class IsometricFormError(ValueError):
    """The process channel does not embed a tensor factor of ``D_O B_O`` into Alice's input."""


@dataclass(frozen=True, eq=False)
class FourPartyProcessChannel:
    """Isometry ``D_O A_O B_O -> A_I B_I C_I`` whose Choi operator is a four-party process."""

    V: LabeledOperator
    name: str = ""

    def __post_init__(self) -> None:
        v = self.V
        if sorted(v.row_names) != sorted(ROWS) or sorted(v.col_names) != sorted(COLS):
            raise LabelError(f"process channel must map {COLS} to {ROWS}")
        v = reorder(v, ROWS, COLS)
        if not is_isometry_matrix(v.data, 1e-10):
            raise ValueError("process channel is not an isometry")
        object.__setattr__(self, "V", v)

    def dim(self, name: str) -> int:
        return self.V.system(name).dim

    @property
    def is_unitary(self) -> bool:
        return self.V.shape[0] == self.V.shape[1]

    def isometry_residual(self) -> float:
        m = self.V.data
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[1]))))

    def layout(self) -> PartyLayout:
        s = self.V.system
        return PartyLayout((
            Party("D", None, s("D_O")),
            Party("A", s("A_I"), s("A_O")),
            Party("B", s("B_I"), s("B_O")),
            Party("C", s("C_I"), None),
        ))

    def process_matrix(self) -> ProcessMatrix:
        return channel_to_process(choi_from_map([self.V]), self.layout())

    def to_json(self) -> dict:
        return {"name": self.name, "operator": operator_to_json(self.V)}


def channel_from_process(W: ProcessMatrix, tol: float = 1e-9) -> FourPartyProcessChannel:
    """Recover ``V`` from a rank-one four-party process matrix ``|V>><<V|``.

    The global phase is fixed by the top eigenvector's gauge.
    """
    layout = W.layout
    if sorted(p.name for p in layout.parties) != ["A", "B", "C", "D"]:
        raise LabelError("a four-party layout (D, A, B, C) is required")
    D, A, B, C = (layout[n] for n in ("D", "A", "B", "C"))
    vals, vecs = eigh_sorted(W.data)
    if vals[0] <= 0 or (len(vals) > 1 and vals[1] > tol * vals[0]):
        raise ValueError("process matrix is not rank one")
    ins = [s for s in (D.output, A.output, B.output) if s is not None]
    outs = [s for s in (A.input, B.input, C.input) if s is not None]
    order = [s.name for s in ins + outs]
    vec = np.sqrt(vals[0]) * vecs[:, 0]
    w = LabeledOperator(W.W.rows, (), vec)
    w = reorder(w, order, ())
    d_in, d_out = prod(s.dim for s in ins), prod(s.dim for s in outs)
    mat = w.data.reshape(d_in, d_out).T
    rename = {D.output.name: "D_O", A.output.name: "A_O", B.output.name: "B_O",
              A.input.name: "A_I", B.input.name: "B_I", C.input.name: "C_I"}
    rows = tuple(SystemId(rename[s.name], s.dim) for s in outs)
    cols = tuple(SystemId(rename[s.name], s.dim) for s in ins)
    return FourPartyProcessChannel(LabeledOperator(rows, cols, mat))


def _alice_unitary(u_a, d_in: int, d_out: int) -> tuple[np.ndarray, int, int]:
    m = u_a.data if isinstance(u_a, LabeledOperator) else np.asarray(u_a, dtype=complex)
    a_in, a_out = m.shape[1] // d_in, m.shape[0] // d_out
    if a_in * d_in != m.shape[1] or a_out * d_out != m.shape[0]:
        raise LabelError(f"U_A of shape {m.shape} does not fit Alice's systems ({d_in} -> {d_out})")
    if not is_isometry_matrix(m, 1e-9) or m.shape[0] != m.shape[1]:
        raise ValueError("U_A is not unitary")
    return m.reshape(a_out, d_out, a_in, d_in), a_in, a_out


def compose_with_alice(V: FourPartyProcessChannel, u_a) -> LabeledOperator:
    """Plug Alice's unitary into the process: ``a_I D_O B_O -> a_O B_I C_I``.

    ``U_A`` acts on ``ancilla (x) A_I -> ancilla (x) A_O`` (ancilla first).
    """
    s = V.V.system
    dai, dbi, dci = (s(n).dim for n in ROWS)
    ddo, dao, dbo = (s(n).dim for n in COLS)
    u, a_in, a_out = _alice_unitary(u_a, dai, dao)
    v = V.V.data.reshape(dai, dbi, dci, ddo, dao, dbo)
    g = np.einsum("xbcdyo,pyix->pbcido", v, u)
    rows = ((SystemId("a_O", a_out),) if a_out > 1 else ()) + (s("B_I"), s("C_I"))
    cols = ((SystemId("a_I", a_in),) if a_in > 1 else ()) + (s("D_O"), s("B_O"))
    return LabeledOperator(rows, cols, g.reshape(a_out * dbi * dci, a_in * ddo * dbo))


# comb factorization


@dataclass(frozen=True, eq=False)
class OneComb:
    """``G = (1_{first_out} (x) V2)(V1 (x) 1_{second_in})`` through the memory ``X``."""

    V1: LabeledOperator
    V2: LabeledOperator
    X: SystemId
    residual: float
    probe_gap: float
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def d_X(self) -> int:
        return self.X.dim

    def compose(self) -> LabeledOperator:
        from .tensor import compose_circuit
        return compose_circuit([self.V1, self.V2])

    def is_isometric(self, tol: float = 1e-10) -> bool:
        return is_isometry_matrix(self.V1.data, tol) and is_isometry_matrix(self.V2.data, tol)

    def to_json(self) -> dict:
        return {"d_X": self.d_X, "residual": self.residual, "probe_gap": self.probe_gap,
                "V1": operator_to_json(self.V1), "V2": operator_to_json(self.V2)}


def _split(G: LabeledOperator, cut) -> tuple[np.ndarray, list, list, list, list]:
    fi, fo, si, so = (list(c) for c in cut)
    if sorted(fi + si) != sorted(G.col_names) or sorted(fo + so) != sorted(G.row_names):
        raise LabelError(f"cut {cut} does not partition the systems of the operator")
    g = reorder(G, fo + so, fi + si)
    dims = lambda names: prod(G.system(n).dim for n in names)
    g4 = g.data.reshape(dims(fo), dims(so), dims(fi), dims(si))
    sysf = lambda names: [G.system(n) for n in names]
    return g4, sysf(fi), sysf(fo), sysf(si), sysf(so)


def _reduced_choi(g4: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """Untransposed Choi operator of ``rho -> Tr_so[G (rho (x) probe) G^dag]``."""
    c = np.einsum("aois,st,bojt->iajb", g4, probe, g4.conj())
    n = g4.shape[2] * g4.shape[0]
    return c.reshape(n, n)


def reduced_channel_gap(G: LabeledOperator, cut, n_probes: int = 10, seed=0) -> tuple[np.ndarray, float]:
    """Reduced first-tooth Choi operator and its largest change over random second-slot probes."""
    g4 = _split(G, cut)[0]
    dsi = g4.shape[3]
    rng = as_generator(seed)
    ref = _reduced_choi(g4, np.eye(dsi) / dsi)
    gap = 0.0
    for _ in range(n_probes):
        c = _reduced_choi(g4, random_density_matrix(dsi, rng))
        gap = max(gap, float(np.max(np.abs(c - ref))))
    return ref, gap


def comb_factorize(G: LabeledOperator, cut: Sequence[Sequence[str]], memory: str = "X",
                   n_probes: int = 10, seed=0, gauge=None, tol: float = 1e-9,
                   rank_tol: float = 1e-9) -> OneComb:
    """Minimal two-tooth factorization of an isometry along ``cut``.

    ``cut = (first_in, first_out, second_in, second_out)``.  The first tooth
    is the minimal Stinespring isometry of the reduced channel
    ``first_in -> first_out`` (its Choi rank is the memory dimension); the
    second tooth is solved by least squares on the first tooth's image.
    ``gauge`` optionally applies a unitary (or seed for a random one) on the
    memory, which leaves the composition unchanged.
    """
    g4, fi, fo, si, so = _split(G, cut)
    dfo, dso, dfi, dsi = g4.shape
    choi, gap = reduced_channel_gap(G, cut, n_probes, seed)
    if gap > tol:
        raise CombConditionError(
            f"the first-tooth output depends on the second-tooth input (probe gap {gap:.3e}); wrong cut order?")
    vals, vecs = eigh_sorted(choi)
    rank = int(np.sum(vals > rank_tol * max(vals[0], 1e-300)))
    kraus = [np.sqrt(vals[k]) * vecs[:, k].reshape(dfi, dfo).T for k in range(rank)]
    v1 = np.stack(kraus, axis=1)  # [fo, x, fi]
    if gauge is not None:
        ux = haar_unitary(rank, gauge) if not isinstance(gauge, np.ndarray) else gauge
        v1 = np.einsum("yx,axi->ayi", ux, v1)
    a = v1.transpose(0, 2, 1).reshape(dfo * dfi, rank)
    b = g4.transpose(0, 2, 1, 3).reshape(dfo * dfi, dso * dsi)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    v2 = sol.reshape(rank, dso, dsi).transpose(1, 0, 2)  # [so, x, si]
    rebuilt = np.einsum("oxs,axi->aois", v2, v1)
    residual = float(np.max(np.abs(rebuilt - g4)))
    if residual > tol:
        raise FactorizationError(f"comb reconstruction residual {residual:.3e} exceeds {tol:.1e}")
    X = SystemId(memory, rank)
    V1 = LabeledOperator(tuple(fo) + (X,), tuple(fi), v1.reshape(dfo * rank, dfi))
    V2 = LabeledOperator(tuple(so), (X,) + tuple(si), v2.reshape(dso, rank * dsi))
    return OneComb(V1, V2, X, residual, gap, vals)


ALICE_CUT = (("D_O", "B_O"), ("A_I",), ("A_O",), ("B_I", "C_I"))


def bob_slot_comb(V: FourPartyProcessChannel, u_a, **kw) -> OneComb:
    """Comb obtained by plugging ``U_A`` into the process, with Bob's slot open."""
    G = compose_with_alice(V, u_a)
    anc_in = [n for n in G.col_names if n == "a_I"]
    anc_out = [n for n in G.row_names if n == "a_O"]
    cut = (anc_in + ["D_O"], ["B_I"], ["B_O"], anc_out + ["C_I"])
    return comb_factorize(G, cut, **kw)


# delocalized subsystems


@dataclass
class IsometricForm:
    satisfies: bool
    reduced_rank: int
    required_rank: float
    probe_gap: float
    k_dim: int | None
    encoders: SubsystemEncoderPair | None = None
    comb: OneComb | None = None

    def to_json(self) -> dict:
        return {"satisfies": self.satisfies, "reduced_rank": self.reduced_rank,
                "required_rank": self.required_rank, "probe_gap": self.probe_gap, "k_dim": self.k_dim}


def check_isometric_form(V: FourPartyProcessChannel, n_probes: int = 10, seed=0, gauge=None) -> IsometricForm:
    """Test whether Alice's input is a tensor factor of ``D_O B_O`` mapped identically onto ``A_I``.

    The reduced channel ``D_O B_O -> A_I`` must not depend on what enters
    ``A_O`` and must have Choi rank ``d(D_O B_O) / d(A_I)``, which makes its
    minimal dilation unitary.  On success the second tooth is an isometry
    whose image misses a subspace ``K`` of ``B_I C_I``.
    """
    try:
        comb = comb_factorize(V.V, ALICE_CUT, "X", n_probes, seed, gauge)
    except FactorizationError:
        comb = None
    choi, gap = reduced_channel_gap(V.V, ALICE_CUT, n_probes, seed)
    if gap > 1e-9:
        raise CombConditionError(f"Alice's input depends on her output (probe gap {gap:.3e}): malformed process")
    d_first = V.dim("D_O") * V.dim("B_O")
    required = d_first / V.dim("A_I")
    vals = np.linalg.eigvalsh((choi + choi.conj().T) / 2)[::-1]
    rank = int(np.sum(vals > 1e-9 * max(vals[0], 1e-300)))
    ok = comb is not None and rank == required
    if not ok:
        return IsometricForm(False, rank, required, gap, None, None, comb)
    k_dim = V.dim("B_I") * V.dim("C_I") - V.dim("A_O") * comb.d_X
    return IsometricForm(True, rank, required, gap, k_dim, _encoders_from_comb(comb, k_dim), comb)


def _encoders_from_comb(comb: OneComb, k_dim: int) -> SubsystemEncoderPair:
    u1_dag = comb.V1.dag()
    w_in = LabeledOperator(u1_dag.rows, (SystemId("A_I~", comb.V1.system("A_I").dim), SystemId("Abar_I", comb.d_X)),
                           reorder(u1_dag, None, ["A_I", comb.X.name]).data)
    v2 = reorder(comb.V2, None, [comb.X.name, "A_O"])
    w_out = LabeledOperator(v2.rows, (SystemId("Abar_O", comb.d_X), SystemId("A_O~", v2.system("A_O").dim)), v2.data)
    return SubsystemEncoderPair(SubsystemEncoder(w_in, "A_I~"), SubsystemEncoder(w_out, "A_O~"),
                                (("Abar_I", "Abar_O"),),
                                {"construction": "comb", "d_X": comb.d_X, "k_dim": k_dim,
                                 "residual": comb.residual, "probe_gap": comb.probe_gap})


def extract_delocalized_subsystems(V: FourPartyProcessChannel, n_probes: int = 10, seed=0,
                                   gauge=None) -> SubsystemEncoderPair:
    """Encoders of Alice's delocalized input (in ``D_O B_O``) and output (in ``B_I C_I``).

    The input encoder is the inverse of the first tooth and the output
    encoder is the second tooth, with the memory ``X`` serving as the
    complement on both sides so the complement channel is the identity.
    """
    form = check_isometric_form(V, n_probes, seed, gauge)
    if not form.satisfies:
        raise IsometricFormError(
            f"reduced channel D_O B_O -> A_I has Choi rank {form.reduced_rank}, expected {form.required_rank:g}")
    return form.encoders


def verify_subsystem_factorization(V: FourPartyProcessChannel, encoders: SubsystemEncoderPair,
                                 u_samples: Sequence) -> float:
    """Largest ``|G(U_A) - W_out (U_A (x) 1) W_in^dag|`` over the sampled unitaries."""
    worst = 0.0
    for u in u_samples:
        worst = max(worst, max_abs_diff(compose_with_alice(V, u), encoders.factorized(u)))
    return worst


# operator-algebra comparison


def matrix_units(d: int) -> list[np.ndarray]:
    out = []
    for i in range(d):
        for j in range(d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = 1.0
            out.append(m)
    return out


def embedded_basis(encoder: SubsystemEncoder) -> list[LabeledOperator]:
    return [encoder.embed(m) for m in matrix_units(encoder.sub.dim)]


def span_projector(ops: Sequence[LabeledOperator], like: LabeledOperator | None = None,
                   tol: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the linear span of the vectorized operators."""
    like = ops[0] if like is None else like
    mat = np.array([reorder(o, like.row_names, like.col_names).data.ravel() for o in ops]).T
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    q = u[:, s > tol * s[0]]
    return q @ q.conj().T


def algebra_distance(a: Sequence[LabeledOperator], b: Sequence[LabeledOperator]) -> float:
    """Max-norm distance between the projectors onto two operator spans."""
    return float(np.max(np.abs(span_projector(a) - span_projector(b, like=a[0]))))


# process families


def _channel(t: np.ndarray, dims: Mapping[str, int], name: str) -> FourPartyProcessChannel:
    rows = tuple(SystemId(n, dims[n]) for n in ROWS)
    cols = tuple(SystemId(n, dims[n]) for n in COLS)
    return FourPartyProcessChannel(LabeledOperator(rows, cols, t.reshape(prod(s.dim for s in rows),
                                                                         prod(s.dim for s in cols))), name)


def switch_channel(d: int = 2) -> FourPartyProcessChannel:
    return FourPartyProcessChannel(switch_process_unitary(d), "switch")


def controlled_order_channel(d: int = 2, orders: Sequence[str] = ("AB", "BA"),
                             dressings: Sequence[np.ndarray] | None = None,
                             pre: np.ndarray | None = None, post: np.ndarray | None = None,
                             name: str = "controlled-order") -> FourPartyProcessChannel:
    """Coherent control of the order of Alice and Bob over ``N = len(orders)`` branches.

    ``D_O = Q S`` and ``C_I = Q' S'`` with a control of dimension ``N``.
    Branch ``k`` routes the target through the two parties in ``orders[k]``
    with ``dressings[k]`` applied between them.  ``pre``/``post`` act on
    ``D_O``/``C_I``.
    """
    n = len(orders)
    dressings = [np.eye(d)] * n if dressings is None else [np.asarray(r, dtype=complex) for r in dressings]
    e = np.eye(d)
    t = np.zeros((d, d, n, d, n, d, d, d), dtype=complex)  # [ai, bi, q', s'; q, s, ao, bo]
    for k, (order, r) in enumerate(zip(orders, dressings)):
        if order == "AB":
            t[:, :, k, :, k, :, :, :] = np.einsum("as,bo,Se->abSsoe", e, r, e)
        elif order == "BA":
            t[:, :, k, :, k, :, :, :] = np.einsum("ae,bs,So->abSsoe", r, e, e)
        else:
            raise ValueError(f"unknown order {order!r}")
    dq = n * d
    t = t.reshape(d, d, dq, dq, d, d)
    if pre is not None:
        t = np.einsum("abcqoe,qp->abcpoe", t, pre)
    if post is not None:
        t = np.einsum("pc,abcqoe->abpqoe", post, t)
    return _channel(t, {"A_I": d, "B_I": d, "C_I": dq, "D_O": dq, "A_O": d, "B_O": d}, name)


def dressed_switch_channel(d: int = 2, seed=None) -> FourPartyProcessChannel:
    """SWITCH with random unitaries between the parties and on David's and Charlie's wires."""
    rng = as_generator(seed)
    return controlled_order_channel(
        d, ("AB", "BA"), [haar_unitary(d, rng), haar_unitary(d, rng)],
        haar_unitary(2 * d, rng), haar_unitary(2 * d, rng), "dressed-switch")


def three_branch_channel(d: int = 2, seed=None) -> FourPartyProcessChannel:
    """Qutrit-controlled process with branches ``A<B``, ``B<A`` and a differently dressed ``A<B``."""
    rng = as_generator(seed)
    return controlled_order_channel(
        d, ("AB", "BA", "AB"), [haar_unitary(d, rng) for _ in range(3)],
        haar_unitary(3 * d, rng), haar_unitary(3 * d, rng), "three-branch")


def fixed_order_channel(d: int = 2, memory: int = 2, seed=None, order: str = "AB") -> FourPartyProcessChannel:
    """Unitary circuit ``D -> first -> second -> C`` with a ``memory``-dimensional side wire."""
    rng = as_generator(seed)
    n = d * memory
    u0 = haar_unitary(n, rng).reshape(d, memory, n)              # D_O -> first_I M
    u1 = haar_unitary(n, rng).reshape(d, memory, d, memory)      # first_O M -> second_I M'
    u2 = haar_unitary(n, rng).reshape(n, d, memory)              # second_O M' -> C_I
    # [first_I, second_I, C_I; D_O, first_O, second_O]
    t = np.einsum("fmD,snFm,cSn->fscDFS", u0, u1, u2)
    if order == "BA":
        t = t.transpose(1, 0, 2, 3, 5, 4)
    elif order != "AB":
        raise ValueError(f"unknown order {order!r}")
    return _channel(t, {"A_I": d, "B_I": d, "C_I": n, "D_O": n, "A_O": d, "B_O": d}, f"fixed-{order}")


def padded_channel(V: FourPartyProcessChannel, extra: int = 1, seed=None) -> FourPartyProcessChannel:
    """Follow ``V`` by a random isometric embedding of ``C_I`` into a space ``extra`` dimensions larger."""
    dc = V.dim("C_I")
    emb = haar_unitary(dc + extra, seed)[:, :dc]
    s = V.V.system
    t = V.V.data.reshape(s("A_I").dim, s("B_I").dim, dc, -1)
    t = np.einsum("Cc,abcx->abCx", emb, t)
    rows = (s("A_I"), s("B_I"), SystemId("C_I", dc + extra))
    return FourPartyProcessChannel(LabeledOperator(rows, V.V.cols, t.reshape(-1, t.shape[-1])), V.name + "-padded")


def purified_bipartite_channel(W: ProcessMatrix, tol: float = 1e-10) -> FourPartyProcessChannel:
    """Purify the channel of a bipartite process (parties ``A``, ``B``) onto Charlie's input.

    David's output is trivial.  The resulting isometry reproduces ``W`` when
    Charlie's input is discarded.
    """
    layout = W.layout
    A, B = layout["A"], layout["B"]
    ins, outs = [A.output, B.output], [A.input, B.input]
    names = [s.name for s in ins + outs]
    m = reorder(W.W, names, names).data
    vals, vecs = eigh_sorted(m)
    keep = [k for k in range(len(vals)) if vals[k] > tol * vals[0]]
    d_in, d_out = A.d_out * B.d_out, A.d_in * B.d_in
    kraus = [np.sqrt(vals[k]) * vecs[:, k].reshape(d_in, d_out).T for k in keep]
    v = np.stack(kraus, axis=1)  # [(ai, bi), c, (ao, bo)]
    rows = (SystemId("A_I", A.d_in), SystemId("B_I", B.d_in), SystemId("C_I", len(keep)))
    cols = (SystemId("D_O", 1), SystemId("A_O", A.d_out), SystemId("B_O", B.d_out))
    return FourPartyProcessChannel(LabeledOperator(rows, cols, v.reshape(d_out * len(keep), d_in)), "purified")


def purification_counterexample(q: float = 0.5, d: int = 2, seed=None) -> FourPartyProcessChannel:
    """Purification of a classical mixture of the two orders of a noisy bipartite circuit.

    The mixture is a valid causally separable process, but Alice's input is
    not an isometric image of part of ``D_O B_O``, so the delocalized-subsystem
    form does not apply.
    """
    rng = as_generator(seed)
    parts = []
    for order in (("A", "B"), ("B", "A")):
        w = random_fixed_order_process(order, d, 2, pure=False, seed=rng)
        layout = PartyLayout((w.layout["A"], w.layout["B"]))
        parts.append(ProcessMatrix(layout, partial_trace(w.W, ["C_I"])))
    return purified_bipartite_channel(mixture(parts, [q, 1 - q]))
