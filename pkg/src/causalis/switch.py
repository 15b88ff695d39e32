"""The quantum SWITCH: result unitary, temporal comb, process matrices and delocalized-subsystem encoders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .process import Party, PartyLayout, ProcessMatrix
from .tensor import (
    DEFAULT_TOL,
    LabelError,
    LabeledOperator,
    SystemId,
    compose_circuit,
    identity_map,
    is_isometry_matrix,
    max_abs_diff,
    operator_from_json,
    operator_to_json,
    relabel,
    tensor_product,
)

PLUS = np.array([1.0, 1.0]) / np.sqrt(2)


@dataclass(frozen=True)
class SwitchConfig:
    """Target dimension, ancilla dimensions and the states David prepares."""

    d: int = 2
    anc_a_in: int = 1
    anc_a_out: int = 1
    anc_b_in: int = 1
    anc_b_out: int = 1
    psi: tuple[complex, ...] | None = None
    control_state: tuple[complex, ...] | None = None

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"target dimension must be an integer >= 2, got {self.d!r}")
        for name in ("anc_a_in", "anc_a_out", "anc_b_in", "anc_b_out"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name, dim in (("psi", self.d), ("control_state", 2)):
            v = getattr(self, name)
            if v is None:
                continue
            v = tuple(complex(x) for x in np.asarray(v, dtype=complex).ravel())
            if len(v) != dim:
                raise ValueError(f"{name} must have {dim} amplitudes")
            if abs(np.linalg.norm(v) - 1.0) > 1e-10:
                raise ValueError(f"{name} is not normalized")
            object.__setattr__(self, name, v)

    @property
    def psi_vector(self) -> np.ndarray:
        if self.psi is None:
            v = np.zeros(self.d, dtype=complex)
            v[0] = 1.0
            return v
        return np.array(self.psi, dtype=complex)

    @property
    def control_vector(self) -> np.ndarray:
        return PLUS.astype(complex) if self.control_state is None else np.array(self.control_state, dtype=complex)

    @property
    def anc_a(self) -> int:
        if self.anc_a_in != self.anc_a_out:
            raise LabelError("a unitary operation needs equal ancilla input and output dimensions")
        return self.anc_a_in

    @property
    def anc_b(self) -> int:
        if self.anc_b_in != self.anc_b_out:
            raise LabelError("a unitary operation needs equal ancilla input and output dimensions")
        return self.anc_b_in

    def to_json(self) -> dict:
        enc = lambda v: None if v is None else {"re": [c.real for c in v], "im": [c.imag for c in v]}
        return {"d": self.d, "anc_a_in": self.anc_a_in, "anc_a_out": self.anc_a_out,
                "anc_b_in": self.anc_b_in, "anc_b_out": self.anc_b_out,
                "psi": enc(self.psi), "control_state": enc(self.control_state)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "SwitchConfig":
        dec = lambda v: None if v is None else tuple(np.array(v["re"]) + 1j * np.array(v.get("im", [0] * len(v["re"]))))
        return cls(int(obj.get("d", 2)), int(obj.get("anc_a_in", 1)), int(obj.get("anc_a_out", 1)),
                   int(obj.get("anc_b_in", 1)), int(obj.get("anc_b_out", 1)),
                   dec(obj.get("psi")), dec(obj.get("control_state")))


def _anc(name: str, dim: int) -> tuple[SystemId, ...]:
    return (SystemId(name, dim),) if dim > 1 else ()


def _local_unitary(u, d: int, anc: int, who: str) -> np.ndarray:
    """Reshape a unitary on ``ancilla (x) system`` (ancilla first) to ``[a_out, out, a_in, in]``."""
    m = u.data if isinstance(u, LabeledOperator) else np.asarray(u, dtype=complex)
    if m.shape != (anc * d, anc * d):
        raise LabelError(f"{who} must be a {anc * d}x{anc * d} matrix, got {m.shape}")
    if not is_isometry_matrix(m, 1e-9):
        raise ValueError(f"{who} is not unitary")
    return m.reshape(anc, d, anc, d)


def labeled_local(u4: np.ndarray, anc_out: str, out: str, anc_in: str, inp: str) -> LabeledOperator:
    """Labeled version of a ``[a_out, out, a_in, in]`` local unitary; dimension-1 ancillas are dropped."""
    a, d = u4.shape[0], u4.shape[1]
    rows = _anc(anc_out, a) + (SystemId(out, d),)
    cols = _anc(anc_in, a) + (SystemId(inp, d),)
    return LabeledOperator(rows, cols, u4.reshape(a * d, a * d))


def switch_unitary(u_a, u_b, cfg: SwitchConfig = SwitchConfig()) -> LabeledOperator:
    """Result of the SWITCH on extended unitaries: ``a_I b_I Q S -> a_O b_O Q' S'``.

    Control 0 applies ``U_A`` then ``U_B`` to the target; control 1 the reverse.
    """
    d = cfg.d
    ua = _local_unitary(u_a, d, cfg.anc_a, "U_A")
    ub = _local_unitary(u_b, d, cfg.anc_b, "U_B")
    a, b = ua.shape[0], ub.shape[0]
    first_a = np.einsum("axis,bSjx->abSijs", ua, ub)
    first_b = np.einsum("aSix,bxjs->abSijs", ua, ub)
    t = np.zeros((a, b, 2, d, a, b, 2, d), dtype=complex)
    t[:, :, 0, :, :, :, 0, :] = first_a
    t[:, :, 1, :, :, :, 1, :] = first_b
    rows = _anc("a_O", a) + _anc("b_O", b) + (SystemId("Q'", 2), SystemId("S'", d))
    cols = _anc("a_I", a) + _anc("b_I", b) + (SystemId("Q", 2), SystemId("S", d))
    return LabeledOperator(rows, cols, t.reshape(2 * a * b * d, 2 * a * b * d))


def switch_comb_unitary(u_a, cfg: SwitchConfig = SwitchConfig()) -> LabeledOperator:
    """The circuit fragment around Alice with Bob's slot open: ``a_I Q S B_O -> a_O Q' S' B_I``."""
    d = cfg.d
    ua = _local_unitary(u_a, d, cfg.anc_a, "U_A")
    a = ua.shape[0]
    eye = np.eye(d)
    t = np.zeros((a, 2, d, d, a, 2, d, d), dtype=complex)
    # control 0: U_A from (a_I, S) to (a_O, B_I); B_O passes to S'
    t[:, 0, :, :, :, 0, :, :] = np.einsum("aBis,Sb->aSBisb", ua, eye)
    # control 1: S passes to B_I; U_A from (a_I, B_O) to (a_O, S')
    t[:, 1, :, :, :, 1, :, :] = np.einsum("aSib,Bs->aSBisb", ua, eye)
    rows = _anc("a_O", a) + (SystemId("Q'", 2), SystemId("S'", d), SystemId("B_I", d))
    cols = _anc("a_I", a) + (SystemId("Q", 2), SystemId("S", d), SystemId("B_O", d))
    n = 2 * a * d * d
    return LabeledOperator(rows, cols, t.reshape(n, n))


def _controlled(control_in: SystemId, control_out: SystemId, branches: Sequence[LabeledOperator],
                projectors: Sequence[np.ndarray] | None = None) -> LabeledOperator:
    """``sum_k |k><k| (x) branch_k`` (or ``sum_k P_k (x) branch_k``)."""
    if projectors is None:
        projectors = []
        for k in range(len(branches)):
            p = np.zeros((control_in.dim, control_in.dim))
            p[k, k] = 1.0
            projectors.append(p)
    total = None
    for p, br in zip(projectors, branches):
        term = tensor_product(LabeledOperator((control_out,), (control_in,), p), br)
        total = term if total is None else total + term
    return total


def switch_comb_circuit(u_a, cfg: SwitchConfig = SwitchConfig()) -> LabeledOperator:
    """The same fragment as an explicit product of two controlled-``U_A`` gates.

    Gate 1 fires on control 0 and acts on the ancilla and the target before
    Bob's slot; the target then leaves as ``B_I``.  Gate 2 fires on control 1
    and acts on the ancilla and Bob's returned system ``B_O``, which leaves
    as ``S'``.
    """
    d = cfg.d
    ua = _local_unitary(u_a, d, cfg.anc_a, "U_A")
    a = ua.shape[0]
    Q, Qp = SystemId("Q", 2), SystemId("Q'", 2)
    mid = "a_mid"
    anc_ids = lambda src, dst: [identity_map(SystemId(src, a), dst)] if a > 1 else []
    fire1 = labeled_local(ua, mid, "B_I", "a_I", "S")
    idle1 = tensor_product(*anc_ids("a_I", mid), identity_map(SystemId("S", d), "B_I"))
    gate1 = _controlled(Q, Q, [fire1, idle1])
    idle2 = tensor_product(*anc_ids(mid, "a_O"), identity_map(SystemId("B_O", d), "S'"))
    fire2 = labeled_local(ua, "a_O", "S'", mid, "B_O")
    gate2 = _controlled(Q, Qp, [idle2, fire2])
    return compose_circuit([gate1, gate2])


# process matrices


def switch_layout(d: int, four_party: bool = True) -> PartyLayout:
    A = Party("A", SystemId("A_I", d), SystemId("A_O", d))
    B = Party("B", SystemId("B_I", d), SystemId("B_O", d))
    C = Party("C", SystemId("C_I", 2 * d), None)
    if not four_party:
        return PartyLayout((A, B, C))
    return PartyLayout((Party("D", None, SystemId("D_O", 2 * d)), A, B, C))


def switch_process_vector(cfg: SwitchConfig = SwitchConfig(), four_party: bool = True) -> np.ndarray:
    """Amplitudes of the pure SWITCH process vector in layout order.

    Four parties: axes ``(Q, S, A_I, A_O, B_I, B_O, Q', S')`` with ``D_O = QS``
    and ``C_I = Q'S'``.  Three parties: axes ``(A_I, A_O, B_I, B_O, Q', S')``.
    """
    d = cfg.d
    e = np.eye(d)
    if four_party:
        w = np.zeros((2, d, d, d, d, d, 2, d), dtype=complex)
        # |0>|0> |phi+>^{A_I S} |phi+>^{A_O B_I} |phi+>^{B_O S'}
        w[0, :, :, :, :, :, 0, :] = np.einsum("sa,ob,eS->saobeS", e, e, e)
        # |1>|1> |phi+>^{B_I S} |phi+>^{B_O A_I} |phi+>^{A_O S'}
        w[1, :, :, :, :, :, 1, :] = np.einsum("sb,ea,oS->saobeS", e, e, e)
        return w.reshape(-1)
    psi, (c0, c1) = cfg.psi_vector, cfg.control_vector
    w = np.zeros((d, d, d, d, 2, d), dtype=complex)
    w[:, :, :, :, 0, :] = c0 * np.einsum("a,ob,eS->aobeS", psi, e, e)
    w[:, :, :, :, 1, :] = c1 * np.einsum("b,ea,oS->aobeS", psi, e, e)
    return w.reshape(-1)


def switch_process_matrix(cfg: SwitchConfig = SwitchConfig(), four_party: bool = True) -> ProcessMatrix:
    """``|W><W|`` for the four-party SWITCH or its tripartite reduction for David's state."""
    w = switch_process_vector(cfg, four_party)
    layout = switch_layout(cfg.d, four_party)
    systems = layout.systems
    return ProcessMatrix(layout, LabeledOperator(systems, systems, np.outer(w, w.conj())))


def switch_process_unitary(d: int = 2) -> LabeledOperator:
    """The SWITCH process as a unitary channel ``D_O A_O B_O -> A_I B_I C_I``.

    Control 0 routes ``S -> A_I``, ``A_O -> B_I``, ``B_O -> S'``; control 1
    routes ``S -> B_I``, ``B_O -> A_I``, ``A_O -> S'``.
    """
    e = np.eye(d)
    t = np.zeros((d, d, 2, d, 2, d, d, d), dtype=complex)  # [ai, bi, q', s'; q, s, ao, bo]
    t[:, :, 0, :, 0, :, :, :] = np.einsum("as,bo,Se->abSsoe", e, e, e)
    t[:, :, 1, :, 1, :, :, :] = np.einsum("ae,bs,So->abSsoe", e, e, e)
    rows = (SystemId("A_I", d), SystemId("B_I", d), SystemId("C_I", 2 * d))
    cols = (SystemId("D_O", 2 * d), SystemId("A_O", d), SystemId("B_O", d))
    n = 2 * d ** 3
    return LabeledOperator(rows, cols, t.reshape(n, n))


# encoders


def cswap(control: SystemId, first: SystemId, second: SystemId) -> LabeledOperator:
    """Controlled-SWAP on ``(control, first, second)``: swaps the targets when the control is 1."""
    if first.dim != second.dim:
        raise LabelError("swapped systems need equal dimensions")
    d = first.dim
    swap = np.eye(d * d).reshape(d, d, d, d).transpose(1, 0, 2, 3).reshape(d * d, d * d)
    p0, p1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    systems = (control, first, second)
    return LabeledOperator(systems, systems, np.kron(p0, np.eye(d * d)) + np.kron(p1, swap))


@dataclass(frozen=True, eq=False)
class SubsystemEncoder:
    """Isometry from ``subsystem (x) complement`` (columns) into a physical space (rows)."""

    unitary: LabeledOperator
    subsystem: str

    def __post_init__(self) -> None:
        if self.subsystem not in self.unitary.col_names:
            raise LabelError(f"subsystem {self.subsystem!r} is not a virtual system of the encoder")

    @property
    def physical(self) -> tuple[SystemId, ...]:
        return self.unitary.rows

    @property
    def sub(self) -> SystemId:
        return self.unitary.system(self.subsystem)

    @property
    def complement(self) -> tuple[SystemId, ...]:
        return tuple(s for s in self.unitary.cols if s.name != self.subsystem)

    def isometry_residual(self) -> float:
        m = self.unitary.data
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[1]))))

    def is_unitary(self, tol: float = DEFAULT_TOL) -> bool:
        return self.unitary.shape[0] == self.unitary.shape[1] and self.isometry_residual() <= tol

    def embed(self, op) -> LabeledOperator:
        """``E (O (x) 1) E^dag`` for an operator ``O`` on the subsystem."""
        if not isinstance(op, LabeledOperator):
            op = LabeledOperator((self.sub,), (self.sub,), op)
        full = tensor_product(op, LabeledOperator.identity(self.complement))
        return self.unitary @ full @ self.unitary.dag()

    def to_json(self) -> dict:
        return {"unitary": operator_to_json(self.unitary), "subsystem": self.subsystem}

    @classmethod
    def from_json(cls, obj: Mapping, where: str = "encoder") -> "SubsystemEncoder":
        if "unitary" not in obj or "subsystem" not in obj:
            raise ValueError(f"{where}: expected keys 'unitary' and 'subsystem'")
        return cls(operator_from_json(obj["unitary"], f"{where}.unitary"), str(obj["subsystem"]))


@dataclass(frozen=True, eq=False)
class SubsystemEncoderPair:
    """Input and output encoders of a delocalized operation plus the complement identification."""

    w_in: SubsystemEncoder
    w_out: SubsystemEncoder
    complement_map: tuple[tuple[str, str], ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        cin = {s.name: s for s in self.w_in.complement}
        cout = {s.name: s for s in self.w_out.complement}
        pairs = tuple((str(a), str(b)) for a, b in self.complement_map)
        if sorted(a for a, _ in pairs) != sorted(cin) or sorted(b for _, b in pairs) != sorted(cout):
            raise LabelError("complement map must pair every input complement with an output complement")
        for a, b in pairs:
            if cin[a].dim != cout[b].dim:
                raise LabelError(f"complement systems {a!r} and {b!r} differ in dimension")
        if self.w_in.sub.dim != self.w_out.sub.dim:
            raise LabelError("input and output subsystems differ in dimension")
        object.__setattr__(self, "complement_map", pairs)

    @property
    def sub_in(self) -> SystemId:
        return self.w_in.sub

    @property
    def sub_out(self) -> SystemId:
        return self.w_out.sub

    def middle(self, u_a) -> LabeledOperator:
        """``U_A`` on ``(a_I, sub_in) -> (a_O, sub_out)`` tensored with the complement identity."""
        d = self.sub_in.dim
        m = u_a.data if isinstance(u_a, LabeledOperator) else np.asarray(u_a, dtype=complex)
        anc = m.shape[0] // d
        u4 = _local_unitary(m, d, anc, "U_A")
        ua = labeled_local(u4, "a_O", self.sub_out.name, "a_I", self.sub_in.name)
        ids = [identity_map(self.w_in.unitary.system(a), b) for a, b in self.complement_map]
        return tensor_product(ua, *ids)

    def factorized(self, u_a) -> LabeledOperator:
        """``W_out (U_A (x) 1) W_in^dag`` on the physical systems."""
        return compose_circuit([self.w_in.unitary.dag(), self.middle(u_a), self.w_out.unitary])

    def to_json(self) -> dict:
        return {
            "w_in": self.w_in.to_json(),
            "w_out": self.w_out.to_json(),
            "sub_in": self.w_in.subsystem,
            "sub_out": self.w_out.subsystem,
            "complement_map": [list(p) for p in self.complement_map],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: Mapping, where: str = "encoders") -> "SubsystemEncoderPair":
        for key in ("w_in", "w_out", "complement_map"):
            if key not in obj:
                raise ValueError(f"{where}: missing key {key!r}")
        return cls(SubsystemEncoder.from_json(obj["w_in"], f"{where}.w_in"),
                   SubsystemEncoder.from_json(obj["w_out"], f"{where}.w_out"),
                   tuple(tuple(p) for p in obj["complement_map"]), dict(obj.get("metadata", {})))


def cswap_encoders(cfg: SwitchConfig = SwitchConfig()) -> tuple[LabeledOperator, LabeledOperator]:
    """``(C-SWAP^{Q;S,B_O}, C-SWAP^{Q';S',B_I})``."""
    d = cfg.d
    e_in = cswap(SystemId("Q", 2), SystemId("S", d), SystemId("B_O", d))
    e_out = cswap(SystemId("Q'", 2), SystemId("S'", d), SystemId("B_I", d))
    return e_in, e_out


def switch_encoders(cfg: SwitchConfig = SwitchConfig()) -> SubsystemEncoderPair:
    """Encoders of Alice's delocalized input (inside ``Q S B_O``) and output (inside ``Q' S' B_I``)."""
    e_in, e_out = cswap_encoders(cfg)
    w_in = LabeledOperator(e_in.rows, relabel(e_in, {"S": "A_I~", "Q": "Abar_I.0", "B_O": "Abar_I.1"}).cols, e_in.data)
    w_out = LabeledOperator(e_out.rows, relabel(e_out, {"B_I": "A_O~", "Q'": "Abar_O.0", "S'": "Abar_O.1"}).cols, e_out.data)
    return SubsystemEncoderPair(
        SubsystemEncoder(w_in, "A_I~"), SubsystemEncoder(w_out, "A_O~"),
        (("Abar_I.0", "Abar_O.0"), ("Abar_I.1", "Abar_O.1")),
        {"construction": "controlled-swap"},
    )


def input_algebra_element(op: np.ndarray, d: int) -> LabeledOperator:
    """``|0><0|^Q (x) O^S (x) 1^{B_O} + |1><1|^Q (x) 1^S (x) O^{B_O}``, built entrywise."""
    op = np.asarray(op, dtype=complex)
    m = np.kron(np.diag([1.0, 0.0]), np.kron(op, np.eye(d))) + np.kron(np.diag([0.0, 1.0]), np.kron(np.eye(d), op))
    systems = (SystemId("Q", 2), SystemId("S", d), SystemId("B_O", d))
    return LabeledOperator(systems, systems, m)


def output_algebra_element(op: np.ndarray, d: int) -> LabeledOperator:
    """``|0><0|^{Q'} (x) 1^{S'} (x) O^{B_I} + |1><1|^{Q'} (x) O^{S'} (x) 1^{B_I}``, built entrywise."""
    op = np.asarray(op, dtype=complex)
    m = np.kron(np.diag([1.0, 0.0]), np.kron(np.eye(d), op)) + np.kron(np.diag([0.0, 1.0]), np.kron(op, np.eye(d)))
    systems = (SystemId("Q'", 2), SystemId("S'", d), SystemId("B_I", d))
    return LabeledOperator(systems, systems, m)


def cswap_factorization(u_a, cfg: SwitchConfig = SwitchConfig()) -> LabeledOperator:
    """``C-SWAP_out (U_A^{a_I S -> a_O B_I} (x) 1^{Q -> Q'} (x) 1^{B_O -> S'}) C-SWAP_in``."""
    d = cfg.d
    ua = _local_unitary(u_a, d, cfg.anc_a, "U_A")
    e_in, e_out = cswap_encoders(cfg)
    middle = tensor_product(
        labeled_local(ua, "a_O", "B_I", "a_I", "S"),
        identity_map(SystemId("Q", 2), "Q'"),
        identity_map(SystemId("B_O", d), "S'"),
    )
    return compose_circuit([e_in, middle, e_out])


def verify_delocalized_factorization(u_a, cfg: SwitchConfig = SwitchConfig()) -> float:
    """Max-norm distance between the comb unitary and its controlled-swap factorization."""
    return max_abs_diff(switch_comb_unitary(u_a, cfg), cswap_factorization(u_a, cfg))


# symmetric implementation


@dataclass(frozen=True, eq=False)
class SymmetricSwitch:
    circuit: LabeledOperator
    closed_form: LabeledOperator
    encoders: dict[str, SubsystemEncoder]

    def residual(self) -> float:
        return max_abs_diff(self.circuit, self.closed_form)


def symmetric_circuit(u_a, u_b, cfg: SwitchConfig = SwitchConfig()) -> SymmetricSwitch:
    """Symmetric two-time-step SWITCH on ``Q S F -> Q' S' F'``.

    Step 1 applies ``U_A`` (control 0) or ``U_B`` (control 1) to ``S`` and
    sends the result to the middle wire, which becomes ``F'``.  Step 2 applies
    the other unitary to ``F`` and emits ``S'``.
    """
    d = cfg.d
    ua = _local_unitary(u_a, d, cfg.anc_a, "U_A")
    ub = _local_unitary(u_b, d, cfg.anc_b, "U_B")
    a, b = ua.shape[0], ub.shape[0]
    Q, Qp = SystemId("Q", 2), SystemId("Q'", 2)
    ids = lambda src, dst, dim: [identity_map(SystemId(src, dim), dst)] if dim > 1 else []

    step1 = _controlled(Q, Q, [
        tensor_product(labeled_local(ua, "a_mid", "F'", "a_I", "S"), *ids("b_I", "b_mid", b)),
        tensor_product(labeled_local(ub, "b_mid", "F'", "b_I", "S"), *ids("a_I", "a_mid", a)),
    ])
    step2 = _controlled(Q, Qp, [
        tensor_product(labeled_local(ub, "b_O", "S'", "b_mid", "F"), *ids("a_mid", "a_O", a)),
        tensor_product(labeled_local(ua, "a_O", "S'", "a_mid", "F"), *ids("b_mid", "b_O", b)),
    ])
    circuit = compose_circuit([step1, step2])

    e_in = cswap(Q, SystemId("S", d), SystemId("F", d))
    e_out = cswap(Qp, SystemId("F'", d), SystemId("S'", d))
    middle = tensor_product(
        labeled_local(ua, "a_O", "F'", "a_I", "S"),
        labeled_local(ub, "b_O", "S'", "b_I", "F"),
        identity_map(Q, "Q'"),
    )
    closed = compose_circuit([e_in, middle, e_out])

    def enc(e: LabeledOperator, slot: str, name: str) -> SubsystemEncoder:
        mapping = {s.name: (name if s.name == slot else s.name + ".c") for s in e.cols}
        return SubsystemEncoder(LabeledOperator(e.rows, relabel(e, mapping).cols, e.data), name)

    encoders = {
        "A_I": enc(e_in, "S", "A_I"),
        "B_I": enc(e_in, "F", "B_I"),
        "A_O": enc(e_out, "F'", "A_O"),
        "B_O": enc(e_out, "S'", "B_O"),
    }
    return SymmetricSwitch(circuit, closed, encoders)


def symmetric_algebra_element(kind: str, op: np.ndarray, d: int) -> LabeledOperator:
    """Entrywise construction of the four symmetric-implementation algebras."""
    op = np.asarray(op, dtype=complex)
    p0, p1, eye = np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), np.eye(d)
    if kind in ("A_I", "B_I"):
        systems = (SystemId("Q", 2), SystemId("S", d), SystemId("F", d))
        first, second = (np.kron(op, eye), np.kron(eye, op))
    elif kind in ("A_O", "B_O"):
        systems = (SystemId("Q'", 2), SystemId("F'", d), SystemId("S'", d))
        first, second = (np.kron(op, eye), np.kron(eye, op))
    else:
        raise ValueError(f"unknown algebra {kind!r}")
    if kind.startswith("B"):
        first, second = second, first
    return LabeledOperator(systems, systems, np.kron(p0, first) + np.kron(p1, second))


# control-observable generalization


@dataclass(frozen=True, eq=False)
class ControlObservable:
    control_system: SystemId
    projectors: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        d = self.control_system.dim
        projs = tuple(np.asarray(p, dtype=complex) for p in self.projectors)
        if not projs:
            raise ValueError("at least one projector is required")
        for p in projs:
            if p.shape != (d, d):
                raise ValueError(f"projectors must be {d}x{d}")
        if np.max(np.abs(sum(projs) - np.eye(d))) > 1e-12:
            raise ValueError("projectors do not sum to the identity")
        for i, p in enumerate(projs):
            for j, q in enumerate(projs):
                target = p if i == j else np.zeros_like(p)
                if np.max(np.abs(p @ q - target)) > 1e-12:
                    raise ValueError("projectors are not mutually orthogonal idempotents")
        object.__setattr__(self, "projectors", projs)

    @classmethod
    def computational(cls, n: int, name: str = "Q") -> "ControlObservable":
        projs = []
        for k in range(n):
            p = np.zeros((n, n))
            p[k, k] = 1.0
            projs.append(p)
        return cls(SystemId(name, n), tuple(projs))

    @property
    def n(self) -> int:
        return len(self.projectors)

    def commutes_with(self, gate: np.ndarray, tol: float = 1e-12) -> bool:
        return all(np.max(np.abs(gate @ p - p @ gate)) <= tol for p in self.projectors)


def _slot_permutation(n: int, d: int, i: int) -> np.ndarray:
    """Permutation of ``n`` slots of dimension ``d`` exchanging slot 0 and slot ``i``."""
    perm = list(range(n))
    perm[0], perm[i] = perm[i], perm[0]
    eye = np.eye(d ** n).reshape([d] * n + [d ** n])
    return eye.transpose(perm + [n]).reshape(d ** n, d ** n)


@dataclass(frozen=True, eq=False)
class GeneralizedEncoders:
    pair: SubsystemEncoderPair
    control: ControlObservable
    d: int

    @property
    def enc_in(self) -> SubsystemEncoder:
        return self.pair.w_in

    @property
    def enc_out(self) -> SubsystemEncoder:
        return self.pair.w_out


def slot_name(k: int) -> str:
    return f"S{k}"


def generalized_encoders(control: ControlObservable, d: int) -> GeneralizedEncoders:
    """Encoders for a control observable with ``N`` outcomes and ``2N`` slots of dimension ``d``.

    Inputs are ``Q S1 S3 ... S(2N-1)``, outputs ``Q' S2 S4 ... S(2N)``.  The
    encoder unitary ``sum_i P_i (x) Pi_i`` exchanges the first slot with slot
    ``i``, so the subsystem acts on slot ``i`` exactly when the control
    reads ``i``.
    """
    n, qdim = control.n, control.control_system.dim
    Q = control.control_system
    Qp = SystemId(Q.name + "'", qdim)
    mats = sum(np.kron(p, _slot_permutation(n, d, i)) for i, p in enumerate(control.projectors))

    def encoder(ctrl: SystemId, parity: int, sub: str, tag: str) -> SubsystemEncoder:
        slots = tuple(SystemId(slot_name(2 * k + parity), d) for k in range(n))
        virtual = (SystemId(f"Abar_{tag}.ctrl", qdim), SystemId(sub, d)) + tuple(
            SystemId(f"Abar_{tag}.{k}", d) for k in range(1, n))
        return SubsystemEncoder(LabeledOperator((ctrl,) + slots, virtual, mats), sub)

    e_in = encoder(Q, 1, "A_I~", "I")
    e_out = encoder(Qp, 2, "A_O~", "O")
    cmap = (("Abar_I.ctrl", "Abar_O.ctrl"),) + tuple((f"Abar_I.{k}", f"Abar_O.{k}") for k in range(1, n))
    return GeneralizedEncoders(SubsystemEncoderPair(e_in, e_out, cmap, {"construction": "control-observable"}),
                               control, d)


def generalized_algebra_element(control: ControlObservable, d: int, op: np.ndarray, output: bool = False) -> LabeledOperator:
    """``sum_i P_i (x) O^{slot_i} (x) 1`` built directly from the projectors."""
    n = control.n
    Q = control.control_system
    ctrl = SystemId(Q.name + "'", Q.dim) if output else Q
    slots = tuple(SystemId(slot_name(2 * k + (2 if output else 1)), d) for k in range(n))
    total = np.zeros((Q.dim * d ** n,) * 2, dtype=complex)
    for i, p in enumerate(control.projectors):
        factors = [np.asarray(op) if k == i else np.eye(d) for k in range(n)]
        m = factors[0]
        for f in factors[1:]:
            m = np.kron(m, f)
        total += np.kron(p, m)
    systems = (ctrl,) + slots
    return LabeledOperator(systems, systems, total)


def generalized_fragment(u_a, control: ControlObservable, d: int,
                         z_gates: Sequence[np.ndarray] = ()) -> tuple[LabeledOperator, np.ndarray]:
    """Sequence of ``N`` controlled-``U_A`` gates, gate ``i`` firing when the control reads ``i``.

    Gate ``i`` maps slot ``2i-1`` to slot ``2i`` (applying ``U_A`` with the
    ancilla when triggered, the identity otherwise).  ``z_gates`` act on the
    control between consecutive gates and must commute with every
    projector.  Returns the fragment and the product of the ``z_gates``.
    """
    n = control.n
    Q = control.control_system
    m = u_a.data if isinstance(u_a, LabeledOperator) else np.asarray(u_a, dtype=complex)
    anc = m.shape[0] // d
    u4 = _local_unitary(m, d, anc, "U_A")
    z_gates = [np.asarray(z, dtype=complex) for z in z_gates]
    if len(z_gates) > max(n - 1, 0):
        raise ValueError(f"at most {n - 1} interleaved control gates fit between {n} controlled gates")
    z_total = np.eye(Q.dim, dtype=complex)
    for z in z_gates:
        if not control.commutes_with(z) or not is_isometry_matrix(z, 1e-10):
            raise ValueError("interleaved control gates must be unitary and commute with the control observable")
        z_total = z @ z_total
    gates = []
    wire = "a_I"
    for i in range(n):
        nxt = "a_O" if i == n - 1 else f"a.{i + 1}"
        s_in, s_out = SystemId(slot_name(2 * i + 1), d), slot_name(2 * i + 2)
        fire = labeled_local(u4, nxt, s_out, wire, s_in.name)
        idle = identity_map(s_in, s_out)
        if anc > 1:
            idle = tensor_product(idle, identity_map(SystemId(wire, anc), nxt))
        p = control.projectors[i]
        gate = tensor_product(LabeledOperator((Q,), (Q,), p), fire) + tensor_product(
            LabeledOperator((Q,), (Q,), np.eye(Q.dim) - p), idle)
        gates.append(gate)
        if i < len(z_gates):
            gates.append(LabeledOperator((Q,), (Q,), z_gates[i]))
        wire = nxt
    gates.append(identity_map(Q, Q.name + "'"))
    return compose_circuit(gates), z_total


def generalized_factorization(u_a, enc: GeneralizedEncoders, z_total: np.ndarray | None = None) -> LabeledOperator:
    """``W_out (U_A (x) Z^{ctrl} (x) 1) W_in^dag`` with ``Z`` acting on the control complement."""
    pair = enc.pair
    middle = pair.middle(u_a)
    if z_total is not None:
        z = LabeledOperator((pair.w_out.unitary.system("Abar_O.ctrl"),),
                            (pair.w_out.unitary.system("Abar_O.ctrl"),), z_total)
        middle = compose_circuit([middle, z])
    return compose_circuit([pair.w_in.unitary.dag(), middle, pair.w_out.unitary])
