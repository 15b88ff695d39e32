"""Simulated process tomography of an operation living on delocalized subsystems.

Frame states are prepared on Alice's ancilla and delocalized input, the
complement is fed a fixed environment state, and frame effects are measured
on the ancilla and delocalized output after decoding.  The channel is then
recovered by linear inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np

from .channels import ChoiOperator, choi_from_map
from .switch import SubsystemEncoderPair
from .tensor import (
    LabelError,
    LabeledOperator,
    SystemId,
    as_generator,
    compose_circuit,
    reorder,
)


@dataclass(frozen=True, eq=False)
class StateFrame:
    d: int
    states: tuple[np.ndarray, ...] = field(repr=False)

    def gram_rank(self) -> int:
        return _span_rank(self.states)

    def is_informationally_complete(self) -> bool:
        return self.gram_rank() == self.d ** 2


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    d: int
    effects: tuple[np.ndarray, ...] = field(repr=False)

    def completeness_residual(self) -> float:
        return float(np.max(np.abs(sum(self.effects) - np.eye(self.d))))

    def gram_rank(self) -> int:
        return _span_rank(self.effects)

    def is_informationally_complete(self) -> bool:
        return self.gram_rank() == self.d ** 2 and self.completeness_residual() <= 1e-10


def _span_rank(ops: Sequence[np.ndarray]) -> int:
    vecs = np.array([o.ravel() for o in ops])
    return int(np.linalg.matrix_rank(vecs @ vecs.conj().T, tol=1e-10))


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


def ic_frames(d: int) -> tuple[StateFrame, MeasurementFrame]:
    """Informationally complete state and effect frames on a ``d``-dimensional space.

    States are the basis vectors and the real and imaginary two-level
    superpositions.  Effects are the same projectors conjugated by
    ``S^{-1/2}`` where ``S`` is their sum, so they add up to the identity.
    """
    if d < 2:
        raise ValueError("frames need d >= 2")
    kets = [np.eye(d)[j] for j in range(d)]
    for j in range(d):
        for k in range(j + 1, d):
            kets.append((np.eye(d)[j] + np.eye(d)[k]) / np.sqrt(2))
            kets.append((np.eye(d)[j] + 1j * np.eye(d)[k]) / np.sqrt(2))
    states = tuple(np.outer(v, v.conj()).astype(complex) for v in kets)
    root = _inv_sqrt(sum(states))
    effects = tuple(root @ s @ root for s in states)
    return StateFrame(d, states), MeasurementFrame(d, effects)


def _apply_standard(c_std: np.ndarray, rho: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    return np.einsum("ij,iajb->ab", rho, c_std.reshape(d_in, d_out, d_in, d_out))


def _trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    diff = a - b
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2))))


def compare_channels(a: ChoiOperator, b: ChoiOperator) -> dict:
    """Worst output trace distance over frame states and the largest Choi entry difference."""
    if (a.d_in, a.d_out) != (b.d_in, b.d_out):
        raise LabelError(f"channel shapes differ: {(a.d_in, a.d_out)} vs {(b.d_in, b.d_out)}")
    ca, cb = a.standard(), b.standard()
    states = ic_frames(a.d_in)[0].states if a.d_in > 1 else (np.ones((1, 1), dtype=complex),)
    dist = max(_trace_distance(_apply_standard(ca, r, a.d_in, a.d_out),
                               _apply_standard(cb, r, a.d_in, a.d_out)) for r in states)
    return {"max_trace_distance": dist, "choi_max_residual": float(np.max(np.abs(ca - cb)))}


@dataclass(frozen=True, eq=False)
class TomographyReport:
    reconstructed: ChoiOperator
    target: ChoiOperator | None
    probabilities: np.ndarray = field(repr=False)
    success_weights: np.ndarray = field(repr=False)
    shots: int | None
    seed: int | None

    @property
    def choi_residual(self) -> float | None:
        if self.target is None:
            return None
        return float(np.max(np.abs(self.reconstructed.op.data - self.target.op.data)))

    @property
    def max_trace_distance(self) -> float | None:
        if self.target is None:
            return None
        return compare_channels(self.reconstructed, self.target)["max_trace_distance"]

    @property
    def min_success_weight(self) -> float:
        return float(np.min(self.success_weights))

    def to_json(self) -> dict:
        c = self.reconstructed
        out = {
            "shots": self.shots,
            "seed": self.seed,
            "probabilities": self.probabilities.tolist(),
            "success_weights": self.success_weights.tolist(),
            "reconstructed": c.to_json(),
            "cp_min_eigenvalue": c.min_eigenvalue(),
            "tp_residual": c.tp_residual(),
        }
        if self.target is not None:
            out.update(target=self.target.to_json(), choi_residual=self.choi_residual,
                       max_trace_distance=self.max_trace_distance)
        return out


def unitary_choi(u: np.ndarray, inputs: Sequence[SystemId], outputs: Sequence[SystemId]) -> ChoiOperator:
    return choi_from_map([np.asarray(u, dtype=complex)], tuple(inputs), tuple(outputs))


def _anc(circuit: LabeledOperator, name: str) -> tuple[SystemId, ...]:
    names = circuit.col_names if name == "a_I" else circuit.row_names
    return (circuit.system(name),) if name in names else ()


def _effective_operator(circuit: LabeledOperator, encoders: SubsystemEncoderPair):
    w_in, w_out = encoders.w_in.unitary, encoders.w_out.unitary
    anc_in, anc_out = _anc(circuit, "a_I"), _anc(circuit, "a_O")
    phys_in = sorted(s.name for s in w_in.rows)
    phys_out = sorted(s.name for s in w_out.rows)
    if sorted(n for n in circuit.col_names if n != "a_I") != phys_in:
        raise LabelError(f"circuit inputs {circuit.col_names} do not match the input encoder {phys_in}")
    if sorted(n for n in circuit.row_names if n != "a_O") != phys_out:
        raise LabelError(f"circuit outputs {circuit.row_names} do not match the output encoder {phys_out}")
    for s in w_in.rows:
        if circuit.system(s.name).dim != s.dim:
            raise LabelError(f"system {s.name!r} has different dimensions in circuit and encoder")
    gates = [w_in, circuit, w_out.dag()]
    k = compose_circuit(gates)
    sub_in, sub_out = encoders.sub_in, encoders.sub_out
    comp_in = [s.name for s in encoders.w_in.complement]
    comp_out = [s.name for s in encoders.w_out.complement]
    rows = [s.name for s in anc_out] + [sub_out.name] + comp_out
    cols = [s.name for s in anc_in] + [sub_in.name] + comp_in
    k = reorder(k, rows, cols)
    return k, anc_in + (sub_in,), anc_out + (sub_out,), encoders.w_in.complement, encoders.w_out.complement


def _env_matrix(env_prep, complement: Sequence[SystemId]) -> np.ndarray:
    d = prod(s.dim for s in complement)
    if env_prep is None:
        m = np.zeros((d, d), dtype=complex)
        m[0, 0] = 1.0
        return m
    if isinstance(env_prep, LabeledOperator):
        names = [s.name for s in complement]
        return reorder(env_prep, names, names).data
    m = np.asarray(env_prep, dtype=complex)
    if m.ndim == 1:
        m = np.outer(m, m.conj())
    if m.shape != (d, d):
        raise LabelError(f"environment state of shape {m.shape}, expected {(d, d)}")
    return m


def simulate_frame_probabilities(circuit: LabeledOperator, encoders: SubsystemEncoderPair, env_prep=None):
    """Exact frame statistics: ``probs[j, k] = Tr[E_k Phi(rho_j)]`` plus the projection success weights."""
    k, ins, outs, comp_in, comp_out = _effective_operator(circuit, encoders)
    d_in, d_out = prod(s.dim for s in ins), prod(s.dim for s in outs)
    d_co = prod(s.dim for s in comp_out)
    env = _env_matrix(env_prep, comp_in)
    states, _ = ic_frames(d_in)
    _, meas = ic_frames(d_out)
    kmat = k.data
    probs = np.zeros((len(states.states), len(meas.effects)))
    weights = np.zeros(len(states.states))
    for j, rho in enumerate(states.states):
        out = kmat @ np.kron(rho, env) @ kmat.conj().T
        out = np.trace(out.reshape(d_out, d_co, d_out, d_co), axis1=1, axis2=3)
        w = float(np.trace(out).real)
        weights[j] = w
        out = out / w
        probs[j] = [float(np.real(np.trace(e @ out))) for e in meas.effects]
    return probs, weights, ins, outs


def linear_inversion(probs: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """Standard-convention Choi matrix from frame statistics (least-squares inverse of the design)."""
    states, _ = ic_frames(d_in)
    _, meas = ic_frames(d_out)
    # p = Tr[(rho^T (x) E) C] = <vec(rho (x) E^T), vec(C)>
    design = np.array([np.kron(r, e.T).ravel() for r in states.states for e in meas.effects])
    sol, *_ = np.linalg.lstsq(design, probs.ravel().astype(complex), rcond=None)
    c = sol.reshape(d_in * d_out, d_in * d_out)
    return (c + c.conj().T) / 2


def tomograph_delocalized_operation(circuit: LabeledOperator, encoders: SubsystemEncoderPair,
                                    env_prep=None, shots: int | None = None, seed=None,
                                    target=None) -> TomographyReport:
    """Reconstruct the channel acting between the encoders' delocalized subsystems.

    ``circuit`` is the fragment containing Alice's operation, with optional
    ancilla wires ``a_I``/``a_O``.  ``env_prep`` is the state fed into the
    input complement (default ``|0><0|``).  With ``shots`` the exact frame
    statistics are replaced by seeded multinomial frequencies per setting.
    ``target`` is a Choi operator or a unitary on ``ancilla (x) subsystem``.
    """
    probs, weights, ins, outs = simulate_frame_probabilities(circuit, encoders, env_prep)
    if shots is not None:
        if shots < 1:
            raise ValueError("shots must be positive")
        rng = as_generator(seed)
        sampled = np.empty_like(probs)
        for j, p in enumerate(probs):
            p = np.clip(p, 0, None)
            sampled[j] = rng.multinomial(shots, p / p.sum()) / shots
        probs = sampled
    d_in, d_out = prod(s.dim for s in ins), prod(s.dim for s in outs)
    c_std = linear_inversion(probs, d_in, d_out)
    systems = ins + outs
    recon = ChoiOperator(ins, outs, LabeledOperator(systems, systems, c_std.T))
    if target is not None and not isinstance(target, ChoiOperator):
        target = unitary_choi(target, ins, outs)
    if target is not None and (target.d_in, target.d_out) != (d_in, d_out):
        raise LabelError("target channel dimensions do not match the delocalized operation")
    seed_val = seed if isinstance(seed, (int, np.integer)) or seed is None else None
    return TomographyReport(recon, target, probs, weights, shots, seed_val)


def control_dependent_phase(circuit: LabeledOperator, control: str = "Q'", target: str = "B_I") -> LabeledOperator:
    """Follow ``circuit`` by a Z on ``target`` applied only when ``control`` reads 0.

    This couples the delocalized output to the complement, so the
    reconstructed channel depends on the environment preparation.
    """
    c, t = circuit.system(control), circuit.system(target)
    z = np.diag(np.exp(2j * np.pi * np.arange(t.dim) / t.dim))
    p0 = np.zeros((c.dim, c.dim))
    p0[0, 0] = 1
    gate = np.kron(p0, z) + np.kron(np.eye(c.dim) - p0, np.eye(t.dim))
    g = LabeledOperator((c, t), (c, t), gate)
    return compose_circuit([circuit, g])
