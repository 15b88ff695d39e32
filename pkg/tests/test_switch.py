import itertools

import numpy as np
import pytest

from causalis.channels import (
    Instrument,
    born_probabilities,
    choi_from_map,
    deterministic_instrument,
    link_compose,
    measure_prepare_choi,
    random_instrument,
    state_preparation_choi,
)
from causalis.comb import matrix_units
from causalis.process import (
    channel_to_process,
    nonseparability_certificate,
    process_channel_duality,
    process_from_circuit,
    validate_process_matrix,
)
from causalis.switch import (
    ControlObservable,
    SwitchConfig,
    cswap,
    cswap_factorization,
    generalized_algebra_element,
    generalized_encoders,
    generalized_factorization,
    generalized_fragment,
    input_algebra_element,
    output_algebra_element,
    switch_comb_circuit,
    switch_comb_unitary,
    switch_encoders,
    switch_layout,
    switch_process_matrix,
    switch_process_unitary,
    switch_unitary,
    symmetric_algebra_element,
    symmetric_circuit,
    verify_delocalized_factorization,
)
from causalis.tensor import (
    LabelError,
    SystemId,
    haar_unitary,
    is_isometry_matrix,
    max_abs_diff,
    relabel,
    reorder,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0, -1.0]).astype(complex)


def ket(*digits, dims):
    v = np.zeros(int(np.prod(dims)), dtype=complex)
    v[np.ravel_multi_index(digits, dims)] = 1
    return v


def apply_on_control(u, q, psi):
    """Output ``(Q', S')`` state of ``switch_unitary`` for input ``|q>|psi>``."""
    inp = np.kron(np.eye(2)[q], psi)
    return reorder(u, ["Q'", "S'"], ["Q", "S"]).data @ inp


def test_identity_operations_preserve_control_and_target():
    u = switch_unitary(np.eye(2), np.eye(2))
    assert np.abs(reorder(u, ["Q'", "S'"], ["Q", "S"]).data - np.eye(4)).max() == 0


def test_classical_control_applies_fixed_order():
    ua, ub = haar_unitary(2, 1), haar_unitary(2, 2)
    psi = np.array([0.6, 0.8j])
    u = switch_unitary(ua, ub)
    assert np.abs(apply_on_control(u, 0, psi) - np.kron([1, 0], ub @ ua @ psi)).max() < 1e-12
    assert np.abs(apply_on_control(u, 1, psi) - np.kron([0, 1], ua @ ub @ psi)).max() < 1e-12


def test_identity_comb_is_routing_permutation():
    g = switch_comb_unitary(np.eye(2)).data
    assert set(np.unique(g)) <= {0, 1}
    assert np.abs(g.conj().T @ g - np.eye(8)).max() == 0


def test_linking_bob_reproduces_switch_unitary():
    for seed in range(5):
        ua, ub = haar_unitary(2, seed), haar_unitary(2, seed + 50)
        comb = choi_from_map([switch_comb_unitary(ua)])
        bob = choi_from_map([ub], (SystemId("B_I", 2),), (SystemId("B_O", 2),))
        linked = link_compose(comb, bob)
        direct = choi_from_map([switch_unitary(ua, ub)])
        assert max_abs_diff(linked.op, direct.op) < 1e-10


def test_gate_circuit_matches_closed_form():
    for seed in range(20):
        u = haar_unitary(2, seed)
        assert max_abs_diff(switch_comb_circuit(u), switch_comb_unitary(u)) < 1e-12
    cfg = SwitchConfig(anc_a_in=2, anc_a_out=2)
    u = haar_unitary(4, 3)
    assert max_abs_diff(switch_comb_circuit(u, cfg), switch_comb_unitary(u, cfg)) < 1e-12


def test_unequal_ancillas_rejected():
    with pytest.raises(LabelError):
        switch_comb_unitary(np.eye(2), SwitchConfig(anc_a_in=2, anc_a_out=1))


def test_four_party_process_valid():
    W = switch_process_matrix(SwitchConfig(), four_party=True)
    rep = validate_process_matrix(W)
    assert rep.valid and rep.n_forbidden == 0 and rep.min_eigenvalue > -1e-10
    assert abs(W.trace() - 16) < 1e-8
    d_ai, d_bi, d_ci = (W.layout[p].d_in for p in "ABC")
    assert abs(rep.identity_weight - 1 / (d_ai * d_bi * d_ci)) < 1e-10
    # the identity weight times the full dimension is the trace
    assert abs(rep.identity_weight * W.data.shape[0] - W.trace()) < 1e-10


def test_four_party_process_from_unitary_channel():
    W = switch_process_matrix(SwitchConfig(), four_party=True)
    V = switch_process_unitary(2)
    layout = W.layout
    merged = process_channel_duality(choi_from_map([V]), layout)
    assert max_abs_diff(merged.W, W.W) < 1e-10
    assert max_abs_diff(channel_to_process(process_channel_duality(W), layout).W, W.W) < 1e-12


def test_tripartite_certified():
    W = switch_process_matrix(SwitchConfig(), four_party=False)
    cert = nonseparability_certificate(W)
    assert cert.certified and cert.rank == 1 and min(cert.gap_ab, cert.gap_ba) >= 0.1


def test_charlie_sees_plus_when_operations_trivial():
    W = switch_process_matrix(SwitchConfig(), four_party=False)
    ident = lambda p: deterministic_instrument(
        choi_from_map([np.eye(2)], (W.layout[p].input,), (W.layout[p].output,)), p)
    plus, minus = np.array([1, 1]) / np.sqrt(2), np.array([1, -1]) / np.sqrt(2)
    c_sys = (W.layout["C"].input,)
    charlie = Instrument(tuple(
        (lab, measure_prepare_choi(np.kron(np.outer(v, v), np.eye(2)), np.ones((1, 1)), c_sys, ()))
        for lab, v in (("+", plus), ("-", minus))), "C")
    table = born_probabilities(W, [ident("A"), ident("B"), charlie])
    assert abs(table[("0", "0", "+")] - 1) < 1e-12


def fixed_order_process(first, second, psi, control, d=2):
    """Tripartite circuit: prepare psi for ``first``, wire ``first`` to ``second``, then to C with a fixed control."""
    layout = switch_layout(d, four_party=False)
    f, s, c = layout[first], layout[second], layout["C"]
    prep = state_preparation_choi(np.outer(psi, psi.conj()), (f.input,))
    mid = choi_from_map([np.eye(d)], (f.output,), (s.input,))
    tail = np.kron(np.eye(2)[:, [control]], np.eye(d))  # S' <- second's output, Q' fixed
    last = choi_from_map([tail], (s.output,), (c.input,))
    return process_from_circuit(layout, [prep, mid, last])


def test_classical_control_born_probabilities():
    psi = np.array([0.6, 0.8j])
    for control, order in ((0, ("A", "B")), (1, ("B", "A"))):
        cfg = SwitchConfig(psi=psi, control_state=np.eye(2)[control])
        W = switch_process_matrix(cfg, four_party=False)
        ref = fixed_order_process(*order, psi, control)
        for seed in range(10):
            insts = [random_instrument((p.input,), (p.output,) if p.output else (), 2, 1, 10 * seed + k, p.name)
                     for k, p in enumerate(W.layout.parties)]
            a, b = born_probabilities(W, insts).probs, born_probabilities(ref, insts).probs
            assert 0.5 * np.abs(a - b).sum() < 1e-9


def test_four_party_with_david_preparation_matches_tripartite():
    psi = np.array([1.0, 0.0])
    W4 = switch_process_matrix(SwitchConfig(), four_party=True)
    ref = fixed_order_process("A", "B", psi, 0)
    d_out = W4.layout["D"].output
    david = deterministic_instrument(state_preparation_choi(np.outer(ket(0, 0, dims=(2, 2)), ket(0, 0, dims=(2, 2))),
                                                            (d_out,)), "D")
    for seed in range(5):
        insts = [random_instrument((p.input,), (p.output,) if p.output else (), 2, 1, 7 * seed + k, p.name)
                 for k, p in enumerate(ref.layout.parties)]
        p4 = born_probabilities(W4, [david] + insts).probs[0]
        assert np.abs(p4 - born_probabilities(ref, insts).probs).max() < 1e-10


def test_cswap_self_inverse():
    c = cswap(SystemId("Q", 2), SystemId("S", 3), SystemId("B", 3))
    assert np.abs((c @ c).data - np.eye(18)).max() == 0
    assert np.abs(c.data - c.data.conj().T).max() == 0


def test_encoder_embedding_matches_entrywise_algebra():
    enc = switch_encoders(SwitchConfig())
    assert np.abs(enc.w_in.embed(np.eye(2)).data - np.eye(8)).max() == 0
    for op in (X, Y, Z):
        assert max_abs_diff(enc.w_in.embed(op), input_algebra_element(op, 2)) == 0
        assert max_abs_diff(enc.w_out.embed(op), output_algebra_element(op, 2)) == 0


def test_algebra_elements_entrywise():
    m = input_algebra_element(X, 2)
    t = reorder(m, ["Q", "S", "B_O"], ["Q", "S", "B_O"]).tensor()
    for q, s, b, q2, s2, b2 in itertools.product(range(2), repeat=6):
        want = 0 if q != q2 else (X[s, s2] * (b == b2) if q == 0 else X[b, b2] * (s == s2))
        assert t[q, s, b, q2, s2, b2] == want


def test_embedding_is_a_homomorphism():
    enc = switch_encoders(SwitchConfig())
    rng = np.random.default_rng(0)
    for w in (enc.w_in, enc.w_out):
        units = matrix_units(2)
        for a, b in itertools.product(units, repeat=2):
            assert max_abs_diff(w.embed(a) @ w.embed(b), w.embed(a @ b)) < 1e-12
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        assert max_abs_diff(w.embed(m).dag(), w.embed(m.conj().T)) < 1e-12


def test_factorization_identity_and_random():
    assert verify_delocalized_factorization(np.eye(2)) < 1e-12
    cfg = SwitchConfig(anc_a_in=2, anc_a_out=2)
    for seed in range(10):
        assert verify_delocalized_factorization(haar_unitary(4, seed), cfg) < 1e-10
    cfg3 = SwitchConfig(d=3)
    for seed in range(5):
        assert verify_delocalized_factorization(haar_unitary(3, seed), cfg3) < 1e-10


def test_encoder_pair_factorization_matches_cswap_product():
    cfg = SwitchConfig(anc_a_in=2, anc_a_out=2)
    enc = switch_encoders(cfg)
    u = haar_unitary(4, 9)
    assert max_abs_diff(enc.factorized(u), cswap_factorization(u, cfg)) < 1e-12
    assert max_abs_diff(enc.factorized(u), switch_comb_unitary(u, cfg)) < 1e-10


def test_symmetric_identity_routing_and_parallel_action():
    s = symmetric_circuit(np.eye(2), np.eye(2))
    assert is_isometry_matrix(s.circuit.data, 1e-12) and s.residual() < 1e-12
    ua, ub = haar_unitary(2, 1), haar_unitary(2, 2)
    s = symmetric_circuit(ua, ub)
    # control 0 block: U_A takes S to F', U_B takes F to S'
    blk = reorder(s.circuit, ["Q'", "F'", "S'"], ["Q", "S", "F"]).tensor()[0, :, :, 0, :, :]
    want = np.einsum("as,bf->absf", ua, ub)
    assert np.abs(blk - want).max() < 1e-12


def test_symmetric_algebras_commute_and_match_encoders():
    s = symmetric_circuit(haar_unitary(2, 3), haar_unitary(2, 4))
    for a, b in (("A_I", "B_I"), ("A_O", "B_O")):
        for m, n in itertools.product(matrix_units(2), repeat=2):
            ea, eb = symmetric_algebra_element(a, m, 2), symmetric_algebra_element(b, n, 2)
            assert np.abs((ea @ eb - eb @ ea).data).max() <= 1e-12
    for k, enc in s.encoders.items():
        assert max_abs_diff(enc.embed(X), symmetric_algebra_element(k, X, 2)) == 0


def test_generalized_reduces_to_cswap_pattern():
    c2 = ControlObservable.computational(2)
    for op in (X, Y, Z, np.arange(4.0).reshape(2, 2)):
        g = relabel(generalized_algebra_element(c2, 2, op), {"S1": "S", "S3": "B_O"})
        r = input_algebra_element(op, 2)
        assert np.array_equal(reorder(g, r.row_names, r.col_names).data, r.data)
        g = relabel(generalized_algebra_element(c2, 2, op, output=True), {"S2": "B_I", "S4": "S'"})
        r = output_algebra_element(op, 2)
        assert np.array_equal(reorder(g, r.row_names, r.col_names).data, r.data)


def test_generalized_three_outcomes():
    c3 = ControlObservable.computational(3)
    enc = generalized_encoders(c3, 2)
    e_x, e_z = enc.enc_in.embed(X), enc.enc_in.embed(Z)
    assert max_abs_diff(e_x @ e_z, enc.enc_in.embed(X @ Z)) < 1e-12
    assert np.abs(enc.enc_in.embed(np.eye(2)).data - np.eye(24)).max() < 1e-12
    assert max_abs_diff(enc.enc_out.embed(Y), generalized_algebra_element(c3, 2, Y, output=True)) < 1e-12
    u = haar_unitary(2, 5)
    zs = [np.diag(np.exp(1j * np.array([0.1, 0.2, 0.3]))), np.diag(np.exp(1j * np.array([0.5, -0.4, 0.0])))]
    frag, z_total = generalized_fragment(u, c3, 2, zs)
    assert max_abs_diff(frag, generalized_factorization(u, enc, z_total)) < 1e-12


def test_generalized_rejects_noncommuting_gate():
    with pytest.raises(ValueError):
        generalized_fragment(np.eye(2), ControlObservable.computational(3), 2, [np.eye(3)[[1, 0, 2]]])


def test_config_json_round_trip():
    cfg = SwitchConfig(d=3, psi=(0.6, 0.8j, 0))
    assert SwitchConfig.from_json(cfg.to_json()) == cfg
