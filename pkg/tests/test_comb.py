import numpy as np
import pytest

from causalis.channels import (
    Instrument,
    born_probabilities,
    deterministic_instrument,
    measure_prepare_choi,
    random_instrument,
    state_preparation_choi,
)
from causalis.comb import (
    ALICE_CUT,
    CombConditionError,
    FourPartyProcessChannel,
    IsometricFormError,
    algebra_distance,
    bob_slot_comb,
    channel_from_process,
    check_isometric_form,
    comb_factorize,
    compose_with_alice,
    dressed_switch_channel,
    embedded_basis,
    extract_delocalized_subsystems,
    fixed_order_channel,
    matrix_units,
    padded_channel,
    purification_counterexample,
    switch_channel,
    three_branch_channel,
    verify_subsystem_factorization,
)
from causalis.process import ProcessMatrix, contract_parties, validate_process_matrix
from causalis.switch import (
    SwitchConfig,
    input_algebra_element,
    output_algebra_element,
    switch_comb_unitary,
)
from causalis.tensor import (
    LabelError,
    LabeledOperator,
    SystemId,
    haar_unitary,
    is_isometry_matrix,
    max_abs_diff,
    partial_trace,
    random_density_matrix,
    reorder,
    split_system,
    tensor_product,
)

QS = [SystemId("Q", 2), SystemId("S", 2)]
QS_OUT = [SystemId("Q'", 2), SystemId("S'", 2)]


def families():
    return {
        "switch": switch_channel(2),
        "dressed": dressed_switch_channel(2, 1),
        "three-branch": three_branch_channel(2, 2),
        "fixed-AB": fixed_order_channel(2, 2, 3, "AB"),
        "fixed-BA": fixed_order_channel(2, 2, 4, "BA"),
    }


def split_switch(op):
    if "D_O" in op.row_names or "D_O" in op.col_names:
        op = split_system(op, "D_O", QS)
    if "C_I" in op.row_names or "C_I" in op.col_names:
        op = split_system(op, "C_I", QS_OUT)
    return op


def test_switch_channel_composition_matches_comb():
    V = switch_channel(2)
    for seed in range(5):
        u = np.eye(2) if seed == 0 else haar_unitary(2, seed)
        g = split_switch(compose_with_alice(V, u))
        ref = switch_comb_unitary(u)
        assert max_abs_diff(g, ref) < 1e-12


def test_composition_is_unitary():
    V = dressed_switch_channel(2, 5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = compose_with_alice(V, haar_unitary(4, rng)).data
        assert np.abs(g.conj().T @ g - np.eye(g.shape[1])).max() < 1e-10


def test_all_families_are_valid_processes():
    for name, V in families().items():
        assert V.isometry_residual() < 1e-12, name
        assert validate_process_matrix(V.process_matrix()).valid, name


def test_non_isometry_rejected():
    V = switch_channel(2).V
    with pytest.raises(ValueError):
        FourPartyProcessChannel(V * 2)
    with pytest.raises(LabelError):
        FourPartyProcessChannel(V.relabel({"C_I": "Z"}))


def test_channel_recovered_from_process():
    for V in families().values():
        back = channel_from_process(V.process_matrix())
        assert max_abs_diff(back.process_matrix().W, V.process_matrix().W) < 1e-12


def test_bipartite_reduction_with_david_and_charlie_fixed():
    V = dressed_switch_channel(2, 6)
    W4 = V.process_matrix()
    layout = W4.layout
    rho = random_density_matrix(4, 1)
    prep = state_preparation_choi(rho, (layout["D"].output,))
    trace_c = np.eye(layout["C"].d_in)
    reduced_op = contract_parties(W4, {"D": prep, "C": trace_c})
    sub = type(layout)((layout["A"], layout["B"]))
    reduced = ProcessMatrix(sub, reduced_op)
    assert validate_process_matrix(reduced).valid
    for seed in range(5):
        a = random_instrument((layout["A"].input,), (layout["A"].output,), 2, 1, seed, "A")
        b = random_instrument((layout["B"].input,), (layout["B"].output,), 3, 1, seed + 9, "B")
        c = Instrument((("0", measure_prepare_choi(np.eye(4), np.ones((1, 1)), (layout["C"].input,), ())),), "C")
        full = born_probabilities(W4, [deterministic_instrument(prep, "D"), a, b, c]).probs[0, :, :, 0]
        assert np.abs(full - born_probabilities(reduced, [a, b]).probs).max() < 1e-10


def test_product_unitary_needs_no_memory():
    p, r = SystemId("P", 2), SystemId("R", 3)
    g = tensor_product(LabeledOperator((SystemId("P'", 2),), (p,), haar_unitary(2, 1)),
                       LabeledOperator((SystemId("R'", 3),), (r,), haar_unitary(3, 2)))
    comb = comb_factorize(g, (["P"], ["P'"], ["R"], ["R'"]))
    assert comb.d_X == 1 and comb.residual < 1e-12


def test_entangling_first_tooth_needs_memory():
    p, m = SystemId("P", 2), SystemId("M", 2)
    u1 = LabeledOperator((SystemId("P'", 2), m), (p, SystemId("M0", 2)), haar_unitary(4, 3))
    u2 = LabeledOperator((SystemId("R'", 4),), (m, SystemId("R", 2)), haar_unitary(4, 4))
    g = tensor_product(u2, LabeledOperator.identity(SystemId("P'", 2))) @ tensor_product(
        u1, LabeledOperator.identity(SystemId("R", 2)))
    comb = comb_factorize(g, (["P", "M0"], ["P'"], ["R"], ["R'"]))
    assert comb.d_X == 2 and comb.residual < 1e-10 and comb.is_isometric()


def test_switch_comb_factorizes():
    g = switch_comb_unitary(haar_unitary(2, 11))
    comb = comb_factorize(g, (["Q", "S"], ["B_I"], ["B_O"], ["Q'", "S'"]))
    assert comb.residual < 1e-9
    assert is_isometry_matrix(comb.V1.data, 1e-10)
    assert max_abs_diff(reorder(comb.compose(), g.row_names, g.col_names), g) < 1e-9


def test_back_signaling_raises():
    p, r = SystemId("P", 2), SystemId("R", 2)
    swap = np.eye(4).reshape(2, 2, 2, 2).transpose(1, 0, 2, 3).reshape(4, 4)
    g = LabeledOperator((SystemId("P'", 2), SystemId("R'", 2)), (p, r), swap)
    with pytest.raises(CombConditionError):
        comb_factorize(g, (["P"], ["P'"], ["R"], ["R'"]))


def test_switch_algebras_match_controlled_swap():
    enc = extract_delocalized_subsystems(switch_channel(2))
    rec_in = [split_switch(o) for o in embedded_basis(enc.w_in)]
    rec_out = [split_switch(o) for o in embedded_basis(enc.w_out)]
    ref_in = [input_algebra_element(m, 2) for m in matrix_units(2)]
    ref_out = [output_algebra_element(m, 2) for m in matrix_units(2)]
    assert algebra_distance(rec_in, ref_in) < 1e-9
    assert algebra_distance(rec_out, ref_out) < 1e-9


def test_algebra_distance_detects_different_algebra():
    enc = extract_delocalized_subsystems(switch_channel(2))
    rec_in = [split_switch(o) for o in embedded_basis(enc.w_in)]
    wrong = [tensor_product(LabeledOperator.identity(QS[0]), LabeledOperator(QS[1:], QS[1:], m),
                            LabeledOperator.identity(SystemId("B_O", 2))) for m in matrix_units(2)]
    assert algebra_distance(rec_in, wrong) > 0.1


def test_fixed_order_input_is_local_to_david():
    enc = extract_delocalized_subsystems(fixed_order_channel(2, 2, 7, "AB"))
    for op in embedded_basis(enc.w_in):
        local = partial_trace(op, ["B_O"]) / 2
        rebuilt = tensor_product(local, LabeledOperator.identity(op.system("B_O")))
        assert max_abs_diff(op, rebuilt) < 1e-10


def test_gauge_freedom_leaves_algebras_unchanged():
    V = three_branch_channel(2, 8)
    a = extract_delocalized_subsystems(V)
    b = extract_delocalized_subsystems(V, gauge=123)
    assert max_abs_diff(a.w_in.unitary, b.w_in.unitary) > 1e-3
    assert algebra_distance(embedded_basis(a.w_in), embedded_basis(b.w_in)) < 1e-9
    assert algebra_distance(embedded_basis(a.w_out), embedded_basis(b.w_out)) < 1e-9


def test_factorization_all_families():
    rng = np.random.default_rng(0)
    for name, V in families().items():
        enc = extract_delocalized_subsystems(V)
        assert verify_subsystem_factorization(V, enc, [np.eye(2)]) < 1e-10, name
        samples = [haar_unitary(2, rng) for _ in range(10)] + [haar_unitary(4, rng) for _ in range(5)]
        assert verify_subsystem_factorization(V, enc, samples) < 1e-9, name


def test_form_check_unitary_and_padded():
    form = check_isometric_form(switch_channel(2))
    assert form.satisfies and form.k_dim == 0
    padded = padded_channel(dressed_switch_channel(2, 2), 3, seed=4)
    form = check_isometric_form(padded)
    # padding C_I by 3 leaves B_I (dim 2) alongside: K gains 2 * 3 dimensions
    assert form.satisfies and form.k_dim == 6
    samples = [haar_unitary(2, s) for s in range(10)]
    assert verify_subsystem_factorization(padded, form.encoders, samples) < 1e-9


def test_purification_counterexample_fails_form():
    V = purification_counterexample(0.5, 2, seed=0)
    assert validate_process_matrix(V.process_matrix()).valid
    form = check_isometric_form(V)
    assert not form.satisfies and form.reduced_rank > form.required_rank
    with pytest.raises(IsometricFormError):
        extract_delocalized_subsystems(V)


def test_bob_slot_no_signaling_and_memory_bound():
    rng = np.random.default_rng(1)
    for name, V in families().items():
        for anc in (1, 2):
            u = haar_unitary(2 * anc, rng)
            comb = bob_slot_comb(V, u)
            assert comb.probe_gap <= 1e-9, name
            assert comb.d_X <= anc * V.dim("D_O"), name


def test_alice_cut_constant():
    assert ALICE_CUT == (("D_O", "B_O"), ("A_I",), ("A_O",), ("B_I", "C_I"))
    assert SwitchConfig().d == 2
