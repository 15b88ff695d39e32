import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalis.tensor import (
    LabelError,
    LabeledOperator,
    SystemId,
    compose_circuit,
    haar_unitary,
    hs_basis,
    hs_decompose,
    hs_reconstruct,
    is_isometry_matrix,
    link,
    matrix_predicates,
    merge_systems,
    operator_from_json,
    operator_to_json,
    partial_trace,
    partial_transpose,
    permute_systems,
    random_density_matrix,
    relabel,
    reorder,
    split_system,
    tensor_product,
)

A, B, C = SystemId("A", 2), SystemId("B", 3), SystemId("C", 2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def op(systems, m):
    return LabeledOperator(systems, systems, m)


def rand_op(systems, seed):
    rng = np.random.default_rng(seed)
    d = int(np.prod([s.dim for s in systems]))
    return op(systems, rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))


def test_identity_tensor_identity():
    t = tensor_product(LabeledOperator.identity(SystemId("P", 2)), LabeledOperator.identity(SystemId("R", 2)))
    assert np.array_equal(t.data, np.eye(4))


def test_z_tensor_identity_spectrum():
    t = tensor_product(op((A,), Z), LabeledOperator.identity(C))
    assert np.allclose(np.sort(np.linalg.eigvalsh(t.data)), [-1, -1, 1, 1])


def test_controlled_pattern_matches_entrywise():
    q, s, b = SystemId("Q", 2), SystemId("S", 2), SystemId("B_O", 2)
    p0, p1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    built = tensor_product(op((q,), p0), op((s,), X), LabeledOperator.identity(b)) + tensor_product(
        op((q,), p1), LabeledOperator.identity(s), op((b,), X))
    # brute force: <q s b| O |q' s' b'>
    want = np.zeros((8, 8), dtype=complex)
    for (qi, si, bi), (qj, sj, bj) in itertools.product(itertools.product(range(2), repeat=3), repeat=2):
        if qi != qj:
            continue
        val = X[si, sj] * (bi == bj) if qi == 0 else X[bi, bj] * (si == sj)
        want[4 * qi + 2 * si + bi, 4 * qj + 2 * sj + bj] = val
    assert np.abs(built.data - want).max() == 0


def test_duplicate_labels_rejected():
    with pytest.raises(LabelError):
        LabeledOperator((A, A), (A, A), np.eye(4))


def test_shape_mismatch_rejected():
    with pytest.raises(LabelError):
        LabeledOperator((A,), (A,), np.eye(3))


def test_permute_involution_and_basis_relabel():
    a, b = rand_op((A,), 1), rand_op((B,), 2)
    ab = tensor_product(a, b)
    back = permute_systems(permute_systems(ab, ["B", "A"]), ["A", "B"])
    assert np.array_equal(back.data, ab.data)
    ket01 = np.zeros(4)
    ket01[1] = 1
    p = permute_systems(op((SystemId("P", 2), SystemId("R", 2)), np.outer(ket01, ket01)), ["R", "P"])
    assert p.data[2, 2] == 1 and np.abs(p.data).sum() == 1


def test_permute_three_systems_exhaustive():
    m = rand_op((A, B, C), 3)
    for perm in itertools.permutations(["A", "B", "C"]):
        p = permute_systems(m, perm)
        t, tp = m.tensor(), p.tensor()
        idx = [["A", "B", "C"].index(n) for n in perm]
        for i in itertools.product(range(2), range(3), range(2)):
            for j in itertools.product(range(2), range(3), range(2)):
                assert tp[tuple(i[k] for k in idx) + tuple(j[k] for k in idx)] == t[i + j]
        inv = permute_systems(p, ["A", "B", "C"])
        assert np.abs(inv.data - m.data).max() == 0


def test_partial_trace_product_state():
    ra, rb = random_density_matrix(2, 0), random_density_matrix(3, 1)
    pt = partial_trace(tensor_product(op((A,), ra), op((B,), 2 * rb)), ["B"])
    assert np.abs(pt.data - 2 * ra).max() < 1e-12


def test_partial_trace_max_entangled():
    phi = np.zeros(4)
    phi[[0, 3]] = 1
    m = op((SystemId("I", 2), SystemId("O", 2)), np.outer(phi, phi))
    assert np.abs(partial_trace(m, ["O"]).data - np.eye(2)).max() == 0
    assert np.abs(partial_trace(m, ["I"]).data - np.eye(2)).max() == 0


def test_partial_transpose_of_product():
    a, b = rand_op((A,), 4), rand_op((B,), 5)
    pt = partial_transpose(tensor_product(a, b), ["B"])
    assert np.abs(pt.data - np.kron(a.data, b.data.T)).max() < 1e-12


def test_matmul_aligns_labels():
    a, b = rand_op((A, B), 6), rand_op((A, B), 7)
    b_perm = permute_systems(b, ["B", "A"])
    prod_ab = reorder(a @ b_perm, ["A", "B"], ["A", "B"])
    assert np.abs(prod_ab.data - a.data @ b.data).max() < 1e-12
    assert np.abs((a + b_perm).data - (a.data + b.data)).max() < 1e-12


def test_split_merge_round_trip():
    m = rand_op((SystemId("D", 4), C), 8)
    s = split_system(m, "D", [SystemId("Q", 2), SystemId("S", 2)])
    assert s.row_names == ("Q", "S", "C")
    back = merge_systems(s, ["Q", "S"], "D")
    assert np.array_equal(reorder(back, ["D", "C"], ["D", "C"]).data, m.data)


def test_relabel_keeps_data():
    m = rand_op((A, C), 9)
    r = relabel(m, {"A": "A2"})
    assert r.row_names == ("A2", "C") and np.array_equal(r.data, m.data)


def test_compose_circuit_pads_passing_wires():
    u = haar_unitary(2, 0)
    g1 = LabeledOperator((SystemId("Y", 2),), (A,), u)
    g2 = LabeledOperator((SystemId("W", 2),), (C,), X)
    total = compose_circuit([g1, g2])
    assert np.abs(reorder(total, ["Y", "W"], ["A", "C"]).data - np.kron(u, X)).max() < 1e-12


def test_link_of_unitary_chois_is_composition():
    # Choi in the transposed convention: conj of |U>><<U| with |U>> = sum_i |i> U|i>
    def choi(u, i, o):
        v = u.T.reshape(-1)
        return op((SystemId(i, 2), SystemId(o, 2)), np.outer(v.conj(), v))

    ua, ub = haar_unitary(2, 1), haar_unitary(2, 2)
    linked = link(choi(ua, "in", "mid"), choi(ub, "mid", "out"), ["mid"])
    assert np.abs(reorder(linked, ["in", "out"], ["in", "out"]).data - choi(ub @ ua, "in", "out").data).max() < 1e-12


def test_hs_basis_orthogonality():
    for d in (2, 3, 4):
        basis = hs_basis(SystemId("s", d))
        assert np.abs(basis.gram() - d * np.eye(d * d)).max() < 1e-12


def test_hs_identity_term_only():
    coeffs = hs_decompose(LabeledOperator.identity((SystemId("A_I", 2), SystemId("A_O", 2))))
    expect = np.zeros_like(coeffs)
    expect[0, 0] = 1
    assert np.abs(coeffs - expect).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(2,), (2, 3), (3, 2, 2)]))
def test_hs_round_trip(seed, dims):
    systems = tuple(SystemId(f"s{k}", d) for k, d in enumerate(dims))
    m = rand_op(systems, seed)
    h = op(systems, (m.data + m.data.conj().T) / 2)
    back = hs_reconstruct(hs_decompose(h), systems)
    assert np.abs(back.data - h.data).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_partial_trace_of_product_property(seed):
    a, b = rand_op((A,), seed), rand_op((B, C), seed + 1)
    pt = partial_trace(tensor_product(a, b), ["B", "C"])
    assert np.abs(pt.data - a.data * np.trace(b.data)).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations(["A", "B", "C"]))
def test_permute_preserves_spectrum(seed, perm):
    m = rand_op((A, B, C), seed)
    h = op((A, B, C), m.data + m.data.conj().T)
    p = permute_systems(h, perm)
    assert np.abs(np.linalg.eigvalsh(p.data) - np.linalg.eigvalsh(h.data)).max() < 1e-12


def test_predicates_identity():
    pr = matrix_predicates(np.eye(4))
    assert pr.hermitian and pr.psd and pr.unitary and pr.rank == 4


def test_haar_unitarity_and_moments():
    for d in range(2, 9):
        u = haar_unitary(d, d)
        assert np.abs(u.conj().T @ u - np.eye(d)).max() < 1e-12
    assert abs(abs(haar_unitary(1, 0)[0, 0]) - 1) < 1e-12
    rng = np.random.default_rng(0)
    d, n = 3, 10_000
    vals = np.array([abs(haar_unitary(d, rng)[0, 0]) ** 2 for _ in range(n)])
    # |U_11|^2 is Beta(1, d-1): mean 1/d, variance (d-1)/(d^2 (d+1))
    sigma = np.sqrt((d - 1) / (d * d * (d + 1)) / n)
    assert abs(vals.mean() - 1 / d) < 3 * sigma


def test_isometry_check():
    v = haar_unitary(4, 1)[:, :2]
    assert is_isometry_matrix(v) and not is_isometry_matrix(2 * v)


def test_json_round_trip_and_errors():
    m = rand_op((A, B), 11)
    back = operator_from_json(operator_to_json(m))
    assert np.array_equal(back.data, m.data) and back.rows == m.rows
    bad = operator_to_json(m)
    bad["re"] = bad["re"][:-1]
    with pytest.raises(ValueError, match="operator"):
        operator_from_json(bad)
