import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import crandn
from risfd.solver import (
    Affine,
    LogAffineSDP,
    Tolerances,
    dump_problem,
    ge,
    hermitian_to_real_embedding,
    le,
    real_embedding_to_hermitian,
    solve,
)

ONE = np.eye(1)


def random_hermitian(rng, n):
    A = crandn(rng, n, n)
    return A + A.conj().T


def random_psd(rng, n, rank=None):
    B = crandn(rng, n, rank or n)
    return B @ B.conj().T


class TestAnalytic:
    def test_log_cap(self):
        p = LogAffineSDP(blocks=[("x", 1)], log_terms=[(1.0, Affine(0.0, {"x": ONE}))],
                         ineq_constraints=[le(Affine(0.0, {"x": ONE}), np.e)])
        X, rep = solve(p)
        assert rep.status == "optimal"
        assert abs(rep.objective - 1.0) <= 1e-7
        assert abs(X["x"][0, 0].real - np.e) <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_rayleigh_quotient(self, seed):
        rng = np.random.default_rng(seed)
        C = random_hermitian(rng, 4)
        p = LogAffineSDP(blocks=[("X", 4)], linear_obj=Affine(0.0, {"X": C}),
                         eq_constraints=[Affine(-1.0, {"X": np.eye(4)})])
        X, rep = solve(p)
        assert rep.status == "optimal"
        assert abs(rep.objective - np.linalg.eigvalsh(C).max()) <= 1e-7
        assert rep.primal_residual <= 1e-8

    def test_fixed_diagonal(self):
        # max Re Tr(C X) with unit diagonal and C = u u^H, u unit-modulus: optimum |u|^4 = n^2
        u = np.exp(1j * np.array([0.3, 1.9, -2.2]))
        C = np.outer(u, u.conj())
        p = LogAffineSDP(blocks=[("Q", 3)], linear_obj=Affine(0.0, {"Q": C}), fixed_diag={"Q": True})
        X, rep = solve(p)
        assert rep.status == "optimal"
        assert abs(rep.objective - 9.0) <= 1e-6
        assert_allclose(np.diag(X["Q"]).real, 1.0, atol=1e-8)


def _log_trace_problem(rng, scale=1.0):
    """max a log(c + <A, X>) + <B, X> over PSD X with Tr X <= 1."""
    A = random_psd(rng, 3)
    B = random_hermitian(rng, 3) * 0.3
    c = 0.5
    p = LogAffineSDP(
        blocks=[("X", 3)],
        log_terms=[(scale * 1.0, Affine(c, {"X": A}))],
        linear_obj=Affine(0.0, {"X": scale * B}),
        ineq_constraints=[le(Affine(0.0, {"X": np.eye(3)}), 1.0)],
    )
    return p, A, B, c


def _project(X):
    """Frobenius projection onto {X PSD, Tr X <= 1}."""
    vals, vecs = np.linalg.eigh(0.5 * (X + X.conj().T))
    lam = np.maximum(vals, 0)
    if lam.sum() > 1:
        # project eigenvalues onto the unit simplex
        s = np.sort(vals)[::-1]
        css = np.cumsum(s) - 1
        k = np.nonzero(s - css / np.arange(1, len(s) + 1) > 0)[0][-1]
        lam = np.maximum(vals - css[k] / (k + 1), 0)
    return (vecs * lam) @ vecs.conj().T


def _projected_gradient(A, B, c, iters=20000, step=0.05):
    X = np.eye(3) / 3
    for _ in range(iters):
        u = c + np.vdot(A, X).real
        grad = A / u + B
        X = _project(X + step * grad)
    return X, np.log(c + np.vdot(A, X).real) + np.vdot(B, X).real


@pytest.mark.parametrize("seed", range(3))
def test_matches_projected_gradient(seed):
    p, A, B, c = _log_trace_problem(np.random.default_rng(seed))
    X, rep = solve(p)
    Xref, ref = _projected_gradient(A, B, c)
    assert rep.status == "optimal"
    assert abs(rep.objective - ref) <= 1e-5
    # the barrier gap bounds the shortfall from above
    assert rep.objective >= ref - Tolerances().stat


@pytest.mark.parametrize("seed", range(3))
def test_scale_invariance(seed):
    p1, *_ = _log_trace_problem(np.random.default_rng(seed), 1.0)
    p7, *_ = _log_trace_problem(np.random.default_rng(seed), 7.0)
    X1, _ = solve(p1)
    X7, _ = solve(p7)
    assert_allclose(X1["X"], X7["X"], atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_perturbation_does_not_improve(seed):
    rng = np.random.default_rng(seed)
    p, *_ = _log_trace_problem(rng)
    tol = Tolerances()
    X, rep = solve(p, tol)
    base = p.objective(X)
    for _ in range(200):
        Y = random_psd(rng, 3)
        Y /= np.trace(Y).real * rng.uniform(1.0, 2.0)
        Xp = {"X": X["X"] + 1e-4 * (Y - X["X"])}
        assert p.residuals(Xp) <= 1e-12
        assert p.objective(Xp) <= base + tol.stat


def test_infeasible_detected():
    x = Affine(0.0, {"x": ONE})
    p = LogAffineSDP(blocks=[("x", 1)], log_terms=[(1.0, x)],
                     ineq_constraints=[ge(x, 2.0), le(x, 1.0)])
    _, rep = solve(p)
    assert rep.status == "infeasible"


def test_warm_start_on_boundary():
    # hint sits exactly on the inequality boundary
    x = Affine(0.0, {"x": ONE})
    p = LogAffineSDP(blocks=[("x", 1)], log_terms=[(1.0, x)], ineq_constraints=[le(x, 3.0)])
    _, rep = solve(p, x0={"x": np.array([[3.0]])})
    assert rep.status == "optimal"
    assert abs(rep.objective - np.log(3.0)) <= 1e-7


def test_max_iter_status():
    rng = np.random.default_rng(0)
    C = random_hermitian(rng, 4)
    p = LogAffineSDP(blocks=[("X", 4)], linear_obj=Affine(0.0, {"X": C}),
                     eq_constraints=[Affine(-1.0, {"X": np.eye(4)})])
    _, rep = solve(p, max_iter=2)
    assert rep.status in ("max_iter", "inaccurate", "numerical_failure")
    assert not rep.optimal


def test_malformed_problems():
    with pytest.raises(ValueError):
        LogAffineSDP(blocks=[("x", 1)], log_terms=[(0.0, Affine(0.0, {"x": ONE}))])
    with pytest.raises(ValueError):
        LogAffineSDP(blocks=[("x", 2)], linear_obj=Affine(0.0, {"x": np.array([[0, 1], [0, 0]])}))
    with pytest.raises(ValueError):
        LogAffineSDP(blocks=[("x", 2)], linear_obj=Affine(0.0, {"y": np.eye(2)}))


def test_problem_dump():
    x = Affine(0.5, {"x": ONE})
    p = LogAffineSDP(blocks=[("x", 1)], log_terms=[(2.0, x)], ineq_constraints=[le(x, 3.0)])
    lines = dump_problem(p).splitlines()
    assert lines[0] == "# log-affine-sdp v1"
    assert lines[1] == "block x 1 fixed_diag=0"
    assert lines[2] == "log 2 | const 0.5 | x: 1 0"
    assert lines[3] == "linear | const 0"
    assert lines[4] == "ge0 | const 2.5 | x: -1 0"


class TestEmbedding:
    def test_identity(self):
        assert_array_equal(hermitian_to_real_embedding(np.eye(2)), np.eye(4))

    def test_pauli(self):
        H = np.array([[0, -1j], [1j, 0]])
        vals = np.linalg.eigvalsh(hermitian_to_real_embedding(H))
        assert_allclose(vals, [-1, -1, 1, 1], atol=1e-14)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            hermitian_to_real_embedding(np.array([[0, 1], [0, 0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_properties(self, n, seed):
        rng = np.random.default_rng(seed)
        H = random_hermitian(rng, n)
        S = hermitian_to_real_embedding(H)
        assert_array_equal(S, S.T)
        assert_array_equal(real_embedding_to_hermitian(S), H)
        assert_allclose(np.trace(S), 2 * np.trace(H).real)
        ev = np.sort(np.repeat(np.linalg.eigvalsh(H), 2))
        assert_allclose(np.linalg.eigvalsh(S), ev, atol=1e-10 * max(1, np.abs(ev).max()))
        A = random_hermitian(rng, n)
        lhs = np.trace(A @ H).real
        rhs = 0.5 * np.trace(hermitian_to_real_embedding(A) @ S)
        assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)
