import pytest

from pinnkit.rng import Rng
from pinnkit.tape import Tape, Var, grad, nth_derivative

from _expr import build_spec, central_diff_spec, random_expr_spec


def test_square_gradient():
    t = Tape()
    x = t.input(3.0)
    y = x * x
    (g,) = grad(y, [x])
    assert isinstance(g, Var)
    assert g.value == 6.0


def test_tanh_gradient_at_zero():
    t = Tape()
    x = t.input(0.0)
    (g,) = grad(t.tanh(x), [x])
    assert g.value == 1.0


def test_unreachable_wrt_gives_zero():
    t = Tape()
    x = t.input(2.0)
    z = t.input(5.0)
    y = x * x
    gz = grad(y, [z])[0]
    assert gz.value == 0.0
    # wrt created after the output is unreachable too
    late = t.input(1.0)
    assert grad(y, [late])[0].value == 0.0


def test_grad_wrt_output_is_one():
    t = Tape()
    x = t.input(2.0)
    y = x * x
    assert grad(y, [y])[0].value == 1.0


def test_gradient_is_differentiable():
    t = Tape()
    x = t.input(3.0)
    y = t.powi(x, 3)
    (g1,) = grad(y, [x])  # 3x^2 = 27
    assert g1.value == 27.0
    (g2,) = grad(g1, [x])  # 6x = 18
    assert g2.value == 18.0
    (g3,) = grad(g2, [x])  # 6
    assert g3.value == 6.0


def test_linearity_of_grad():
    rng = Rng(42)
    for _ in range(20):
        t = Tape()
        x = t.input(rng.uniform_in(-1.0, 1.0))
        f = t.sin(x) * x
        g = t.tanh(x) + x * x
        alpha, beta = rng.uniform_in(-2, 2), rng.uniform_in(-2, 2)
        combo = alpha * f + beta * g
        gc = grad(combo, [x])[0].value
        gf = grad(f, [x])[0].value
        gg = grad(g, [x])[0].value
        assert abs(gc - (alpha * gf + beta * gg)) < 1e-12


def test_nth_derivative_examples():
    t = Tape()
    x = t.input(2.0)
    assert nth_derivative(lambda v: t.powi(v, 3), x, 2).value == 12.0
    assert nth_derivative(lambda v: t.powi(v, 3), x, 4).value == 0.0
    x0 = t.input(0.0)
    assert nth_derivative(t.sin, x0, 2).value == 0.0
    with pytest.raises(ValueError):
        nth_derivative(t.sin, x0, 0)


def test_higher_order_consistency():
    # d^(a+b) f == d^b applied to the a-th derivative function
    def f(v):
        return v.tape.sin(v) * v.tape.exp(v * 0.5)

    t = Tape()
    x = t.input(0.8)
    for a, b in [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (1, 3)]:
        direct = nth_derivative(f, x, a + b).value
        nested = nth_derivative(
            lambda v: nth_derivative(f, v, a), x, b).value
        assert direct == pytest.approx(nested, rel=1e-9, abs=1e-12)


def test_polynomial_annihilation_spot():
    rng = Rng(7)
    for degree in range(1, 6):
        coeffs = [rng.uniform_in(-2, 2) for _ in range(degree + 1)]
        for _ in range(20):
            t = Tape()
            x = t.input(rng.uniform_in(-3, 3))

            def poly(v):
                acc = t.const(coeffs[0])
                for j, c in enumerate(coeffs[1:], start=1):
                    acc = acc + t.const(c) * t.powi(v, j)
                return acc

            d = nth_derivative(poly, x, degree + 1)
            assert abs(d.value) < 1e-9


def test_random_dags_match_finite_differences():
    rng = Rng(20240809)
    checked = 0
    for _ in range(300):
        spec, leaves = random_expr_spec(rng)
        if not spec:
            continue
        t = Tape()
        y, leaf_vars = build_spec(t, spec, leaves)
        gs = grad(y, leaf_vars)
        for i, g in enumerate(gs):
            fd = central_diff_spec(spec, leaves, i)
            assert abs(g.value - fd) <= 1e-8 + 1e-5 * max(abs(g.value), abs(fd)), (
                f"grad mismatch on leaf {i}: ad={g.value} fd={fd} spec={spec}")
            checked += 1
    assert checked > 300


def test_grad_emits_nodes_on_same_tape():
    t = Tape()
    x = t.input(1.0)
    y = t.exp(x)
    n_before = len(t)
    (g,) = grad(y, [x])
    assert g.tape is t
    assert len(t) > n_before
