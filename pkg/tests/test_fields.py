import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transinv.fields import (
    DomainError,
    _interior_mask,
    ExpressionError,
    SampledField,
    c2_norm,
    constant,
    evaluate,
    fd_consistency,
    gradient,
    laplacian,
    parse_field,
)
from transinv.geometry import build_grid


@pytest.fixture
def sq():
    return build_grid([0, 0], [1, 1], 16, 1.0, n_steps=4)


def test_constant_vector(sq):
    H = parse_field("(1, 0.5)", 2)
    assert H.vector
    assert np.allclose(H.at(np.array([[0.3, 0.7], [1.0, 0.0]])), [[1, 0.5], [1, 0.5]])
    assert H.divergence().at(np.array([[0.2, 0.2]]))[0] == 0


def test_arithmetic_and_time(sq):
    psi = parse_field("x1 + 0.5*x2", 2)
    assert evaluate(psi, [[1.0, 1.0]], sq)[0] == pytest.approx(1.5)
    R = parse_field("1 + t", 2)
    assert R.at(np.array([[0.5, 0.5]]), t=0.0)[0] == 1.0
    assert R.time_dependent


def test_symbolic_derivatives(sq):
    psi = parse_field("(x1 + 1)^2", 2)
    g = gradient(psi).at(np.array([[0.5, 0.25]]))
    assert np.allclose(g, [[3.0, 0.0]])
    assert np.allclose(parse_field("x1", 2).gradient().at(np.array([[0.1, 0.9]])), [[1, 0]])
    assert laplacian(parse_field("x1^2", 2)).at(np.array([[0.3, 0.3]]))[0] == pytest.approx(2)


def test_div_grad_is_laplacian_exactly():
    d = parse_field("sin(pi*x1)*exp(x2) + x1*x2^3", 2)
    pts = np.random.default_rng(0).uniform(0, 1, (20, 2))
    assert np.allclose(d.gradient().divergence().at(pts), d.laplacian().at(pts), atol=1e-12)


def test_sampled_gradient_1d():
    g = build_grid(0, 1, 256, 1.0, n_steps=4)
    x = g.cell_centers[:, 0]
    s = SampledField(np.sin(np.pi * x), g)
    err = np.abs(s.gradient().values[:, 0] - np.pi * np.cos(np.pi * x))
    assert err[1:-1].max() <= 1e-3


def test_sampled_laplacian_2d():
    g = build_grid([0, 0], [1, 1], 256, 1.0, n_steps=4)
    d = parse_field("sin(pi*x1)*sin(pi*x2)", 2)
    s = SampledField(d.on_cells(g), g)
    lap = s.laplacian().values
    exact = -2 * np.pi**2 * d.on_cells(g)
    assert np.max(np.abs(lap - exact)) <= 1e-3 * np.max(np.abs(exact)) * 2 * np.pi**2


def test_fd_consistency_second_order():
    d = parse_field("sin(pi*x1)*cos(x2)", 2)
    gaps = [fd_consistency(d, build_grid([0, 0], [1, 1], n, 1.0, n_steps=2)) for n in (16, 32, 64)]
    assert gaps[0] / gaps[1] > 3.5 and gaps[1] / gaps[2] > 3.5


def test_sampled_div_grad_matches_laplacian():
    errs = []
    for n in (32, 64):
        g = build_grid([0, 0], [1, 1], n, 1.0, n_steps=2)
        d = parse_field("sin(pi*x1)*sin(pi*x2)", 2)
        s = SampledField(d.on_cells(g), g)
        dg = s.gradient().divergence().values
        inner = _interior_mask(g, width=2)
        errs.append(np.max(np.abs(dg - s.laplacian().values)[inner]))
    assert errs[0] / errs[1] > 3.5


def test_out_of_domain(sq):
    with pytest.raises(DomainError):
        evaluate(parse_field("x1", 2), [[1.5, 0.5]], sq)
    with pytest.raises(DomainError):
        evaluate(parse_field("x1", 2), [[0.5, 0.5]], sq, t=2.0)


@pytest.mark.parametrize("text", ["__import__('os')", "x3", "log(x)", "sin(x, 2)", "x +", "", "lambda: 1"])
def test_grammar_rejects(text):
    with pytest.raises(ExpressionError):
        parse_field(text, 2)


def test_vector_component_count():
    with pytest.raises(ExpressionError):
        parse_field("1", 2, vector=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_division_by_zero_detected(sq):
    with pytest.raises(ValueError):
        parse_field("1/x1", 2).check_finite(sq)


def test_c2_norm_linear(sq):
    assert c2_norm(parse_field("x1", 2), sq) == pytest.approx(2.0)
    assert c2_norm(constant(0.0, 2), sq) == 0


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.floats(0, 1))
def test_parse_matches_numpy(a, b, x1, x2):
    f = parse_field(f"{a!r}*sin(pi*x1) + {b!r}*x2^2 - exp(x1*x2)", 2)
    expect = a * np.sin(np.pi * x1) + b * x2**2 - np.exp(x1 * x2)
    assert f.at(np.array([[x1, x2]]))[0] == pytest.approx(expect, abs=1e-12)
