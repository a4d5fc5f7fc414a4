import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pascali_lab import EvalError, ParseError, evaluate, parse, to_text
from pascali_lab.expr import shape_of

Z = np.array([0.3 + 0.4j, -1.2 + 0.1j, 0.7 - 0.9j])


@pytest.mark.parametrize(
    "text, fn",
    [
        ("z^2 + 1", lambda z: z**2 + 1),
        ("exp(2*x)", lambda z: np.exp(2 * z.real)),
        ("conj(z) * i", lambda z: 1j * np.conj(z)),
        ("1/(z-2)", lambda z: 1 / (z - 2)),
        ("-z^2", lambda z: -(z**2)),
        ("2^-1 * re(z) + im(z)", lambda z: 0.5 * z.real + z.imag),
        ("abs(z) - sin(y) + cos(pi*x)", lambda z: np.abs(z) - np.sin(z.imag) + np.cos(np.pi * z.real)),
        ("(1 + 2*i) * z", lambda z: (1 + 2j) * z),
    ],
)
def test_evaluate_matches_numpy(text, fn):
    assert np.allclose(evaluate(parse(text), Z), fn(Z))


def test_scalar_input_gives_scalar():
    assert evaluate(parse("z + 1"), 1j) == 1 + 1j


def test_vector_and_matrix_shapes():
    v = parse("[z, 1]")
    m = parse("[[0, 1], [z, 0]]")
    assert shape_of(v) == (2,) and shape_of(m) == (2, 2) and shape_of(parse("z")) == ()
    assert evaluate(v, Z).shape == (3, 2)
    M = evaluate(m, Z)
    assert M.shape == (3, 2, 2) and np.allclose(M[:, 1, 0], Z)


@pytest.mark.parametrize("text", ["z +* 2", "foo(z)", "z^x", "[z, [1]]", "(z", "", "w"])
def test_parse_errors_have_positions(text):
    with pytest.raises(ParseError) as err:
        parse(text)
    assert "byte" in str(err.value) or "empty" in str(err.value) or "unexpected" in str(err.value)


def test_eval_errors_locate_the_point():
    with pytest.raises(EvalError, match="z ="):
        evaluate(parse("1/z"), np.array([1.0, 0.0]))
    with pytest.raises(EvalError):
        evaluate(parse("exp(1000*x)"), np.array([2.0]))


_leaf = st.one_of(
    st.sampled_from(["z", "x", "y", "i", "pi"]),
    st.integers(0, 9).map(str),
    st.floats(0, 10, allow_nan=False).map(lambda v: repr(round(v, 3))),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(st.sampled_from(["exp", "sin", "conj", "re", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"-{c}"),
    )


@settings(max_examples=200, deadline=None)
@given(st.recursive(_leaf, _combine, max_leaves=8))
def test_round_trip_is_stable(text):
    e = parse(text)
    canon = to_text(e)
    assert to_text(parse(canon)) == canon
    with np.errstate(all="ignore"):
        try:
            a = evaluate(e, Z * 0.1)
        except EvalError:
            return
        b = evaluate(parse(canon), Z * 0.1)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
