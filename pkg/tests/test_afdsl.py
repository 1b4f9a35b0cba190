import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsearch.afdsl import (
    BASE_TABLE,
    ParseError,
    UnknownSpaceError,
    binary,
    bulk_fingerprints,
    dedup,
    digest,
    enumerate_space,
    evaluate,
    evaluate_dual,
    fingerprint,
    nary,
    negate,
    parse,
    probe_inputs,
    render,
    space_size,
    unary,
)
from actsearch.afdsl.space import SPACES, _build, _slot_choices

RELU = "binary_max(unary_identity(x),unary_zero(x))"
SWISH = "binary_mul(unary_sigmoid(x),unary_identity(x))"


def random_graph(draw_int, form=None):
    forms = [f for fs in SPACES.values() for f in fs]
    form = form or forms[draw_int(len(forms))]
    names = tuple(c[draw_int(len(c))] for c in _slot_choices(form, BASE_TABLE))
    return _build(form, names)


graphs = st.builds(
    lambda seed: random_graph(np.random.default_rng(seed).integers),
    st.integers(0, 2**32 - 1),
)


class TestOperatorTable:
    def test_cardinalities(self):
        assert len(BASE_TABLE.unary) == 27
        assert len(BASE_TABLE.binary) == 7
        assert len(BASE_TABLE.nary) == 4
        assert set(BASE_TABLE.nary_names) == {"sum", "product", "max", "min"}

    def test_total_over_extended_reals(self):
        x = np.array([-np.inf, -1e308, -1.0, -0.0, 0.0, 1.0, 1e308, np.inf, np.nan])
        with np.errstate(all="raise"):
            for op in BASE_TABLE.unary:
                assert evaluate(unary(op.name), x).shape == x.shape
            for op in BASE_TABLE.binary:
                assert evaluate(binary(op.name, unary("identity"), unary("neg")), x).shape == x.shape

    @pytest.mark.parametrize("name, fn", [("bessel_i0e", mpmath.besseli), ("bessel_i1e", mpmath.besseli)])
    def test_scaled_bessel_against_mpmath(self, name, fn):
        order = 0 if name.endswith("0e") else 1
        xs = np.array([-7.5, -2.0, -0.3, 0.0, 0.4, 1.0, 3.3, 12.0, 40.0])
        got = evaluate(unary(name), xs)
        want = [float(fn(order, x) * mpmath.exp(-abs(x))) for x in xs]
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-15)


class TestParse:
    def test_relu(self):
        g = parse(RELU)
        assert render(g) == RELU
        np.testing.assert_array_equal(evaluate(g, [-1.0, 0.0, 2.5]), [0.0, 0.0, 2.5])

    def test_swish(self):
        g = parse(SWISH)
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(evaluate(g, x), x / (1 + np.exp(-x)), rtol=1e-14)

    @pytest.mark.parametrize("text", [
        "binary_max(x)",
        "unary_relu(x,x)",
        "nary_sum(x,x)",
        "unary_nosuch(x)",
        "unary_relu(x",
        "unary_relu(x))",
        "y",
        "",
    ])
    def test_rejects(self, text):
        with pytest.raises(ParseError):
            parse(text)

    @given(graphs)
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, g):
        assert parse(render(g)) == g
        assert g.node_count in (3, 4)
        assert g.form is not None


class TestEvaluate:
    def test_relu_negative_branch(self):
        assert evaluate(parse(RELU), [-1.0])[0] == 0.0

    def test_swish_at_zero(self):
        assert evaluate(parse(SWISH), [0.0])[0] == 0.0

    def test_reciprocal_singularity(self):
        assert not np.isfinite(evaluate(unary("reciprocal"), [0.0])[0])

    def test_deterministic(self, rng):
        x = rng.normal(size=100)
        g = parse("binary_pow(unary_softplus(x),unary_tanh(x))")
        assert evaluate(g, x).tobytes() == evaluate(g, x).tobytes()


class TestEvaluateDual:
    def test_relu_positive_slope(self):
        v, d = evaluate_dual(parse(RELU), [2.0])
        assert (v[0], d[0]) == (2.0, 1.0)

    def test_tanh_at_zero(self):
        v, d = evaluate_dual(unary("tanh"), [0.0])
        assert (v[0], d[0]) == (0.0, 1.0)

    def test_swish_finite_difference(self):
        g = parse(SWISH)
        h = 1e-5
        fd = (evaluate(g, [1.0 + h])[0] - evaluate(g, [1.0 - h])[0]) / (2 * h)
        assert abs(evaluate_dual(g, [1.0])[1][0] - fd) < 1e-6

    def test_kink_takes_first_argument(self):
        # max(x, 0) at 0: derivative of the first argument achieving the max
        _, d = evaluate_dual(parse(RELU), [0.0])
        assert d[0] == 1.0
        _, d = evaluate_dual(parse("binary_max(unary_zero(x),unary_identity(x))"), [0.0])
        assert d[0] == 0.0

    def test_constant_branch_contributes_zero(self):
        # zero * (1/x) has derivative 0 at 0 rather than nan
        _, d = evaluate_dual(parse("binary_add(unary_zero(x),unary_identity(x))"), [0.0])
        assert d[0] == 1.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_random_graphs_against_central_differences(self):
        rng = np.random.default_rng(7)
        x = probe_inputs()[:200]
        h = 1e-6
        checked = 0
        while checked < 100:
            g = random_graph(rng.integers)
            v, d = evaluate_dual(g, x)
            vp, vm = evaluate(g, x + h), evaluate(g, x - h)
            fd = (vp - vm) / (2 * h)
            # second difference flags kinks and discontinuities within the stencil
            curv = np.abs(vp - 2 * v + vm) / h**2
            wide = (evaluate(g, x + 1e-3) - evaluate(g, x - 1e-3)) / 2e-3
            ok = (
                np.isfinite(v) & np.isfinite(d) & np.isfinite(fd) & np.isfinite(wide)
                & (np.abs(v) < 1e6) & (np.abs(d) < 1e6)
                & (np.abs(wide - d) <= 1e-2 * (1 + np.abs(d)))
                & (curv < 1e4)
            )
            if ok.sum() < 50:
                continue
            np.testing.assert_allclose(d[ok], fd[ok], rtol=1e-5, atol=1e-5, err_msg=g.canonical)
            checked += 1


class TestEnumerate:
    def test_three_node_count(self):
        assert sum(1 for _ in enumerate_space("three-node")) == 5103 == space_size("three-node")

    def test_four_node_closed_form(self):
        assert space_size("four-node") == 3 * 7 * 27**3 + 4 * 27**3 + 27**4 == 1_023_516

    def test_nary_subform(self):
        n = 1
        for c in _slot_choices("nary", BASE_TABLE):
            n *= len(c)
        assert n == 4 * 27**3 == 78_732

    def test_unknown_space(self):
        with pytest.raises(UnknownSpaceError):
            list(enumerate_space("five-node"))

    def test_order_is_deterministic(self):
        a = [g.canonical for g in enumerate_space("three-node")]
        assert a == [g.canonical for g in enumerate_space("three-node")]
        assert len(set(a)) == len(a)
        assert a[0] == "binary_add(unary_zero(x),unary_zero(x))"


class TestFingerprint:
    def test_probes(self):
        p = probe_inputs()
        assert p.shape == (1000,)
        assert p.min() >= -5 and p.max() <= 5
        assert p.tobytes() == probe_inputs().tobytes()

    def test_max_argument_order(self):
        a = fingerprint(parse(RELU))
        b = fingerprint(parse("binary_max(unary_zero(x),unary_identity(x))"))
        assert a == b

    def test_negation_differs(self):
        elu = unary("elu")
        assert fingerprint(elu) != fingerprint(negate(elu))

    def test_zero_graph(self):
        fp = fingerprint(parse("binary_mul(unary_zero(x),unary_exp(x))"))
        assert np.all(fp.values == 0.0)

    def test_digest_is_64_bit_little_endian(self):
        v = np.arange(4, dtype=np.float64)
        assert len(digest(v)) == 16
        assert digest(v) == digest(v.astype(">f8"))

    def test_bulk_path_matches_tree_evaluation_three_node(self):
        names = list(enumerate_space("three-node"))
        for i, h in bulk_fingerprints("three-node"):
            assert h == fingerprint(names[i]).hash, names[i].canonical

    @pytest.mark.slow
    def test_bulk_path_matches_tree_evaluation_four_node(self):
        picks = set(np.random.default_rng(3).choice(space_size("four-node"), 300, replace=False).tolist())
        for (i, h), g in zip(bulk_fingerprints("four-node"), enumerate_space("four-node")):
            if i in picks:
                assert h == fingerprint(g).hash, g.canonical


class TestDedup:
    def test_two_relu_encodings(self):
        gs = [parse(RELU), parse("binary_max(unary_zero(x),unary_identity(x))")]
        out = dedup(gs)
        assert list(out.values()) == [gs[0]]

    def test_first_representative_kept(self):
        gs = [unary("relu"), parse(RELU), unary("elu")]
        assert list(dedup(gs).values()) == [gs[0], gs[2]]

    def test_idempotent(self):
        gs = list(enumerate_space("three-node"))[:800]
        once = list(dedup(gs).values())
        assert list(dedup(once).values()) == once

    def test_nary_forms_collapse(self):
        a = nary("sum", unary("identity"), unary("zero"), unary("zero"))
        b = nary("sum", unary("zero"), unary("identity"), unary("zero"))
        assert len(dedup([a, b])) == 1
