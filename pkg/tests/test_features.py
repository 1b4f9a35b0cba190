import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from actsearch.afdsl import evaluate, negate, parse, probe_inputs, unary
from actsearch.features import (
    OUTPUT_CLIP,
    GridMismatchError,
    InvalidSpectrumError,
    clean_outputs,
    dist_outputs,
    dist_spectra,
    output_feature,
    read_outputs,
    spectral_cdf,
    spectral_matrix,
    write_outputs,
)
from actsearch.kfac import LayerSpectrum, SpectrumFeature, kfac_factors, spectrum
from actsearch.tensornet import backward_sampled, forward, init_weights, load_task, negated_network


def sf_from_counts(counts_per_layer, ws, valid=True):
    layers = [LayerSpectrum(w, len(c), np.asarray(c, dtype=np.int64)) for c, w in zip(counts_per_layer, ws)]
    return SpectrumFeature("f", layers, valid)


def transport_oracle(p, q, bins):
    """1-D optimal transport between histograms placed on bin centres."""
    width = 200.0 / bins
    centres = -100.0 + width * (np.arange(bins) + 0.5)
    return wasserstein_distance(centres, centres, p, q)


def random_counts(rng, bins):
    c = rng.integers(0, 20, size=bins)
    c[rng.integers(bins)] += 1
    return c


class TestOutputs:
    def test_identity(self):
        f = output_feature("unary_elu(x)")
        assert dist_outputs(f, f) == 0.0

    def test_constant_offset(self):
        assert dist_outputs(np.zeros(1000), np.ones(1000)) == 1.0

    def test_relu_vs_identity_direct_sum(self):
        x = probe_inputs()
        got = dist_outputs(output_feature("unary_relu(x)"), output_feature("unary_identity(x)"))
        want = np.sqrt(sum(min(v, 0.0) ** 2 for v in x) / len(x))
        assert abs(got - want) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dist_outputs(np.zeros(3), np.zeros(4))

    def test_non_finite_cleaned(self):
        v = clean_outputs(np.array([np.nan, np.inf, -np.inf, 1e300, 2.0]))
        np.testing.assert_array_equal(v, [0.0, OUTPUT_CLIP, -OUTPUT_CLIP, OUTPUT_CLIP, 2.0])

    def test_persistence(self, tmp_path):
        feats = [output_feature("unary_reciprocal(x)", np.array([0.0, 2.0])), output_feature("unary_relu(x)",
                                                                                             np.array([-1.0, 3.0]))]
        write_outputs(tmp_path / "o.jsonl", feats, 42)
        header, back = read_outputs(tmp_path / "o.jsonl")
        assert header == {"probe_seed": 42, "n_probes": 2}
        assert back[0].values[0] == np.inf and back[0].values[1] == 0.5
        np.testing.assert_array_equal(back[1].values, [0.0, 3.0])


class TestSpectralCdf:
    def test_delta(self):
        f = spectral_cdf(sf_from_counts([[7, 0, 0, 0]], [100]))
        np.testing.assert_allclose(f.values, np.ones(4) * 50 / 100)

    def test_uniform(self):
        f = spectral_cdf(sf_from_counts([[3, 3, 3, 3]], [100]))
        np.testing.assert_allclose(f.values / f.values[-1], [0.25, 0.5, 0.75, 1.0])

    @pytest.mark.parametrize("i, j", [(0, 1), (0, 3), (2, 1)])
    def test_point_masses(self, i, j):
        a = np.zeros(4, np.int64)
        b = np.zeros(4, np.int64)
        a[i], b[j] = 5, 2
        d = dist_spectra(spectral_cdf(sf_from_counts([a], [100])), spectral_cdf(sf_from_counts([b], [100])))
        assert d == pytest.approx(abs(i - j) * 50 / 100, abs=1e-15)

    def test_rejects_invalid(self):
        with pytest.raises(InvalidSpectrumError):
            spectral_cdf(sf_from_counts([[1, 0]], [200], valid=False))

    def test_grid_mismatch(self):
        a = spectral_cdf(sf_from_counts([[1, 0]], [200]))
        b = spectral_cdf(sf_from_counts([[1, 0, 0]], [300]))
        with pytest.raises(GridMismatchError):
            dist_spectra(a, b)
        with pytest.raises(GridMismatchError):
            spectral_matrix([a, b])

    def test_against_transport_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            bins = [int(rng.integers(1, 30)) for _ in range(3)]
            ws = [int(rng.integers(50, 5000)) for _ in range(3)]
            ca = [random_counts(rng, b) for b in bins]
            cb = [random_counts(rng, b) for b in bins]
            got = dist_spectra(spectral_cdf(sf_from_counts(ca, ws)), spectral_cdf(sf_from_counts(cb, ws)))
            want = sum(transport_oracle(a, b, n) / w for a, b, n, w in zip(ca, cb, bins, ws))
            assert abs(got - want) < 1e-10


hist_triples = st.tuples(st.integers(1, 12), st.integers(0, 2**32 - 1))


class TestMetricAxioms:
    @given(hist_triples)
    @settings(max_examples=300, deadline=None)
    def test_spectra(self, args):
        bins, seed = args
        rng = np.random.default_rng(seed)
        x, y, z = (spectral_cdf(sf_from_counts([random_counts(rng, bins), random_counts(rng, 3)], [400, 300]))
                   for _ in range(3))
        assert dist_spectra(x, x) == 0.0
        assert dist_spectra(x, y) >= 0.0
        assert dist_spectra(x, y) == dist_spectra(y, x)
        assert dist_spectra(x, z) <= dist_spectra(x, y) + dist_spectra(y, z) + 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=300, deadline=None)
    def test_outputs(self, seed):
        rng = np.random.default_rng(seed)
        x, y, z = (rng.normal(scale=rng.uniform(0.1, 10), size=50) for _ in range(3))
        assert dist_outputs(x, x) == 0.0
        assert dist_outputs(x, y) >= 0.0
        assert dist_outputs(x, y) == dist_outputs(y, x)
        assert dist_outputs(x, z) <= dist_outputs(x, y) + dist_outputs(y, z) + 1e-12


class TestComplementarity:
    @pytest.mark.parametrize("act", ["unary_tanh(x)", "unary_arcsinh(x)", "unary_softsign(x)"])
    def test_negation_far_in_outputs_close_in_spectra(self, act):
        g = parse(act)
        phi = evaluate(g, probe_inputs())
        d_out = dist_outputs(phi, evaluate(negate(g), probe_inputs()))
        assert d_out >= 2 * np.sqrt(np.mean(phi**2)) - 1e-12

        data, spec = load_task("blobs")
        x = data.x_train[:128]
        net = init_weights(spec.with_activation(g), 0)
        neg = negated_network(net)
        a = spectral_cdf(spectrum(kfac_factors(backward_sampled(net, forward(net, x)), spec), divisor=4))
        b = spectral_cdf(spectrum(kfac_factors(backward_sampled(neg, forward(neg, x)), spec), divisor=4))
        assert dist_spectra(a, b) < 1e-12
        assert d_out > 0.5

    def test_output_feature_accepts_graph(self):
        np.testing.assert_array_equal(output_feature(unary("relu")).values,
                                      np.maximum(probe_inputs(), 0.0))
