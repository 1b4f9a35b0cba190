import gzip
import json
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsearch.afdsl import BASELINES, fingerprint, parse, probe_inputs
from actsearch.bench import (
    BenchmarkError,
    BenchmarkRow,
    BenchmarkTable,
    build_benchmark,
    cross_task_scatter,
    desk_space,
    evaluate_function,
    median_of_runs,
    replay,
    replay_space,
)
from actsearch.search import MissingRowError, SearchConfig
from actsearch.tensornet import TrainConfig

QUICK = TrainConfig(epochs=3)


def toy_table(accs, header=None, valid=None):
    t = BenchmarkTable(header or {"task": "blobs", "num_classes": 4, "baselines": {}})
    for i, a in enumerate(accs):
        ok = True if valid is None else valid[i]
        t.rows[f"f{i:03d}"] = BenchmarkRow(f"f{i:03d}", float(a), ok)
    return t


class TestTable:
    @pytest.mark.parametrize("name", ["t.jsonl", "t.jsonl.gz"])
    def test_round_trip(self, tmp_path, name):
        t = toy_table([0.25, 0.9, 0.5], valid=[True, False, True])
        t.rows["f001"].runs = [0.8, 0.9, 0.95]
        t.write(tmp_path / name)
        back = BenchmarkTable.read(tmp_path / name)
        assert back.header == t.header
        assert back.rows == t.rows
        assert back.chance == 0.25

    def test_gzip_is_compressed(self, tmp_path):
        toy_table([0.5]).write(tmp_path / "t.jsonl.gz")
        with gzip.open(tmp_path / "t.jsonl.gz", "rt") as fh:
            assert "header" in json.loads(fh.readline())

    def test_truncated_tail_skipped(self, tmp_path):
        path = tmp_path / "t.jsonl"
        toy_table([0.3, 0.6]).write(path)
        with open(path, "a") as fh:
            fh.write('{"canonical": "f009", "accur')
        assert len(BenchmarkTable.read(path)) == 2

    def test_malformed_middle_line(self, tmp_path):
        path = tmp_path / "t.jsonl"
        toy_table([0.3]).write(path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join([lines[0], "{oops", lines[1]]) + "\n")
        with pytest.raises(BenchmarkError):
            BenchmarkTable.read(path)

    def test_rejects_out_of_range_accuracy(self, tmp_path):
        with pytest.raises(BenchmarkError):
            BenchmarkRow.from_json({"canonical": "a", "accuracy": 1.5})

    def test_missing_header(self, tmp_path):
        (tmp_path / "t.jsonl").write_text('{"canonical": "a", "accuracy": 0.5}\n')
        with pytest.raises(BenchmarkError):
            BenchmarkTable.read(tmp_path / "t.jsonl")

    def test_missing_row(self):
        with pytest.raises(MissingRowError):
            toy_table([0.5]).accuracy("nope")

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=9).filter(lambda v: len(v) % 2 == 1))
    @settings(max_examples=100, deadline=None)
    def test_median_is_middle_run(self, runs):
        assert median_of_runs(runs) == sorted(runs)[len(runs) // 2]


class TestDeskSpace:
    def test_baselines_first_and_size(self):
        names, base = desk_space(50, seed=1)
        assert len(names) == len(set(names)) == 50
        assert set(base) == set(BASELINES)
        assert names[:len(set(base.values()))] == list(dict.fromkeys(base.values()))

    def test_baseline_representatives_match_outputs(self):
        _, base = desk_space(20)
        probes = probe_inputs()
        for name, canonical in base.items():
            assert fingerprint(parse(canonical), probes).hash == fingerprint(BASELINES[name], probes).hash

    def test_seeded(self):
        assert desk_space(40, seed=3) == desk_space(40, seed=3)
        assert desk_space(40, seed=3)[0] != desk_space(40, seed=4)[0]


class TestBuild:
    def test_relu_beats_zero(self):
        relu, sf = evaluate_function("unary_relu(x)", "blobs", runs_per_fn=1, train_cfg=QUICK)
        zero, _ = evaluate_function("unary_zero(x)", "blobs", runs_per_fn=1, train_cfg=QUICK)
        assert relu.accuracy > 0.5 and relu.valid_spectrum and sf.valid
        assert zero.accuracy == 0.25
        assert zero.degenerate

    def test_resumable_and_idempotent(self, tmp_path):
        path = tmp_path / "b.jsonl"
        names = ["unary_relu(x)", "unary_tanh(x)", "unary_zero(x)"]
        full = build_benchmark(names, runs_per_fn=1, path=path, train_cfg=QUICK)
        lines = path.read_text().splitlines()
        # simulate an interruption after the first row, mid-way through the second
        path.write_text("\n".join(lines[:2] + [lines[2][:15]]) + "\n")
        calls = []
        resumed = build_benchmark(names, runs_per_fn=1, path=path, train_cfg=QUICK,
                                  progress=lambda i, n: calls.append(n))
        assert calls and calls[-1] == 2
        assert resumed.rows == full.rows
        assert BenchmarkTable.read(path).rows == full.rows

    def test_config_mismatch(self, tmp_path):
        path = tmp_path / "b.jsonl"
        build_benchmark(["unary_relu(x)"], runs_per_fn=1, path=path, train_cfg=QUICK)
        with pytest.raises(BenchmarkError):
            build_benchmark(["unary_relu(x)"], runs_per_fn=3, path=path, train_cfg=QUICK)

    def test_bad_runs(self):
        with pytest.raises(BenchmarkError):
            build_benchmark(["unary_relu(x)"], runs_per_fn=0)


class TestReplay:
    def test_exhaustive_random_finds_max(self):
        t = toy_table(np.random.default_rng(0).uniform(size=30))
        cfg = SearchConfig(budget=30, trials=1)
        curve, traces = replay("random", t, cfg)
        assert curve.mean[-1] == t.accuracies().max()

    def test_table_not_mutated(self):
        t = toy_table(np.linspace(0.2, 0.9, 25))
        before = json.dumps([r.to_json() for r in t.rows.values()])
        replay("random", t, SearchConfig(budget=10, trials=3))
        assert json.dumps([r.to_json() for r in t.rows.values()]) == before

    def test_trial_seeds(self):
        t = toy_table(np.linspace(0.2, 0.9, 25))
        _, a = replay("random", t, SearchConfig(budget=10, trials=3, seed=5))
        _, b = replay("random", t, SearchConfig(budget=10, trials=1, seed=7))
        assert a[2].canonicals() == b[0].canonicals()

    def test_unknown_algorithm_and_missing_spectra(self):
        t = toy_table([0.5] * 10)
        with pytest.raises(BenchmarkError):
            replay_space(t, "annealing")
        with pytest.raises(BenchmarkError):
            replay_space(t, "knr-spectra")


class TestScatter:
    def test_identical_tables_on_diagonal(self):
        t = toy_table([0.2, 0.5, 0.7])
        sc = cross_task_scatter(t, t)
        assert all(a == b for _, a, b in sc.records)
        assert sc.pearson == pytest.approx(1.0)

    def test_pearson(self, tmp_path):
        a = toy_table([0.2, 0.5, 0.7, 0.4])
        b = toy_table([0.3, 0.1, 0.9])
        sc = cross_task_scatter(a, b)
        assert sc.pearson == pytest.approx(np.corrcoef([0.2, 0.5, 0.7], [0.3, 0.1, 0.9])[0, 1])
        sc.write_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "canonical,acc1,acc2"

    def test_disjoint(self):
        a = toy_table([0.2])
        b = BenchmarkTable({}, {"g": BenchmarkRow("g", 0.1, True)})
        with pytest.raises(BenchmarkError):
            cross_task_scatter(a, b)


@pytest.mark.slow
class TestDeskTable:
    def test_relu_above_chance(self, desk_table):
        relu = desk_table.header["baselines"]["relu"]
        assert desk_table.accuracy(relu) > desk_table.chance + 0.3

    def test_size_and_bounds(self, desk_table):
        assert len(desk_table) == 200
        acc = desk_table.accuracies()
        assert acc.min() >= 0 and acc.max() <= 1

    def test_bimodal_with_chance_spike(self, desk_table):
        acc = desk_table.accuracies()
        hist, _ = np.histogram(acc, bins=10, range=(0, 1))
        at_chance = np.mean(np.abs(acc - desk_table.chance) <= 0.02)
        assert at_chance > 0.05
        # a trough separates the chance spike from the successful mass
        spike = int(desk_table.chance * 10)
        top = int(np.argmax(hist[spike + 2:])) + spike + 2
        assert hist[spike + 1:top].min() < min(hist[spike], hist[top])

    def test_median_recorded(self, desk_table):
        for row in list(desk_table.rows.values())[:20]:
            assert row.accuracy == statistics.median(row.runs)

    def test_all_feature_configurations_replayable(self, desk_table, desk_spectra, desk_outputs):
        from actsearch.embed import LayoutConfig
        cfg = SearchConfig(budget=20, trials=2)
        for alg in ("knr-spectra", "knr-outputs", "knr-both"):
            space = replay_space(desk_table, alg, desk_spectra, LayoutConfig(epochs=50), desk_outputs)
            curve, _ = replay(alg, desk_table, cfg, space)
            assert curve.algorithm == alg and len(curve.mean) == 20
