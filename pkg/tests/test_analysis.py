import numpy as np
import pytest

from dauconv import analysis, engine

from test_engine import tiny_dataset, tiny_spec


def toy_model(ws, dists):
    """One-feature, one-channel model whose units have |w| = ws placed at
    the requested center distances along +x."""
    k = len(ws)
    spec = engine.NetworkSpec(
        (3, 8, 8), 2,
        [engine.LayerSpec("dau", 1, units=k, pool=True), engine.LayerSpec("fc", 2)],
    )
    # one input channel variant is not possible with rgb input; use channel 0 only
    model = engine.build_network(spec, seed=0)
    layer = model.stack[0]
    layer.p.w[...] = 0.0
    layer.p.mu[...] = 0.0
    for i, (w, d) in enumerate(zip(ws, dists)):
        layer.p.w[0, 0, i] = w
        layer.p.mu[0, 0, i] = [d, 0.0]
    # park every other (feature, channel) unit at zero weight
    layer.p.active[:] = False
    layer.p.active[0, 0, : len(ws)] = True
    return model, layer


class TestDistanceHistogram:
    def test_all_centered_single_bin(self):
        model = engine.build_network(tiny_spec(units=4), seed=1)
        layer = model.stack[0]
        layer.p.mu[...] = 0.0
        stats = analysis.distance_histogram(model, 0, retained_fraction=1.0)
        assert stats.masses[0] == pytest.approx(np.abs(layer.p.w).sum(), rel=1e-6)
        assert stats.masses[1:].sum() == 0.0

    def test_full_fraction_mass_is_total(self):
        model = engine.build_network(tiny_spec(units=3), seed=2)
        stats = analysis.distance_histogram(model, 0, retained_fraction=1.0)
        expected = np.abs(model.stack[0].p.w).sum()
        assert stats.total_mass == pytest.approx(expected, rel=1e-6)

    def test_toy_topk_and_binning(self):
        model, _ = toy_model(ws=[3.0, 2.0, 1.0], dists=[0.0, 2.5, 4.0])
        stats = analysis.distance_histogram(model, 0, retained_fraction=2 / 3, bin_width=0.25)
        # keeps |w| = 3 (d = 0) and |w| = 2 (d = 2.5)
        assert stats.total_mass == pytest.approx(5.0)
        assert stats.masses[0] == pytest.approx(3.0)
        bin_25 = int(2.5 / 0.25)
        assert stats.masses[bin_25] == pytest.approx(2.0)

    def test_every_distance_lands_in_a_bin(self):
        model = engine.build_network(tiny_spec(units=4), seed=3)
        layer = model.stack[0]
        rng = np.random.default_rng(0)
        layer.p.mu[...] = rng.uniform(-4, 4, layer.p.mu.shape)  # corners reach 4*sqrt(2)
        stats = analysis.distance_histogram(model, 0)
        assert stats.total_mass == pytest.approx(np.abs(layer.p.w).sum(), rel=1e-6)

    def test_rejects_non_dau_layer(self):
        model = engine.build_network(tiny_spec(), seed=0)
        with pytest.raises(ValueError, match="not a displaced-unit layer"):
            analysis.distance_histogram(model, 1)
        with pytest.raises(ValueError):
            analysis.distance_histogram(model, 0, retained_fraction=0.0)


class TestScatterExport:
    def test_fresh_model_points_on_grid(self):
        model = engine.build_network(tiny_spec(units=4), seed=4)
        records, init_points = analysis.scatter_export(model, 0, retained_fraction=1.0)
        grid = {(-1.25, -1.25), (1.25, -1.25), (-1.25, 1.25), (1.25, 1.25)}
        assert {(float(x), float(y)) for x, y in records[:, :2]} == grid
        assert {(float(x), float(y)) for x, y in init_points} == grid

    def test_row_count_full_fraction(self):
        model = engine.build_network(tiny_spec(units=2), seed=5)
        p = model.stack[0].p
        records, _ = analysis.scatter_export(model, 0, retained_fraction=1.0)
        assert len(records) == p.w.size

    def test_toy_topk_rows(self):
        model, _ = toy_model(ws=[3.0, 2.0, 1.0], dists=[0.0, 2.5, 4.0])
        records, _ = analysis.scatter_export(model, 0, retained_fraction=2 / 3)
        assert len(records) == 2
        assert set(records[:, 2]) == {3.0, 2.0}


class TestPrune:
    def test_tau_zero_removes_nothing_and_preserves_outputs(self):
        model = engine.build_network(tiny_spec(), seed=6)
        pruned, report = analysis.prune_by_relative_threshold(model, 0.0)
        assert report["total_removed"] == 0
        assert report["removed_pct_of_network"] == 0.0
        x = tiny_dataset(8).images
        np.testing.assert_array_equal(model.forward(x), pruned.forward(x))

    def test_toy_ratio_threshold(self):
        model, layer = toy_model(ws=[1.0, 0.05, 0.004], dists=[0.0, 1.0, 2.0])
        pruned, report = analysis.prune_by_relative_threshold(model, 0.01)
        p = pruned.stack[0].p
        assert p.active[0, 0, 0] and p.active[0, 0, 1]
        assert not p.active[0, 0, 2]
        assert p.w[0, 0, 2] == 0.0
        assert report["total_removed"] == 1

    def test_only_argmax_survives_large_tau(self):
        model = engine.build_network(tiny_spec(units=4), seed=7)
        pruned, _ = analysis.prune_by_relative_threshold(model, 0.999999)
        for idx in analysis.dau_layer_indices(pruned):
            p = pruned.stack[idx].p
            assert p.active.sum() == 1

    def test_monotone_removed_sets(self):
        model = engine.build_network(tiny_spec(units=4), seed=8)
        removed = []
        for tau in analysis.PRUNE_TAUS:
            pruned, _ = analysis.prune_by_relative_threshold(model, tau)
            masks = [~pruned.stack[i].p.active for i in analysis.dau_layer_indices(pruned)]
            removed.append(np.concatenate([m.reshape(-1) for m in masks]))
        for a, b in zip(removed[:-1], removed[1:]):
            assert (b | a == b).all()  # removed(tau1) subset of removed(tau2)

    def test_original_model_untouched(self):
        model = engine.build_network(tiny_spec(), seed=9)
        before = model.stack[0].p.w.copy()
        analysis.prune_by_relative_threshold(model, 0.5)
        np.testing.assert_array_equal(model.stack[0].p.w, before)
        assert model.stack[0].p.active.all()

    def test_rejects_negative_tau(self):
        model = engine.build_network(tiny_spec(), seed=0)
        with pytest.raises(ValueError):
            analysis.prune_by_relative_threshold(model, -0.1)


class TestParameterReport:
    def test_per_filter_counts_match_unit_table(self):
        # displaced-unit filters: 3 params per unit; dense: one per pixel
        for k, expected in ((6, 18), (4, 12), (2, 6), (1, 3)):
            model = engine.build_network(tiny_spec(units=k), seed=0)
            report = analysis.parameter_report(model)
            dau_rows = [r for r in report["layers"] if r["kind"] == "dau"]
            assert all(r["per_filter_params"] == expected for r in dau_rows)

    def test_dense_conv_per_filter(self):
        spec = engine.NetworkSpec(
            (3, 8, 8), 2,
            [engine.LayerSpec("conv", 4, ksize=5, pool=True), engine.LayerSpec("conv", 4, ksize=3),
             engine.LayerSpec("fc", 2)],
        )
        model = engine.build_network(spec, seed=0)
        report = analysis.parameter_report(model)
        conv_rows = [r for r in report["layers"] if r["kind"] == "conv"]
        assert conv_rows[0]["per_filter_params"] == 25
        assert conv_rows[1]["per_filter_params"] == 9

    def test_total_matches_closed_form(self):
        model = engine.build_network(tiny_spec(units=4), seed=1)
        report = analysis.parameter_report(model)
        assert report["dau_params"] == analysis.dau_closed_form_params(model)

    def test_pruning_lowers_the_count(self):
        model = engine.build_network(tiny_spec(units=4), seed=2)
        pruned, rep = analysis.prune_by_relative_threshold(model, 0.5)
        before = analysis.parameter_report(model)["dau_params"]
        after = analysis.parameter_report(pruned)["dau_params"]
        assert after == before - 3 * rep["total_removed"]


class TestCsvFormats:
    def test_histogram_csv(self):
        model, _ = toy_model(ws=[3.0, 2.0], dists=[0.0, 2.5])
        stats = analysis.distance_histogram(model, 0)
        text = analysis.histogram_csv(stats)
        lines = text.strip().split("\n")
        assert lines[0] == "bin_left,bin_right,mass"
        assert len(lines) == 1 + len(stats.masses)

    def test_scatter_csv(self):
        model, _ = toy_model(ws=[3.0], dists=[1.5])
        records, init_points = analysis.scatter_export(model, 0)
        text = analysis.scatter_csv(records, init_points)
        lines = text.strip().split("\n")
        assert lines[0] == "kind,mu_x,mu_y,abs_w"
        assert sum(l.startswith("unit,") for l in lines) == len(records)
        assert sum(l.startswith("init,") for l in lines) == len(init_points)
