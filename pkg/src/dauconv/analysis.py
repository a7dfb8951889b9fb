"""Post-training analyses of displaced-unit layers.

Three views of a trained model: distance-to-center histograms of unit
displacements (mass-weighted by |w|, optionally keeping only the
strongest amplifications), raw 2-D displacement scatters with the
initialization grid for overlay, and unit pruning by a relative
amplification threshold with full parameter accounting.

Pruning never mutates the input model: it returns a pruned clone, so the
original stays available for comparison and re-threshold experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Model

DEFAULT_BIN_WIDTH = 0.25
DEFAULT_FRACTIONS = (1.0, 0.9, 0.75)
PRUNE_TAUS = (0.0, 0.01, 0.02, 0.05, 0.10, 0.25)


@dataclass
class DisplacementStats:
    layer_index: int
    retained_fraction: float
    bin_edges: np.ndarray  # (B + 1,) pixels, distance to filter center
    masses: np.ndarray  # (B,) sum of |w| per bin
    records: np.ndarray  # (n, 6): feature, channel, unit, mu_x, mu_y, |w|

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


def dau_layer_indices(model: Model) -> list[int]:
    return [i for i, layer in enumerate(model.stack) if layer.kind == "dau"]


def _dau_layer(model: Model, layer_index: int):
    if not (0 <= layer_index < len(model.stack)):
        raise ValueError(f"layer index {layer_index} out of range (stack has {len(model.stack)})")
    layer = model.stack[layer_index]
    if layer.kind != "dau":
        raise ValueError(
            f"layer {layer_index} is {layer.kind!r}, not a displaced-unit layer "
            f"(valid: {dau_layer_indices(model)})"
        )
    return layer


def _retained_records(p, retained_fraction: float) -> np.ndarray:
    """(n, 6) rows for the ceil(fraction * total) active units with the
    largest |w|; ties resolve to the lowest (feature, channel, unit) index."""
    if not (0 < retained_fraction <= 1):
        raise ValueError("retained_fraction must be in (0, 1]")
    f, s, k = p.w.shape
    fi, si, ki = np.unravel_index(np.arange(f * s * k), (f, s, k))
    rows = np.column_stack([
        fi, si, ki,
        p.mu[..., 0].reshape(-1), p.mu[..., 1].reshape(-1),
        np.abs(p.w).reshape(-1),
    ])
    rows = rows[p.active.reshape(-1)]
    order = np.argsort(-rows[:, 5], kind="stable")  # stable: ties keep low index
    # epsilon guards ceil against float fuzz (2/3 of 3 must keep 2, not 3)
    keep = math.ceil(retained_fraction * len(rows) - 1e-9)
    return rows[order[:keep]]


def distance_histogram(model: Model, layer_index: int, retained_fraction: float = 1.0,
                       bin_width: float = DEFAULT_BIN_WIDTH) -> DisplacementStats:
    """|w|-weighted histogram of unit distances to the filter center."""
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    layer = _dau_layer(model, layer_index)
    rows = _retained_records(layer.p, retained_fraction)
    dist = np.hypot(rows[:, 3], rows[:, 4])
    # cover the full reachable range: corner displacements exceed rd + 1
    top = max(layer.p.max_displacement + 1.0, math.sqrt(2.0) * layer.p.max_displacement)
    nbins = max(1, math.ceil(top / bin_width))
    edges = np.arange(nbins + 1, dtype=np.float64) * bin_width
    masses, _ = np.histogram(dist, bins=edges, weights=rows[:, 5])
    return DisplacementStats(layer_index, retained_fraction, edges, masses, rows)


def scatter_export(model: Model, layer_index: int, retained_fraction: float = 1.0):
    """(records, init_points): per-unit (mu_x, mu_y, |w|) rows for retained
    units plus the layer's K initialization grid points for overlay."""
    layer = _dau_layer(model, layer_index)
    rows = _retained_records(layer.p, retained_fraction)
    return rows[:, 3:6].copy(), layer.p.init_points.copy()


def prune_by_relative_threshold(model: Model, tau: float):
    """Zero and deactivate every unit with |w| < tau * max|w| of its layer.

    Returns (pruned clone, report). The report carries per-layer and
    whole-network removal counts; percentages are reported both ways
    since either denominator is defensible.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    pruned = model.clone()
    per_layer = []
    total_units = 0
    total_removed = 0
    for idx in dau_layer_indices(pruned):
        p = pruned.stack[idx].p
        absw = np.abs(p.w)
        active_before = int(p.active.sum())
        max_w = float(absw[p.active].max()) if active_before else 0.0
        remove = p.active & (absw < tau * max_w)
        p.w[remove] = 0.0
        p.active[remove] = False
        removed = int(remove.sum())
        units = p.w.size
        per_layer.append({
            "layer": idx,
            "units": units,
            "active_before": active_before,
            "removed": removed,
            "active_after": active_before - removed,
            "removed_pct_of_layer": 100.0 * removed / units,
        })
        total_units += units
        total_removed += removed
    report = {
        "tau": tau,
        "layers": per_layer,
        "total_units": total_units,
        "total_removed": total_removed,
        "removed_pct_of_network": 100.0 * total_removed / total_units if total_units else 0.0,
    }
    return pruned, report


def parameter_report(model: Model) -> dict:
    """Per-layer unit and parameter accounting.

    A displaced unit carries three parameters (w, mu_x, mu_y); a dense
    conv pixel carries one. Per-filter counts describe one
    (feature, channel) kernel.
    """
    rows = []
    for i, layer in enumerate(model.stack):
        if layer.kind == "dau":
            p = layer.p
            rows.append({
                "layer": i, "kind": "dau",
                "features": p.out_features, "channels": p.in_channels,
                "per_filter_units": p.units,
                "per_filter_params": 3 * p.units,
                "units": p.w.size, "active_units": int(p.active.sum()),
                "params": 3 * int(p.active.sum()) + p.bias.size,
            })
        elif layer.kind == "conv":
            f, s, kh, kw = layer.p.weights.shape
            rows.append({
                "layer": i, "kind": "conv", "features": f, "channels": s,
                "per_filter_units": kh * kw, "per_filter_params": kh * kw,
                "units": f * s * kh * kw, "active_units": f * s * kh * kw,
                "params": f * s * kh * kw + f,
            })
        elif layer.kind == "fc":
            out_f, in_f = layer.weights.shape
            rows.append({
                "layer": i, "kind": "fc", "features": out_f, "channels": in_f,
                "per_filter_units": None, "per_filter_params": None,
                "units": None, "active_units": None,
                "params": out_f * in_f + out_f,
            })
        elif layer.kind == "batchnorm":
            c = layer.st.scale.size
            rows.append({
                "layer": i, "kind": "batchnorm", "features": c, "channels": c,
                "per_filter_units": None, "per_filter_params": None,
                "units": None, "active_units": None, "params": 2 * c,
            })
    return {
        "layers": rows,
        "total_params": sum(r["params"] for r in rows),
        "dau_params": sum(r["params"] for r in rows if r["kind"] == "dau"),
        "dau_units": sum(r["units"] or 0 for r in rows if r["kind"] == "dau"),
        "dau_active_units": sum(r["active_units"] or 0 for r in rows if r["kind"] == "dau"),
    }


def dau_closed_form_params(model: Model) -> int:
    """Sum over displaced-unit layers of 3*K*F*S + F (all units active)."""
    total = 0
    for idx in dau_layer_indices(model):
        p = model.stack[idx].p
        total += 3 * p.units * p.out_features * p.in_channels + p.out_features
    return total


def histogram_csv(stats: DisplacementStats) -> str:
    lines = ["bin_left,bin_right,mass"]
    for lo, hi, m in zip(stats.bin_edges[:-1], stats.bin_edges[1:], stats.masses):
        lines.append(f"{lo!r},{hi!r},{m!r}")
    return "\n".join(lines) + "\n"


def scatter_csv(records: np.ndarray, init_points: np.ndarray) -> str:
    lines = ["kind,mu_x,mu_y,abs_w"]
    for mx, my, aw in records:
        lines.append(f"unit,{mx!r},{my!r},{aw!r}")
    for mx, my in init_points:
        lines.append(f"init,{float(mx)!r},{float(my)!r},")
    return "\n".join(lines) + "\n"


def prune_report_text(report: dict) -> str:
    lines = [f"relative threshold tau = {report['tau']}",
             f"{'layer':>5} {'units':>8} {'removed':>8} {'active':>8} {'% of layer':>10}"]
    for row in report["layers"]:
        lines.append(f"{row['layer']:>5} {row['units']:>8} {row['removed']:>8} "
                     f"{row['active_after']:>8} {row['removed_pct_of_layer']:>10.2f}")
    lines.append(f"network: removed {report['total_removed']} of {report['total_units']} units "
                 f"({report['removed_pct_of_network']:.2f}%)")
    return "\n".join(lines) + "\n"


def parameter_report_text(report: dict) -> str:
    lines = [f"{'layer':>5} {'kind':>10} {'features':>8} {'pf_units':>9} {'pf_params':>9} "
             f"{'active':>8} {'params':>9}"]
    for row in report["layers"]:
        pf_u = "" if row["per_filter_units"] is None else row["per_filter_units"]
        pf_p = "" if row["per_filter_params"] is None else row["per_filter_params"]
        act = "" if row["active_units"] is None else row["active_units"]
        lines.append(f"{row['layer']:>5} {row['kind']:>10} {row['features']:>8} {pf_u:>9} "
                     f"{pf_p:>9} {act:>8} {row['params']:>9}")
    lines.append(f"total params: {report['total_params']} "
                 f"(displaced-unit layers: {report['dau_params']})")
    return "\n".join(lines) + "\n"
