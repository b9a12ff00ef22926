import csv
import io
import math

import numpy as np
import pytest

from graphon_lab.core import ConstraintPoint, PhaseLabel
from graphon_lab.diagram import (BoundaryNotInWindow, Feasibility, LowerBoundary, ScanRecord, TooFewPoints,
                                 detect_transitions, feasible, grid_svg, mask_csv, pitchfork_probe,
                                 rescaled_tau, scan_csv, scan_grid, scan_line, transitions_csv)
from graphon_lab.families import cusp
from graphon_lab.optimize import SolveConfig

FAST = SolveConfig(samples=4000)


def test_feasibility_classes():
    assert feasible(ConstraintPoint(0.5, 0.2)) is Feasibility.INTERIOR
    assert feasible(ConstraintPoint(0.5, 0.36)) is Feasibility.INFEASIBLE
    assert feasible(cusp(2)) is Feasibility.BOUNDARY


def test_lower_boundary_cache_round_trip(tmp_path):
    lb = LowerBoundary().fill([0.7, 0.7025])
    assert lb(2 / 3) == 2 / 9  # cusp stored exactly
    path = tmp_path / "low.json"
    lb.save(path)
    again = LowerBoundary.load(path)
    assert again(0.70125) == lb(0.70125)
    assert lb(0.5) == 0.0 and lb(0.3) == 0.0


def test_rescaled_tau():
    assert rescaled_tau(0.7, 0.33) == pytest.approx(0.05, abs=1e-15)


def _synthetic(slopes, labels=None, x0=0.3, h=0.001):
    recs, s = [], 0.2
    for k, m in enumerate(slopes):
        lab = PhaseLabel("B", (2, 1)) if labels is None else labels[k]
        recs.append(ScanRecord(ConstraintPoint(0.6, x0 + k * h), s, lab))
        s += m * h
    return recs


def test_linear_curve_has_no_events():
    assert detect_transitions(_synthetic([3.0] * 30)) == []


def test_kink_and_label_change_detected():
    labels = [PhaseLabel("B", (1, 1))] * 15 + [PhaseLabel("B", (2, 1))] * 15
    events = detect_transitions(_synthetic([5.0] * 15 + [2.0] * 15, labels))
    assert len(events) == 1
    e = events[0]
    assert e.kind == "Both"
    assert e.low <= 0.3 + 15 * 0.001 <= e.high
    assert e.jump == pytest.approx(3.0)


def test_structural_twins_are_not_label_changes():
    labels = [PhaseLabel("B", (2, 1), (), ("C", (1, 2)))] * 5 + [PhaseLabel("C", (1, 2))] * 5
    assert detect_transitions(_synthetic([1.0] * 10, labels)) == []


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        detect_transitions(_synthetic([1.0] * 3))


def test_scan_line_refines_continuously():
    coarse = scan_line(0.6, (0.15, 0.19), 3, FAST)
    fine = scan_line(0.6, (0.15, 0.19), 5, FAST)
    gap = lambda rs: max(abs(a.entropy - b.entropy) for a, b in zip(rs, rs[1:]))
    assert all(r.status == "Converged" for r in coarse + fine)
    assert gap(fine) < gap(coarse)


def test_scan_line_flags_infeasible_rows():
    recs = scan_line(0.5, (0.34, 0.36), 2, FAST)
    assert recs[-1].status == "Infeasible" and math.isnan(recs[-1].entropy)


def test_grid_above_er_is_F11():
    recs = scan_grid((0.5, 0.55), (0.2, 0.3), (2, 2), SolveConfig(samples=4000, threads=2))
    assert [r.point for r in recs] == sorted((r.point for r in recs), key=tuple)
    for r in recs:
        assert str(r.label) in ("F(1,1)", "A(1,0)")
        if str(r.label) == "F(1,1)":
            assert r.label.ambiguous_name == "B(1,1)"


def test_grid_resolution_cap():
    with pytest.raises(ValueError):
        scan_grid((0.5, 0.6), (0.1, 0.2), (201, 2))


def test_csv_formats():
    recs = _synthetic([5.0] * 15 + [2.0] * 15)
    text = scan_csv(recs, seed=3, config="demo")
    lines = text.splitlines()
    assert lines[0] == "# seed=3 config=demo"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert rows[0][:7] == ["epsilon", "tau", "tau_rescaled", "entropy", "beta", "label", "status"]
    assert rows[1][0] == "0.6" and rows[2][1] == "0.301"
    events = detect_transitions(recs)
    ttext = transitions_csv(events)
    assert ttext.splitlines()[1] == "coord_low,coord_high,kind,slope_before,slope_after,label_before,label_after"
    mtext = mask_csv([0.6], [0.1, 0.2], np.array([[True, False]]))
    assert mtext.splitlines()[2:] == ["0.6,0.1,1", "0.6,0.2,0"]


def test_svg_output():
    svg = grid_svg(_synthetic([1.0] * 5))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_probe_needs_boundary_in_window():
    with pytest.raises(BoundaryNotInWindow):
        pitchfork_probe(3, 0.735, (0.364, 0.368))
