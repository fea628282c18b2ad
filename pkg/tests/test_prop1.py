"""Piecewise densities and the observational-equivalence counterexample.

Closed-form masses are checked against adaptive quadrature, samplers against
their own closed forms, and the two headline facts are pinned exactly: the
observational means agree on (0, 1) while the interventional means split by
1/12 on (-3, -2).
"""

import numpy as np
import pytest
from scipy.integrate import quad

from rep4ex.numcore import RngStream
from rep4ex.prop1 import (
    DISCREPANCY_NOTE,
    OutsideSupportError,
    demo_tables,
    density,
    density_value,
    interval_mass,
    interventional_mean,
    observational_mean,
    simulate_do_mean,
)


def test_density_point_values():
    assert density_value(1, 0.0) == pytest.approx(1.0 / 12.0, abs=1e-15)
    assert density_value(1, -3.9) == pytest.approx(1.0 / 12.0, abs=1e-15)
    assert density_value(1, 3.0) == pytest.approx(np.exp(-1.0) / 4.0, abs=1e-15)
    assert density_value(1, -5.0) == pytest.approx(np.exp(-1.0) / 4.0, abs=1e-15)
    assert density_value(2, 0.0) == pytest.approx(1.0 / 12.0, abs=1e-15)
    assert density_value(2, -3.0) == pytest.approx(1.0 / 24.0, abs=1e-15)
    assert density_value(2, 2.0) == pytest.approx(5.0 * np.exp(-1.0) / 16.0,
                                                  abs=1e-15)
    assert density_value(2, -6.0) == pytest.approx(5.0 * np.exp(-1.0) / 16.0,
                                                   abs=1e-15)


def test_densities_integrate_to_one():
    assert density(1).total_mass() == pytest.approx(1.0, abs=1e-12)
    assert density(2).total_mass() == pytest.approx(1.0, abs=1e-12)


def test_masses_match_adaptive_quadrature():
    intervals = [(-6.0, -3.0), (-4.5, 1.0), (0.0, 2.5), (2.0, 8.0),
                 (-10.0, -4.0), (-3.0, -2.0), (-1.0, 1.0)]
    for which in (1, 2):
        pdf = density(which)
        for lo, hi in intervals:
            ref, err = quad(lambda v: float(pdf.value(float(v))), lo, hi,
                            points=[p for p in pdf.breakpoints()
                                    if lo < p < hi],
                            limit=200)
            assert interval_mass(which, lo, hi) == pytest.approx(
                ref, abs=max(1e-10, 10.0 * err))


def test_tail_masses_in_closed_form():
    # Right tail of model 1: (1/4) e^{-(v-2)} integrates to 1/4 from 2 on.
    assert interval_mass(1, 2.0, np.inf) == pytest.approx(0.25, abs=1e-14)
    assert interval_mass(1, -np.inf, -4.0) == pytest.approx(0.25, abs=1e-14)
    assert interval_mass(2, 1.0, np.inf) == pytest.approx(5.0 / 16.0, abs=1e-14)
    assert interval_mass(2, -np.inf, -5.0) == pytest.approx(5.0 / 16.0,
                                                            abs=1e-14)


def test_observational_means_agree_on_support():
    for a in np.linspace(0.02, 0.98, 25):
        m1 = observational_mean(1, float(a))
        m2 = observational_mean(2, float(a))
        assert m1 == pytest.approx(1.0 / 6.0, abs=1e-12)
        assert m2 == pytest.approx(1.0 / 6.0, abs=1e-12)


def test_observational_mean_outside_support_raises():
    for a in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(OutsideSupportError, match="outside"):
            observational_mean(1, a)


def test_interventional_means_split_in_the_window():
    for a in np.linspace(-2.98, -2.02, 25):
        m1 = interventional_mean(1, float(a))
        m2 = interventional_mean(2, float(a))
        assert m1 == pytest.approx(1.0 / 6.0, abs=1e-12)
        assert m2 == pytest.approx(1.0 / 12.0, abs=1e-12)
        assert m1 - m2 == pytest.approx(1.0 / 12.0, abs=1e-12)


def test_interventional_mean_is_a_window_mass():
    # E[Y | do(A = a)] integrates the noise density over the indicator window.
    for which, shift in ((1, 0.0), (2, 1.0)):
        for a in (-2.5, 0.3, 1.7):
            direct = interval_mass(which, a - 1.0 - shift, a + 1.0 - shift)
            assert interventional_mean(which, a) == pytest.approx(
                direct, abs=1e-15)


def test_sampler_matches_closed_form_masses():
    stream = RngStream(0).derive("sampler-test")
    for which in (1, 2):
        draws = density(which).sample(stream.derive(which), 200_000)
        assert np.all(np.isfinite(draws))
        checkpoints = [-5.0, -4.0, -2.0, 0.0, 1.0, 2.0]
        for c in checkpoints:
            empirical = float(np.mean(draws <= c))
            exact = interval_mass(which, -np.inf, c)
            assert abs(empirical - exact) < 0.006


def test_sampler_is_deterministic():
    a = density(1).sample(RngStream(3).derive("d"), 1000)
    b = density(1).sample(RngStream(3).derive("d"), 1000)
    assert np.array_equal(a, b)


def test_simulation_agrees_with_closed_form():
    for which, a in ((1, -2.5), (2, -2.5), (1, 0.5), (2, 0.5)):
        mean, stderr = simulate_do_mean(which, a, 400_000,
                                        RngStream(1).derive("sim", which,
                                                            str(a)))
        assert abs(mean - interventional_mean(which, a)) < 3.5 * stderr
        assert stderr < 0.002


def test_invert_mass_round_trip():
    pdf = density(2)
    for piece in pdf.pieces:
        total = piece.mass(-np.inf, np.inf)
        for frac in (0.1, 0.5, 0.9):
            v = piece.invert_mass(piece.lo, frac * total)
            assert piece.mass(piece.lo, v) == pytest.approx(frac * total,
                                                            rel=1e-12)


def test_demo_tables_structure():
    tables = demo_tables(points=10)
    assert len(tables["observational"]) == 10
    assert len(tables["interventional"]) == 10
    assert tables["max_observational_gap"] < 1e-12
    assert tables["min_interventional_gap"] == pytest.approx(1.0 / 12.0,
                                                             abs=1e-12)
    m1, m2 = tables["total_mass"]
    assert m1 == pytest.approx(1.0, abs=1e-12)
    assert m2 == pytest.approx(1.0, abs=1e-12)
    # Grid points stay strictly inside the open windows.
    assert all(0.0 < a < 1.0 for a, _, _ in tables["observational"])
    assert all(-3.0 < a < -2.0 for a, _, _ in tables["interventional"])


def test_invalid_model_index_rejected():
    with pytest.raises(ValueError, match="1 or 2"):
        density(3)
    with pytest.raises(ValueError):
        interventional_mean(0, 0.5)


def test_discrepancy_note_mentions_both_values():
    assert "1/6" in DISCREPANCY_NOTE and "1/12" in DISCREPANCY_NOTE
