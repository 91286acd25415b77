"""End-to-end acceptance measurements at their stated tolerances.

Every test records one PASS/FAIL line; ``conftest.py`` prints the lines in
the terminal summary.  Running this file directly prints them as well.
"""

from eitflow import verification as v

RESULTS = []


def report(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name:34s} {detail}"
    RESULTS.append(line)
    print(line)
    return passed


def test_energy_compensation():
    m = v.measure_energy_compensation()
    ok = m["relative_drift"] < 1e-7 and m["residual_ratio"] >= 3.5 and m["leak_ratio"] >= 100
    detail = (
        f"drift {m['relative_drift']:.2e} (< 1e-7), residual ratio {m['residual_ratio']:.2f} (>= 3.5), "
        f"stress-free leak x{m['leak_ratio']:.0f} (>= 100)"
    )
    assert report("energy compensation", ok, detail), detail


def test_second_law():
    m = v.measure_second_law()
    ok = m["all_completed"] and m["min_production"] >= -1e-10 and m["all_nondecreasing"] and m["max_ledger_error"] < 1e-8
    detail = (
        f"{len(m['rows'])} flux scenarios, min production {m['min_production']:.2e} (>= -1e-10), "
        f"internal entropy nondecreasing {m['all_nondecreasing']}, ledger {m['max_ledger_error']:.1e} (< 1e-8)"
    )
    assert report("second law", ok, detail), detail


def test_cit_limit():
    m = v.measure_cit_limit()
    ok = len(m["orders"]) == 2 and all(abs(o - 1.0) <= 0.3 for o in m["orders"])
    detail = "distances " + ", ".join(f"{d:.3e}" for d in m["distances"]) + "; orders " + ", ".join(
        f"{o:.2f}" for o in m["orders"]
    ) + " (1.0 +/- 0.3)"
    assert report("CIT limit", ok, detail), detail


def test_second_sound():
    m = v.measure_second_sound()
    ratio_ok = abs(m["speed_ratio"] / 2**-0.5 - 1.0) <= 0.05
    ok = m["wave_detected"] and m["relative_error"] < 0.05 and ratio_ok and m["cit_diffusive"]
    detail = (
        f"speed {m['measured_speed']:.4f} vs {m['oracle_speed']:.4f} ({100 * m['relative_error']:.2f}% < 5%), "
        f"doubling ratio {m['speed_ratio']:.4f} (0.7071 +/- 5%), CIT diffusive {m['cit_diffusive']}"
    )
    assert report("second sound", ok, detail), detail


def test_objective_rate_identities():
    m = v.measure_objective_rates()
    labels = [t.label for t in m["tables"]]
    required = ("truesdell/", "/rank1"), ("truesdell/", "/rank2"), ("conjugate/", "/vector"), ("conjugate/", "/tensor")
    covers = all(any(lab.startswith(head) and lab.endswith(tail) for lab in labels) for head, tail in required)
    ok = covers and m["min_order"] >= 1.9 and m["max_terminal_error"] < 1e-5
    detail = f"{len(labels)} tables, min order {m['min_order']:.3f} (>= 1.9), worst terminal error {m['max_terminal_error']:.2e} (< 1e-5)"
    assert report("objective-rate identities", ok, detail), detail


def test_momentum_form_equivalence():
    m = v.measure_momentum_forms()
    ok = m["min_ratio"] >= 3.5
    detail = "|A - B| " + ", ".join(f"{d:.2e}" for d in m["differences"]) + f"; min ratio {m['min_ratio']:.2f} (>= 3.5)"
    assert report("momentum-form equivalence", ok, detail), detail


def test_mode_reductions():
    m = v.measure_mode_reductions()
    detail = ", ".join(f"{k} {'bitwise' if val else 'DIFFERS'}" for k, val in m.items() if k != "all")
    assert report("mode reductions", m["all"], detail), detail


def test_maxwell_decomposition():
    m = v.measure_maxwell_decomposition()
    ok = m["max_relative_difference"] < 1e-13
    detail = f"max relative difference {m['max_relative_difference']:.2e} (< 1e-13)"
    assert report("Maxwell decomposition", ok, detail), detail


def test_higher_order_hierarchy():
    m = v.measure_hierarchy()
    worst = max(m["n2_residual_q1"], m["n2_residual_q2"])
    ok = m["n1_bitwise"] and worst < 1e-6
    detail = f"n = 1 bitwise {m['n1_bitwise']}, n = 2 stationary residual {worst:.2e} (< 1e-6)"
    assert report("higher-order hierarchy", ok, detail), detail


def test_finite_dimensional_sandbox():
    m = v.measure_finite_dim()
    ok = (
        m["energy_drift"] < 1e-9
        and m["sigma_nondecreasing"]
        and m["hot_to_cold"]
        and m["equilibrium_gap"] < 1e-6
        and m["equal_temperature_rates"] == 0.0
    )
    detail = (
        f"energy drift {m['energy_drift']:.2e} (< 1e-9), internal entropy nondecreasing {m['sigma_nondecreasing']}, "
        f"hot to cold {m['hot_to_cold']}, final gap {m['equilibrium_gap']:.1e}"
    )
    assert report("finite-dimensional sandbox", ok, detail), detail


if __name__ == "__main__":
    failures = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failures += 1
    raise SystemExit(1 if failures else 0)
