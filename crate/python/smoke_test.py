"""Build the extension module and exercise its public functions.

Run from anywhere: python3 python/smoke_test.py
"""

import csv
import io
import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_module(dest: pathlib.Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "fisher-lab-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libfisher_lab_py.so"
    shutil.copy(lib, dest / "fisher_lab.so")


def check_solver(fl) -> None:
    eq = fl.solve_eg([1.0, 1.0], [1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])
    assert all(abs(p - 1.0) < 1e-6 for p in eq.prices), eq
    assert eq.gap <= 1e-6
    assert abs(eq.primal_value) < 1e-6

    eq = fl.solve_eg([1.0, 2.0], [1.0, 3.0], [[2.0, 1.0], [1.0, 1.0]])
    spent = sum(eq.prices[j] * sum(x[j] for x in eq.allocations) for j in range(2))
    assert abs(spent - 4.0) < 1e-4, spent
    assert abs(eq.primal_value - eq.dual_value) <= 1e-5 * max(1.0, abs(eq.dual_value))

    try:
        fl.solve_eg([1.0], [1.0, 1.0], [[1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("dimension mismatch accepted")


def check_buyer(fl) -> None:
    x = fl.optimal_bundle(2.0, [1.0, 3.0], [1.0, 1.0])
    assert x == [0.0, 2.0], x
    split = fl.optimal_bundle(2.0, [1.0, 1.0], [1.0, 1.0], "uniform_split")
    assert split == [1.0, 1.0], split
    assert abs(fl.indirect_utility(2.0, [1.0, 3.0], [1.0, 1.0]) - 6.0) < 1e-12


def check_counterexample(fl) -> None:
    assert fl.closed_form_optimum_counterexample(10, 10) == 0.0
    expected = 10 * math.log(10) - 2 * 5 * math.log(5)
    assert abs(fl.closed_form_optimum_counterexample(10, 5) - expected) < 1e-12
    try:
        fl.closed_form_optimum_counterexample(3, 4)
    except ValueError:
        pass
    else:
        raise AssertionError("s > n accepted")


def check_revealed_preference(fl) -> None:
    rp = fl.RevealedPreference([0.5, 0.5], 100, gamma_scale=1.0, rule="multiplicative")
    assert abs(rp.gamma - 0.1) < 1e-15
    total = [0.0, 0.0]
    for t in range(100):
        u = [1.0, 0.0] if t % 2 == 0 else [0.0, 1.0]
        x = rp.serve(1.0, u)
        total = [a + b for a, b in zip(total, x)]
    assert all(p > 0 for p in rp.price)
    assert not rp.breached
    assert all(abs(a - b) < 1e-9 for a, b in zip(rp.consumed, total))


def check_experiments(fl) -> None:
    names = fl.preset_names()
    assert "fig_theory_bounds" in names
    cfg = json.loads(fl.preset_config("fig_static_vs_adaptive"))
    cfg["n_values"] = [50, 100, 200]
    cfg["replications"] = 3
    rows, agg = fl.run_experiment(json.dumps(cfg))
    parsed = list(csv.DictReader(io.StringIO(rows)))
    assert len(parsed) == 2 * 3 * 3, len(parsed)
    assert all(r["regret"] != "" and r["breach"] == "false" for r in parsed), parsed[0]
    assert len(list(csv.DictReader(io.StringIO(agg)))) == 2 * 3

    again = fl.run_preset("fig_static_vs_adaptive", n_values=[50, 100, 200], replications=3)
    assert again == (rows, agg)

    try:
        fl.run_experiment(json.dumps({**cfg, "replications": 0}))
    except ValueError as e:
        assert "replications" in str(e)
    else:
        raise AssertionError("zero replications accepted")
    try:
        fl.preset_config("fig_nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        dest = pathlib.Path(tmp)
        build_module(dest)
        sys.path.insert(0, str(dest))
        import fisher_lab as fl

        for check in (check_solver, check_buyer, check_counterexample, check_revealed_preference, check_experiments):
            check(fl)
            print(f"ok {check.__name__}")
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
