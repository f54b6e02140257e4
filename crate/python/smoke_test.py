"""Smoke test for the rlstep_py extension.

Build first:
    cargo build --release -p rlstep-py --features extension-module
then run:
    python3 python/smoke_test.py
The script imports an installed ``rlstep_py`` if there is one, otherwise the
shared library from target/release (or target/debug).
"""

import importlib
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    try:
        return importlib.import_module("rlstep_py")
    except ImportError:
        pass
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    prefix = "" if sys.platform == "win32" else "lib"
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / f"{prefix}rlstep_py.{suffix}"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / ("rlstep_py.pyd" if sys.platform == "win32" else "rlstep_py.so"))
            sys.path.insert(0, str(tmp))
            return importlib.import_module("rlstep_py")
    sys.exit("rlstep_py not found; build it with --features extension-module")


def main():
    rs = load_module()

    value, evals = rs.composite_simpson(math.sin, 0.0, math.pi, 0.1)
    assert abs(value - 2.0) < 1e-5, value
    assert evals == 2 * 16 + 1, evals

    f = rs.Function.draw("single_sine", 7)
    a, b = f.domain
    exact = f.exact_integral(a, b)
    approx, _ = rs.composite_simpson(f, a, b, 0.05)
    assert abs(exact - approx) < 1e-4, (exact, approx)

    run = rs.rk45("lorenz", 0.0, 1.0, 1e-6, 1e-6)
    assert run["t"][-1] == 1.0 and run["evaluations"] > 0

    weights, eps, _ = rs.optimal_weights("poly_deg4", [0.0, 0.5, 1.0], 20000, seed=1)
    assert abs(sum(weights) - 1.0) < 0.05 and eps > 0.0, weights

    w, mse = rs.one_node(0.547)
    assert abs(w - 0.989) < 0.01, w

    with tempfile.TemporaryDirectory() as out:
        code, notes = rs.run_command("weights", out, ["weights.mode=\"one_node\"", "weights.class=\"poly_deg2\""])
        assert code == 0, notes
        assert (Path(out) / "one_node.csv").exists()
        code, _ = rs.run_command("train-quad", out, ["training.max_episodes=0", "training.min_episodes=0"])
        assert code == 3, code

    try:
        rs.Learner.load("/nonexistent/learner.json")
    except FileNotFoundError:
        pass
    else:
        raise AssertionError("missing checkpoint must raise")

    print("rlstep_py smoke test passed")


if __name__ == "__main__":
    main()
