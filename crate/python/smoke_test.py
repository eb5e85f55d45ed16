"""Smoke test for the ballsim_py extension.

Build first:
    cargo build -p ballsim-py --release --features extension-module
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile
from fractions import Fraction

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libballsim_py.so"
        if lib.exists():
            break
    else:
        sys.exit("libballsim_py.so not found; build the extension first")
    tmp = pathlib.Path(tempfile.mkdtemp())
    dst = tmp / "ballsim_py.so"
    shutil.copy(lib, dst)
    spec = importlib.util.spec_from_file_location("ballsim_py", dst)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    b = load()

    s = b.LoadState([3, 1, 0, 0])
    assert s.n == 4 and s.total == 4
    assert Fraction(*s.gap()) == 2
    assert Fraction(*s.quantile()) == Fraction(1, 2)
    assert s.scaled() == [8, 0, -4, -4]
    pots = s.potentials(0.5)
    assert pots["lambda"] > 4

    p = b.Process("thinning:3")
    assert p.single_ball and not p.filling
    assert b.Process("packing").filling
    try:
        b.Process("one-plus-beta:2")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid beta accepted")

    final, points = b.simulate("packing", 10, 200, seed=1, trace="every:50")
    assert final.n == 10 and final.total >= 200
    assert len(points) == 5
    again, _ = b.simulate("packing", 10, 200, seed=1)
    assert again == final

    nxt, ev = b.step("packing", b.LoadState([0, 0, 5]), seed=2)
    assert nxt.total == 5 + ev["weight"]

    numer, denom = b.distribution_vector("two-choice", b.LoadState.empty(4))
    assert sum(numer) == denom and numer == sorted(numer)

    exact = b.exact_gap_distribution("one-choice", 2, 2)
    assert {k: Fraction(v) for k, v in exact["probs"].items()} == {"0": Fraction(1, 2), "1": Fraction(1, 2)}

    h = b.gapdist("caching", 100, 10_000, reps=10, threads=2)
    assert sum(h["counts"].values()) == 10

    report = b.verify("drift", n=8, cases=20)
    assert report["passed"], report

    ce = b.counterexamples(10_000, 0.5)
    assert ce["b1"]["satisfied"] and ce["b2"]["satisfied"]

    c = b.coupled_thinning(20, 2000, 3, seed=4)
    assert c["violations"] == 0
    assert b.coupled_thinning(20, 500, 0)["identical"]

    assert all(b.beta_eta_prefix_check(n, "1/2") for n in range(2, 40))

    print("ballsim_py smoke test passed")


if __name__ == "__main__":
    main()
