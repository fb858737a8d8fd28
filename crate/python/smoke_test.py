"""Smoke test for the simtemp_py extension.

Build and install it first:
    pip install --no-build-isolation -e crates/python
"""

import json
import math
import tempfile
from pathlib import Path

import simtemp_py as st


def check_target_and_ladder():
    spec = st.MixtureSpec.symmetric_pair(2, 3.0)
    assert spec.dim == 2 and spec.num_components == 2
    u0 = spec.potential([0.0, 0.0])
    assert math.isclose(u0, 4.5, rel_tol=1e-12), u0
    assert all(abs(g) < 1e-12 for g in spec.gradient([0.0, 0.0]))

    ladder = st.Ladder.for_spec(spec)
    betas = ladder.betas
    assert betas[-1] == 1.0 and betas[0] <= 1.0 / (4.0 * 9.0)
    assert all(b < c for b, c in zip(betas, betas[1:]))
    delta, hell = st.exact_overlap(spec, ladder)
    assert 0.0 <= delta < 1.0 and 0.0 < hell <= 1.0
    sizes = st.step_sizes(spec, ladder)
    assert math.isclose(sizes["rwm_h"], 0.5)
    return spec, ladder


def check_sampler(spec, ladder):
    out = st.run_chain(spec, ladder, h=0.5, steps=2000, seed=1, thin=10)
    assert len(out["trace"]) == 201
    summary = out["summary"]
    assert math.isclose(sum(summary["occupancy"]), 1.0, rel_tol=1e-12)
    again = st.run_chain(spec, ladder, h=0.5, steps=2000, seed=1, thin=10)
    assert out == again, "same seed must reproduce the trace"

    calibrated, report = st.calibrate(spec, ladder, h=0.5, verify_steps=20_000, seed=2)
    assert len(calibrated.log_weights) == ladder.num_levels
    assert len(report["ratio_estimates"]) == ladder.num_levels - 1


def check_finite_chain():
    p = 0.3
    chain = st.FiniteChain([[1 - p, p], [p, 1 - p]], [0.5, 0.5])
    assert math.isclose(chain.spectral_gap(), 2 * p, rel_tol=1e-12)
    lazy = chain.lazy()
    assert math.isclose(lazy.spectral_gap(), p, rel_tol=1e-12)
    assert math.isclose(chain.s_conductance(0.0), p, rel_tol=1e-12)
    try:
        st.FiniteChain([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5])
    except ValueError:
        pass
    else:
        raise AssertionError("rows that do not sum to one must be rejected")


def check_bounds(spec, ladder):
    suite = st.inequality_suite(spec, ladder, n_points=1000, seed=3)
    assert all(r["holds"] for r in suite["records"])
    assert st.f_overlap(0.0, 4) == 1.0


def check_experiment():
    config = """
tasks = ["sample"]

[target]
local = { kind = "isotropic" }
generator = { rule = "symmetric_pair", dim = 1, distance = 2.0 }

[ladder]
mode = "geometric"
ratio = 2.0
levels = 4

[sampler]
proposal = "mala"
h = 0.1
steps = 500
"""
    with tempfile.TemporaryDirectory() as tmp:
        assert st.run_experiment(config, tmp) == 0
        manifest = json.loads((Path(tmp) / "manifest.json").read_text())
        names = sorted(f["file"] for f in manifest["files"])
        assert names == ["sample_summary.json", "trace_replica_0.jsonl"], names
    try:
        st.run_experiment("tasks = [\"sample\"]", tempfile.gettempdir())
    except ValueError as e:
        assert "target" in str(e)
    else:
        raise AssertionError("missing blocks must be a config error")


def main():
    spec, ladder = check_target_and_ladder()
    check_sampler(spec, ladder)
    check_finite_chain()
    check_bounds(spec, ladder)
    check_experiment()
    print("simtemp_py smoke test: ok")


if __name__ == "__main__":
    main()
