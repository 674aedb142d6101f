"""Smoke test for the Python extension.

Build and install it first, e.g. `pip install --no-build-isolation ./crates/py`,
then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import levy_bismut as lb


def main():
    model = lb.SpectralModel.fractional([1.0, 2.0, 3.0, 4.0], 0.25)
    assert model.dim == 4
    assert abs(model.q[1] - 2.0 ** -0.25) < 1e-15
    x = model.semigroup_apply(math.log(2.0), [1.0, 1.0, 1.0, 1.0])
    assert abs(x[0] - 0.5) < 1e-15 and abs(x[1] - 0.25) < 1e-15

    one = lb.SpectralModel([1.0], [1.0])
    assert abs(one.cm_density([1.0], [1.0]) - math.exp(-1.5)) < 1e-15

    exact, bound = lb.poisson_inverse_square_moment(1.0)
    assert abs(exact - 0.42175) < 1e-4 and bound == 6.0
    assert abs(lb.predicted_rate(2.0, 1.0, 0.3) - 1.4 / 2.7) < 1e-15

    density = lb.JumpDensity.tilted_sine(2.0, 0.5, [1.0, 0.0, 0.0, 0.0])
    assert abs(density.rho([math.pi / 2, 0.0, 0.0, 0.0]) - 3.0) < 1e-12
    drift = lb.DriftField.random_tanh(4, 0.3, 7)
    assert abs(drift.lip_bound() - 0.3) < 1e-12

    system = lb.System(model, density, drift)
    times, states = system.simulate([1.0, 0.0, 0.0, 0.0], 1.0, seed=1)
    assert times[0] == 0.0 and abs(times[-1] - 1.0) < 1e-12
    assert len(states) == len(times) and len(states[0]) == 4

    f = lb.TestFunction.cosine([0.5, -0.3, 0.2, 0.1], 0.4)
    (lhs, lse), (rhs, rse) = system.ibp_check(f, [0.6, -0.3, 0.5, 0.2], 1.0, 20_000)
    assert abs(lhs - rhs) <= 4.0 * math.hypot(lse, rse), (lhs, rhs)

    (b, bse), (fd, fse), _ = system.gradient(f, [0.5, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 1.0, 5_000)
    assert abs(b - fd) <= 4.0 * math.hypot(bse, fse) + 1e-4, (b, fd)

    cfg = lb.ExperimentConfig.reference()
    assert lb.ExperimentConfig.from_toml(cfg.to_toml()).to_toml() == cfg.to_toml()
    cfg.samples = 20_000
    with tempfile.TemporaryDirectory() as out:
        verdicts = lb.run(cfg, "ibp-check", out)
        assert {v[0] for v in verdicts} == {1, 3}
        assert all(v[2] for v in verdicts), verdicts
        assert (Path(out) / "ibp.csv").exists() and (Path(out) / "summary.csv").exists()

    bad = cfg.to_toml().replace("lambda0 = 2.0", "lambda0 = -1.0")
    try:
        lb.ExperimentConfig.from_toml(bad)
    except ValueError as e:
        assert "(H1)" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
