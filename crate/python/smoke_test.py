"""Smoke test for the Python bindings.

Build and install first:

    pip install maturin
    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
    python python/smoke_test.py
"""

import json
import math

import numpy as np

import flowci


def brute_dcov2(u, v):
    a = np.linalg.norm(u[:, None, :] - u[None, :, :], axis=-1)
    b = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
    A = a - a.mean(0) - a.mean(1)[:, None] + a.mean()
    B = b - b.mean(0) - b.mean(1)[:, None] + b.mean()
    return float((A * B).mean())


def main():
    rng = np.random.default_rng(0)

    u = rng.normal(size=(25, 3))
    v = np.sin(u[:, :2]) + 0.3 * rng.normal(size=(25, 2))
    got = flowci.dcov2(u.tolist(), v.tolist())
    assert abs(got - brute_dcov2(u, v)) < 1e-12, got
    assert 0.0 <= flowci.dcorr2(u.tolist(), v.tolist()) <= 1.0
    assert 0.0 <= flowci.ipcorr2(u.tolist(), v.tolist()) <= 1.0

    assert abs(flowci.gaussian_transport(1.5, 0.5) - 1.0) < 1e-12
    assert abs(flowci.gaussian_velocity(1.0, 0.3, -0.2) - 0.3) < 1e-12
    assert abs(flowci.cauchy_combine([0.3]) - 0.3) < 1e-9

    t, p = flowci.permutation_pvalue(u.tolist(), v.tolist(), permutations=50, seed=1)
    assert t > 0 and 0.0 <= p <= 0.1, (t, p)

    x, y, z = flowci.generate("low-low", setting=1, psi=1.0, n=300, seed=2)
    assert np.shape(x) == (300, 3) and np.shape(z) == (300, 3)

    report = flowci.flowcit(x, y, z, permutations=50, hidden=16, epochs=20, steps=20, seed=3)
    assert report.combined_p <= 0.05, report
    assert report.n == 300 and report.n2 == math.floor(4 * math.sqrt(300))
    assert json.loads(report.to_json())["combined_p"] == report.combined_p

    net = flowci.VelocityNet.fit(x, z, hidden=16, epochs=5)
    assert net.layer_dims == [7, 16, 8, 3]
    latents = net.transport(x[:4], z[:4], steps=10)
    assert np.isfinite(latents).all() and np.shape(latents) == (4, 3)

    ps, rate = flowci.simulate("convergence", n=100, reps=5, oracle=True, steps=10, permutations=30)
    assert len(ps) == 5 and 0.0 <= rate <= 1.0
    assert 0.0 <= flowci.ks_statistic(ps) <= 1.0

    try:
        flowci.dcov2([[1.0]], [[1.0], [2.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("row mismatch accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
