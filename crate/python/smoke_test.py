"""Smoke test for the kslab_py extension.

Build first:  pip install --no-build-isolation -e crates/kslab-py
"""

import math

import kslab_py as ks


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    g = ks.Grid(r_max=1e4)
    q = g.ground_state()
    mass = g.integrate(q)
    assert close(mass, 8 * math.pi, 1e-6), mass
    print(f"grid: {len(g)} nodes, int Q = {mass:.10f}")

    hls = g.log_hls(q)
    assert abs(hls["margin"]) < 1e-5 * hls["mass"], hls
    print(f"log-HLS margin on Q: {hls['margin']:.2e}")

    lap = g.laplacian([math.exp(-r * r) for r in g.nodes])
    assert close(lap[0], -4.0, 1e-6), lap[0]

    p = ks.Profile(1e-4)
    ratio = p.c_b * abs(math.log(p.b)) / 2
    assert 0.8 <= ratio <= 1.2, ratio
    print(f"profile b = {p.b:g}: c_b |log b| / 2 = {ratio:.4f}, B1 = {p.b1:.1f}")
    try:
        ks.Profile(0.5)
    except ValueError as e:
        print(f"rejected b = 0.5: {e}")
    else:
        raise AssertionError("b = 0.5 accepted")

    s0 = 1e2
    b0 = (math.log(s0) - math.log(math.log(s0))) / (2 * s0)
    recs = ks.synthetic_series(s0, 1e10, b0, 600, True)
    fit = ks.fit_rate_law([r["s"] for r in recs], [r["lambda"] for r in recs], [r["b"] for r in recs])
    assert fit["b_law"]["accepted"], fit
    print(f"rate fit coefficient: {fit['b_law']['fit']['slope']:.4f}")

    out = ks.simulate(
        "grid.r_max = 100\nprofile.initial = ground:0.5\nsolver.frame = physical\nsolver.t_max = 0.5\n"
    )
    assert out["summary"]["stop"] == "t_max", out["summary"]
    assert out["summary"]["mass_drift"] < 1e-6
    print(f"physical run: {len(out['series'])} records, stop {out['summary']['stop']}")

    v = ks.verify("loghls")
    assert v["pass"], v
    print(f"verify loghls: {len(v['checks'])} checks pass")
    print("smoke test ok")


if __name__ == "__main__":
    main()
