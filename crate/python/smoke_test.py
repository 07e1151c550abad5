"""Quick check that the extension imports and the detectors agree on easy cases."""

import random

import mimo_bsp


def channel(nr, nt, rng):
    return [[complex(rng.gauss(0, 0.5**0.5), rng.gauss(0, 0.5**0.5)) for _ in range(nt)] for _ in range(nr)]


def main():
    rng = random.Random(3)
    c = mimo_bsp.Constellation(4)
    assert c.size == 16 and len(c.points()) == 16
    assert c.label(0) == [0, 0, 0, 0]

    nr, nt = 8, 4
    bits = [rng.randint(0, 1) for _ in range(4 * nt)]
    s = c.modulate(bits)
    h = channel(nr, nt, rng)
    y = [sum(h[i][j] * s[j] for j in range(nt)) for i in range(nr)]
    sigma2 = 1e-3

    for name, det in [
        ("map", mimo_bsp.map_detect(y, h, sigma2, c)),
        ("obp", mimo_bsp.run_original_bp(y, h, sigma2, c, iterations=3)),
        ("bsp", mimo_bsp.run_bsp(y, h, sigma2, c, 2, 2)),
        ("ebrdf", mimo_bsp.run_ebrdf_bp(y, h, sigma2, c, 4, iterations=3)),
    ]:
        assert det.hard_bits == bits, name
    _, _, hard, prior = mimo_bsp.lmmse_detect(y, h, sigma2, c)
    assert hard == bits and all(p[0] == 0.0 for p in prior)

    det = mimo_bsp.run_bsp(y, h, sigma2, c, 1, 1, count_ops=True)
    assert det.real_multiplications == mimo_bsp.predicted_multiplications("bsp", nr, nt, 4) + 1

    assert mimo_bsp.truncate_alpha([0.0, 3.0, -1.0, 3.0], 2) == [(1, 3.0), (3, 3.0)]
    assert len(mimo_bsp.config_set([[0.0, 1.0, 2.0, 3.0]] * 4, 0, 2, 3)) == 12

    records = mimo_bsp.run_sweep(2, 2, 2, ["map", "mmse", "bsp:2:2"], ebn0_db=[6.0], max_vectors=500, seed=4)
    assert [r["vectors"] for r in records] == [500, 500, 500]
    for r in records:
        assert r["ci_low"] <= r["ber"] <= r["ci_high"]

    try:
        mimo_bsp.Constellation(3)
    except ValueError:
        pass
    else:
        raise AssertionError("odd bits per symbol accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
