"""Time the direct and FFT paths of ``ncc_map`` to pick ``FFT_MIN_WORK``.

Prints, per template/search size, both timings and the work measure
(template area times number of placements) used by the ``auto`` switch.
"""

import timeit

import numpy as np

from pipsus.baselines import FFT_MIN_WORK, ncc_map


def main():
    rng = np.random.default_rng(0)
    print(f"current FFT_MIN_WORK = {FFT_MIN_WORK}")
    print(f"{'patch':>6}{'radius':>8}{'work':>12}{'direct ms':>12}{'fft ms':>10}  faster")
    for patch in (7, 11, 17, 25):
        for radius in (4, 8, 16, 32):
            t = rng.random((patch, patch))
            s = rng.random((patch + 2 * radius, patch + 2 * radius))
            work = patch * patch * (2 * radius + 1) ** 2
            d = min(timeit.repeat(lambda: ncc_map(t, s, "direct"), number=5, repeat=3)) / 5 * 1e3
            f = min(timeit.repeat(lambda: ncc_map(t, s, "fft"), number=5, repeat=3)) / 5 * 1e3
            print(f"{patch:>6}{radius:>8}{work:>12}{d:>12.3f}{f:>10.3f}  {'fft' if f < d else 'direct'}")


if __name__ == "__main__":
    main()
