"""Compare a free convolution against the spectrum of a large random matrix.

The eigenvalue distribution of ``D + W``, with ``D`` a diagonal of balanced
+-1 signs and ``W`` a GOE matrix of unit variance, approaches the free
convolution of the symmetric Bernoulli law with the semicircle.
"""

import argparse
import math
import time

import numpy as np

from freelimit import laws
from freelimit.freeconv import free_convolve
from freelimit.measure import cdf


def spectrum(dim, rng):
    a = rng.standard_normal((dim, dim))
    w = (a + a.T) / math.sqrt(2 * dim)
    d = np.where(np.arange(dim) < dim // 2, -1.0, 1.0)
    return np.linalg.eigvalsh(w + np.diag(d))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[250, 500, 1000, 2000])
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    nu = free_convolve(laws.symmetric_bernoulli(), laws.semicircle())
    print(f"free convolution: {time.perf_counter() - t0:.1f} s")
    x = np.linspace(-3.5, 3.5, 1401)
    ref = cdf(nu, x)
    rng = np.random.default_rng(args.seed)
    print(f"{'dim':>6}  {'kolmogorov':>12}")
    for dim in args.dims:
        ev = np.sort(spectrum(dim, rng))
        emp = np.searchsorted(ev, x, side="right") / dim
        print(f"{dim:>6}  {np.max(np.abs(emp - ref)):>12.5f}")


if __name__ == "__main__":
    main()
