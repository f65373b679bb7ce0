"""Independent reference computations shared by unit and acceptance tests."""

import itertools

import numpy as np

GH_X, GH_W = np.polynomial.hermite.hermgauss(8)


def quadrature_psi(y, b, w, c, mu_tilde, sigma):
    """E[b + w ((y - mu_tilde + sigma Z) / c)^4] by Gauss-Hermite (exact for quartics)."""
    x = y - mu_tilde + np.sqrt(2.0) * sigma * GH_X
    return float(np.sum(GH_W * (b + w * (x / c) ** 4)) / np.sqrt(np.pi))


def monte_carlo_psi(y, b, w, c, mu_tilde, sigma, n, rng, chunk=250_000):
    """Sample mean and standard error of the BPR cost under the Gaussian ambient flow."""
    s = s2 = 0.0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        v = b + w * ((y - mu_tilde + sigma * rng.standard_normal(k)) / c) ** 4
        s += v.sum()
        s2 += (v * v).sum()
        done += k
    mean = s / n
    var = max(s2 / n - mean * mean, 0.0)
    return mean, np.sqrt(var / n)


def central_difference(fun, y, h):
    return (fun(y + h) - fun(y - h)) / (2 * h)


def random_cost_params(rng):
    c = rng.uniform(1, 100)
    return dict(
        b=rng.uniform(0, 10),
        w=rng.uniform(0.01, 5),
        c=c,
        mu_tilde=rng.uniform(-3 * c, 3 * c),
        sigma=rng.uniform(0, c),
    )


def grid_route_split(costs, demand, step):
    """Brute-force minimum of sum_k costs[k](x_k) over x >= 0, sum x = demand.

    ``costs`` are vectorized per-route objective functions of the route flow
    (routes share no links). The free coordinates run over a lattice with
    spacing ``step * demand``; each route's cost is tabulated once on it.
    """
    N = int(round(1 / step))
    ticks = demand * np.arange(N + 1) / N
    tab = [np.asarray(f(ticks), dtype=float) for f in costs]
    if len(costs) == 2:
        vals = tab[0] + tab[1][::-1]
        i = int(np.argmin(vals))
        return float(vals[i]), np.array([ticks[i], ticks[N - i]])
    if len(costs) == 3:
        best, arg = np.inf, None
        for i in range(N + 1):
            vals = tab[0][i] + tab[1][: N - i + 1] + tab[2][N - i :: -1]
            j = int(np.argmin(vals))
            if vals[j] < best:
                best, arg = float(vals[j]), np.array([ticks[i], ticks[j], ticks[N - i - j]])
        return best, arg
    raise ValueError("only 2 or 3 routes")


def kmedians_brute_force(X, n_c):
    """Minimum l1 k-medians objective over every assignment of points to n_c labels."""
    best = np.inf
    for labels in itertools.product(range(n_c), repeat=len(X)):
        labels = np.array(labels)
        total = 0.0
        for k in range(n_c):
            pts = X[labels == k]
            if len(pts):
                total += np.abs(pts - np.median(pts, axis=0)).sum()
        best = min(best, total)
    return best


def _best_index(values, mask, tie=1e-12):
    """Largest index among masked entries within ``tie`` (relative) of the masked maximum."""
    v = np.where(mask, values, -np.inf)
    top = v.max()
    return int(np.flatnonzero(v >= top - tie * abs(top))[-1])


def enumerate_allocations(M, q, gamma):
    """Max-min and lexicographic optima over all 2^n_g selections.

    Row k of the table is the selection whose bits, x_0 first, spell k in
    binary, so a larger index is a lexicographically larger x; ties within
    1e-12 relative keep the largest. Returns
    (alpha, x_min, lex_alpha, lex_avg, x_lex).
    """
    n_g = M.shape[1]
    X = (np.arange(2**n_g)[:, None] >> np.arange(n_g - 1, -1, -1)) & 1
    U = X @ M.T
    mins, avgs = U.min(axis=1), U.mean(axis=1)
    feasible = X @ q <= gamma
    i = _best_index(mins, feasible)
    alpha = mins[i]
    floor = alpha - 1e-9 * (1 + abs(alpha))
    j = _best_index(avgs, feasible & (mins >= floor))
    return float(alpha), tuple(int(v) for v in X[i]), float(mins[j]), float(avgs[j]), tuple(int(v) for v in X[j])


def dense_divergence(mu_p, var_p, mu_q, var_q, rows):
    """(S dmu)^T (S (Sig_p + Sig_q) S^T)^+ (S dmu) with an explicit selection matrix."""
    n = len(mu_p)
    S = np.zeros((len(rows), n))
    S[np.arange(len(rows)), rows] = 1.0
    d = S @ (mu_p - mu_q)
    cov = S @ (np.diag(var_p) + np.diag(var_q)) @ S.T
    return float(d @ np.linalg.pinv(cov) @ d)
