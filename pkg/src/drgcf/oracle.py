"""Brute-force reference solvers used by the test suite only.

Nothing here is fast and nothing here shares code with the closed-form
implementations it certifies: the KL-ball maximizer is attacked by direct
search over the simplex, the alpha <-> radius correspondence by bisection,
and gradients by central finite differences.  Instance sizes are capped at
8 because direct search is only trustworthy at low dimension, and the
identities being certified are dimension-independent.
"""

from __future__ import annotations

import numpy as np


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with the 0 log 0 = 0 convention; inf if p leaves q's support."""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _boundary_pullback(
    start: np.ndarray, target: np.ndarray, base: np.ndarray, eta: float, iters: int = 60
) -> np.ndarray:
    """Largest feasible point on the segment start -> target.

    KL(. || base) is convex along the segment and start is feasible, so the
    feasible set on the segment is an interval [0, t*]; bisection returns a
    point guaranteed on the feasible side.
    """
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        p = start + mid * (target - start)
        if _kl(p, base) <= eta:
            lo = mid
        else:
            hi = mid
    return start + lo * (target - start)


def _ray_extreme(
    base: np.ndarray, direction: np.ndarray, eta: float, iters: int = 60
) -> np.ndarray:
    """Farthest feasible point along the ray base + t * direction, t >= 0.

    The direction is centered so the ray stays on the simplex hyperplane;
    the ray leaves the feasible set either through the KL sphere or through
    a simplex face, whichever comes first.  Every maximizer of a linear
    objective over the feasible set is such a ray extreme, and the extreme's
    objective as a function of the direction has no non-global local maxima
    (the feasible set is convex), which makes direction-space hill climbing
    reliable.  The root of KL(t) = eta is found by bracketed Newton (KL is
    convex and increasing along the ray) and the returned point is always
    on the feasible side.
    """
    d = direction - direction.mean()
    norm = np.linalg.norm(d)
    if norm == 0:
        return base.copy()
    d = d / norm
    neg = d < 0
    t_face = float(np.min(base[neg] / -d[neg]))
    t_hi = t_face * (1.0 - 1e-12)

    def f_and_slope(t: float) -> tuple[float, float]:
        p = base + t * d
        log_ratio = np.log(p / base)
        return float(np.sum(p * log_ratio)) - eta, float(np.sum(d * log_ratio))

    f_hi, _ = f_and_slope(t_hi)
    if f_hi <= 0:
        # The ray exits through a simplex face while still inside the ball.
        p = np.clip(base + t_face * d, 0.0, None)
        return p / p.sum()

    lo, hi, t = 0.0, t_hi, t_hi
    for _ in range(iters):
        f, slope = f_and_slope(t)
        if f > 0:
            hi = t
        else:
            lo = t
        t_new = t - f / slope if slope > 0 else 0.5 * (lo + hi)
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= 1e-15 * max(t, 1.0):
            t = t_new
            break
        t = t_new
    if f_and_slope(t)[0] > 0:
        t = lo
    return base + t * d


def brute_force_worst_case(
    base: np.ndarray,
    g: np.ndarray,
    eta: float,
    samples: int = 10000,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, float]:
    """Directly search the KL ball for the distribution maximizing E_P[g].

    Dirichlet samples at several concentrations around the base seed the
    incumbent (each is also pushed out to the KL boundary along its ray,
    where the maximizer of a linear objective lives), then local ascent on
    the simplex refines it: greedy pairwise mass transfers followed by
    annealed random perturbations, every candidate pulled back inside the
    ball before evaluation.  Feasibility is never relaxed, so the returned
    objective is a true lower bound on the constrained maximum.
    """
    base = np.asarray(base, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = len(base)
    if n > 8:
        raise ValueError("brute-force oracle is limited to supports of size <= 8")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta == 0.0:
        return base.copy(), float(base @ g)
    if rng is None:
        rng = np.random.default_rng(0)

    best_p = base.copy()
    best_obj = float(base @ g)

    # Stage 1: Dirichlet sampling, feasible keeps plus boundary pushes.
    concentrations = (2.0, 8.0, 32.0, 128.0, 512.0)
    per = max(samples // len(concentrations), 1)
    for conc in concentrations:
        draws = rng.dirichlet(conc * n * base, size=per)
        objs = draws @ g
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(draws > 0, draws * np.log(draws / base), 0.0)
        kls = terms.sum(axis=1)
        feasible = kls <= eta
        if feasible.any():
            k = int(np.argmax(np.where(feasible, objs, -np.inf)))
            if objs[k] > best_obj:
                best_obj, best_p = float(objs[k]), draws[k].copy()
        # Push the most promising rays out to the boundary, where the
        # maximizer of a linear objective lives.
        for k in np.argsort(objs)[-12:]:
            pushed = _ray_extreme(base, draws[k] - base, eta)
            obj = float(pushed @ g)
            if obj > best_obj:
                best_obj, best_p = obj, pushed

    # Deterministic seed rays: toward each vertex and along the objective.
    seed_dirs = [np.eye(n)[k] - base for k in range(n)]
    seed_dirs.append(g - g.mean())
    for dir_ in seed_dirs:
        if np.linalg.norm(dir_ - dir_.mean()) == 0:
            continue
        pushed = _ray_extreme(base, dir_, eta)
        obj = float(pushed @ g)
        if obj > best_obj:
            best_obj, best_p = obj, pushed

    # Stage 2a: one sweep of pairwise mass transfers (coordinate ascent on
    # the simplex) to leave the incumbent on a sensible boundary point.
    for i in range(n):
        if best_p[i] <= 0:
            continue
        for j in range(n):
            if i == j or g[j] <= g[i]:
                continue
            move = np.zeros(n)
            move[i], move[j] = -best_p[i], best_p[i]
            cand = _boundary_pullback(best_p, best_p + move, base, eta, iters=25)
            obj = float(cand @ g)
            if obj > best_obj + 1e-12:
                best_obj, best_p = obj, cand

    # Stage 2b: cooled hill climb over ray directions.  Every candidate is
    # the farthest feasible point of a perturbed ray, so steps never
    # collapse against the boundary the way point-anchored moves do.
    cur_dir = best_p - base
    if np.linalg.norm(cur_dir) == 0:
        cur_dir = g - g.mean()
        if np.linalg.norm(cur_dir) == 0:
            return best_p, best_obj
    cur_dir = cur_dir / np.linalg.norm(cur_dir)
    proposals = max(24, samples // 400)
    step = 0.5
    while step > 1e-9:
        for k in range(proposals + 1):
            if k == 0:
                # Deterministic nudge toward the objective gradient.
                z = g - g.mean()
                zn = np.linalg.norm(z)
                if zn == 0:
                    continue
                cand_dir = cur_dir + step * z / zn
            else:
                cand_dir = cur_dir + step * rng.normal(size=n)
            p = _ray_extreme(base, cand_dir, eta)
            obj = float(p @ g)
            if obj > best_obj:
                best_obj, best_p = obj, p
                nrm = np.linalg.norm(cand_dir - cand_dir.mean())
                if nrm > 0:
                    cur_dir = (cand_dir - cand_dir.mean()) / nrm
        step *= 0.5
    return best_p, best_obj


def lagrange_alpha_for_eta(
    base: np.ndarray, g: np.ndarray, eta: float
) -> float:
    """Invert the alpha <-> radius correspondence by bisection.

    Finds alpha with KL(tilt_alpha || base) == eta, where tilt_alpha is the
    exponential tilt base * exp(g/alpha) / Z.  The realized KL is strictly
    decreasing in alpha for non-constant g, so bisection converges; eta
    must lie strictly between 0 and the small-alpha limit
    -log(base mass of the argmax-g set).
    """
    base = np.asarray(base, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    support = base > 0
    g_sup = g[support]
    if eta <= 0:
        raise ValueError("eta must be > 0")
    kl_max = -np.log(base[support][g_sup >= g_sup.max() - 1e-15].sum())
    if eta >= kl_max - 1e-12:
        raise ValueError(
            f"eta {eta} out of range: max achievable KL is {kl_max}"
        )

    def realized_kl(alpha: float) -> float:
        z = np.exp((g_sup - g_sup.max()) / alpha)
        w = base[support] * z
        p = w / w.sum()
        return _kl(p, base[support])

    lo, hi = 1.0, 1.0
    for _ in range(200):
        if realized_kl(lo) > eta:
            break
        lo *= 0.5
    for _ in range(200):
        if realized_kl(hi) < eta:
            break
        hi *= 2.0

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        kl_mid = realized_kl(mid)
        if abs(kl_mid - eta) <= 1e-13:
            return mid
        if kl_mid > eta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, lo):
            break
    return 0.5 * (lo + hi)


def finite_difference_gradient(
    loss_fn, params: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be > 0")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.ravel()
    grad_flat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = loss_fn(params)
        flat[k] = orig - step
        down = loss_fn(params)
        flat[k] = orig
        grad_flat[k] = (up - down) / (2.0 * step)
    return grad
