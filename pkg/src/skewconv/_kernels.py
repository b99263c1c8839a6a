"""Compiled event loop for the branching particle system on site occupancy counts."""

import numba as nb
import numpy as np

OK = 0
OVERFLOW = 1


@nb.njit(nogil=True, cache=True)
def systematic_round(rng, scaled):
    """Integer counts with floor(scaled) plus fractional parts placed by one uniform draw."""
    d = scaled.shape[0]
    out = np.empty(d, dtype=np.int64)
    u = rng.random()
    acc = 0.0
    for i in range(d):
        base = np.floor(scaled[i])
        out[i] = np.int64(base)
        lo = acc
        acc += scaled[i] - base
        # integers k with lo <= u + k < acc
        out[i] += np.int64(np.ceil(acc - u) - np.ceil(lo - u))
    return out


@nb.njit(nogil=True, cache=True)
def run_events(rng, counts, Q, branch, death, birth, imm, cluster_rates, cluster_seeds,
               g, probes, max_particles):
    """Gillespie simulation from `counts` at time 0 up to probes[-1].

    branch[x]  per-particle rate of a {0, 2} offspring event
    death[x]   extra per-particle death rate, birth[x] extra binary birth rate
    imm[x]     rate of single-particle immigrants at x
    cluster_*  arrival rates and (unrounded) particle counts of macroscopic clusters
    g          occupation weights; returns int_0^T sum_x g_x N_x(s) ds (in particle units)

    Returns (snapshots at probe times, occupation, status).
    """
    d = counts.shape[0]
    N = counts.copy()
    nprobe = probes.shape[0]
    snaps = np.zeros((nprobe, d), dtype=np.int64)
    horizon = probes[nprobe - 1]
    out_rate = np.empty(d)
    per_cap = np.empty(d)
    for x in range(d):
        out_rate[x] = -Q[x, x]
        per_cap[x] = out_rate[x] + branch[x] + death[x] + birth[x]
    imm_total = 0.0
    for x in range(d):
        imm_total += imm[x]
    clu_total = 0.0
    for a in range(cluster_rates.shape[0]):
        clu_total += cluster_rates[a]
    total_n = 0
    gN = 0.0
    for x in range(d):
        total_n += N[x]
        gN += g[x] * N[x]

    t = 0.0
    occ = 0.0
    p = 0
    status = OK
    while True:
        R = imm_total + clu_total
        for x in range(d):
            R += N[x] * per_cap[x]
        if R > 0.0:
            t_next = t + rng.standard_exponential() / R
        else:
            t_next = np.inf
        while p < nprobe and probes[p] < t_next:
            for x in range(d):
                snaps[p, x] = N[x]
            p += 1
        if t_next > horizon:
            occ += gN * (horizon - t)
            break
        occ += gN * (t_next - t)
        t = t_next

        u = rng.random() * R
        if u < imm_total:
            for x in range(d):
                if u < imm[x] or x == d - 1:
                    N[x] += 1
                    total_n += 1
                    gN += g[x]
                    break
                u -= imm[x]
        elif u < imm_total + clu_total:
            u -= imm_total
            a = 0
            while a < cluster_rates.shape[0] - 1 and u >= cluster_rates[a]:
                u -= cluster_rates[a]
                a += 1
            add = systematic_round(rng, cluster_seeds[a])
            for x in range(d):
                N[x] += add[x]
                total_n += add[x]
                gN += g[x] * add[x]
        else:
            u -= imm_total + clu_total
            x = 0
            while x < d - 1 and u >= N[x] * per_cap[x]:
                u -= N[x] * per_cap[x]
                x += 1
            u /= N[x]
            if u < out_rate[x]:
                y = 0
                acc = 0.0
                for y in range(d):
                    if y == x:
                        continue
                    acc += Q[x, y]
                    if u < acc:
                        break
                N[x] -= 1
                N[y] += 1
                gN += g[y] - g[x]
            else:
                u -= out_rate[x]
                if u < branch[x]:
                    delta = 1 if u < 0.5 * branch[x] else -1
                elif u < branch[x] + death[x]:
                    delta = -1
                else:
                    delta = 1
                N[x] += delta
                total_n += delta
                gN += delta * g[x]
        if total_n > max_particles:
            status = OVERFLOW
            break
    return snaps, occ, status
