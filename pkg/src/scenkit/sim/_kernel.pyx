# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping kernel.

Mirror of ``_kernel_py.py``; see there for the shared contract. Expression
order is kept identical so both produce bit-identical traces.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cdef double V80 = 80.0 / 3.6


cdef inline bint _less(int[::1] lane, double[::1] s, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    if lane[i] != lane[j]:
        return lane[i] < lane[j]
    if s[i] != s[j]:
        return s[i] < s[j]
    return i < j


cdef void _resort(Py_ssize_t[::1] order, int[::1] lane, double[::1] s, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k, m, x
    for k in range(1, n):
        x = order[k]
        m = k - 1
        while m >= 0 and _less(lane, s, x, order[m]):
            order[m + 1] = order[m]
            m -= 1
        order[m + 1] = x


cdef void _neighbours(Py_ssize_t[::1] order, int[::1] lane, double[::1] s, Py_ssize_t n,
                      Py_ssize_t i, int tl, bint ring,
                      Py_ssize_t* lead_out, Py_ssize_t* lag_out) noexcept nogil:
    cdef Py_ssize_t lead = -1, lag = -1, first = -1, last = -1, k, j
    for k in range(n):
        j = order[k]
        if j == i or lane[j] != tl:
            continue
        if first < 0:
            first = j
        last = j
        if s[j] >= s[i]:
            if lead < 0:
                lead = j
        else:
            lag = j
    if ring:
        if lead < 0:
            lead = first
        if lag < 0:
            lag = last
    lead_out[0] = lead
    lag_out[0] = lag


cdef inline double _gap_ahead(double[::1] s, double[::1] length, Py_ssize_t i, Py_ssize_t j,
                              bint ring, double road_length) noexcept nogil:
    cdef double d = s[j] - s[i]
    if ring and d < 0.0:
        d = d + road_length
    return d - 0.5 * (length[i] + length[j])


cdef double _w99(double dx, double v, double vl, double al, double a, double vdes,
                 double bmax, double[::1] w, double dt) noexcept nogil:
    cdef double cc0 = w[0], cc1 = w[1], cc2 = w[2], cc3 = w[3], cc4 = w[4]
    cdef double cc5 = w[5], cc6 = w[6] / 10000.0, cc7 = w[7], cc8 = w[8], cc9 = w[9]
    cdef double vr, amax, acc, dv, sdxc, sdxo, sdxv, sdv, sdvc, sdvo, floor_, lim, cap
    vr = v
    if vr > V80:
        vr = V80
    amax = cc8 + (cc9 - cc8) * vr / V80
    acc = amax
    if dx < INFINITY:
        dv = vl - v
        sdxc = cc0 + cc1 * v
        sdxo = sdxc + cc2
        sdxv = sdxo + cc3 * (dv - cc4)
        sdv = cc6 * dx * dx
        if vl > 0.0:
            sdvc = cc4 - sdv
        else:
            sdvc = 0.0
        if v > cc5:
            sdvo = cc5 + sdv
        else:
            sdvo = sdv
        if dv < sdvo and dx <= sdxc:
            acc = 0.0
            if v > 0.0:
                if dv < 0.0:
                    if dx > cc0:
                        acc = al + dv * dv / (cc0 - dx)
                    else:
                        acc = al + 0.5 * (dv - sdvo)
                    if acc > 0.0:
                        acc = 0.0
                if acc > -cc7:
                    acc = -cc7
                else:
                    floor_ = -10.0 + 0.5 * sqrt(v)
                    if acc < floor_:
                        acc = floor_
        elif dv < sdvc and dx < sdxv:
            acc = 0.5 * dv * dv / (-dx + sdxc - 0.1)
            lim = (dv - sdvc) / dt
            if acc < lim:
                acc = lim
            if acc < -10.0:
                acc = -10.0
        elif dv < sdvo and dx < sdxo:
            if a <= 0.0:
                acc = -cc7
            else:
                acc = cc7
                if acc > amax:
                    acc = amax
        else:
            if dx > sdxc:
                if dx < sdxo:
                    acc = dv * dv / (sdxo - dx)
                    if acc > amax:
                        acc = amax
                else:
                    acc = amax
                    lim = (dx - sdxo + dv * dt) / (dt * (cc1 + dt))
                    if lim < cc7:
                        lim = cc7
                    if acc > lim:
                        acc = lim
            else:
                acc = 0.0
    cap = (vdes - v) / dt
    if acc > cap:
        acc = cap
    if acc < -bmax:
        acc = -bmax
    return acc


cdef inline double _required_decel(double dv, double gap, double cc0) noexcept nogil:
    cdef double room
    if dv <= 0.0:
        return 0.0
    room = gap - cc0
    if room <= 0.0:
        return INFINITY
    return dv * dv / (2.0 * room)


def run(int[::1] lane, double[::1] s, double[::1] v, double[::1] a,
        const double[::1] length_in, const double[::1] vdes_in, const double[::1] bmax_in,
        const double[::1] w99, const double[::1] lcp, bint lc_enabled,
        bint ring, double road_length, int n_lanes, double dt, Py_ssize_t n_steps,
        Py_ssize_t record_every,
        int[:, ::1] out_lane, double[:, ::1] out_s, double[:, ::1] out_v, double[:, ::1] out_a,
        double[:, ::1] lc_log, double[:, ::1] col_log):
    """Advance the state arrays ``n_steps`` times; returns (n_lane_changes, n_collisions)."""
    cdef Py_ssize_t n = s.shape[0]
    cdef double[::1] length = np.array(length_in, dtype=np.float64)
    cdef double[::1] vdes = np.array(vdes_in, dtype=np.float64)
    cdef double[::1] bmax = np.array(bmax_in, dtype=np.float64)
    cdef double[::1] w = np.array(w99, dtype=np.float64)
    cdef double min_lead = lcp[0], min_lag = lcp[1], threshold = lcp[2]
    cdef double cooldown = lcp[3], lookahead = lcp[4]
    cdef double cc0 = w[0]
    cdef Py_ssize_t lc_cap = lc_log.shape[0], col_cap = col_log.shape[0]

    cdef double[::1] since_lc = np.full(n, cooldown, dtype=np.float64)
    cdef cnp.uint8_t[::1] colliding = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t[::1] order = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] lead_of = np.full(n, -1, dtype=np.intp)
    cdef double[::1] new_a = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t n_lc = 0, n_col = 0, frame = 0
    cdef Py_ssize_t step, i, j, k, m, side, cur_lead, unused, lead, lag
    cdef int tl, best_lane
    cdef double t, g, cur_speed, best_speed, best_lead_gap, best_lag_gap
    cdef double lead_gap, lag_gap, tl_speed, dx, acc, vn, sn

    with nogil:
        for i in range(n):
            out_lane[0, i] = lane[i]
            out_s[0, i] = s[i]
            out_v[0, i] = v[i]
            out_a[0, i] = a[i]
        frame = 1

        for step in range(n_steps):
            t = step * dt
            _resort(order, lane, s, n)

            if lc_enabled:
                for i in range(n):
                    if since_lc[i] < cooldown:
                        continue
                    if vdes[i] - v[i] <= threshold:
                        continue
                    _neighbours(order, lane, s, n, i, lane[i], ring, &cur_lead, &unused)
                    cur_speed = vdes[i]
                    if cur_lead >= 0:
                        g = _gap_ahead(s, length, i, cur_lead, ring, road_length)
                        if g < lookahead and v[cur_lead] < cur_speed:
                            cur_speed = v[cur_lead]
                    best_lane = -1
                    best_speed = cur_speed
                    best_lead_gap = 0.0
                    best_lag_gap = 0.0
                    for side in range(2):
                        if side == 0:
                            tl = lane[i] + 1
                        else:
                            tl = lane[i] - 1
                        if tl < 0 or tl >= n_lanes:
                            continue
                        _neighbours(order, lane, s, n, i, tl, ring, &lead, &lag)
                        lead_gap = INFINITY
                        lag_gap = INFINITY
                        tl_speed = vdes[i]
                        if lead >= 0:
                            lead_gap = _gap_ahead(s, length, i, lead, ring, road_length)
                            if lead_gap < lookahead and v[lead] < tl_speed:
                                tl_speed = v[lead]
                            if lead_gap < min_lead:
                                continue
                            if _required_decel(v[i] - v[lead], lead_gap, cc0) > bmax[i]:
                                continue
                        if lag >= 0:
                            lag_gap = _gap_ahead(s, length, lag, i, ring, road_length)
                            if lag_gap < min_lag:
                                continue
                            if _required_decel(v[lag] - v[i], lag_gap, cc0) > bmax[lag]:
                                continue
                        if tl_speed > best_speed:
                            best_lane = tl
                            best_speed = tl_speed
                            best_lead_gap = lead_gap
                            best_lag_gap = lag_gap
                    if best_lane >= 0:
                        if n_lc < lc_cap:
                            lc_log[n_lc, 0] = t
                            lc_log[n_lc, 1] = i
                            lc_log[n_lc, 2] = lane[i]
                            lc_log[n_lc, 3] = best_lane
                            lc_log[n_lc, 4] = best_lead_gap
                            lc_log[n_lc, 5] = best_lag_gap
                        n_lc += 1
                        lane[i] = best_lane
                        since_lc[i] = 0.0
                        _resort(order, lane, s, n)

            for k in range(n):
                i = order[k]
                j = -1
                if k + 1 < n and lane[order[k + 1]] == lane[i]:
                    j = order[k + 1]
                elif ring:
                    m = k
                    while m > 0 and lane[order[m - 1]] == lane[i]:
                        m -= 1
                    if order[m] != i:
                        j = order[m]
                lead_of[i] = j

            for i in range(n):
                j = lead_of[i]
                if j >= 0:
                    dx = _gap_ahead(s, length, i, j, ring, road_length)
                    if dx < 0.0:
                        if not colliding[i]:
                            if n_col < col_cap:
                                col_log[n_col, 0] = t
                                col_log[n_col, 1] = i
                                col_log[n_col, 2] = j
                            n_col += 1
                        colliding[i] = 1
                    else:
                        colliding[i] = 0
                    new_a[i] = _w99(dx, v[i], v[j], a[j], a[i], vdes[i], bmax[i], w, dt)
                else:
                    colliding[i] = 0
                    acc = _w99(INFINITY, v[i], v[i], 0.0, a[i], vdes[i], bmax[i], w, dt)
                    new_a[i] = acc

            for i in range(n):
                acc = new_a[i]
                vn = v[i] + acc * dt
                if vn < 0.0:
                    vn = 0.0
                    acc = -v[i] / dt
                v[i] = vn
                a[i] = acc
                sn = s[i] + vn * dt
                if ring and sn >= road_length:
                    sn = sn - road_length
                s[i] = sn
                since_lc[i] = since_lc[i] + dt

            if (step + 1) % record_every == 0:
                for i in range(n):
                    out_lane[frame, i] = lane[i]
                    out_s[frame, i] = s[i]
                    out_v[frame, i] = v[i]
                    out_a[frame, i] = a[i]
                frame += 1

    return n_lc, n_col
