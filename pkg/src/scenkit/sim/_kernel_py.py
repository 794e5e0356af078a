"""Pure-Python time-stepping kernel.

Line-for-line mirror of ``_kernel.pyx``. Both must produce bit-identical
results: keep the floating-point expression order the same when editing
either file.
"""

import math

V80 = 80.0 / 3.6
LC_LOG_COLS = 6
COL_LOG_COLS = 3


def _less(lane, s, i, j):
    if lane[i] != lane[j]:
        return lane[i] < lane[j]
    if s[i] != s[j]:
        return s[i] < s[j]
    return i < j


def _resort(order, lane, s, n):
    # insertion sort, O(n) on the nearly sorted order kept between steps
    for k in range(1, n):
        x = order[k]
        m = k - 1
        while m >= 0 and _less(lane, s, x, order[m]):
            order[m + 1] = order[m]
            m -= 1
        order[m + 1] = x


def _neighbours(order, lane, s, n, i, tl, ring, road_length):
    """Return (lead, lag) indices of vehicle i's position in lane tl (-1 if none)."""
    lead = -1
    lag = -1
    first = -1
    last = -1
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
    return lead, lag


def _gap_ahead(s, length, i, j, ring, road_length):
    d = s[j] - s[i]
    if ring and d < 0.0:
        d = d + road_length
    return d - 0.5 * (length[i] + length[j])


def _w99(dx, v, vl, al, a, vdes, bmax, w, dt):
    cc0 = w[0]
    cc1 = w[1]
    cc2 = w[2]
    cc3 = w[3]
    cc4 = w[4]
    cc5 = w[5]
    cc6 = w[6] / 10000.0
    cc7 = w[7]
    cc8 = w[8]
    cc9 = w[9]
    vr = v
    if vr > V80:
        vr = V80
    amax = cc8 + (cc9 - cc8) * vr / V80
    acc = amax
    if dx < math.inf:
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
                    floor = -10.0 + 0.5 * math.sqrt(v)
                    if acc < floor:
                        acc = floor
        elif dv < sdvc and dx < sdxv:
            acc = 0.5 * dv * dv / (-dx + sdxc - 0.1)
            # no deeper than needed to leave the regime within this step
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
                    # slide along the upper following distance instead of
                    # overshooting into the following band
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


def _required_decel(dv, gap, cc0):
    if dv <= 0.0:
        return 0.0
    room = gap - cc0
    if room <= 0.0:
        return math.inf
    return dv * dv / (2.0 * room)


def run(lane_a, s_a, v_a, a_a, length_a, vdes_a, bmax_a, w99, lcp, lc_enabled,
        ring, road_length, n_lanes, dt, n_steps, record_every,
        out_lane, out_s, out_v, out_a, lc_log, col_log):
    """Advance the state arrays ``n_steps`` times; returns (n_lane_changes, n_collisions).

    State arrays are updated in place. Frames are written every
    ``record_every`` steps, frame 0 being the initial state.
    """
    n = len(s_a)
    lane = [int(x) for x in lane_a]
    s = [float(x) for x in s_a]
    v = [float(x) for x in v_a]
    a = [float(x) for x in a_a]
    length = [float(x) for x in length_a]
    vdes = [float(x) for x in vdes_a]
    bmax = [float(x) for x in bmax_a]
    w = [float(x) for x in w99]
    min_lead = float(lcp[0])
    min_lag = float(lcp[1])
    threshold = float(lcp[2])
    cooldown = float(lcp[3])
    lookahead = float(lcp[4])
    cc0 = w[0]
    lc_cap = lc_log.shape[0]
    col_cap = col_log.shape[0]

    since_lc = [cooldown for _ in range(n)]
    colliding = [False] * n
    order = list(range(n))
    lead_of = [-1] * n
    new_a = [0.0] * n
    n_lc = 0
    n_col = 0
    frame = 0

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
                cur_lead, _unused = _neighbours(order, lane, s, n, i, lane[i], ring, road_length)
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
                    lead, lag = _neighbours(order, lane, s, n, i, tl, ring, road_length)
                    lead_gap = math.inf
                    lag_gap = math.inf
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

        # leaders from the sorted order
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
                    colliding[i] = True
                else:
                    colliding[i] = False
                new_a[i] = _w99(dx, v[i], v[j], a[j], a[i], vdes[i], bmax[i], w, dt)
            else:
                colliding[i] = False
                acc = _w99(math.inf, v[i], v[i], 0.0, a[i], vdes[i], bmax[i], w, dt)
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

    for i in range(n):
        lane_a[i] = lane[i]
        s_a[i] = s[i]
        v_a[i] = v[i]
        a_a[i] = a[i]
    return n_lc, n_col
