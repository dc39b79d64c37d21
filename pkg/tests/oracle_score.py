"""Stand-alone reference scorer (stdlib only, shares no code with eidoflow).

Works on the plain fixtures from ``gen.score_fixture``: times in seconds,
points as (lat, lon), polygons as closed (lat, lon) rings, one text per member.
"""

import math
import re
import zlib

R = 6371008.8
DIM = 4096


def hav(a, b):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dp, dl = p2 - p1, math.radians(b[1] - a[1])
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * R * math.asin(min(1.0, math.sqrt(h)))


def inside(pt, ring):
    y, x = pt
    c = False
    for (y1, x1), (y2, x2) in zip(ring, ring[1:]):
        if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
            c = not c
    return c


def vec(text):
    counts = {}
    for tok in re.findall(r"[a-z0-9]+", text.lower()):
        k = zlib.crc32(tok.encode()) % DIM
        counts[k] = counts.get(k, 0) + 1
    return counts


def cos(a, b):
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if not na or not nb:
        return 0.0
    return sum(v * b.get(k, 0) for k, v in a.items()) / (na * nb)


def sigma(new, members, weights, strict_missing, h_t=7200.0, h_g=1000.0):
    latest = max(m["t"] for m in members)
    dt = abs(new["t"] - latest)
    pt = math.exp(-math.log(2) * dt / h_t)

    dg = None
    polys = [r for m in members for r in m["polygons"]]
    pts = [p for m in members for p in m["points"]]
    if new["points"] and (polys or pts):
        if any(inside(p, r) for p in new["points"] for r in polys):
            dg = 0.0
        else:
            dg = min(hav(p, q) for p in new["points"] for q in pts)
    pg = None if dg is None else math.exp(-math.log(2) * dg / h_g)

    vn = vec(new["text"])
    vs = [vec(m["text"]) for m in members]
    ps = None
    if vn and any(vs):
        ps = max(min(1.0, max(0.0, cos(vn, v))) for v in vs)

    total = sum(weights)
    w = [x / total for x in weights]
    terms = list(zip(w, (pt, pg, ps)))
    if strict_missing:
        return sum(x * (p or 0.0) for x, p in terms)
    avail = sum(x for x, p in terms if p is not None)
    if avail == 0:
        return 0.0
    return sum(x / avail * p for x, p in terms if p is not None)


def decide(fixture):
    """Exhaustive argmax; ties (1e-9) -> earliest creation, then smallest id."""
    best = None
    for inc in fixture["incidents"]:
        s = sigma(fixture["new"], inc["members"], fixture["weights"], fixture["strict_missing"])
        key = (inc["members"][0]["t"], inc["id"])
        if best is None or s > best[0] + 1e-9 or (abs(s - best[0]) <= 1e-9 and key < best[1]):
            best = (s, key, inc["id"])
    if best is not None and best[0] >= fixture["tau"]:
        return best[2]
    return None
