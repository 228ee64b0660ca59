# SPDX-License-Identifier: Apache-2.0
"""Nominal GX11 / EX12 model documents and the pinch gesture fixture.

Run from the repository root:  python3 tools/fixtures/geometry.py
Writes data/models/*.json and data/gestures/*.jsonl.
"""
import json
import math
import os
import sys

import numpy as np
from scipy.optimize import minimize

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))


def joint(name, t, rpy, axis, lo, hi, mid):
    return {
        "name": name,
        "origin_translation": list(t),
        "origin_rpy": list(rpy),
        "axis": list(axis),
        "limit_lo_deg": lo,
        "limit_hi_deg": hi,
        "motor_id": mid,
        "zero_tick": 2048,
    }


def long_finger(name, base, links, first_id):
    p, m, d = links
    return {
        "name": name,
        "tip_offset": [0.0, 0.0, d],
        "joints": [
            joint(f"{name}_mcp_abd", base, (0, 0, 0), (1, 0, 0), -25, 25, first_id),
            joint(f"{name}_mcp_flex", (0, 0, 0.004), (0, 0, 0), (0, 1, 0), -10, 95, first_id + 1),
            joint(f"{name}_pip", (0, 0, p), (0, 0, 0), (0, 1, 0), 0, 105, first_id + 2),
            joint(f"{name}_dip", (0, 0, m), (0, 0, 0), (0, 1, 0), 0, 90, first_id + 3),
        ],
    }


THUMB_BASE = (0.022, 0.032, 0.018)
THUMB_RPY = (-0.4, 0.0, 0.0)


def thumb(links, first_id, glove):
    meta, prox, dist = links
    joints = []
    mid = first_id
    if glove:
        joints.append(joint("thumb_cmc_abd", THUMB_BASE, (0, 0, 0), (1, 0, 0), -30, 30, mid))
        mid += 1
        base = (0, 0, 0)
    else:
        base = THUMB_BASE
    joints += [
        joint("thumb_cmc_opp", base, (0, 0, 0), (0, 0, -1), -20, 100, mid),
        joint("thumb_mcp", (0, meta, 0), THUMB_RPY, (0, 1, 0), -10, 90, mid + 1),
        joint("thumb_ip", (0, 0, prox), (0, 0, 0), (0, 1, 0), -5, 90, mid + 2),
    ]
    return {"name": "thumb", "tip_offset": [0.0, 0.0, dist], "joints": joints}


def gx11():
    return {
        "name": "gx11",
        "palm_frame": {"translation": [0, 0, 0], "rpy": [0, 0, 0]},
        "fingers": [
            thumb((0.030, 0.036, 0.030), 0, glove=False),
            long_finger("index", (0.0, 0.016, 0.085), (0.045, 0.030, 0.026), 3),
            long_finger("middle", (0.0, -0.016, 0.088), (0.045, 0.030, 0.026), 7),
        ],
    }


def ex12():
    return {
        "name": "ex12",
        "palm_frame": {"translation": [0, 0, 0], "rpy": [0, 0, 0]},
        "fingers": [
            thumb((0.031, 0.037, 0.029), 0, glove=True),
            long_finger("index", (0.0, 0.017, 0.086), (0.044, 0.031, 0.025), 4),
            long_finger("middle", (0.0, -0.016, 0.089), (0.044, 0.031, 0.025), 8),
        ],
    }


# --- forward kinematics (homogeneous matrices, fixed-axis X-Y-Z rpy) ---

def rpy_matrix(r, p, y):
    cr, sr, cp, sp, cy, sy = math.cos(r), math.sin(r), math.cos(p), math.sin(p), math.cos(y), math.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def axis_angle(axis, a):
    k = np.array(axis, float)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(a) * K + (1 - math.cos(a)) * K @ K


def hom(R, t):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def tip(model, finger, q):
    pf = model["palm_frame"]
    T = hom(rpy_matrix(*pf["rpy"]), pf["translation"])
    f = [f for f in model["fingers"] if f["name"] == finger][0]
    for j, a in zip(f["joints"], q):
        T = T @ hom(rpy_matrix(*j["origin_rpy"]), j["origin_translation"]) @ hom(axis_angle(j["axis"], a), [0, 0, 0])
    return (T @ np.array(f["tip_offset"] + [1.0]))[:3]


def limits(model, finger):
    f = [f for f in model["fingers"] if f["name"] == finger][0]
    return [(math.radians(j["limit_lo_deg"]), math.radians(j["limit_hi_deg"])) for j in f["joints"]]


def pinch_pose(model, thumb_seed, index_seed, pinned=()):
    """Find thumb/index joint values that bring the two tips together.

    Joints listed in `pinned` are held near their seed value.
    """
    nt = len(limits(model, "thumb"))
    lo_hi = limits(model, "thumb") + limits(model, "index")
    seed = np.array(thumb_seed + index_seed)
    w = np.full(len(seed), 1e-2)
    for k in pinned:
        w[k] = 100.0

    def cost(x):
        d = tip(model, "thumb", x[:nt]) - tip(model, "index", x[nt:])
        return 1e6 * d @ d + np.sum(w * (x - seed) ** 2)

    res = minimize(cost, seed, bounds=lo_hi, method="L-BFGS-B", options={"ftol": 1e-16, "gtol": 1e-12})
    return res.x[:nt], res.x[nt:]


def main():
    hand, glove = gx11(), ex12()
    d = math.radians
    thumb_seed = [d(4), d(60), d(30), d(30)]
    index_seed = [0.0, d(45), d(35), d(20)]
    tq, iq = pinch_pose(glove, thumb_seed, index_seed, pinned=(0, 4))
    gap = np.linalg.norm(tip(glove, "thumb", tq) - tip(glove, "index", iq))
    print("glove pinch thumb", np.degrees(tq), "index", np.degrees(iq), "gap mm", gap * 1e3)
    print("pinch point", tip(glove, "index", iq))
    mq = np.array([0.0, d(50), d(45), d(30)])
    print("middle tip", tip(glove, "middle", mq))
    # hand reachability of the same pinch point
    gt, gi = tip(glove, "thumb", tq), tip(glove, "index", iq)

    def fit(x):
        return np.sum((tip(hand, "thumb", x[:3]) - gt) ** 2) + np.sum((tip(hand, "index", x[3:]) - gi) ** 2)

    r = minimize(fit, np.concatenate([tq[1:], iq]), bounds=limits(hand, "thumb") + limits(hand, "index"),
                 method="L-BFGS-B", options={"ftol": 1e-20, "gtol": 1e-14})
    print("hand best fit", np.degrees(r.x), "residual mm", math.sqrt(r.fun) * 1e3)

    if "--write" not in sys.argv:
        return
    for m in (hand, glove):
        with open(os.path.join(ROOT, "data", "models", m["name"] + ".json"), "w") as fh:
            json.dump(m, fh, indent=2)
            fh.write("\n")

    open_pose = np.zeros(12)
    open_pose[1] = d(20)
    open_pose[5] = d(10)
    open_pose[9] = d(10)
    close_pose = np.concatenate([tq, iq, mq])
    rate = 100.0
    lines = []
    n = int(3.0 * rate)
    for k in range(n):
        t = k / rate
        if t < 0.3:
            s = 0.0
        elif t < 1.3:
            x = (t - 0.3) / 1.0
            s = x * x * (3 - 2 * x)
        else:
            s = 1.0
        q = open_pose + s * (close_pose - open_pose)
        lines.append(json.dumps({"t": round(t, 6), "q_glove": [round(float(v), 6) for v in np.degrees(q)]}))
    with open(os.path.join(ROOT, "data", "gestures", "pinch.jsonl"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
