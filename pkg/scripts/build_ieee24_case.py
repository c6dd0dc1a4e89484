"""Emit the bundled IEEE 24-bus planning case.

Branch impedances/charging are the RTS-24 values; loads and generator limits
are the standard 3x-scaled planning variant (8550 MW / 1740 MVAr in year 1).
Corridors are sorted lexicographically by bus pair, which fixes the corridor
numbering used in reports. Costs in 1e6 USD. Run from the repo root:

    python scripts/build_ieee24_case.py
"""
import json
from pathlib import Path

# from, to, r, x, b(half-charging total per circuit), rating MVA, cost 1e6$, existing
BRANCHES = [
    (1, 2, 0.0026, 0.0139, 0.4611, 230, 3, 1),
    (1, 3, 0.0546, 0.2112, 0.0572, 230, 55, 1),
    (1, 5, 0.0218, 0.0845, 0.0229, 230, 22, 1),
    (1, 8, 0.0348, 0.1344, 0.0363, 230, 35, 0),
    (2, 4, 0.0328, 0.1267, 0.0343, 230, 33, 1),
    (2, 6, 0.0497, 0.1920, 0.0520, 230, 50, 1),
    (2, 8, 0.0328, 0.1267, 0.0343, 230, 33, 0),
    (3, 9, 0.0308, 0.1190, 0.0322, 230, 31, 1),
    (3, 24, 0.0023, 0.0839, 0.0, 520, 50, 1),
    (4, 9, 0.0268, 0.1037, 0.0281, 230, 27, 1),
    (5, 10, 0.0228, 0.0883, 0.0239, 230, 23, 1),
    (6, 7, 0.0497, 0.1920, 0.0520, 230, 50, 0),
    (6, 10, 0.0139, 0.0605, 2.4590, 230, 16, 1),
    (7, 8, 0.0159, 0.0614, 0.0166, 230, 16, 1),
    (8, 9, 0.0427, 0.1651, 0.0447, 230, 43, 1),
    (8, 10, 0.0427, 0.1651, 0.0447, 230, 43, 1),
    (9, 11, 0.0023, 0.0839, 0.0, 520, 50, 1),
    (9, 12, 0.0023, 0.0839, 0.0, 520, 50, 1),
    (10, 11, 0.0023, 0.0839, 0.0, 520, 50, 1),
    (10, 12, 0.0023, 0.0839, 0.0, 520, 50, 1),
    (11, 13, 0.0061, 0.0476, 0.0999, 640, 66, 1),
    (11, 14, 0.0054, 0.0418, 0.0879, 640, 58, 1),
    (12, 13, 0.0061, 0.0476, 0.0999, 640, 66, 1),
    (12, 23, 0.0124, 0.0966, 0.2030, 640, 134, 1),
    (13, 14, 0.0057, 0.0447, 0.0940, 640, 62, 0),
    (13, 23, 0.0111, 0.0865, 0.1818, 640, 120, 1),
    (14, 16, 0.0050, 0.0389, 0.0818, 640, 54, 1),
    (14, 23, 0.0080, 0.0620, 0.1304, 640, 86, 0),
    (15, 16, 0.0022, 0.0173, 0.0364, 640, 24, 1),
    (15, 21, 0.0063, 0.0490, 0.1030, 640, 68, 2),
    (15, 24, 0.0067, 0.0519, 0.1091, 640, 72, 1),
    (16, 17, 0.0033, 0.0259, 0.0545, 640, 36, 1),
    (16, 19, 0.0030, 0.0231, 0.0485, 640, 32, 1),
    (16, 23, 0.0105, 0.0822, 0.1729, 640, 114, 0),
    (17, 18, 0.0018, 0.0144, 0.0303, 640, 20, 1),
    (17, 22, 0.0135, 0.1053, 0.2212, 640, 146, 1),
    (18, 21, 0.0033, 0.0259, 0.0545, 640, 36, 2),
    (19, 20, 0.0051, 0.0396, 0.0833, 640, 55, 2),
    (19, 23, 0.0078, 0.0606, 0.1275, 640, 84, 0),
    (20, 23, 0.0028, 0.0216, 0.0455, 640, 30, 2),
    (21, 22, 0.0087, 0.0678, 0.1424, 640, 94, 1),
]

# bus: (P, Q) at 3x the RTS base load
LOADS = {
    1: (324, 66), 2: (291, 60), 3: (540, 111), 4: (222, 45), 5: (213, 42),
    6: (408, 84), 7: (375, 75), 8: (513, 105), 9: (525, 108), 10: (585, 120),
    13: (795, 162), 14: (582, 117), 15: (951, 192), 16: (300, 60),
    18: (999, 204), 19: (543, 111), 20: (384, 78),
}

# bus: (p_max, q_min, q_max) at 3x the RTS aggregate unit data
GENS = {
    1: (576, -150, 240), 2: (576, -150, 240), 7: (900, 0, 540),
    13: (1773, 0, 720), 14: (0, -150, 600), 15: (645, -150, 330),
    16: (465, -150, 240), 18: (1200, -150, 600), 21: (1200, -150, 600),
    22: (900, -180, 288), 23: (1980, -375, 930),
}

SLACK = 13


def main():
    assert sum(p for p, _ in LOADS.values()) == 8550
    assert sum(q for _, q in LOADS.values()) == 1740
    branches = sorted(BRANCHES)
    assert [b[:2] for b in branches] == [b[:2] for b in BRANCHES], "keep table sorted"
    buses = []
    for i in range(1, 25):
        t = "slack" if i == SLACK else ("pv" if i in GENS else "pq")
        buses.append({"id": i, "type": t})
    case = {
        "meta": {
            "name": "ieee24",
            "comment": (
                "IEEE 24-bus planning case: RTS network at 3x load, ratings "
                "rescaled per voltage class for the 3x loading "
                "(8550 MW / 1740 MVAr in year 1) with 41 candidate corridors, "
                "at most 3 new circuits each. Costs in 1e6 USD. Corridor numbering "
                "is the catalog order (sorted by bus pair)."
            ),
            "base_mva": 100.0,
            "horizon": 3,
            "growth_factors": [1.0, 1.05, 1.1],
            "discount_factors": [1.0, 0.729, 0.478],
            "currency_unit": "1e6 USD",
        },
        "buses": buses,
        "generators": [
            {"bus": b, "p_min": 0.0, "p_max": pm, "q_min": qn, "q_max": qx}
            for b, (pm, qn, qx) in sorted(GENS.items())
        ],
        "loads": [
            {"bus": b, "p": float(p), "q": float(q)} for b, (p, q) in sorted(LOADS.items())
        ],
        "corridors": [
            {"from": f, "to": t, "r": r, "x": x, "b": b, "rating": float(rate),
             "cost": float(cost), "max_new": 3, "existing": n0}
            for f, t, r, x, b, rate, cost, n0 in branches
        ],
        "limits": {"v_base_pct": 5.0, "v_cont_pct": 10.0, "l_max": 0.4},
    }
    out = Path(__file__).resolve().parents[1] / "src/gridplan/cases/ieee24.case"
    out.write_text(json.dumps(case, indent=1) + "\n")
    print(f"wrote {out} ({len(branches)} corridors)")


if __name__ == "__main__":
    main()