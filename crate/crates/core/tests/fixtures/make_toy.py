"""Builds the toy fixture and its golden reports.

The golden files are computed here straight from the formulas, with no
code shared with the crate. Run from this directory:

    python3 make_toy.py
"""

import csv
import math
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
TOY = os.path.join(HERE, "toy")
GOLDEN = os.path.join(HERE, "golden")

rng = np.random.default_rng(20140501)

CITIES = [f"c{i:02d}" for i in range(1, 25)]
OCCS = [
    "11-1021", "13-2011", "15-1132", "17-2141", "19-1042",
    "25-2021", "29-1141", "31-1014", "33-3051", "35-2014",
    "37-2011", "39-9011", "41-2031", "43-4051", "43-9061",
    "45-2092", "47-2061", "49-3023", "51-2092", "53-3032",
]
SKILLS = [
    ("2.A.1.a", "Reading Comprehension"), ("2.A.1.b", "Active Listening"),
    ("2.A.1.c", "Writing"), ("2.A.1.e", "Mathematics"),
    ("2.A.2.a", "Critical Thinking"), ("2.B.1.a", "Social Perceptiveness"),
    ("2.B.2.i", "Complex Problem Solving"), ("2.B.3.a", "Operations Analysis"),
    ("2.B.3.e", "Programming"), ("2.B.3.k", "Equipment Maintenance"),
    ("2.B.4.e", "Judgment and Decision Making"), ("2.B.5.a", "Time Management"),
    ("1.A.2.a.2", "Manual Dexterity"), ("1.A.2.a.3", "Finger Dexterity"),
]
NO_SKILLS = "45-2092"        # no skill rows at all
ZERO_SKILLS = "47-2061"      # rows present, every importance zero
ONE_SKILL = "53-3032"        # a single positive importance
NO_PROB = ["39-9011", "49-3023"]
PROB_ONLY = "99-9999"

# Hand-assigned job clusters for the shift golden file.
CLUSTERS = {
    "11-1021": 0, "13-2011": 0, "15-1132": 0, "17-2141": 0, "19-1042": 0,
    "25-2021": 1, "29-1141": 1, "31-1014": 1, "39-9011": 1,
    "33-3051": 2, "43-4051": 2, "43-9061": 2, "41-2031": 2,
    "35-2014": 3, "37-2011": 3, "53-3032": 3,
    "47-2061": 4, "49-3023": 4, "51-2092": 4,
}

SHIFT_PAIR = ("c05", "c20")


def fmt(x):
    """Twelve significant digits, shortest form, exponent only when tiny or huge."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    r = float(f"{x:.11e}")
    if r == 0.0:
        return "0"
    if abs(r) < 1e-5 or abs(r) >= 1e15:
        return np.format_float_scientific(r, unique=True, trim="-", exp_digits=1)
    return np.format_float_positional(r, unique=True, trim="-")


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def build():
    log_size = np.linspace(3.3, 5.7, len(CITIES)) + rng.uniform(-0.05, 0.05, len(CITIES))
    employment = {}
    for ci, c in enumerate(CITIES):
        n = 10 ** log_size[ci]
        present = rng.random(len(OCCS)) < 0.85
        present[:3] = True
        rows = {}
        for oi, o in enumerate(OCCS):
            if not present[oi]:
                continue
            # Knowledge work grows with size, routine work shrinks.
            tilt = (oi - 10) / 10.0 * (log_size[ci] - 4.5) * -0.6
            w = n / len(OCCS) * math.exp(tilt + rng.normal(0, 0.3))
            rows[o] = int(max(1, round(w)))
        employment[c] = rows
    # Explicit zero rows.
    employment["c03"]["45-2092"] = 0
    employment["c11"]["15-1132"] = 0

    skills = {}
    for oi, o in enumerate(OCCS):
        if o == NO_SKILLS:
            continue
        if o == ZERO_SKILLS:
            skills[o] = {s: 0.0 for s, _ in SKILLS[:5]}
            continue
        if o == ONE_SKILL:
            skills[o] = {"1.A.2.a.2": 0.8}
            continue
        base = np.zeros(len(SKILLS))
        block = oi % 4
        for si in range(len(SKILLS)):
            hi = (si % 4) == block
            v = rng.uniform(0.55, 0.95) if hi else rng.uniform(0.05, 0.45)
            if not hi and rng.random() < 0.25:
                v = 0.0
            base[si] = round(v, 3)
        skills[o] = {SKILLS[si][0]: base[si] for si in range(len(SKILLS)) if base[si] > 0 or rng.random() < 0.5}

    probs = {}
    for oi, o in enumerate(OCCS):
        if o in NO_PROB:
            continue
        probs[o] = round(min(0.99, max(0.01, 0.05 + 0.045 * oi + rng.uniform(-0.08, 0.08))), 3)
    probs[PROB_ONLY] = 0.5

    covariates = {}
    for ci, c in enumerate(CITIES):
        if c == "c24":
            continue
        total = sum(employment[c].values())
        covariates[c] = [
            str(int(total * 1.15)),
            str(int(38000 + 6000 * (log_size[ci] - 3.3) + rng.normal(0, 2500))),
            f"{min(60.0, max(8.0, 18 + 6 * (log_size[ci] - 3.3) + rng.normal(0, 3))):.1f}",
            f"{30000 + 9000 * (log_size[ci] - 3.3) + rng.normal(0, 4000):.0f}",
        ]
    covariates["c07"][3] = ""
    return employment, skills, probs, covariates


def write_inputs(employment, skills, probs, covariates):
    rows = []
    for c in CITIES:
        for o, w in sorted(employment[c].items()):
            rows.append([c, f"City {c[1:]}", o, w])
    write(os.path.join(TOY, "employment.csv"), ["city_id", "city_name", "occ_code", "workers"], rows)
    names = dict(SKILLS)
    rows = []
    for o in sorted(skills):
        for s, v in sorted(skills[o].items()):
            rows.append([o, s, names[s], fmt(float(v))])
    write(os.path.join(TOY, "skills.csv"), ["occ_code", "skill_id", "skill_name", "importance"], rows)
    write(os.path.join(TOY, "probs.csv"), ["occ_code", "p_auto"], [[o, fmt(p)] for o, p in sorted(probs.items())])
    write(
        os.path.join(TOY, "covariates.csv"),
        ["city_id", "total_employment", "median_income", "pct_bachelor", "gdp_per_capita"],
        [[c] + v for c, v in sorted(covariates.items())],
    )
    write(os.path.join(TOY, "clusters.csv"), ["occ_code", "cluster_id"], sorted(CLUSTERS.items()))


def read_back():
    """Re-reads the written CSVs so the oracle sees exactly the fixture values."""
    emp = {}
    with open(os.path.join(TOY, "employment.csv")) as f:
        for r in csv.DictReader(f):
            emp.setdefault(r["city_id"], {})[r["occ_code"]] = float(r["workers"])
    imp = {}
    with open(os.path.join(TOY, "skills.csv")) as f:
        for r in csv.DictReader(f):
            imp.setdefault(r["occ_code"], {})[r["skill_id"]] = float(r["importance"])
    p = {}
    with open(os.path.join(TOY, "probs.csv")) as f:
        for r in csv.DictReader(f):
            p[r["occ_code"]] = float(r["p_auto"])
    return emp, imp, p


def norm_entropy(ps):
    nz = [x for x in ps if x > 0]
    if len(nz) < 2:
        return 0.0
    return -math.fsum(x * math.log(x) for x in nz) / math.log(len(nz))


def golden(emp, imp, p):
    skill_ids = sorted({s for o in imp for s in imp[o]})
    # Relative skill importance per job, only for jobs with a positive importance.
    rel = {}
    for o, row in imp.items():
        tot = math.fsum(v for v in row.values() if v > 0)
        if tot > 0:
            rel[o] = {s: v / tot for s, v in row.items() if v > 0}
    h_job_skill = {o: norm_entropy(list(r.values())) for o, r in rel.items()}

    metrics = []
    for c in sorted(emp):
        jobs = emp[c]
        size = math.fsum(jobs.values())
        h_job = norm_entropy([w / size for w in jobs.values()])
        cov = {o: w for o, w in jobs.items() if o in p}
        cov_tot = math.fsum(cov.values())
        e = math.fsum(p[o] * w / cov_tot for o, w in cov.items())
        sk = {o: w for o, w in jobs.items() if o in rel}
        sk_tot = math.fsum(sk.values())
        pm_j = {o: w / sk_tot for o, w in sk.items()}
        pm_s = [math.fsum(rel[o].get(s, 0.0) * pm_j[o] for o in pm_j) for s in skill_ids]
        h_skill = norm_entropy(pm_s)
        if h_skill > 0:
            t = math.fsum(pm_j[o] * (h_skill - h_job_skill[o]) / h_skill for o in pm_j)
        else:
            t = 0.0
        metrics.append([c, size, e, h_job, h_skill, t, 1 - t, cov_tot / size])
    write(
        os.path.join(GOLDEN, "metrics.csv"),
        ["city_id", "size", "E", "H_job", "H_skill", "T", "one_minus_T", "coverage"],
        [[r[0]] + [fmt(x) for x in r[1:]] for r in metrics],
    )

    m, n = SHIFT_PAIR

    def shares(c):
        cov = {o: w for o, w in emp[c].items() if o in p}
        tot = math.fsum(cov.values())
        return {o: w / tot for o, w in cov.items()}

    sm, sn = shares(m), shares(n)
    e_m = math.fsum(p[o] * s for o, s in sm.items())
    e_n = math.fsum(p[o] * s for o, s in sn.items())
    rows = []
    for o in sorted(set(sm) | set(sn)):
        a, b = sm.get(o, 0.0), sn.get(o, 0.0)
        raw = (p[o] - e_n) * (a - b)
        delta = 100 * raw / (e_m - e_n)
        rows.append([
            o,
            str(CLUSTERS.get(o, "unassigned")),
            fmt(p[o]), fmt(a), fmt(b), fmt(raw), fmt(delta),
            "resilient" if p[o] < e_n else "susceptible",
            "increases" if delta > 0 else "decreases",
        ])
    write(
        os.path.join(GOLDEN, "shift.csv"),
        ["occ_code", "cluster_id", "p_auto", "share_m", "share_n", "raw_term", "delta_pct", "resilience", "direction"],
        rows,
    )
    print(f"E_{m} = {e_m:.6f}, E_{n} = {e_n:.6f}")


if __name__ == "__main__":
    os.makedirs(TOY, exist_ok=True)
    os.makedirs(GOLDEN, exist_ok=True)
    write_inputs(*build())
    golden(*read_back())
