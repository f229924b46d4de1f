"""Regenerate the bundled CSVs from the KEEL copies shipped in the keel_ds wheel.

    pip download keel_ds --no-deps -d /tmp/keel
    python3 data/build_from_keel.py /tmp/keel/keel_ds-0.2.5-py3-none-any.whl
"""
import csv
import sys
import zipfile
from pathlib import Path

OUT = Path(__file__).resolve().parent

BREAST_COLS = ["age", "menopause", "tumor_size", "inv_nodes", "node_caps",
               "deg_malig", "breast", "breast_quad", "irradiat"]
MENOPAUSE = {"lt40": 0, "ge40": 1, "premeno": 2}
QUAD = {"left_up": 0, "left_low": 1, "right_up": 2, "right_low": 3, "central": 4}
YESNO = {"no": 0, "yes": 1}
SIDE = {"left": 0, "right": 1}

HEART_COLS = ["age", "sex", "chest_pain", "resting_bp", "cholesterol",
              "fasting_blood_sugar", "resting_ecg", "max_heart_rate",
              "exercise_angina", "oldpeak", "slope", "major_vessels"]
THAL = {"3": "thal_normal", "6": "thal_fixed", "7": "thal_reversible"}


def lines(zf, member):
    text = zf.read(member).decode()
    return [[c.strip() for c in l.split(",")] for l in text.splitlines() if l.strip()]


def lower_bound(interval):
    return int(interval.split("-")[0])


def write(name, header, rows):
    with open(OUT / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main(wheel):
    zf = zipfile.ZipFile(wheel)
    root = "keel_ds/data/"

    rows = []
    for r in lines(zf, root + "balanced/raw/breast.dat"):
        feats = [lower_bound(r[0]), MENOPAUSE[r[1]], lower_bound(r[2]),
                 lower_bound(r[3]), YESNO[r[4]], int(r[5]), SIDE[r[6]],
                 QUAD[r[7]], YESNO[r[8]]]
        rows.append(feats + [1 if r[9] == "recurrence-events" else 0])
    write("breast-cancer", BREAST_COLS + ["target"], rows)

    rows = []
    for r in lines(zf, root + "imbalanced/raw/haberman.dat"):
        rows.append([int(r[0]), int(r[1]), int(r[2]), 0 if r[3] == "positive" else 1])
    write("haberman", ["age", "operation_year", "positive_nodes", "target"], rows)

    rows = []
    thal_cols = list(THAL.values())
    for r in lines(zf, root + "balanced/raw/heart.dat"):
        onehot = [1 if THAL[r[12]] == c else 0 for c in thal_cols]
        rows.append(r[:12] + onehot + [int(r[13]) - 1])
    write("heart", HEART_COLS + thal_cols + ["target"], rows)

    rows = []
    for r in lines(zf, root + "balanced/raw/pima.dat"):
        rows.append(r[:8] + [1 if r[8] == "tested_positive" else 0])
    write("diabetes", ["pregnancies", "glucose", "blood_pressure", "skin_thickness",
                       "insulin", "bmi", "pedigree", "age", "target"], rows)


if __name__ == "__main__":
    main(sys.argv[1])
