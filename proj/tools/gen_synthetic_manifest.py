#!/usr/bin/env python3
"""Generate the synthetic detection manifest used by the end-to-end tests.

Writes classes.txt, manifest.csv and sizes.csv. Every class appears at least
once, and any two boxes in one image overlap with IoU below 0.3 so a perfect
detector survives NMS untouched.
"""

import argparse
import csv
import random
from pathlib import Path

CLASSES = [
    "Person", "Human face", "Banknote", "Chair", "Table", "Door", "Stairs",
    "Car", "Bus", "Bicycle", "Motorcycle", "Traffic light", "Stop sign",
    "Bench", "Dog", "Cat", "Bottle", "Cup", "Mobile phone", "Laptop",
    "Television", "Bed", "Couch", "Refrigerator", "Sink", "Toilet", "Window",
    "Book", "Backpack", "Handbag", "Umbrella", "Clock", "Tree", "Street light",
    "Fire hydrant",
]

SIZES = [(640, 480), (1280, 720), (1024, 768), (800, 600), (720, 1280), (500, 500)]


def iou(a, b):
    ix = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[2], b[2]))
    inter = ix * iy
    union = (a[1] - a[0]) * (a[3] - a[2]) + (b[1] - b[0]) * (b[3] - b[2]) - inter
    return inter / union


def random_box(rng):
    w = rng.uniform(0.08, 0.45)
    h = rng.uniform(0.08, 0.45)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return (round(x0, 6), round(x0 + w, 6), round(y0, 6), round(y0 + h, 6))


def generate(n, seed):
    rng = random.Random(seed)
    rows, sizes = [], []
    for i in range(n):
        image_id = f"syn_{i:04d}"
        width, height = SIZES[rng.randrange(len(SIZES))]
        sizes.append((image_id, width, height))
        count = rng.randint(1, 4)
        labels = [CLASSES[i % len(CLASSES)]] + [rng.choice(CLASSES) for _ in range(count - 1)]
        boxes = []
        for label in labels:
            for _ in range(100):
                box = random_box(rng)
                centers = [((b[0] + b[1]) / 2, (b[2] + b[3]) / 2) for _, b in boxes]
                c = ((box[0] + box[1]) / 2, (box[2] + box[3]) / 2)
                far = all(abs(c[0] - p[0]) > 0.05 or abs(c[1] - p[1]) > 0.05 for p in centers)
                if far and all(iou(box, b) < 0.3 for _, b in boxes):
                    boxes.append((label, box))
                    break
        rows.extend((image_id, label, *box) for label, box in boxes)
    return rows, sizes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--samples", type=int, default=132)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    out = Path(args.out_dir)
    (out / "synthetic").mkdir(parents=True, exist_ok=True)
    with open(out / "classes.txt", "w", newline="") as f:
        f.write("# index,label\n")
        for i, label in enumerate(CLASSES):
            f.write(f"{i},{label}\n")

    rows, sizes = generate(args.samples, args.seed)
    with open(out / "synthetic" / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ImageID", "LabelName", "XMin", "XMax", "YMin", "YMax"])
        for image_id, label, x0, x1, y0, y1 in rows:
            w.writerow([image_id, label, f"{x0:.6f}", f"{x1:.6f}", f"{y0:.6f}", f"{y1:.6f}"])
    with open(out / "synthetic" / "sizes.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ImageID", "Width", "Height"])
        w.writerows(sizes)

    present = {r[1] for r in rows}
    print(f"{len(sizes)} samples, {len(rows)} boxes, {len(present)} classes")


if __name__ == "__main__":
    main()
