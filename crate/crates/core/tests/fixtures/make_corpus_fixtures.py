"""Regenerates the corpus fixtures and the expected statistics.

The statistics are computed here independently of the Rust code:
lengths are whitespace word counts, unigrams are lowercased with leading and
trailing non-alphanumerics stripped, std is the population std, percentiles
are nearest-rank, and the tail is the rarest suffix (count descending, word
ascending) holding at most 0.1% of all occurrences.
"""
import hashlib
import json
import math
import random
import re
from collections import Counter

SUBJECTS = ["a dog", "two dogs", "a cat", "a man", "a woman", "a child", "three birds",
            "an old man", "a young woman", "a small boy"]
VERBS = ["running on", "sitting on", "standing near", "playing in", "walking along",
         "lying on", "jumping over", "looking at"]
PLACES = ["the beach", "the grass", "a red car", "the street", "a wooden table",
          "the snow", "a green field", "the water", "a park bench", "the kitchen floor"]
EXTRAS = ["", " at sunset", " with a ball", " in the rain", " near a tree", ""]
NAMES = ["john", "mary", "peter smith", "anna"]
CITIES = ["paris", "new york", "london", "rome"]


def caption(rng):
    return f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(PLACES)}{rng.choice(EXTRAS)}"


def norm(w):
    return re.sub(r"^[^0-9A-Za-z]+|[^0-9A-Za-z]+$", "", w).lower()


def nearest_rank(sorted_vals, p):
    rank = max(1, math.ceil(p / 100 * len(sorted_vals)))
    return sorted_vals[min(rank, len(sorted_vals)) - 1]


def stats(items):
    lengths = [len(c.split()) for _, c in items]
    counts = Counter(w for _, c in items for w in map(norm, c.split()) if w)
    n = len(lengths)
    mean = sum(lengths) / n
    std = math.sqrt(sum((l - mean) ** 2 for l in lengths) / n)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(counts.values())
    tail, acc = 0, 0
    for _, c in reversed(ranked):
        if acc + c > 0.001 * total:
            break
        acc += c
        tail += 1
    lengths.sort()
    images = {i for i, _ in items}
    return {
        "images": len(images),
        "captions": n,
        "unique_unigrams": len(counts),
        "tail_unigrams": tail,
        "total_unigrams": total,
        "length_mean": mean,
        "length_std": std,
        "length_p5": nearest_rank(lengths, 5),
        "length_p50": nearest_rank(lengths, 50),
        "length_p95": nearest_rank(lengths, 95),
    }


def stats_fixture():
    rng = random.Random(11)
    items = []
    for img in range(20):
        for _ in range(5):
            c = caption(rng)
            if rng.random() < 0.15:
                c += " " + " ".join(rng.choice(["quietly", "together", "outside", "today"])
                                    for _ in range(rng.randint(1, 6)))
            items.append((f"img{img:02d}", c))
    with open("captions100.jsonl", "w") as f:
        for i, c in items:
            f.write(json.dumps({"image_id": i, "caption": c}) + "\n")
    with open("captions100_stats.json", "w") as f:
        json.dump(stats(items), f, indent=1)


def pipeline_fixture():
    rng = random.Random(5)
    records = []
    hashes = []
    for i in range(300):
        w, h = rng.choice([(640, 480), (1024, 768), (300, 200), (500, 500), (800, 600)])
        parts = [caption(rng)]
        if rng.random() < 0.3:
            parts.insert(0, rng.choice(["photo", "image 1", "click here", "free"]))
        if rng.random() < 0.2:
            parts[-1] = parts[-1].replace("a man", rng.choice(NAMES), 1)
        if rng.random() < 0.2:
            parts[-1] += " in " + rng.choice(CITIES)
        alt = rng.choice([". ", "! ", "? "]).join(parts) + rng.choice(["", ".", "!"])
        if rng.random() < 0.05:
            alt = rng.choice(["Stock image", "3D illustration", "vector photo", "best photo"])
        if rng.random() < 0.05:
            alt = alt.replace("the", "teh", 1)
        digest = hashlib.sha256(f"image-{rng.randint(0, 280)}".encode()).hexdigest()[:16]
        rec = {"id": f"r{i:03d}", "width": w, "height": h, "alt": alt}
        if rng.random() > 0.02:
            rec["hash"] = digest
        hashes.append(digest)
        records.append(rec)
    # boundary images
    for j, (w, h) in enumerate([(200, 200), (201, 200), (900, 300), (899, 300), (300, 900), (201, 67), (0, 400)]):
        records.append({"id": f"b{j}", "width": w, "height": h,
                        "alt": "a dog running on the beach", "hash": f"boundary{j}"})
    records.append({"id": "b7", "width": 640, "height": 480, "alt": "?! ...", "hash": "boundary7"})
    with open("corpus/records.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")
    with open("corpus/test_hashes.txt", "w") as f:
        f.write("\n".join(sorted(set(hashes))[:10]) + "\n")
    words = Counter()
    for part in SUBJECTS + VERBS + PLACES + EXTRAS + NAMES + CITIES + ["photo", "image", "click", "here", "free", "best", "stock", "3d", "illustration", "vector", "1"]:
        words.update(norm(w) for w in part.split())
    with open("corpus/vocab.txt", "w") as f:
        for w in sorted(words):
            if w:
                f.write(f"{w} 100\n")
    with open("corpus/gazetteer.tsv", "w") as f:
        f.write("# bundled test gazetteer\n")
        for n in NAMES:
            f.write(f"{n}\tPERSON\n")
        for c in CITIES:
            f.write(f"{c}\tLOC\n")


if __name__ == "__main__":
    stats_fixture()
    pipeline_fixture()
