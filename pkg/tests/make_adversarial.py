"""Regenerate tests/fixtures/adversarial.conll (token, gold tag, predicted tag).

Tags are drawn so that roughly a third of positions are ill-formed:
I- after O, I- at sentence start, and I- switching category.
"""

import random
from pathlib import Path

CATS = ["PER", "LOC", "ORG", "EVT", "PRO"]


def sequence(rng, n):
    tags = []
    for i in range(n):
        r = rng.random()
        if r < 0.4:
            tags.append("O")
        elif r < 0.6:
            tags.append("B-" + rng.choice(CATS))
        elif r < 0.85 and tags and tags[-1] != "O":
            tags.append("I-" + tags[-1][2:])
        else:
            tags.append("I-" + rng.choice(CATS))
    return tags


def perturb(rng, tags):
    out = list(tags)
    for i in range(len(out)):
        if rng.random() < 0.25:
            out[i] = rng.choice(["O"] + [f"{p}-{c}" for p in "BI" for c in CATS])
    return out


def main():
    rng = random.Random(2023)
    lines = []
    for s in range(200):
        n = rng.randint(1, 12)
        gold = sequence(rng, n)
        pred = perturb(rng, gold)
        for i, (g, p) in enumerate(zip(gold, pred)):
            lines.append(f"w{s}_{i} {g} {p}\n")
        lines.append("\n")
    path = Path(__file__).parent / "fixtures" / "adversarial.conll"
    path.write_text("".join(lines), encoding="utf-8")


if __name__ == "__main__":
    main()
