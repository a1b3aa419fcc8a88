"""Regenerates the vector, belief and FactScore fixtures.

Usage: python3 make_fixtures.py FACTS_JSONL

FACTS_JSONL is the facts file written by `peek build-dataset` for mini.toml.
"""
import hashlib
import json
import math
import random
import struct
import sys


def fact_id(h, r, t, polarity):
    key = "\x1f".join([h, r, t, polarity]).encode()
    return hashlib.sha256(key).hexdigest()[:32]


def write_jsonl(path, dim, source, vectors, layer=None):
    header = {"format": "peekvec", "version": 1, "dim": dim, "source": source}
    if layer is not None:
        header["layer"] = layer
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for fid, v in vectors:
            f.write(json.dumps({"id": fid, "v": v}) + "\n")


def write_binary(path, dim, vectors):
    with open(path, "wb") as f:
        f.write(b"PEEKVEC1")
        f.write(struct.pack("<I", dim))
        for fid, v in vectors:
            raw = fid.encode()
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<%df" % dim, *v))


def rounded(v):
    return [round(x, 5) for x in v]


def main(facts_path):
    facts = []
    with open(facts_path) as f:
        for line in f:
            rec = json.loads(line)
            if "format" in rec:
                continue
            facts.append(rec)

    rng = random.Random(11)
    dim = 8
    teacher = [rng.gauss(0, 1) for _ in range(dim)]
    signal, noise, acts, beliefs = [], [], [], []
    for fact in facts:
        e = rounded([rng.gauss(0, 1) for _ in range(dim)])
        knows = sum(w * x for w, x in zip(teacher, e)) >= 0
        positive = fact["polarity"] == "positive"
        believes_true = knows == positive
        beliefs.append({"text": fact["text"], "p": 0.9 if believes_true else 0.1})
        signal.append((fact["id"], e))
        noise.append((fact["id"], rounded([rng.gauss(0, 1) for _ in range(dim)])))
        sign = 1.0 if positive else -1.0
        acts.append((fact["id"], rounded([sign + rng.gauss(0, 0.5)] + [rng.gauss(0, 1) for _ in range(5)])))

    write_jsonl("signal.jsonl", dim, "planted-signal", signal)
    write_binary("noise.bin", dim, noise)
    write_jsonl("activations.jsonl", 6, "mock-llm", acts, layer=15)
    with open("beliefs.jsonl", "w") as f:
        for b in beliefs:
            f.write(json.dumps(b) + "\n")

    topics = ["Ada Lovelace", "Alan Turing", "Grace Hopper", "Katherine Johnson"]
    claims = [
        "was a mathematician", "was born in the nineteenth century", "worked on computing machines",
        "won a Nobel Prize", "lived in London", "wrote about algorithms", "was an astronaut",
        "served in the navy", "designed a programming language", "studied at Cambridge",
    ]
    models = ["gen-a", "gen-b"]
    records, fs_vectors = [], []
    for i, topic in enumerate(topics):
        for j, claim in enumerate(claims):
            model = models[(i + j) % 2]
            text = f"{topic.split()[-1]} {claim}."
            e = rounded([rng.gauss(0, 1) for _ in range(dim)])
            if (i * len(claims) + j) % 9 == 4:
                label = "irrelevant"
            else:
                label = "supported" if sum(w * x for w, x in zip(teacher, e)) >= 0 else "not-supported"
            records.append({"topic": topic, "fact": text, "label": label, "model": model})
            if label != "irrelevant":
                fs_vectors.append((fact_id(topic, model, text, "positive"), e))
    with open("factscore.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    write_jsonl("factscore-signal.jsonl", dim, "planted-signal", fs_vectors)


if __name__ == "__main__":
    main(sys.argv[1])
