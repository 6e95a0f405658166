#!/usr/bin/env python3
"""Regenerates the bundled datasets under data/ and the training corpus
used by tools/build_models. Output is deterministic."""

import argparse
import json
import random
from pathlib import Path

PRODUCTS = [
    ("MacApp", "Apple"), ("iPhone", "Apple"), ("iPod", "Apple"), ("Safari", "Apple"), ("Siri", "Apple"),
    ("Macintosh", "Apple"), ("Windows", "Microsoft"), ("Xbox", "Microsoft"), ("Excel", "Microsoft"),
    ("Outlook", "Microsoft"), ("Bing", "Microsoft"), ("PlayStation", "Sony"), ("Walkman", "Sony"),
    ("Bravia", "Sony"), ("Android", "Google"), ("Gmail", "Google"), ("Chrome", "Google"),
    ("Kindle", "Amazon"), ("Alexa", "Amazon"), ("Photoshop", "Adobe"), ("Acrobat", "Adobe"),
    ("Illustrator", "Adobe"), ("Galaxy", "Samsung"), ("Corolla", "Toyota"), ("Prius", "Toyota"),
    ("Camry", "Toyota"), ("Civic", "Honda"), ("Accord", "Honda"), ("Mustang", "Ford"), ("Fiesta", "Ford"),
    ("Golf", "Volkswagen"), ("Passat", "Volkswagen"), ("Pentium", "Intel"), ("Xeon", "Intel"),
    ("Radeon", "AMD"), ("Ryzen", "AMD"), ("GeForce", "Nvidia"), ("Switch", "Nintendo"),
    ("GameBoy", "Nintendo"), ("Lumia", "Nokia"),
]

CAPITALS = [
    ("France", "Paris"), ("Germany", "Berlin"), ("Italy", "Rome"), ("Spain", "Madrid"), ("Portugal", "Lisbon"),
    ("Austria", "Vienna"), ("Hungary", "Budapest"), ("Poland", "Warsaw"), ("Greece", "Athens"),
    ("Norway", "Oslo"), ("Sweden", "Stockholm"), ("Finland", "Helsinki"), ("Denmark", "Copenhagen"),
    ("Ireland", "Dublin"), ("Belgium", "Brussels"), ("Netherlands", "Amsterdam"), ("Russia", "Moscow"),
    ("Ukraine", "Kyiv"), ("Turkey", "Ankara"), ("Egypt", "Cairo"), ("Kenya", "Nairobi"), ("Ghana", "Accra"),
    ("Nigeria", "Abuja"), ("Morocco", "Rabat"), ("Japan", "Tokyo"), ("China", "Beijing"),
    ("India", "Delhi"), ("Thailand", "Bangkok"), ("Vietnam", "Hanoi"), ("Indonesia", "Jakarta"),
    ("Peru", "Lima"), ("Chile", "Santiago"), ("Argentina", "Buenos Aires"), ("Colombia", "Bogota"),
    ("Venezuela", "Caracas"), ("Cuba", "Havana"), ("Mexico", "Mexico City"), ("Canada", "Ottawa"),
    ("Australia", "Canberra"), ("Iran", "Tehran"), ("Iraq", "Baghdad"), ("Syria", "Damascus"),
    ("Lebanon", "Beirut"), ("Israel", "Jerusalem"), ("Nepal", "Kathmandu"), ("Pakistan", "Islamabad"),
    ("Bangladesh", "Dhaka"), ("Philippines", "Manila"), ("Malaysia", "Kuala Lumpur"),
    ("Ethiopia", "Addis Ababa"), ("Sudan", "Khartoum"), ("Senegal", "Dakar"), ("Mongolia", "Ulaanbaatar"),
    ("Iceland", "Reykjavik"), ("Romania", "Bucharest"), ("Bulgaria", "Sofia"), ("Serbia", "Belgrade"),
    ("Croatia", "Zagreb"), ("Czechia", "Prague"), ("Slovakia", "Bratislava"),
]

LANGUAGES = [
    ("France", "French"), ("Germany", "German"), ("Italy", "Italian"), ("Spain", "Spanish"),
    ("Portugal", "Portuguese"), ("Austria", "German"), ("Hungary", "Hungarian"), ("Poland", "Polish"),
    ("Greece", "Greek"), ("Norway", "Norwegian"), ("Sweden", "Swedish"), ("Finland", "Finnish"),
    ("Denmark", "Danish"), ("Netherlands", "Dutch"), ("Russia", "Russian"), ("Ukraine", "Ukrainian"),
    ("Turkey", "Turkish"), ("Egypt", "Arabic"), ("Morocco", "Arabic"), ("Japan", "Japanese"),
    ("China", "Chinese"), ("Thailand", "Thai"), ("Vietnam", "Vietnamese"), ("Indonesia", "Indonesian"),
    ("Peru", "Spanish"), ("Chile", "Spanish"), ("Argentina", "Spanish"), ("Colombia", "Spanish"),
    ("Mexico", "Spanish"), ("Cuba", "Spanish"), ("Brazil", "Portuguese"), ("Iran", "Persian"),
    ("Iraq", "Arabic"), ("Syria", "Arabic"), ("Israel", "Hebrew"), ("Nepal", "Nepali"),
    ("Pakistan", "Urdu"), ("Bangladesh", "Bengali"), ("Mongolia", "Mongolian"), ("Iceland", "Icelandic"),
    ("Romania", "Romanian"), ("Bulgaria", "Bulgarian"), ("Serbia", "Serbian"), ("Croatia", "Croatian"),
    ("Czechia", "Czech"), ("Korea", "Korean"), ("England", "English"), ("Australia", "English"),
    ("Kenya", "Swahili"), ("Ethiopia", "Amharic"),
]

CITIES = [
    ("Lyon", "France"), ("Marseille", "France"), ("Munich", "Germany"), ("Hamburg", "Germany"),
    ("Milan", "Italy"), ("Naples", "Italy"), ("Barcelona", "Spain"), ("Seville", "Spain"), ("Porto", "Portugal"),
    ("Krakow", "Poland"), ("Bergen", "Norway"), ("Gothenburg", "Sweden"), ("Rotterdam", "Netherlands"),
    ("Antwerp", "Belgium"), ("Cork", "Ireland"), ("Istanbul", "Turkey"), ("Alexandria", "Egypt"),
    ("Casablanca", "Morocco"), ("Osaka", "Japan"), ("Kyoto", "Japan"), ("Shanghai", "China"),
    ("Mumbai", "India"), ("Chennai", "India"), ("Toronto", "Canada"), ("Montreal", "Canada"),
    ("Sydney", "Australia"), ("Melbourne", "Australia"), ("Chicago", "America"), ("Boston", "America"),
    ("Seattle", "America"), ("Houston", "America"), ("Manchester", "England"), ("Liverpool", "England"),
    ("Glasgow", "Scotland"), ("Edinburgh", "Scotland"), ("Rio", "Brazil"), ("Recife", "Brazil"),
    ("Cordoba", "Argentina"), ("Medellin", "Colombia"), ("Cusco", "Peru"), ("Guadalajara", "Mexico"),
    ("Lagos", "Nigeria"), ("Mombasa", "Kenya"), ("Busan", "Korea"), ("Seoul", "Korea"),
    ("Hanoi", "Vietnam"), ("Phuket", "Thailand"), ("Bali", "Indonesia"), ("Lahore", "Pakistan"),
    ("Karachi", "Pakistan"),
]

RELATIONS = {
    "product_of": ["{s}, a product created by", "{s} is a product of", "{s} was developed by",
                   "The company behind {s} is"],
    "capital_of": ["The capital of {s} is", "The capital city of {s} is", "{s} has its capital in"],
    "language_of": ["The official language of {s} is", "In {s}, people speak", "The main language of {s} is"],
    "located_in": ["{s} is a city in", "The city of {s} is located in", "{s} is a town in the country of"],
}

FACT_TABLES = [("product_of", PRODUCTS), ("capital_of", CAPITALS), ("language_of", LANGUAGES),
               ("located_in", CITIES)]

EMOTIONS = {
    "happy": ["I just won the lottery", "my best friend came to visit", "we got a puppy today",
              "I passed every exam", "the sun is out and we are at the beach", "my team won the final",
              "I got the job I wanted", "my sister had a healthy baby"],
    "sad": ["my old dog died", "my best friend moved away", "I lost my favorite ring",
            "nobody came to my party", "I failed the test again", "the rain ruined our trip",
            "my grandfather is very ill", "I miss my family"],
    "angry": ["someone stole my bike", "the driver cut me off", "my boss yelled at me for nothing",
              "they lied to me again", "the neighbors play loud music all night", "he broke my phone on purpose",
              "the shop refused my refund", "my brother read my diary"],
    "afraid": ["I heard footsteps in the dark", "a huge spider is on my bed", "the plane is shaking",
               "a stranger is following me", "the storm is getting worse", "I have to speak in front of everyone",
               "the house is making strange noises", "the dog next door is growling at me"],
}
EMOTION_TEMPLATES = ["{c}. I feel", "Today {c}, so I feel", "Because {c}, I am", "{c} and it makes me feel"]

NAMES = [("Tom", "He"), ("Anna", "She"), ("Ben", "He"), ("Lucy", "She"), ("Sam", "He"), ("Mia", "She"),
         ("Jack", "He"), ("Emma", "She"), ("Leo", "He"), ("Zoe", "She")]
NOUNS = ["apples", "pens", "books", "cards", "coins", "balls", "cups", "shells"]
ARITH_TEMPLATES = [
    "{n} has {a} {o}. {p} gets {b} more {o}. How many {o} does {n} have? Answer:",
    "{n} had {a} {o} and found {b} more. How many {o} in total? Answer:",
    "There are {a} {o} in a box and {n} adds {b}. How many {o} are there? Answer:",
]


def write_dataset(root, ident, description, keys, records, extensions=None):
    d = root / ident
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"id": ident, "description": description, "support_template_keys": keys,
                "records": "records.jsonl"}
    if extensions:
        manifest["key_extensions"] = extensions
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(d / "records.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def fact_records():
    out = []
    for rel, table in FACT_TABLES:
        for s, o in table:
            prompts = [t.format(s=s) for t in RELATIONS[rel]]
            out.append({"prompt": prompts[0], "prompts": prompts, "ground_truth": o, "triple_subject": s,
                        "triple_relation": rel, "triple_object": o})
    return out


def counterfact_records(facts, rng):
    by_rel = {}
    for r in facts:
        by_rel.setdefault(r["triple_relation"], set()).add(r["ground_truth"])
    out = []
    for r in facts[::2]:
        choices = sorted(by_rel[r["triple_relation"]] - {r["ground_truth"]})
        rec = dict(r)
        rec["target_new"] = rng.choice(choices)
        out.append(rec)
    return out


def emotion_records():
    out = []
    for emo, cues in EMOTIONS.items():
        for c in cues:
            for t in EMOTION_TEMPLATES:
                text = t.format(c=c)
                out.append({"prompt": text[0].upper() + text[1:], "ground_truth": emo})
    return out


def arithmetic_record(rng):
    n, p = rng.choice(NAMES)
    o = rng.choice(NOUNS)
    a, b = rng.randrange(10), rng.randrange(10)
    t = rng.choice(ARITH_TEMPLATES)
    return {"prompt": t.format(n=n, p=p, o=o, a=a, b=b), "ground_truth": str(a + b)}


def arithmetic_records(rng, count):
    seen, out = set(), []
    while len(out) < count:
        r = arithmetic_record(rng)
        if r["prompt"] in seen:
            continue
        seen.add(r["prompt"])
        out.append(r)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", default=str(Path(__file__).resolve().parent.parent))
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    root = Path(args.root)
    rng = random.Random(args.seed)

    facts = fact_records()
    write_dataset(root / "data", "known_mini", "Factual subject-relation-object triples with paraphrased prompts.",
                  ["prompt", "prompts", "ground_truth", "triple_subject", "triple_relation", "triple_object"], facts)
    write_dataset(root / "data", "counterfact_mini",
                  "Factual prompts paired with a counterfactual replacement object.",
                  ["prompt", "prompts", "ground_truth", "triple_subject", "triple_relation", "triple_object",
                   "target_new"], counterfact_records(facts, rng),
                  {"target_new": "Counterfactual object that replaces the true answer."})
    arith = arithmetic_records(rng, 500)
    write_dataset(root / "data", "arithmetic_toy", "Single-digit addition word problems; the answer is the sum.",
                  ["prompt", "ground_truth"], arith)
    emotions = emotion_records()
    write_dataset(root / "data", "emotion_toy", "Short first-person situations labelled with the emotion felt.",
                  ["prompt", "ground_truth"], emotions)

    # Training text for the reference model. Arithmetic comes from a separate
    # draw so the bundled problems are not memorised verbatim.
    corpus = []
    for r in facts:
        for p in r["prompts"]:
            corpus.append(f"{p} {r['ground_truth']}.")
    for r in emotions:
        corpus.append(f"{r['prompt']} {r['ground_truth']}.")
    train_rng = random.Random(args.seed + 1)
    held = {r["prompt"] for r in arith}
    for r in arithmetic_records(train_rng, 1500):
        if r["prompt"] not in held:
            corpus.append(f"{r['prompt']} {r['ground_truth']}")
    corpus_dir = root / "data" / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    (corpus_dir / "train.txt").write_text("\n".join(corpus) + "\n")


if __name__ == "__main__":
    main()
