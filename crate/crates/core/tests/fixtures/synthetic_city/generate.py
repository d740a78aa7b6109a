"""Build the synthetic-city fixture.

    python3 generate.py                      # listings, boundaries, gold set, planned responses
    python3 generate.py cache requests.jsonl # turn exported requests into llm_cache.jsonl

Layout: five square neighborhoods. Listings sit in symmetric pairs around
chosen centers so the social centers are known. A cluster of listings inside
englewood advertises itself as lake view. Each body mixes place words and
generic leasing words; the generic share steps up with the decile of the
listing's relative distance from its social center, so the generic topic
rises with distance.
"""

import json
import math
import random
import sys

HERE = __file__.rsplit("/", 1)[0] if "/" in __file__ else "."
R = 6371.0088

BOXES = {
    "lake view": (41.94, 41.96, -87.66, -87.64),
    "uptown": (41.96, 41.98, -87.66, -87.64),
    "lincoln park": (41.92, 41.94, -87.66, -87.64),
    "pilsen": (41.85, 41.86, -87.67, -87.65),
    "englewood": (41.76, 41.78, -87.66, -87.64),
}

PLACE = ("lakefront harbor beach cafe brewery boutique theater garden historic greystone "
         "boulevard bistro gallery trail bike festival bakery courtyard riverwalk mural").split()
GENERIC = ("credit deposit application fee tenant income approval apply contact info "
           "schedule showing lease move pet policy security screening required online").split()


def haversine(a, b):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dp, dl = p2 - p1, math.radians(b[1] - a[1])
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * R * math.asin(min(1.0, math.sqrt(h)))


def pairs(center, radii):
    """Symmetric pairs around center, alternating north-south and east-west."""
    out = []
    for i, r in enumerate(radii):
        if i % 2 == 0:
            out += [(center[0] + r, center[1]), (center[0] - r, center[1])]
        else:
            out += [(center[0], center[1] + r), (center[0], center[1] - r)]
    return out


def main():
    rng = random.Random(7)
    listings = []

    def add(claim, coords, title, body_lead, field, responses, gold):
        n = len(listings) + 1
        listings.append({
            "id": f"L{n:03d}",
            "title": title,
            "body_lead": body_lead,
            "neighborhood": field,
            "coords": coords,
            "claim": claim,
            "gold": gold,
            "responses": responses,
        })

    lv = (41.95, -87.65)
    for c in pairs(lv, [0.0008, 0.0016, 0.0024, 0.0032, 0.0040, 0.0048, 0.0056]):
        add("lake view", c, "Bright flat in Lakeview", "Classic Lakeview three-flat.", "lakeview",
            {"title": "label: [lake view]", "body": "label: [lake view]", "neighborhood_field": "label: [lakeview]"},
            "lake view")
    for c in pairs((41.77, -87.65), [0.0010, 0.0025, 0.0040, 0.0055]):
        add("lake view", c, "Lakeview charm at a great price", "Live the Lakeview lifestyle.", "chicago",
            {"title": "label: [lake view]", "body": "Lake View", "neighborhood_field": "label: [unknown]"},
            "lake view")
    for i, c in enumerate(pairs((41.765, -87.645), [0.002, 0.003])):
        lead = "Skip the Wicker Park prices." if i == 0 else "Quiet block near transit."
        add(None, c, "Affordable unit near transit", lead, None,
            {"title": "label: [unknown]", "body": "label: [unknown]"}, "unknown")
    up = (41.97, -87.65)
    for c in pairs(up, [0.0010, 0.0030, 0.0050, 0.0070]):
        add("uptown", c, "Uptown vintage unit", "Uptown living, close to Andersonville.", "uptown / andersonville",
            {"title": "label: [uptown]", "body": "label: [uptown, andersonville]",
             "neighborhood_field": "uptown/andersonville"}, "uptown")
    for _ in range(2):
        add("uptown", None, "Uptown garden unit", "Uptown courtyard building.", None,
            {"title": "label: [uptown]", "body": "label: [uptown]"}, "uptown")
    for c in pairs((41.93, -87.65), [0.0015, 0.0040, 0.0065]):
        add("lincoln park", c, "Lincoln Park gem", "Steps from the Lincoln Park zoo.", "lincoln park",
            {"title": "Sure! The neighborhood is lincoln park",
             "body": "label: [lincoln park]", "neighborhood_field": "label: [lincoln park]"}, "lincoln park")
    for lon in (-87.664, -87.656):
        add("pilsen", (41.855, lon), "Pilsen loft", "Pilsen murals outside.", "pilsen",
            {"title": "label: [pilsen]", "body": "label: [pilsen]", "neighborhood_field": "label: [pilsen]"}, "pilsen")
    for lat, lon in ((41.853, -87.646), (41.857, -87.644), (41.854, -87.642), (41.856, -87.640)):
        add("pilsen", (lat, lon), "Pilsen adjacent loft", "East of Pilsen.", "pilsen",
            {"title": "label: [pilsen]", "body": "label: [pilsen]", "neighborhood_field": "label: [pilsen]"}, "pilsen")
    for lat in (41.9455, 41.9445):
        add("wrigleyville", (lat, -87.655), "Top floor unit", "Close to everything.", "wrigleyville",
            {"title": "label: [unknown]", "body": "label: [unknown]", "neighborhood_field": "label: [wrigleyville]"},
            "wrigleyville")
    assert len(listings) == 50, len(listings)

    # relative distance per claimed neighborhood, as the pipeline will compute it
    groups = {}
    for l in listings:
        if l["claim"] and l["coords"]:
            groups.setdefault(l["claim"], []).append(l)
    for members in groups.values():
        n = len(members)
        center = (sum(m["coords"][0] for m in members) / n, sum(m["coords"][1] for m in members) / n)
        d = [haversine(m["coords"], center) for m in members]
        lo, hi = min(d), max(d)
        for m, x in zip(members, d):
            m["relative"] = (x - lo) / (hi - lo) if hi > lo else 0.0

    records, gold = [], []
    for i, l in enumerate(listings):
        rel = l.get("relative", 0.5)
        decile = max(1, min(10, math.ceil(rel * 10 - 1e-9)))
        share = (decile - 1) / 9
        n_generic = round(40 * share)
        words = [rng.choice(GENERIC) for _ in range(n_generic)] + [rng.choice(PLACE) for _ in range(40 - n_generic)]
        rng.shuffle(words)
        rec = {
            "id": l["id"],
            "title": l["title"],
            "body": "QR Code Link to This Post\n" + l["body_lead"] + " " + " ".join(words),
            "neighborhood": l["neighborhood"],
            "latitude": l["coords"][0] if l["coords"] else None,
            "longitude": l["coords"][1] if l["coords"] else None,
            "rent": None if l["id"] == "L041" else 1200 + 50 * rng.randrange(0, 30),
            "bedrooms": rng.randrange(1, 4),
            "bathrooms": rng.choice([1, 1, 1.5, 2]),
            "sqft": 550 + 25 * rng.randrange(0, 40),
            "posted_at": f"2024-03-{1 + i % 28:02d}T{10 + i % 12:02d}:00:00",
        }
        records.append(rec)
        gold.append((l["id"], l["gold"]))

    # two older copies of uptown listings and one broken row
    for src, new_id in (("L027", "L051"), ("L028", "L052")):
        dup = dict(next(r for r in records if r["id"] == src))
        dup["id"] = new_id
        dup["posted_at"] = "2024-01-01T00:00:00"
        records.append(dup)
    bad = dict(records[0])
    bad["id"] = "L053"
    bad["latitude"] = 950
    records.append(bad)

    with open(f"{HERE}/listings.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    with open(f"{HERE}/gold.csv", "w") as f:
        f.write("listing_id,claim\n")
        for i, g in gold:
            f.write(f"{i},{g}\n")
    features = []
    for name, (la0, la1, lo0, lo1) in BOXES.items():
        ring = [[lo0, la0], [lo1, la0], [lo1, la1], [lo0, la1], [lo0, la0]]
        features.append({"type": "Feature", "properties": {"name": name.title()},
                         "geometry": {"type": "Polygon", "coordinates": [ring]}})
    with open(f"{HERE}/city.geojson", "w") as f:
        json.dump({"type": "FeatureCollection", "features": features}, f, indent=1)
        f.write("\n")
    with open(f"{HERE}/planned_responses.json", "w") as f:
        json.dump({l["id"]: l["responses"] for l in listings}, f, indent=1, sort_keys=True)
        f.write("\n")


def cache(requests_path):
    planned = json.load(open(f"{HERE}/planned_responses.json"))
    with open(f"{HERE}/llm_cache.jsonl", "w") as out:
        for line in open(requests_path):
            req = json.loads(line)
            text = planned[req["listing_id"]][req["field"]]
            out.write(json.dumps({"fingerprint": req["fingerprint"], "raw_text": text,
                                  "received_at": "2024-04-01T00:00:00"}) + "\n")


if __name__ == "__main__":
    if len(sys.argv) == 3 and sys.argv[1] == "cache":
        cache(sys.argv[2])
    else:
        main()
