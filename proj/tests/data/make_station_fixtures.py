"""Regenerates stops.txt and corrupted_stops.csv (seeded, deterministic).

stops.txt: 70 subway stations plus 5 street stops, with synthetic coordinates
inside the Toronto bounding box.
corrupted_stops.csv: 100 noisy mentions of those stops with the expected
canonical name. Corruptions: letter elongation, "Street" -> "St", and one
single-character edit (substitution, deletion, insertion or transposition).
"""
import csv
import random

LINE1 = ["Finch", "North York Centre", "Sheppard-Yonge", "York Mills", "Lawrence", "Eglinton",
         "Davisville", "St Clair", "Summerhill", "Rosedale", "Bloor-Yonge", "Wellesley", "College",
         "Dundas", "Queen", "King", "Union", "St Andrew", "Osgoode", "St Patrick", "Queen's Park",
         "Museum", "St George", "Spadina", "Dupont", "St Clair West", "Cedarvale", "Glencairn",
         "Lawrence West", "Yorkdale", "Wilson", "Sheppard West", "Downsview Park", "Finch West",
         "York University", "Pioneer Village", "Highway 407", "Vaughan Metropolitan Centre"]
LINE2 = ["Kipling", "Islington", "Royal York", "Old Mill", "Jane", "Runnymede", "High Park", "Keele",
         "Dundas West", "Lansdowne", "Dufferin", "Ossington", "Christie", "Bathurst", "Bay",
         "Sherbourne", "Castle Frank", "Broadview", "Chester", "Pape", "Donlands", "Greenwood",
         "Coxwell", "Woodbine", "Main Street", "Victoria Park", "Warden", "Kennedy"]
LINE4 = ["Bayview", "Bessarion", "Leslie", "Don Mills"]
STREET = ["Queen Street West at Spadina Avenue", "King Street East at Church Street",
          "Dufferin Street at Bloor Street West", "Finch Avenue West at Keele Street",
          "Lawrence Avenue East at Victoria Park Avenue"]


def stops():
    rng = random.Random(75)
    names = [n + " Station" for n in LINE1 + LINE2 + LINE4] + STREET
    assert len(names) == 75 and len(set(names)) == 75
    out = []
    for i, n in enumerate(names):
        lat = round(rng.uniform(43.62, 43.80), 6)
        lon = round(rng.uniform(-79.55, -79.25), 6)
        out.append((str(14400 + i), n, lat, lon))
    return out


def elongate(rng, name):
    letters = [i for i, c in enumerate(name) if c.isalpha() and c.lower() in "aeiouy"]
    if not letters:
        letters = [i for i, c in enumerate(name) if c.isalpha()]
    i = rng.choice(letters)
    return name[:i] + name[i] * rng.randint(3, 7) + name[i + 1:]


def typo(rng, name):
    idx = [i for i, c in enumerate(name) if c.isalpha()]
    i = rng.choice(idx[1:-1] if len(idx) > 2 else idx)
    kind = rng.choice(["sub", "del", "ins", "swap"])
    alpha = "abcdefghijklmnopqrstuvwxyz"
    if kind == "sub":
        return name[:i] + rng.choice([a for a in alpha if a != name[i].lower()]) + name[i + 1:]
    if kind == "del":
        return name[:i] + name[i + 1:]
    if kind == "ins":
        return name[:i] + rng.choice(alpha) + name[i:]
    if i + 1 < len(name):
        return name[:i] + name[i + 1] + name[i] + name[i + 2:]
    return name[:i] + name[i + 1:]


def corrupted(stop_names):
    rng = random.Random(100)
    rows = []
    with_street = [n for n in stop_names if "Street" in n]
    for k in range(100):
        kind = ["elongation", "street_abbrev", "typo"][k % 3]
        if kind == "street_abbrev":
            name = with_street[(k // 3) % len(with_street)]
            mention = name.replace("Street", "St")
        else:
            name = rng.choice(stop_names)
            mention = elongate(rng, name) if kind == "elongation" else typo(rng, name)
        if rng.random() < 0.3:
            mention = mention.lower()
        rows.append((mention, name, kind))
    return rows


if __name__ == "__main__":
    import os
    here = os.path.dirname(os.path.abspath(__file__))
    s = stops()
    with open(os.path.join(here, "stops.txt"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["stop_id", "stop_name", "stop_lat", "stop_lon"])
        w.writerows(s)
    with open(os.path.join(here, "corrupted_stops.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mention", "expected", "corruption"])
        w.writerows(corrupted([r[1] for r in s]))
