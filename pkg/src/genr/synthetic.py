"""Seeded synthetic catalog and click log.

Titles are keyword-stacked templates (brand, product, attributes, size, promo
noise) in shuffled order, so word order carries no signal. Queries are short
attribute combinations of catalog items with Zipf popularity; a query's click
count is ``ceil(c / rank)`` with ``c`` chosen so that the requested share of
queries gets fewer than 5 clicks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .corpus import CLICKED, EXPOSED, ClickEvent, write_clicks
from .rng import SplitMix64

BRANDS = [
    "acme", "nike", "adidas", "puma", "reebok", "new balance", "north face", "columbia", "patagonia",
    "under armour", "asics", "salomon", "vans", "converse", "fila", "skechers", "mizuno", "brooks",
    "hoka one", "on running", "uniqlo", "levis", "carhartt", "timberland",
]
PRODUCTS = [
    "running shoe", "trail shoe", "rain jacket", "down jacket", "hoodie", "t shirt", "backpack",
    "yoga pants", "hiking boot", "sneaker", "fleece vest", "wool sock", "baseball cap", "sports bra",
    "track pants", "windbreaker", "sandal", "beanie",
]
COLORS = ["black", "white", "red", "blue", "navy", "green", "olive", "grey", "pink", "beige", "orange", "purple"]
MATERIALS = ["cotton", "polyester", "nylon", "merino wool", "leather", "mesh", "gore tex", "fleece", "canvas", "suede"]
STYLES = ["slim fit", "oversized", "lightweight", "waterproof", "breathable", "insulated", "classic", "retro", "casual"]
GENDERS = ["men", "women", "kids", "unisex"]
SIZES = ["size s", "size m", "size l", "size xl", "size 38", "size 40", "size 42", "size 44"]
NOISE = [
    "hot sale", "free shipping", "new arrival", "official store", "genuine", "best seller", "limited edition",
    "2024", "clearance", "top rated", "gift", "fast delivery", "authentic", "premium quality", "discount",
    "flash deal", "buy now", "must have", "trending", "exclusive", "high quality", "comfortable", "durable",
    "everyday", "outdoor", "sport", "fashion", "value pack", "cash back", "in stock", "original", "brand new",
    "super soft", "all season", "easy care", "quick dry", "anti slip", "eco friendly", "travel", "daily wear",
]

ATTRS = ("brand", "product", "color", "material", "style", "gender")
QUERY_SHAPES = [
    ("brand", "product"),
    ("product", "color"),
    ("brand", "product", "color"),
    ("product", "gender"),
    ("product", "material"),
    ("brand", "product", "gender"),
    ("product", "style"),
    ("brand", "color", "product", "gender"),
    ("product",),
    ("brand",),
]


@dataclass
class SyntheticConfig:
    n_items: int = 500
    n_queries: int = 200
    seed: int = 0
    short_click_share: float = 0.8  # share of queries with < 5 clicks
    noise_words: int = 27
    exposures_per_click: int = 2
    zipf_items: float = 1.0
    click_zipf: float = 0.0  # 0: clicks spread uniformly over a query's matching items


@dataclass
class SyntheticData:
    items: list[dict]  # {"item_id", "title", "attrs"}
    clicks: list[ClickEvent]
    lexicon: list[str]
    queries: dict[str, dict]  # query text -> attribute constraints


def lexicon_phrases() -> list[str]:
    pools = [BRANDS, PRODUCTS, MATERIALS, STYLES, SIZES, NOISE]
    return sorted({p for pool in pools for p in pool if " " in p})


def _zipf_pick(rng: SplitMix64, n: int, a: float) -> int:
    w = [1.0 / (i + 1) ** a for i in range(n)]
    x = rng.random() * math.fsum(w)
    acc = 0.0
    for i, wi in enumerate(w):
        acc += wi
        if x < acc:
            return i
    return n - 1


def click_scale(n_queries: int, share: float) -> int:
    """Smallest c such that ceil(c / rank) < 5 holds for at most ``share`` of ranks."""
    c = 1
    while sum(1 for r in range(1, n_queries + 1) if math.ceil(c / r) < 5) > share * n_queries:
        c += 1
    return c


def generate(cfg: SyntheticConfig) -> SyntheticData:
    rng = SplitMix64(cfg.seed)
    items = []
    for item_id in range(cfg.n_items):
        attrs = {
            "brand": BRANDS[_zipf_pick(rng, len(BRANDS), cfg.zipf_items)],
            "product": PRODUCTS[_zipf_pick(rng, len(PRODUCTS), cfg.zipf_items)],
            "color": rng.choice(COLORS),
            "material": rng.choice(MATERIALS),
            "style": rng.choice(STYLES),
            "gender": rng.choice(GENDERS),
            "size": rng.choice(SIZES),
        }
        words = list(attrs.values()) + rng.sample(NOISE, cfg.noise_words)
        words.append(f"model {rng.randbelow(900) + 100}")
        rng.shuffle(words)
        items.append({"item_id": item_id, "title": " ".join(words), "attrs": attrs})

    queries: dict[str, dict] = {}
    attempts = 0
    while len(queries) < cfg.n_queries:
        attempts += 1
        if attempts > 1000 * cfg.n_queries:
            raise RuntimeError("could not draw enough distinct queries")
        seed_item = items[rng.randbelow(len(items))]
        shape = QUERY_SHAPES[rng.randbelow(len(QUERY_SHAPES))]
        cons = {a: seed_item["attrs"][a] for a in shape}
        text = " ".join(cons[a] for a in shape)
        if text not in queries:
            queries[text] = cons

    def matches(cons: dict) -> list[int]:
        return [it["item_id"] for it in items if all(it["attrs"][a] == v for a, v in cons.items())]

    order = list(queries)
    rng.shuffle(order)  # popularity rank
    scale = click_scale(cfg.n_queries, cfg.short_click_share)
    clicks: list[ClickEvent] = []
    for rank, text in enumerate(order, 1):
        rel = matches(queries[text])
        product = queries[text]["product"] if "product" in queries[text] else None
        near = [
            it["item_id"]
            for it in items
            if it["item_id"] not in set(rel) and (product is None or it["attrs"]["product"] == product)
        ]
        for _ in range(math.ceil(scale / rank)):
            ts = rng.randbelow(10_000_000)
            clicks.append(ClickEvent(text, rel[_zipf_pick(rng, len(rel), cfg.click_zipf)], CLICKED, ts))
            for _ in range(cfg.exposures_per_click):
                if near:
                    clicks.append(ClickEvent(text, rng.choice(near), EXPOSED, ts))
    clicks.sort(key=lambda c: (c.timestamp, c.query, c.item_id, c.label))
    return SyntheticData(items=items, clicks=clicks, lexicon=lexicon_phrases(), queries=queries)


def write(data: SyntheticData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"catalog": out / "catalog.jsonl", "clicks": out / "clicks.tsv", "lexicon": out / "lexicon.txt"}
    with open(paths["catalog"], "w", encoding="utf-8") as fh:
        for it in data.items:
            fh.write(json.dumps({"item_id": it["item_id"], "title": it["title"]}) + "\n")
    write_clicks(paths["clicks"], data.clicks)
    paths["lexicon"].write_text("".join(p + "\n" for p in data.lexicon), encoding="utf-8")
    return paths
