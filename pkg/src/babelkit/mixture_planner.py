"""Two-stage token mixture planning over the 25-language registry.

Stage 1 formalizes "as equally as possible" as max-min-fair water-
filling over per-language totals, split across categories pro rata.
Stage 2 reweights the stage-1 shares by a low-resource boost and a
textbook boost, then redistributes mass that exceeds availability until
a fixed point.

All planning arithmetic runs on exact rationals (fractions.Fraction),
so neutral boosts reproduce stage 1 bit-for-bit and rounding never
drifts by a ULP. Integer token outputs use largest-remainder rounding,
language totals first, then categories within each language, so every
subtotal is exact.

The resource classification is the published hard-coded listing; the
cc-ratio >= 1.0 rule is only a fallback for codes added to the registry
later. Turkish is listed low-resource despite a cc ratio above 1; the
conflict is surfaced in the registry export rather than resolved.
"""
from dataclasses import dataclass
from fractions import Fraction

from .corpus_filter import CATEGORIES
from .errors import ValidationError
from ._util import seeded_rng

HIGH = "high"
LOW = "low"

CC_RULE_THRESHOLD = 1.0  # >= 1.0 counts as high-resource (Vietnamese sits at 1.0)


@dataclass(frozen=True)
class LanguageInfo:
    code: str
    name: str
    speakers: int
    cc_ratio: float
    resource_class: str

    @property
    def cc_rule_class(self):
        return HIGH if self.cc_ratio >= CC_RULE_THRESHOLD else LOW

    @property
    def classification_conflict(self):
        return self.resource_class != self.cc_rule_class


def _lang(code, name, speakers, cc_ratio, resource_class):
    return LanguageInfo(code, name, speakers, cc_ratio, resource_class)


# Top 25 languages by speaker count with per-language open-corpus ratios.
REGISTRY = {
    info.code: info
    for info in (
        _lang("en", "English", 1_500_000_000, 43.4, HIGH),
        _lang("zh", "Chinese (Mandarin)", 1_400_000_000, 5.1, HIGH),
        _lang("hi", "Hindi", 700_000_000, 0.2, LOW),
        _lang("es", "Spanish", 595_000_000, 4.6, HIGH),
        _lang("ar", "Standard Arabic", 400_000_000, 0.68, LOW),
        _lang("fr", "French", 300_000_000, 4.4, HIGH),
        _lang("bn", "Bengali", 300_000_000, 0.1, LOW),
        _lang("pt", "Portuguese", 270_000_000, 2.3, HIGH),
        _lang("ru", "Russian", 260_000_000, 6.2, HIGH),
        _lang("ur", "Urdu", 230_000_000, 0.02, LOW),
        _lang("id", "Indonesian", 200_000_000, 1.1, HIGH),
        _lang("de", "Standard German", 135_000_000, 5.4, HIGH),
        _lang("ja", "Japanese", 130_000_000, 5.3, HIGH),
        _lang("sw", "Swahili", 100_000_000, 0.008, LOW),
        _lang("fil", "Filipino (Tagalog)", 100_000_000, 0.008, LOW),
        _lang("ta", "Tamil", 90_000_000, 0.04, LOW),
        _lang("vi", "Vietnamese", 86_000_000, 1.0, HIGH),
        _lang("tr", "Turkish", 85_000_000, 1.3, LOW),
        _lang("it", "Italian", 85_000_000, 2.4, HIGH),
        _lang("jv", "Javanese", 83_000_000, 0.002, LOW),
        _lang("ko", "Korean", 80_000_000, 0.76, LOW),
        _lang("ha", "Hausa", 80_000_000, 0.003, LOW),
        _lang("fa", "Iranian Persian", 80_000_000, 0.74, LOW),
        _lang("th", "Thai", 80_000_000, 0.42, LOW),
        _lang("my", "Burmese", 50_000_000, 0.01, LOW),
    )
}


def classify_resource(lang):
    """Hard-coded high/low listing; unknown codes are an error."""
    info = REGISTRY.get(lang)
    if info is None:
        raise ValidationError(f"unknown language {lang!r}")
    return info.resource_class


def export_registry():
    """Registry as JSON-ready records, classification conflicts surfaced."""
    return [
        {
            "code": info.code,
            "name": info.name,
            "speakers": info.speakers,
            "cc_ratio": info.cc_ratio,
            "resource_class": info.resource_class,
            "cc_rule_class": info.cc_rule_class,
            "classification_conflict": info.classification_conflict,
        }
        for info in REGISTRY.values()
    ]


@dataclass
class CorpusStats:
    """Available token counts per (language, category)."""

    tokens: dict  # (lang, category) -> int

    def validate(self):
        errs = []
        for (lang, cat), count in self.tokens.items():
            if cat not in CATEGORIES:
                errs.append(f"unknown category {cat!r} for {lang!r}")
            if not isinstance(count, int) or count < 0:
                errs.append(f"token count for ({lang}, {cat}) must be a non-negative integer")
        if errs:
            raise ValidationError(errs)
        return self

    def languages(self):
        return sorted({lang for lang, _ in self.tokens})

    def lang_total(self, lang):
        return sum(c for (l, _), c in self.tokens.items() if l == lang)

    def total(self):
        return sum(self.tokens.values())

    def to_dict(self):
        nested = {}
        for (lang, cat), count in sorted(self.tokens.items()):
            nested.setdefault(lang, {})[cat] = count
        return nested

    @classmethod
    def from_dict(cls, data):
        tokens = {}
        for lang, cats in data.items():
            if not isinstance(cats, dict):
                raise ValidationError(f"stats for {lang!r} must map category -> tokens")
            for cat, count in cats.items():
                tokens[(lang, cat)] = int(count)
        return cls(tokens=tokens).validate()

    @classmethod
    def from_documents(cls, docs):
        tokens = {}
        for doc in docs:
            key = (doc.lang, doc.category)
            tokens[key] = tokens.get(key, 0) + doc_token_count(doc)
        return cls(tokens=tokens).validate()


def doc_token_count(doc):
    """Planning token unit: whitespace-separated tokens."""
    return len(doc.text.split())


@dataclass
class MixturePlan:
    stage: int
    allocations: dict  # (lang, category) -> int tokens
    budget: int

    def total(self):
        return sum(self.allocations.values())

    def validate(self, stats=None):
        errs = []
        if self.total() > self.budget:
            errs.append(f"allocations total {self.total()} exceeds budget {self.budget}")
        if stats is not None:
            for key, tokens in self.allocations.items():
                avail = stats.tokens.get(key, 0)
                if tokens > avail:
                    errs.append(f"allocation {tokens} exceeds availability {avail} for {key}")
        if errs:
            raise ValidationError(errs)
        return self

    def to_dict(self):
        nested = {}
        for (lang, cat), count in sorted(self.allocations.items()):
            nested.setdefault(lang, {})[cat] = count
        return {"stage": self.stage, "budget": self.budget, "allocations": nested}

    @classmethod
    def from_dict(cls, data):
        allocations = {}
        for lang, cats in data["allocations"].items():
            for cat, count in cats.items():
                allocations[(lang, cat)] = int(count)
        return cls(stage=int(data["stage"]), allocations=allocations, budget=int(data["budget"]))


def water_fill(availability, target):
    """Exact max-min-fair levels: alloc = min(avail, c) with sum = min(target, supply)."""
    total = sum(availability.values())
    target = Fraction(target)
    if target >= total:
        return {k: Fraction(v) for k, v in availability.items()}
    alloc = {}
    remaining = target
    items = sorted(availability.items(), key=lambda kv: (kv[1], kv[0]))
    for idx, (key, avail) in enumerate(items):
        level = remaining / (len(items) - idx)
        if avail <= level:
            alloc[key] = Fraction(avail)
            remaining -= avail
        else:
            for key2, _ in items[idx:]:
                alloc[key2] = level
            break
    return alloc


def largest_remainder(real_alloc, target, caps):
    """Round exact rationals to integers preserving the total.

    Floors everything, then bumps the largest fractional parts (ties by
    key) until the target is met; a bump never exceeds the cap because
    any fractional allocation sits strictly below its integer cap.
    """
    floors = {k: int(v) for k, v in real_alloc.items()}
    deficit = int(target) - sum(floors.values())
    if deficit < 0:
        raise ValidationError("rounding target below floor sum")
    order = sorted(real_alloc, key=lambda k: (-(real_alloc[k] - floors[k]), k))
    for key in order:
        if deficit == 0:
            break
        if floors[key] + 1 <= caps[key]:
            floors[key] += 1
            deficit -= 1
    if deficit:
        raise ValidationError("rounding could not place all mass within caps")
    return floors


def _stage1_real_cells(stats, target):
    """Exact stage-1 cell allocation: water-fill languages, split pro rata."""
    lang_totals = {lang: stats.lang_total(lang) for lang in stats.languages()}
    lang_real = water_fill(lang_totals, target)
    cells = {}
    for (lang, cat), avail in stats.tokens.items():
        total = lang_totals[lang]
        if total == 0:
            cells[(lang, cat)] = Fraction(0)
        else:
            cells[(lang, cat)] = lang_real[lang] * Fraction(avail, total)
    return cells


def _round_cells(cells, target, stats):
    """Hierarchical largest-remainder: language totals, then categories."""
    langs = stats.languages()
    lang_real = {
        lang: sum((v for (l, _), v in cells.items() if l == lang), Fraction(0))
        for lang in langs
    }
    lang_caps = {lang: stats.lang_total(lang) for lang in langs}
    lang_int = largest_remainder(lang_real, target, lang_caps)
    allocations = {}
    for lang in langs:
        cell_real = {cat: v for (l, cat), v in cells.items() if l == lang}
        caps = {cat: stats.tokens[(lang, cat)] for cat in cell_real}
        cell_int = largest_remainder(cell_real, lang_int[lang], caps)
        for cat, count in cell_int.items():
            allocations[(lang, cat)] = count
    return allocations


def _plan_target(stats, budget):
    if budget <= 0:
        raise ValidationError(f"budget must be positive, got {budget}")
    supply = stats.total()
    if supply == 0:
        raise ValidationError("all availabilities are zero")
    return min(int(budget), supply)


def stage1_allocation(stats, budget):
    """Max-min-fair allocation: equal shares capped only by availability."""
    stats.validate()
    target = _plan_target(stats, budget)
    cells = _stage1_real_cells(stats, target)
    allocations = _round_cells(cells, target, stats)
    return MixturePlan(stage=1, allocations=allocations, budget=int(budget)).validate(stats)


def capped_fill(weights, caps, target):
    """Proportional fill under caps, redistributing overflow to a fixed point."""
    alloc = {k: Fraction(0) for k in weights}
    active = {k for k in weights if weights[k] > 0 and caps[k] > 0}
    remaining = Fraction(target)
    while remaining > 0 and active:
        total_w = sum((weights[k] for k in active), Fraction(0))
        share = {k: weights[k] * remaining / total_w for k in active}
        overflow = {k for k in active if share[k] >= caps[k]}
        if not overflow:
            for k in active:
                alloc[k] = share[k]
            return alloc
        for k in overflow:
            alloc[k] = Fraction(caps[k])
            remaining -= caps[k]
            active.remove(k)
    return alloc


def stage2_allocation(stats, budget, low_boost=2.0, textbook_boost=2.0):
    """Stage-1 shares reweighted toward low-resource languages and textbooks."""
    stats.validate()
    if not (low_boost >= 1 and textbook_boost >= 1):
        raise ValidationError(
            f"boosts must be >= 1, got low={low_boost!r} textbook={textbook_boost!r}"
        )
    try:
        low_boost = Fraction(low_boost)
        textbook_boost = Fraction(textbook_boost)
    except (ValueError, OverflowError):
        raise ValidationError("boosts must be finite numbers")
    target = _plan_target(stats, budget)

    base = _stage1_real_cells(stats, target)
    weights = {}
    for (lang, cat), share in base.items():
        w = share
        if classify_resource(lang) == LOW:
            w *= low_boost
        if cat == "textbook":
            w *= textbook_boost
        weights[(lang, cat)] = w

    caps = {key: stats.tokens[key] for key in weights}
    cells = capped_fill(weights, caps, target)
    allocations = _round_cells(cells, target, stats)
    return MixturePlan(stage=2, allocations=allocations, budget=int(budget)).validate(stats)


def build_corpus_index(docs):
    """Index documents for manifest sampling: (lang, category) -> [(id, tokens)]."""
    index = {}
    for doc in docs:
        index.setdefault((doc.lang, doc.category), []).append(
            (doc.id, doc_token_count(doc))
        )
    return index


def sample_manifest(plan, index, seed=0):
    """Seeded selection of document ids fulfilling each plan cell.

    Documents are drawn without replacement in a per-cell seeded random
    order until the cell's allocation is met; the last pick may overshoot
    by less than its own length. Stable across reruns and worker counts.
    """
    manifest = {}
    for (lang, cat), allocation in sorted(plan.allocations.items()):
        if allocation == 0:
            manifest[(lang, cat)] = {"ids": [], "tokens": 0}
            continue
        entries = index.get((lang, cat))
        if not entries:
            raise ValidationError(
                f"corpus index missing documents for ({lang}, {cat}) "
                f"with allocation {allocation}"
            )
        entries = sorted(entries)
        rng = seeded_rng(seed, lang, cat)
        order = rng.permutation(len(entries))
        chosen = []
        total = 0
        for pos in order:
            doc_id, tokens = entries[pos]
            chosen.append(doc_id)
            total += tokens
            if total >= allocation:
                break
        if total < allocation:
            raise ValidationError(
                f"cell ({lang}, {cat}) holds {total} tokens, allocation needs {allocation}"
            )
        manifest[(lang, cat)] = {"ids": chosen, "tokens": total}
    return manifest


def manifest_to_dict(manifest):
    nested = {}
    for (lang, cat), cell in sorted(manifest.items()):
        nested.setdefault(lang, {})[cat] = cell
    return nested
