"""Rule-based normalization filtering and quality-score gating.

"Characters" means Unicode scalar values after NFC normalization and
whitespace trimming, so non-Latin scripts are not penalized by byte
counts. The digit ratio uses decimal digits (category Nd) over the same
character count, with a strict > comparison at the boundary.
"""
import json
import unicodedata
from dataclasses import dataclass
from typing import Optional

from .errors import MalformedLineError, ValidationError

REASON_TOO_SHORT = "TooShort"
REASON_TOO_MANY_DIGITS = "TooManyDigits"
REASON_UNSCORED = "Unscored"
REASON_BELOW_THRESHOLD = "BelowThreshold"
REASON_MALFORMED = "MalformedLine"

CATEGORIES = ("web", "news", "wiki", "textbook", "other")

# the 25 registry codes (mixture_planner holds the full records)
LANGUAGE_CODES = frozenset(
    "en zh hi es ar fr bn pt ru ur id de ja sw fil ta vi tr it jv ko ha fa th my".split()
)


@dataclass
class Document:
    id: str
    text: str
    lang: str = "und"
    source: str = "web"
    score: Optional[float] = None

    def to_dict(self):
        d = {"id": self.id, "text": self.text, "lang": self.lang, "source": self.source}
        if self.score is not None:
            d["score"] = self.score
        return d

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValueError("document record is not an object")
        doc_id = data.get("id")
        text = data.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise ValueError("missing or empty 'id'")
        if not isinstance(text, str):
            raise ValueError("missing 'text'")
        lang = str(data.get("lang", "und"))
        if lang != "und" and lang not in LANGUAGE_CODES:
            raise ValueError(f"lang {lang!r} not in the language registry (or 'und')")
        score = data.get("score")
        if score is not None:
            score = float(score)
        return cls(
            id=doc_id,
            text=text,
            lang=lang,
            source=str(data.get("source", "web")),
            score=score,
        )

    @property
    def category(self):
        return self.source if self.source in CATEGORIES else "other"


@dataclass(frozen=True)
class FilterRules:
    min_chars: int = 100
    max_digit_ratio: float = 0.3

    def validate(self):
        errs = []
        if self.min_chars < 0:
            errs.append(f"min_chars must be >= 0, got {self.min_chars}")
        if not 0.0 <= self.max_digit_ratio <= 1.0:
            errs.append(f"max_digit_ratio must be in [0, 1], got {self.max_digit_ratio}")
        if errs:
            raise ValidationError(errs)
        return self


@dataclass(frozen=True)
class FilterDecision:
    kept: bool
    reason: Optional[str] = None
    detail: str = ""


KEEP = FilterDecision(kept=True)


def normalize_filter(doc, rules=FilterRules()):
    """Apply the length and digit-ratio rules to one document.

    Rules are checked in order (TooShort, TooManyDigits) and the first
    failure is reported. Zero-length text counts as TooShort regardless
    of min_chars since the digit ratio is undefined on it.
    """
    rules.validate()
    text = unicodedata.normalize("NFC", doc.text).strip()
    length = len(text)
    if length == 0 or length < rules.min_chars:
        return FilterDecision(
            kept=False,
            reason=REASON_TOO_SHORT,
            detail=f"{length} chars < {rules.min_chars}",
        )
    digits = sum(1 for ch in text if ch.isdecimal())
    ratio = digits / length
    if ratio > rules.max_digit_ratio:
        return FilterDecision(
            kept=False,
            reason=REASON_TOO_MANY_DIGITS,
            detail=f"{digits}/{length} digits = {ratio:.4f} > {rules.max_digit_ratio}",
        )
    return KEEP


def gate_decision(doc, threshold, sidecar=None):
    """Score-gate one document: the doc's own score wins over the sidecar."""
    score = doc.score if doc.score is not None else (sidecar or {}).get(doc.id)
    if score is None:
        return FilterDecision(
            kept=False, reason=REASON_UNSCORED, detail="no score on document or in sidecar"
        )
    if score >= threshold:
        return KEEP
    return FilterDecision(
        kept=False, reason=REASON_BELOW_THRESHOLD, detail=f"score {score} < {threshold}"
    )


def score_gate(docs, threshold, sidecar=None):
    """Keep documents whose quality score clears the threshold.

    Scores come from the document itself or a sidecar id->score map;
    documents with neither are rejected as Unscored. Returns
    (kept docs, rejection records, counts per reason).
    """
    kept = []
    rejected = []
    counts = {}
    for doc in docs:
        decision = gate_decision(doc, threshold, sidecar)
        if decision.kept:
            kept.append(doc)
            continue
        rejected.append({"id": doc.id, "reason": decision.reason, "detail": decision.detail})
        counts[decision.reason] = counts.get(decision.reason, 0) + 1
    return kept, rejected, counts


def load_score_sidecar(path):
    """JSONL of {"id", "score"}; duplicate ids are an error."""
    scores = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc_id = rec["id"]
                score = float(rec["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"malformed sidecar line {lineno}: {exc}")
            if doc_id in scores:
                raise ValidationError(f"duplicate id {doc_id!r} in sidecar (line {lineno})")
            scores[doc_id] = score
    return scores


def iter_documents(path, strict=False):
    """Yield (lineno, Document) from a JSONL corpus.

    Malformed lines (bad JSON, bad fields, invalid UTF-8) raise in strict
    mode; otherwise they are yielded as (lineno, MalformedLineError) for
    the caller to log and skip. Lines are decoded individually so one bad
    line never poisons its neighbours.
    """
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                doc = Document.from_dict(json.loads(raw.decode("utf-8")))
            except UnicodeDecodeError as exc:
                err = MalformedLineError(lineno, f"invalid UTF-8: {exc}")
                if strict:
                    raise err
                yield lineno, err
                continue
            except (json.JSONDecodeError, ValueError) as exc:
                err = MalformedLineError(lineno, str(exc))
                if strict:
                    raise err
                yield lineno, err
                continue
            yield lineno, doc


def read_documents(path, strict=True):
    """Load a whole corpus, skipping (or raising on) malformed lines."""
    docs = []
    for _, item in iter_documents(path, strict=strict):
        if isinstance(item, Document):
            docs.append(item)
    return docs


def write_documents(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
