"""Templated French/English sentence pairs for offline experiments.

The grammar covers copular sentences with adjective agreement, transitive
verbs with determiners, negation, locations and yes/no questions. Some
English renderings are deliberately ambiguous (``i am`` vs ``i m``, ``son``
as ``his`` or ``her``) so that token accuracy has a ceiling below 1, as on
real data.

Content words are drawn with Zipf frequencies from the hand-written lists
followed by a long tail of invented lexemes, so a 10k-pair corpus has a
vocabulary of a few thousand types with many seen once or twice, like short
filtered sentence sets from Tatoeba.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .numerics.rng import RngStream

# (french, english be-full, english be-contracted, english subject, 3rd singular, plural, feminine)
SUBJECTS = [
    ("je", "i am", "i m", "i", False, False, False),
    ("tu", "you are", "you re", "you", False, False, False),
    ("il", "he is", "he s", "he", True, False, False),
    ("elle", "she is", "she s", "she", True, False, True),
    ("nous", "we are", "we re", "we", False, True, False),
    ("vous", "you are", "you re", "you", False, True, False),
    ("ils", "they are", "they re", "they", False, True, False),
    ("elles", "they are", "they re", "they", False, True, True),
]
ETRE = ["suis", "es", "est", "est", "sommes", "etes", "sont", "sont"]

# (masculine, feminine, english)
ADJECTIVES = [
    ("fatigue", "fatiguee", "tired"), ("grand", "grande", "tall"), ("petit", "petite", "short"),
    ("content", "contente", "glad"), ("triste", "triste", "sad"), ("pret", "prete", "ready"),
    ("malade", "malade", "sick"), ("riche", "riche", "rich"), ("pauvre", "pauvre", "poor"),
    ("occupe", "occupee", "busy"), ("seul", "seule", "alone"), ("fort", "forte", "strong"),
    ("faible", "faible", "weak"), ("calme", "calme", "calm"), ("jeune", "jeune", "young"),
    ("vieux", "vieille", "old"), ("heureux", "heureuse", "happy"), ("fou", "folle", "crazy"),
    ("gentil", "gentille", "nice"), ("mechant", "mechante", "mean"), ("lent", "lente", "slow"),
    ("rapide", "rapide", "fast"), ("intelligent", "intelligente", "smart"), ("timide", "timide", "shy"),
    ("prudent", "prudente", "careful"), ("perdu", "perdue", "lost"), ("libre", "libre", "free"),
    ("sur", "sure", "sure"), ("curieux", "curieuse", "curious"), ("nerveux", "nerveuse", "nervous"),
    ("celebre", "celebre", "famous"), ("marie", "mariee", "married"), ("blesse", "blessee", "hurt"),
    ("affame", "affamee", "starving"), ("ivre", "ivre", "drunk"), ("honnete", "honnete", "honest"),
    ("serieux", "serieuse", "serious"), ("froid", "froide", "cold"), ("chaud", "chaude", "warm"),
    ("gros", "grosse", "fat"),
]

# (stem, english, english 3rd singular)
VERBS = [
    ("aim", "like", "likes"), ("mang", "eat", "eats"), ("regard", "watch", "watches"),
    ("cherch", "look for", "looks for"), ("trouv", "find", "finds"), ("port", "carry", "carries"),
    ("achet", "buy", "buys"), ("lav", "wash", "washes"), ("gard", "keep", "keeps"),
    ("prepar", "prepare", "prepares"), ("ferm", "close", "closes"), ("apport", "bring", "brings"),
    ("utilis", "use", "uses"), ("quitt", "leave", "leaves"), ("dessin", "draw", "draws"),
    ("emprunt", "borrow", "borrows"), ("repar", "fix", "fixes"), ("cass", "break", "breaks"),
    ("cach", "hide", "hides"), ("oubli", "forget", "forgets"), ("ador", "love", "loves"),
    ("detest", "hate", "hates"), ("montr", "show", "shows"), ("envoy", "send", "sends"),
    ("pein", "paint", "paints"), ("vol", "steal", "steals"), ("nettoy", "clean", "cleans"),
]
VERB_ENDINGS = ["e", "es", "e", "e", "ons", "ez", "ent", "ent"]

# (french, gender, english)
NOUNS = [
    ("livre", "m", "book"), ("pomme", "f", "apple"), ("voiture", "f", "car"), ("chat", "m", "cat"),
    ("chien", "m", "dog"), ("maison", "f", "house"), ("cle", "f", "key"), ("porte", "f", "door"),
    ("lettre", "f", "letter"), ("table", "f", "table"), ("chaise", "f", "chair"), ("stylo", "m", "pen"),
    ("sac", "m", "bag"), ("telephone", "m", "phone"), ("velo", "m", "bike"), ("robe", "f", "dress"),
    ("chemise", "f", "shirt"), ("chapeau", "m", "hat"), ("gateau", "m", "cake"), ("fenetre", "f", "window"),
    ("journal", "m", "newspaper"), ("photo", "f", "photo"), ("carte", "f", "map"), ("montre", "f", "watch"),
    ("ordinateur", "m", "computer"), ("lampe", "f", "lamp"), ("bouteille", "f", "bottle"),
    ("tasse", "f", "cup"), ("assiette", "f", "plate"), ("cadeau", "m", "gift"), ("film", "m", "movie"),
    ("chanson", "f", "song"), ("bateau", "m", "boat"), ("guitare", "f", "guitar"),
    ("valise", "f", "suitcase"), ("parapluie", "m", "umbrella"), ("manteau", "m", "coat"),
    ("ballon", "m", "ball"), ("fleur", "f", "flower"), ("oiseau", "m", "bird"),
]
PLACES = [
    ("dans le jardin", "in the garden"), ("dans la cuisine", "in the kitchen"),
    ("a la maison", "at home"), ("au bureau", "at the office"), ("a l ecole", "at school"),
    ("dans le parc", "in the park"), ("ce matin", "this morning"), ("ce soir", "tonight"),
    ("maintenant", "now"), ("chaque jour", "every day"),
]

_VOWELS = "aeiouh"

TAIL_NOUNS, TAIL_ADJECTIVES, TAIL_VERBS = 1500, 400, 300
ZIPF_EXPONENT = 1.0

_FR_ONSETS = ["b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "br", "tr", "pl", "gr"]
_FR_NUCLEI = ["a", "e", "i", "o", "u", "ou", "ai", "on", "an", "in"]
_EN_ONSETS = ["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "w", "sh", "st", "bl", "cr"]
_EN_NUCLEI = ["a", "e", "i", "o", "u", "ee", "oo", "ay"]
_EN_CODAS = ["", "n", "t", "k", "p", "m", "ck", "nd"]


def _pseudo_words(n: int, gen, onsets, nuclei, codas, taken: set, lo=2, hi=3, final=""):
    out = []
    while len(out) < n:
        k = int(gen.integers(lo, hi + 1))
        w = "".join(onsets[int(gen.integers(len(onsets)))] + nuclei[int(gen.integers(len(nuclei)))]
                    for _ in range(k))
        w += codas[int(gen.integers(len(codas)))] + final
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _build_lexicon():
    # the invented lexicon is part of the language, so it does not depend on the corpus seed
    gen = RngStream(0).named("lexicon").generator()
    fr_taken = {w for row in NOUNS for w in row[:1]} | {w for row in ADJECTIVES for w in row[:2]}
    en_taken = {row[2] for row in NOUNS} | {row[2] for row in ADJECTIVES} | {row[1] for row in VERBS}
    nouns = list(NOUNS)
    fr = _pseudo_words(TAIL_NOUNS, gen, _FR_ONSETS, _FR_NUCLEI, ["", "e", "t", "r", "l"], fr_taken)
    en = _pseudo_words(TAIL_NOUNS, gen, _EN_ONSETS, _EN_NUCLEI, _EN_CODAS, en_taken)
    nouns += [(f, "mf"[int(gen.integers(2))], e) for f, e in zip(fr, en)]
    adjectives = list(ADJECTIVES)
    fr = _pseudo_words(TAIL_ADJECTIVES, gen, _FR_ONSETS, _FR_NUCLEI, ["", "t", "d", "r"], fr_taken)
    en = _pseudo_words(TAIL_ADJECTIVES, gen, _EN_ONSETS, _EN_NUCLEI, _EN_CODAS, en_taken, final="y")
    adjectives += [(f, f if f.endswith("e") else f + "e", e) for f, e in zip(fr, en)]
    verbs = list(VERBS)
    fr = _pseudo_words(TAIL_VERBS, gen, _FR_ONSETS, ["a", "e", "i", "o", "ou"], ["l", "r", "t", "s", "n"],
                       fr_taken, lo=1, hi=2)
    en = _pseudo_words(TAIL_VERBS, gen, _EN_ONSETS, _EN_NUCLEI, ["n", "t", "k", "p", "m", "nd"], en_taken)
    verbs += [(f, e, e + "s") for f, e in zip(fr, en)]
    return nouns, adjectives, verbs


def _zipf_cdf(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** ZIPF_EXPONENT
    return np.cumsum(w / w.sum())


ALL_NOUNS, ALL_ADJECTIVES, ALL_VERBS = _build_lexicon()
_CDF = {id(lst): _zipf_cdf(len(lst)) for lst in (ALL_NOUNS, ALL_ADJECTIVES, ALL_VERBS)}


def _zipf_pick(items, gen):
    cdf = _CDF[id(items)]
    return items[min(int(np.searchsorted(cdf, gen.random(), side="right")), len(items) - 1)]


def _is_vowel(w: str) -> bool:
    return w[0] in _VOWELS


def _determiner(kind: str, noun: str, gender: str, gen: np.random.Generator):
    fr_vowel = _is_vowel(noun)
    en_noun_vowel = None
    if kind == "def":
        fr = "l" if fr_vowel else ("le" if gender == "m" else "la")
        return fr, "the"
    if kind == "indef":
        return ("un" if gender == "m" else "une"), en_noun_vowel
    table = {
        "my": ("mon", "ma", ["my"]),
        "your": ("ton", "ta", ["your"]),
        "his": ("son", "sa", ["his", "her"]),
        "our": ("notre", "notre", ["our"]),
        "yours": ("votre", "votre", ["your"]),
        "their": ("leur", "leur", ["their"]),
    }
    m, f, en = table[kind]
    fr = m if (gender == "m" or fr_vowel) else f
    return fr, en[int(gen.integers(len(en)))]


DET_KINDS = ["def", "indef", "my", "your", "his", "our", "yours", "their"]


def _noun_phrase(gen):
    fr_noun, gender, en_noun = _zipf_pick(ALL_NOUNS, gen)
    kind = DET_KINDS[int(gen.integers(len(DET_KINDS)))]
    det_fr, det_en = _determiner(kind, fr_noun, gender, gen)
    if det_en is None:
        det_en = "an" if en_noun[0] in "aeiou" else "a"
    fr = f"{det_fr} {fr_noun}"
    return fr, f"{det_en} {en_noun}"


def _copular(gen):
    i = int(gen.integers(len(SUBJECTS)))
    fr_s, be_full, be_short, _en_s, _third, plural, fem = SUBJECTS[i]
    masc, femn, en_adj = _zipf_pick(ALL_ADJECTIVES, gen)
    adj = femn if fem else masc
    if plural and not adj.endswith(("s", "x")):
        adj += "s"
    neg = gen.random() < 0.4
    mod = int(gen.integers(3))
    fr_mod, en_mod = [("", ""), ("tres ", "very "), ("trop ", "too ")][mod]
    be = be_short if gen.random() < 0.5 else be_full
    etre = ETRE[i]
    if neg:
        fr_neg = ("n " if _is_vowel(etre) else "ne ")
        fr = f"{fr_s} {fr_neg}{etre} pas {fr_mod}{adj} ."
        en = f"{be} not {en_mod}{en_adj} ."
    else:
        fr = f"{fr_s} {etre} {fr_mod}{adj} ."
        en = f"{be} {en_mod}{en_adj} ."
    return en, fr


def _conjugate(stem: str, i: int) -> str:
    ending = VERB_ENDINGS[i]
    if ending == "ons" and stem.endswith("g"):
        return stem + "eons"
    if stem.endswith("oy") and ending in ("e", "es", "ent"):
        return stem[:-1] + "i" + ending
    return stem + ending


def _transitive(gen, question: bool = False):
    i = int(gen.integers(len(SUBJECTS)))
    fr_s, _bf, _bs, en_s, third, _plural, _fem = SUBJECTS[i]
    stem, en_v, en_v3 = _zipf_pick(ALL_VERBS, gen)
    verb = _conjugate(stem, i)
    obj_fr, obj_en = _noun_phrase(gen)
    place_fr = place_en = ""
    if gen.random() < 0.3:
        pf, pe = PLACES[int(gen.integers(len(PLACES)))]
        place_fr, place_en = f" {pf}", f" {pe}"
    subj_fr = "j" if (fr_s == "je" and _is_vowel(verb)) else fr_s
    if question:
        que = "qu" if _is_vowel(fr_s) else "que"
        fr = f"est ce {que} {subj_fr} {verb} {obj_fr}{place_fr} ?"
        aux = "does" if third else "do"
        en = f"{aux} {en_s} {en_v} {obj_en}{place_en} ?"
        return en, fr
    if gen.random() < 0.3:
        neg_fr = "n" if _is_vowel(verb) else "ne"
        fr = f"{fr_s} {neg_fr} {verb} pas {obj_fr}{place_fr} ."
        aux = "doesn t" if third else "don t"
        en = f"{en_s} {aux} {en_v} {obj_en}{place_en} ."
        return en, fr
    fr = f"{subj_fr} {verb} {obj_fr}{place_fr} ."
    en = f"{en_s} {en_v3 if third else en_v} {obj_en}{place_en} ."
    return en, fr


def generate_pairs(n: int, seed: int = 0) -> list[tuple[str, str]]:
    """``n`` distinct (english, french) pairs, deterministic in ``seed``."""
    gen = RngStream(seed).named("synth").generator()
    seen = set()
    out = []
    while len(out) < n:
        r = gen.random()
        if r < 0.3:
            pair = _copular(gen)
        elif r < 0.85:
            pair = _transitive(gen)
        else:
            pair = _transitive(gen, question=True)
        if pair[1] in seen:
            continue
        seen.add(pair[1])
        out.append(pair)
    return out


def write_corpus(path, n: int, seed: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{en}\t{fr}" for en, fr in generate_pairs(n, seed)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
