"""Deterministic template-grammar corpus generator.

Gives the experiment harness a reproducible desk-scale stand-in for real
task-oriented dialogue corpora: intents are template sets whose ``[slot]``
placeholders are filled from per-type value lists, emitting gold BIO tags
for exactly the substituted spans.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, _dataset_from_records


@dataclass(frozen=True)
class IntentGrammar:
    intent: str
    templates: tuple  # each template: tuple of tokens, "[type]" marks a slot


@dataclass(frozen=True)
class GrammarSpec:
    intents: tuple
    slot_values: dict  # slot type -> tuple of value token-tuples
    profile: str = "balanced"  # or "zipf"
    zipf_exponent: float = 1.0

    def __post_init__(self):
        for ig in self.intents:
            for tpl in ig.templates:
                for tok in tpl:
                    if tok.startswith("[") and tok.endswith("]"):
                        stype = tok[1:-1]
                        if not self.slot_values.get(stype):
                            raise ValueError(
                                f"placeholder [{stype}] has no value list")


def _zipf_counts(n_classes: int, total: int, s: float):
    """Per-rank counts proportional to 1/rank^s, strictly decreasing.

    The total is approximate: ceilings plus the strictness repair shift it
    by a few examples.
    """
    harm = sum(1.0 / (r ** s) for r in range(1, n_classes + 1))
    c0 = total / harm
    counts = [math.ceil(c0 / (r ** s)) for r in range(1, n_classes + 1)]
    for i in range(1, n_classes):
        if counts[i] >= counts[i - 1]:
            counts[i] = counts[i - 1] - 1
        counts[i] = max(counts[i], 1)
    return counts


def generate(spec: GrammarSpec, n_per_intent: int | None = None,
             total: int | None = None, seed: int = 0) -> Dataset:
    """Instantiate the grammar into a validated Dataset."""
    if (n_per_intent is None) == (total is None):
        raise ValueError("give exactly one of n_per_intent or total")
    n_classes = len(spec.intents)
    if spec.profile == "balanced":
        if n_per_intent is not None:
            counts = [n_per_intent] * n_classes
        else:
            base = total // n_classes
            counts = [base + (1 if i < total % n_classes else 0)
                      for i in range(n_classes)]
    elif spec.profile == "zipf":
        if total is None:
            total = n_per_intent * n_classes
        counts = _zipf_counts(n_classes, total, spec.zipf_exponent)
    else:
        raise ValueError(f"unknown profile {spec.profile!r}")

    rng = np.random.default_rng(seed)
    records = []
    lineno = 1
    for ig, count in zip(spec.intents, counts):
        for k in range(count):
            tpl = ig.templates[rng.integers(len(ig.templates))]
            tokens, slots = [], []
            for tok in tpl:
                if tok.startswith("[") and tok.endswith("]"):
                    stype = tok[1:-1]
                    values = spec.slot_values[stype]
                    value = values[rng.integers(len(values))]
                    tokens.extend(value)
                    slots.append(f"B-{stype}")
                    slots.extend(f"I-{stype}" for _ in value[1:])
                else:
                    tokens.append(tok)
                    slots.append("O")
            records.append((lineno, {
                "tokens": tokens, "intent": ig.intent, "slots": slots,
                "id": f"{ig.intent}-{k}",
            }))
            lineno += 1
    return _dataset_from_records(records)


def load_grammar(path) -> GrammarSpec:
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    return GrammarSpec(
        intents=tuple(IntentGrammar(intent=i["intent"],
                                    templates=tuple(tuple(t) for t in i["templates"]))
                      for i in rec["intents"]),
        slot_values={k: tuple(tuple(v) for v in vs)
                     for k, vs in rec["slot_values"].items()},
        profile=rec.get("profile", "balanced"),
        zipf_exponent=float(rec.get("zipf_exponent", 1.0)),
    )


def save_grammar(spec: GrammarSpec, path) -> None:
    rec = {
        "intents": [{"intent": ig.intent, "templates": [list(t) for t in ig.templates]}
                    for ig in spec.intents],
        "slot_values": {k: [list(v) for v in vs] for k, vs in spec.slot_values.items()},
        "profile": spec.profile,
        "zipf_exponent": spec.zipf_exponent,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, indent=1)


def _t(*phrases):
    return tuple(tuple(p.split()) for p in phrases)


def _v(*phrases):
    return tuple(tuple(p.split()) for p in phrases)


def snips_like() -> GrammarSpec:
    """Ten balanced intents with mostly intent-specific vocabulary."""
    intents = (
        IntentGrammar("book_restaurant", _t(
            "book a table at [restaurant_name] for [party_size]",
            "book a table at a [facility] bar in [city]",
            "reserve a spot at [restaurant_name] for [party_size] people",
            "find me a table for [party_size] at [restaurant_name]",
        )),
        IntentGrammar("play_music", _t(
            "play some [genre] music",
            "play songs by [artist] from [year]",
            "put on [artist] tracks please",
            "start playing [genre] tunes from [year]",
        )),
        IntentGrammar("get_weather", _t(
            "what is the weather in [city] on [date]",
            "will it rain in [city] on [date]",
            "give me the forecast for [city]",
        )),
        IntentGrammar("add_to_playlist", _t(
            "add [track] to my [playlist] playlist",
            "put [track] onto the [playlist] list",
            "include [track] in [playlist]",
        )),
        IntentGrammar("rate_book", _t(
            "rate [book_title] [rating] stars",
            "give [book_title] a score of [rating]",
            "rate the novel [book_title] [rating] out of six",
        )),
        IntentGrammar("search_movie", _t(
            "find screenings of [movie] at [cinema]",
            "when is [movie] showing at [cinema]",
            "show movie times for [movie]",
        )),
        IntentGrammar("order_food", _t(
            "order a [dish] from [restaurant_name]",
            "get me a [dish] delivered from [restaurant_name]",
            "i want to order a [dish]",
        )),
        IntentGrammar("set_alarm", _t(
            "set an alarm for [time]",
            "wake me up at [time]",
            "schedule an alarm at [time] please",
        )),
        IntentGrammar("send_message", _t(
            "send a message to [contact]",
            "text [contact] right now",
            "write a note to [contact]",
        )),
        IntentGrammar("translate_phrase", _t(
            "translate this phrase into [language]",
            "say hello in [language]",
            "how do you write thanks in [language]",
        )),
    )
    slot_values = {
        "restaurant_name": _v("blue ribbon barbecue", "lebanese taverna",
                              "golden dragon", "harbor grill", "villa verde"),
        "party_size": _v("one", "two", "three", "four", "five", "six"),
        "facility": _v("smoking room", "spa", "indoor", "outdoor", "pool",
                       "internet", "parking", "wifi"),
        "city": _v("tokyo", "paris", "berlin", "madrid", "oslo", "dublin", "cairo"),
        "artist": _v("nina simone", "david bowie", "miles davis", "joni mitchell"),
        "genre": _v("jazz", "rock", "blues", "folk", "electro"),
        "year": _v("1984", "1999", "2003", "2019"),
        "date": _v("monday", "tuesday", "friday", "sunday", "tomorrow"),
        "track": _v("purple rain", "blue train", "hey jude", "clair de lune"),
        "playlist": _v("workout", "chill", "party", "focus"),
        "book_title": _v("dune", "hamlet", "white fang", "wild swans"),
        "rating": _v("one", "two", "three", "four", "five"),
        "movie": _v("inception", "vertigo", "amelie", "solaris"),
        "cinema": _v("grand cinema", "rex theater", "union hall"),
        "dish": _v("veggie burger", "pad thai", "margherita pizza", "miso soup"),
        "time": _v("six am", "seven pm", "noon", "five thirty"),
        "contact": _v("anna", "tom", "grandma", "alex", "maria"),
        "language": _v("french", "spanish", "german", "japanese", "italian"),
    }
    return GrammarSpec(intents=intents, slot_values=slot_values, profile="balanced")


def atis_like() -> GrammarSpec:
    """Fifteen Zipf-imbalanced intents over a shared slot inventory.

    With the default total of 670 the two rarest intents fall at or below
    15 examples, so a more-than-15 class filter keeps 13 of 15 intents.
    """
    intents = (
        IntentGrammar("find_flight", _t(
            "show flights from [from_city] to [to_city]",
            "i need a flight leaving [date]",
            "list the morning departures please",
            "are there any flights tonight",
            "i would like to fly to [to_city]",
        )),
        IntentGrammar("airfare", _t(
            "how much does a [fare_class] ticket cost",
            "what is the fare to [to_city]",
            "show me the ticket prices",
        )),
        IntentGrammar("ground_service", _t(
            "is there a [transport_type] in [city]",
            "how do i get downtown from the airport",
            "what ground transportation is available",
        )),
        IntentGrammar("flight_time", _t(
            "what time does [airline] leave [from_city]",
            "when does the flight arrive",
            "give me the arrival schedule",
        )),
        IntentGrammar("airline_info", _t(
            "tell me about [airline]",
            "which carriers serve this route",
            "who operates the evening departure",
        )),
        IntentGrammar("abbreviation", _t(
            "what does fare code [code] mean",
            "what is the meaning of [code]",
            "explain the booking code please",
        )),
        IntentGrammar("aircraft", _t(
            "what kind of plane is a [aircraft_type]",
            "which aircraft does [airline] use",
            "describe the plane on this run",
        )),
        IntentGrammar("quantity", _t(
            "how many flights does [airline] have",
            "count the daily departures for me",
            "how many routes are served",
        )),
        IntentGrammar("airport_info", _t(
            "tell me about [airport]",
            "what services does [airport] offer",
            "describe the terminal layout",
        )),
        IntentGrammar("distance", _t(
            "how far is [airport] from downtown",
            "what is the distance to [city]",
            "how long is the drive",
        )),
        IntentGrammar("capacity", _t(
            "how many passengers fit on a [aircraft_type]",
            "what is the seating capacity here",
        )),
        IntentGrammar("meal_info", _t(
            "is a [meal] served on the flight",
            "are there vegetarian options on board",
        )),
        IntentGrammar("seat_info", _t(
            "can i pick a [seat_type] seat",
            "is seat selection free on board",
        )),
        IntentGrammar("restriction", _t(
            "what restrictions apply on fare [code]",
            "are there limits on this fare",
        )),
        IntentGrammar("cheapest", _t(
            "show the cheapest flight to [to_city]",
            "find the lowest price for me",
        )),
    )
    slot_values = {
        "from_city": _v("boston", "denver", "atlanta", "dallas", "oakland"),
        "to_city": _v("philadelphia", "pittsburgh", "baltimore", "memphis",
                      "orlando"),
        "city": _v("chicago", "houston", "seattle", "detroit"),
        "date": _v("monday", "tuesday", "wednesday", "thursday", "friday",
                   "saturday", "sunday", "tomorrow"),
        "airline": _v("delta", "united", "lufthansa", "continental"),
        "fare_class": _v("first", "coach", "business", "economy"),
        "code": _v("qx", "qw", "fn", "yn"),
        "aircraft_type": _v("turboprop", "jet", "airbus", "boeing"),
        "airport": _v("logan", "laguardia", "midway"),
        "meal": _v("breakfast", "lunch", "dinner", "snack"),
        "transport_type": _v("taxi", "shuttle", "limousine", "rail"),
        "seat_type": _v("window", "aisle", "middle"),
    }
    return GrammarSpec(intents=intents, slot_values=slot_values,
                       profile="zipf", zipf_exponent=1.0)


BUILTIN_GRAMMARS = {"snips": snips_like, "atis": atis_like}
