"""Random filter generation over a synthetic manifest, shared by the query
tests and the acceptance suite. Produces (variable, op, operand, combinator)
tuples that are valid for the engine compiler and the manifest oracle alike."""

import random
import string

OPS_BY_KIND = {
    "numeric": ["EQ", "NEQ", "LT", "GT", "LIKE", "EXACT", "NOT_IN"],
    "text": ["EQ", "NEQ", "LIKE", "EXACT", "NOT_IN"],
    "date": ["EQ", "NEQ", "LT", "GT", "LIKE", "EXACT", "NOT_IN"],
}


def _observed_values(manifest, assessment, name):
    values = [
        cells[name]
        for cells in assessment["values"].values()
        if cells.get(name) is not None
    ]
    return values or ["0"]


def _operand(rng, manifest, assessment, var, op):
    observed = _observed_values(manifest, assessment, var["name"])
    if op == "NOT_IN":
        pool = sorted(set(observed)) + ["zz-none"]
        return tuple(rng.sample(pool, min(len(pool), rng.randint(1, 3))))
    if op == "LIKE":
        base = rng.choice(observed)
        if len(base) > 2 and rng.random() < 0.7:
            start = rng.randrange(len(base) - 1)
            return base[start : start + rng.randint(1, len(base) - start)]
        return rng.choice([base, "".join(rng.choices(string.ascii_letters, k=2))])
    if var["value_kind"] == "numeric":
        if var["codes"] and rng.random() < 0.8:
            return rng.choice(sorted(var["codes"]))
        if rng.random() < 0.6:
            return rng.choice(observed)
        return f"{rng.uniform(0, 70):.1f}"
    if rng.random() < 0.7:
        return rng.choice(observed)
    return "".join(rng.choices(string.ascii_lowercase, k=4))


def random_named_predicates(rng: random.Random, manifest, max_predicates: int = 4):
    """A list of 0..max_predicates (name, op, operand, combinator) tuples."""
    assessment = manifest.assessments[0]
    variables = assessment["variables"]
    out = []
    for _ in range(rng.randint(0, max_predicates)):
        var = rng.choice(variables)
        op = rng.choice(OPS_BY_KIND[var["value_kind"]])
        operand = _operand(rng, manifest, assessment, var, op)
        combinator = rng.choice(["AND", "AND", "OR"])
        out.append((var["name"], op, operand, combinator))
    return out
