"""Forward-chaining inference over triple sets.

Rules are Horn clauses over triple patterns. Consequents may only use
variables bound by the antecedents and never invent new terms, so the
closure is finite and :func:`apply_rules` always terminates.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

from .terms import PREFIXES, Iri, PatternTerm, TermError, Triple, TriplePattern, Variable
from .turtle import parse_pattern

Binding = Dict[Variable, PatternTerm]


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class InferenceRule:
    antecedents: Tuple[TriplePattern, ...]
    consequent: TriplePattern
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "antecedents", tuple(self.antecedents))
        if not self.antecedents:
            raise RuleError("a rule needs at least one antecedent")
        bound = frozenset().union(*(p.variables for p in self.antecedents))
        free = self.consequent.variables - bound
        if free:
            names = ", ".join(sorted(f"?{v.name}" for v in free))
            raise RuleError(f"consequent variables {names} do not appear in any antecedent")


def parse_rule(text: str, prefixes: Mapping[str, str] = PREFIXES, name: str = "") -> InferenceRule:
    """Parse ``"?x ex:isA ?c . ?c ex:is ?p => ?x ex:is ?p"``."""
    if text.count("=>") != 1:
        raise RuleError(f"rule must contain exactly one '=>': {text!r}")
    body, head = text.split("=>")
    clauses = [c.strip() for c in re.split(r"\s\.(?:\s|$)", body.strip() + " ") if c.strip()]
    return InferenceRule(
        tuple(parse_pattern(c, prefixes) for c in clauses),
        parse_pattern(head.strip(), prefixes),
        name,
    )


def _match(pattern: TriplePattern, triple: Triple, binding: Binding) -> Optional[Binding]:
    out = binding
    for pat, val in zip(pattern, (triple.subject, triple.predicate, triple.object)):
        if isinstance(pat, Variable):
            bound = out.get(pat)
            if bound is None:
                if out is binding:
                    out = dict(binding)
                out[pat] = val
            elif bound != val:
                return None
        elif pat != val:
            return None
    return out


def _instantiate(pattern: TriplePattern, binding: Binding) -> Optional[Triple]:
    terms = [binding[t] if isinstance(t, Variable) else t for t in pattern]
    try:
        return Triple(*terms)
    except TermError:
        # e.g. a literal bound into subject position: no valid triple to add
        return None


class _Index:
    def __init__(self):
        self.by_predicate: Dict[Iri, List[Triple]] = defaultdict(list)
        self.all: List[Triple] = []

    def add(self, t: Triple) -> None:
        self.by_predicate[t.predicate].append(t)
        self.all.append(t)

    def candidates(self, pattern: TriplePattern, binding: Binding) -> Iterable[Triple]:
        p = pattern.predicate
        if isinstance(p, Variable):
            p = binding.get(p)
        if p is None:
            return self.all
        return self.by_predicate.get(p, ())


def _solve(patterns: Sequence[TriplePattern], sources: Sequence[_Index], binding: Binding) -> Iterator[Binding]:
    if not patterns:
        yield binding
        return
    first, rest = patterns[0], patterns[1:]
    for t in sources[0].candidates(first, binding):
        b = _match(first, t, binding)
        if b is not None:
            yield from _solve(rest, sources[1:], b)


def apply_rules(triples: Iterable[Triple], rules: Sequence[InferenceRule]) -> FrozenSet[Triple]:
    """Least fixpoint of ``rules`` over ``triples`` (semi-naive evaluation).

    Each round only considers rule instantiations in which at least one
    antecedent matches a triple derived in the previous round.
    """
    closure: Set[Triple] = set(triples)
    if not rules:
        return frozenset(closure)
    full = _Index()
    for t in closure:
        full.add(t)
    delta = _Index()
    for t in closure:
        delta.add(t)

    while delta.all:
        new: Set[Triple] = set()
        for rule in rules:
            n = len(rule.antecedents)
            for k in range(n):
                # antecedent k from delta, the rest from the full closure
                sources = [full] * n
                sources[k] = delta
                for binding in _solve(rule.antecedents, sources, {}):
                    t = _instantiate(rule.consequent, binding)
                    if t is not None and t not in closure:
                        new.add(t)
        delta = _Index()
        for t in new:
            closure.add(t)
            full.add(t)
            delta.add(t)
    return frozenset(closure)
