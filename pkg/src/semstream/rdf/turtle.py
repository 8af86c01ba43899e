"""Deterministic Turtle writer and a parser for the Turtle subset it emits.

The writer sorts subjects, groups predicates and always spells literal
datatypes out (``"120"^^xsd:decimal``), so equal triple sets produce
byte-identical documents and every literal keeps its exact lexical form.

The parser additionally accepts ``a``, bare integers/decimals, ``PREFIX``
directives, comments and ``?variables`` (the latter only when parsing
patterns). Anything else is a :class:`TurtleSyntaxError`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple

from .terms import (
    PREFIXES,
    RDF_TYPE,
    XSD,
    Blank,
    Datatype,
    Iri,
    Literal,
    PatternTerm,
    ResourceGraph,
    Term,
    TermError,
    Triple,
    TriplePattern,
    Variable,
    term_key,
)


class TurtleSyntaxError(SyntaxError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


# --- writing -----------------------------------------------------------------

_LOCAL = re.compile(r"[A-Za-z0-9_](?:[A-Za-z0-9_.-]*[A-Za-z0-9_-])?\Z")
_STRING_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _escape_string(text: str) -> str:
    out = []
    for ch in text:
        if ch in _STRING_ESCAPES:
            out.append(_STRING_ESCAPES[ch])
        elif ord(ch) < 0x20 or ch == "\x7f":
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def _compact(value: str, prefixes: Mapping[str, str]) -> Optional[str]:
    best = None
    for prefix, ns in prefixes.items():
        if value.startswith(ns) and _LOCAL.match(value[len(ns):]):
            if best is None or len(ns) > len(prefixes[best]):
                best = prefix
    if best is None:
        return None
    return f"{best}:{value[len(prefixes[best]):]}"


def format_term(term: PatternTerm, prefixes: Mapping[str, str] = PREFIXES) -> str:
    if isinstance(term, Iri):
        return _compact(term.value, prefixes) or f"<{term.value}>"
    if isinstance(term, Blank):
        return f"_:{term.label}"
    if isinstance(term, Variable):
        return f"?{term.name}"
    text = f'"{_escape_string(term.lexical)}"'
    if term.datatype is Datatype.STRING:
        return text
    dtype = _compact(term.datatype.iri, prefixes) or f"<{term.datatype.iri}>"
    return f"{text}^^{dtype}"


def prefix_header(prefixes: Mapping[str, str] = PREFIXES) -> str:
    return "".join(f"@prefix {p}: <{ns}> .\n" for p, ns in sorted(prefixes.items()))


def serialize_turtle(triples: Iterable[Triple], prefixes: Mapping[str, str] = PREFIXES,
                     header: bool = True) -> str:
    by_subject: Dict[Term, Dict[Iri, List[Term]]] = {}
    for t in set(triples):
        by_subject.setdefault(t.subject, {}).setdefault(t.predicate, []).append(t.object)

    chunks = [prefix_header(prefixes)] if header else []
    for subject in sorted(by_subject, key=term_key):
        preds = by_subject[subject]
        # rdf:type first, like most hand-written Turtle
        order = sorted(preds, key=lambda p: (p != RDF_TYPE, term_key(p)))
        lines = []
        for pred in order:
            objects = ", ".join(format_term(o, prefixes) for o in sorted(preds[pred], key=term_key))
            lines.append(f"    {format_term(pred, prefixes)} {objects}")
        chunks.append("\n" + format_term(subject, prefixes) + "\n" + " ;\n".join(lines) + " .\n")
    return "".join(chunks)


# --- tokenizing --------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<iriref><[^<>"{}|^`\\\x00-\x20]*>)
  | (?P<string>"(?:[^"\\\n\r]|\\.)*")
  | (?P<dtype>\^\^)
  | (?P<directive>@prefix|@base)
  | (?P<lang>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
  | (?P<blank>_:[A-Za-z0-9_](?:[A-Za-z0-9_.-]*[A-Za-z0-9_-])?)
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>[+-]?(?:\d+\.\d+|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<pname>(?:[A-Za-z][A-Za-z0-9_-]*)?:(?:[A-Za-z0-9_](?:[A-Za-z0-9_.-]*[A-Za-z0-9_-])?)?)
  | (?P<keyword>(?:a|true|false|PREFIX|BASE)(?![A-Za-z0-9_:]))
  | (?P<punct>[.;,])
    """,
    re.VERBOSE,
)

_STRING_UNESCAPE = re.compile(r"\\(u[0-9A-Fa-f]{4}|U[0-9A-Fa-f]{8}|.)", re.DOTALL)
_SIMPLE_UNESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _position(text: str, pos: int) -> Tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    column = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, column


def _tokens(text: str) -> Iterator[_Token]:
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            line, col = _position(text, pos)
            raise TurtleSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        if m.lastgroup != "ws":
            yield _Token(m.lastgroup, m.group(), pos)
        pos = m.end()


def _unescape(body: str, err) -> str:
    def repl(m):
        code = m.group(1)
        if code[0] in "uU" and len(code) > 1:
            return chr(int(code[1:], 16))
        if code in _SIMPLE_UNESCAPES:
            return _SIMPLE_UNESCAPES[code]
        raise err(f"bad string escape \\{code}")
    return _STRING_UNESCAPE.sub(repl, body)


_XSD_TYPES = {XSD + d.value: d for d in Datatype}


class _Parser:
    def __init__(self, text: str, prefixes: Optional[Mapping[str, str]], allow_variables: bool):
        self.text = text
        self.toks = list(_tokens(text))
        self.i = 0
        self.prefixes: Dict[str, str] = dict(prefixes or {})
        self.allow_variables = allow_variables

    # helpers
    def error(self, message: str, tok: Optional[_Token] = None) -> TurtleSyntaxError:
        tok = tok or self.peek()
        pos = tok.pos if tok else len(self.text)
        return TurtleSyntaxError(message, *_position(self.text, pos))

    def peek(self) -> Optional[_Token]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self, what: str) -> _Token:
        tok = self.peek()
        if tok is None:
            raise self.error(f"unexpected end of input, expected {what}")
        self.i += 1
        return tok

    def expect_punct(self, ch: str) -> None:
        tok = self.next(repr(ch))
        if tok.kind != "punct" or tok.text != ch:
            raise self.error(f"expected {ch!r}, found {tok.text!r}", tok)

    # grammar
    def document(self) -> Set[Triple]:
        triples: Set[Triple] = set()
        while self.peek() is not None:
            tok = self.peek()
            if tok.kind == "directive" or (tok.kind == "keyword" and tok.text in ("PREFIX", "BASE")):
                self.directive()
            else:
                self.statement(triples)
        return triples

    def directive(self) -> None:
        tok = self.next("directive")
        if tok.text in ("@base", "BASE"):
            raise self.error("base IRIs are not supported", tok)
        name = self.next("prefix name")
        if name.kind != "pname" or not name.text.endswith(":"):
            raise self.error("expected a prefix name like 'ex:'", name)
        ref = self.next("IRI")
        if ref.kind != "iriref":
            raise self.error("expected <IRI> in prefix declaration", ref)
        self.prefixes[name.text[:-1]] = ref.text[1:-1]
        if tok.text == "@prefix":
            self.expect_punct(".")

    def statement(self, out: Set[Triple]) -> None:
        subject = self.term("subject")
        while True:
            verb = self.term("predicate")
            while True:
                obj = self.term("object")
                out.add(self.make_triple(subject, verb, obj))
                tok = self.peek()
                if tok is not None and tok.kind == "punct" and tok.text == ",":
                    self.i += 1
                    continue
                break
            tok = self.next("'.' or ';'")
            if tok.kind == "punct" and tok.text == ";":
                nxt = self.peek()
                if nxt is not None and nxt.kind == "punct" and nxt.text == ".":
                    self.i += 1
                    return
                continue
            if tok.kind == "punct" and tok.text == ".":
                return
            raise self.error(f"expected '.' or ';', found {tok.text!r}", tok)

    def make_triple(self, s, p, o) -> Triple:
        try:
            return Triple(s, p, o)
        except TermError as exc:
            raise self.error(str(exc), self.toks[self.i - 1])

    def resolve(self, tok: _Token) -> Iri:
        prefix, _, local = tok.text.partition(":")
        if prefix not in self.prefixes:
            raise self.error(f"undeclared prefix {prefix!r}", tok)
        return self.iri(self.prefixes[prefix] + local, tok)

    def iri(self, value: str, tok: _Token) -> Iri:
        try:
            return Iri(value)
        except TermError as exc:
            raise self.error(str(exc), tok)

    def term(self, role: str) -> PatternTerm:
        tok = self.next(role)
        kind = tok.kind
        if kind == "iriref":
            return self.iri(tok.text[1:-1], tok)
        if kind == "pname":
            return self.resolve(tok)
        if kind == "blank":
            return Blank(tok.text[2:])
        if kind == "var":
            if not self.allow_variables:
                raise self.error("variables are only allowed in patterns", tok)
            return Variable(tok.text[1:])
        if kind == "keyword" and tok.text == "a":
            if role != "predicate":
                raise self.error("'a' is only valid as a predicate", tok)
            return RDF_TYPE
        if kind == "string":
            return self.literal(tok)
        if kind == "number":
            if "e" in tok.text.lower():
                raise self.error("xsd:double literals are not supported", tok)
            dtype = Datatype.DECIMAL if "." in tok.text else Datatype.INTEGER
            return Literal(tok.text, dtype)
        if kind == "keyword" and tok.text in ("true", "false"):
            raise self.error("xsd:boolean literals are not supported", tok)
        raise self.error(f"expected {role}, found {tok.text!r}", tok)

    def literal(self, tok: _Token) -> Literal:
        lexical = _unescape(tok.text[1:-1], lambda m: self.error(m, tok))
        nxt = self.peek()
        dtype = Datatype.STRING
        if nxt is not None and nxt.kind == "lang":
            raise self.error("language-tagged literals are not supported", nxt)
        if nxt is not None and nxt.kind == "dtype":
            self.i += 1
            dt_tok = self.next("datatype IRI")
            if dt_tok.kind == "iriref":
                dt_iri = dt_tok.text[1:-1]
            elif dt_tok.kind == "pname":
                dt_iri = self.resolve(dt_tok).value
            else:
                raise self.error("expected datatype IRI after '^^'", dt_tok)
            if dt_iri not in _XSD_TYPES:
                raise self.error(f"unsupported datatype <{dt_iri}>", dt_tok)
            dtype = _XSD_TYPES[dt_iri]
        try:
            return Literal(lexical, dtype)
        except TermError as exc:
            raise self.error(str(exc), tok)


def parse_turtle(text: str, prefixes: Optional[Mapping[str, str]] = None) -> Set[Triple]:
    """Parse a Turtle document into a set of triples.

    ``prefixes`` pre-declares prefixes, which the document may override.
    """
    return _Parser(text, prefixes, allow_variables=False).document()


def parse_term(text: str, prefixes: Mapping[str, str] = PREFIXES, allow_variables: bool = True) -> PatternTerm:
    parser = _Parser(text, prefixes, allow_variables)
    term = parser.term("term")
    if parser.peek() is not None:
        raise parser.error("trailing input after term")
    return term


def parse_pattern(text: str, prefixes: Mapping[str, str] = PREFIXES) -> TriplePattern:
    """``"?obs fhir:Observation.valueQuantity.value ?v"`` -> :class:`TriplePattern`."""
    parser = _Parser(text, prefixes, allow_variables=True)
    s = parser.term("subject")
    p = parser.term("predicate")
    o = parser.term("object")
    tok = parser.peek()
    if tok is not None and tok.kind == "punct" and tok.text == ".":
        parser.i += 1
    if parser.peek() is not None:
        raise parser.error("trailing input after triple pattern")
    if isinstance(s, Literal):
        raise parser.error("a literal cannot be a subject")
    if isinstance(p, (Literal, Blank)):
        raise parser.error("predicate must be an IRI or variable")
    return TriplePattern(s, p, o)


def graph_to_payload(graph: ResourceGraph) -> bytes:
    """Wire form of a resource graph on the bus: a self-contained Turtle document."""
    return serialize_turtle(graph.triples).encode("utf-8")


def graph_from_payload(payload: bytes) -> ResourceGraph:
    return ResourceGraph.from_triples(parse_turtle(payload.decode("utf-8")))
