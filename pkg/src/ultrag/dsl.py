"""Query DSL: parser, serializer, and the legacy nested-tuple converter.

Surface grammar:

    query     := primary ('->' relation)*
    primary   := 'AND' '(' query (',' query)+ ')' | entity | mention
    entity    := Q<digits>
    relation  := P<digits> ['_inv']
    mention   := '<' text '>'

Chains are left-associative and attach to the nearest primary, so
``Q1 -> P1 -> P2`` is one leaf with a two-step relation chain.  The legacy
format uses nested tuples: ``(Entity, (Rel,))`` leaf, ``(Query, (Rel,))``
chain, ``(Query, Query)`` binary intersection; relation tuples are strictly
singletons there.

Both parsers are total: any input either yields an AST or raises
QueryParseError carrying the byte offset of the offending token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class QueryParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


def _byte_offset_fn(s):
    """Map character indices to UTF-8 byte offsets; identity for ASCII."""
    if s.isascii():
        return lambda i: i
    table = [0]
    for c in s:
        table.append(table[-1] + len(c.encode("utf-8")))
    return lambda i: table[i]


@dataclass(frozen=True)
class Mention:
    """Unresolved leaf placeholder; leaf_index is its left-to-right ordinal."""
    text: str
    leaf_index: int

    def __post_init__(self):
        if not self.text or ">" in self.text or "<" in self.text:
            raise ValueError(f"invalid mention text {self.text!r}")


@dataclass(frozen=True)
class LeafProjection:
    entity: object  # external entity id string, or a Mention
    relations: tuple

    def __post_init__(self):
        if not self.relations:
            raise ValueError("leaf projection needs a non-empty relation chain")


@dataclass(frozen=True)
class Intersection:
    children: tuple

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("intersection needs at least 2 children")


@dataclass(frozen=True)
class ChainedProjection:
    child: object
    relations: tuple

    def __post_init__(self):
        if not self.relations:
            raise ValueError("chain needs a non-empty relation chain")
        # chains over leaves or chains fold into them; only an intersection
        # can sit under a chain node (see chain_query)
        if not isinstance(self.child, Intersection):
            raise ValueError("chain child must be an intersection")


def chain_query(node, relations):
    """Append relations to a query, folding into leaf/chain nodes."""
    relations = tuple(relations)
    if not relations:
        return node
    if isinstance(node, LeafProjection):
        return LeafProjection(node.entity, node.relations + relations)
    if isinstance(node, ChainedProjection):
        return ChainedProjection(node.child, node.relations + relations)
    return ChainedProjection(node, relations)


def leaves(q):
    """Leaf projections in left-to-right order."""
    if isinstance(q, LeafProjection):
        return [q]
    if isinstance(q, ChainedProjection):
        return leaves(q.child)
    out = []
    for c in q.children:
        out.extend(leaves(c))
    return out


def mentions(q):
    return [l.entity for l in leaves(q) if isinstance(l.entity, Mention)]


def query_class(q):
    """Structure label, e.g. "(1)(1)" or "((2)(1))".

    A leaf's label is its chain length in parens; an intersection
    concatenates child labels; a chain wraps its child, prefixing the chain
    length when above 1.
    """
    if isinstance(q, LeafProjection):
        return f"({len(q.relations)})"
    if isinstance(q, Intersection):
        return "".join(query_class(c) for c in q.children)
    m = len(q.relations)
    return "(" + (str(m) if m > 1 else "") + query_class(q.child) + ")"


_ENTITY_TOKEN = re.compile(r"^Q\d+$")
_RELATION_TOKEN = re.compile(r"^P\d+(_inv)?$")
_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _tokenize_dsl(s):
    """Yield (kind, value, offset) triples; kinds: and lpar rpar comma arrow
    entity relation mention end."""
    toks = []
    off = _byte_offset_fn(s)
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c.isspace():
            i += 1
            continue
        if c == "(":
            toks.append(("lpar", c, off(i))); i += 1
        elif c == ")":
            toks.append(("rpar", c, off(i))); i += 1
        elif c == ",":
            toks.append(("comma", c, off(i))); i += 1
        elif c == "-":
            if i + 1 < n and s[i + 1] == ">":
                toks.append(("arrow", "->", off(i))); i += 2
            else:
                raise QueryParseError("expected '->'", off(i))
        elif c == "<":
            j = s.find(">", i + 1)
            if j < 0:
                raise QueryParseError("unterminated mention", off(i))
            text = s[i + 1:j]
            if not text or "<" in text:
                raise QueryParseError("invalid mention text", off(i))
            toks.append(("mention", text, off(i)))
            i = j + 1
        else:
            m = _WORD.match(s, i)
            if not m:
                raise QueryParseError(f"unexpected character {c!r}", off(i))
            word = m.group(0)
            if word == "AND":
                toks.append(("and", word, off(i)))
            elif _ENTITY_TOKEN.match(word):
                toks.append(("entity", word, off(i)))
            elif _RELATION_TOKEN.match(word):
                toks.append(("relation", word, off(i)))
            else:
                raise QueryParseError(f"unknown token {word!r}", off(i))
            i = m.end()
    toks.append(("end", "", off(n)))
    return toks


class _DslParser:
    def __init__(self, s):
        self.toks = _tokenize_dsl(s)
        self.pos = 0
        self.next_leaf = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind, what):
        t = self.take()
        if t[0] != kind:
            raise QueryParseError(f"expected {what}, got {t[1]!r}" if t[1]
                                  else f"expected {what}, got end of input", t[2])
        return t

    def parse_query(self):
        node = self.parse_primary()
        rels = []
        while self.peek()[0] == "arrow":
            self.take()
            rels.append(self.expect("relation", "a relation")[1])
        if isinstance(node, (str, Mention)):
            if not rels:
                raise QueryParseError("entity without a projection", self.peek()[2])
            return LeafProjection(node, tuple(rels))
        return chain_query(node, rels)

    def parse_primary(self):
        kind, value, off = self.peek()
        if kind == "entity":
            self.take()
            return value
        if kind == "mention":
            self.take()
            m = Mention(value, self.next_leaf)
            self.next_leaf += 1
            return m
        if kind == "and":
            self.take()
            self.expect("lpar", "'('")
            children = [self.parse_query()]
            while self.peek()[0] == "comma":
                self.take()
                children.append(self.parse_query())
            t = self.expect("rpar", "')'")
            if len(children) < 2:
                raise QueryParseError("AND needs at least 2 arguments", t[2])
            return Intersection(tuple(children))
        if kind == "relation":
            raise QueryParseError("relation cannot start a query", off)
        raise QueryParseError(f"unexpected {value!r}" if value else "unexpected end of input", off)


def parse_dsl(s):
    p = _DslParser(s)
    q = p.parse_query()
    t = p.peek()
    if t[0] != "end":
        raise QueryParseError(f"trailing input {t[1]!r}", t[2])
    # resolved-entity leaves carry no index, so mention ordinals assigned in
    # parse order match the left-to-right leaf order only if recounted here
    return _renumber_mentions(q)


def _renumber_mentions(q):
    counter = [0]

    def walk(node):
        if isinstance(node, LeafProjection):
            idx = counter[0]
            counter[0] += 1
            if isinstance(node.entity, Mention) and node.entity.leaf_index != idx:
                return LeafProjection(Mention(node.entity.text, idx), node.relations)
            return node
        if isinstance(node, ChainedProjection):
            return ChainedProjection(walk(node.child), node.relations)
        return Intersection(tuple(walk(c) for c in node.children))

    return walk(q)


def serialize_dsl(q):
    """Canonical text: single spaces around '->', ', ' between AND children."""
    if isinstance(q, LeafProjection):
        head = f"<{q.entity.text}>" if isinstance(q.entity, Mention) else q.entity
        return head + "".join(f" -> {r}" for r in q.relations)
    if isinstance(q, Intersection):
        return "AND(" + ", ".join(serialize_dsl(c) for c in q.children) + ")"
    return serialize_dsl(q.child) + "".join(f" -> {r}" for r in q.relations)


# -- legacy nested-tuple format ---------------------------------------------

def _tokenize_betae(s):
    toks = []
    off = _byte_offset_fn(s)
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c.isspace():
            i += 1
        elif c in "(),":
            toks.append(({"(": "lpar", ")": "rpar", ",": "comma"}[c], c, off(i)))
            i += 1
        else:
            m = _WORD.match(s, i)
            if not m:
                raise QueryParseError(f"unexpected character {c!r}", off(i))
            toks.append(("word", m.group(0), off(i)))
            i = m.end()
    toks.append(("end", "", off(n)))
    return toks


def parse_betae(s):
    toks = _tokenize_betae(s)
    pos = [0]

    def peek():
        return toks[pos[0]]

    def take():
        t = toks[pos[0]]
        pos[0] += 1
        return t

    def parse_node():
        kind, value, off = take()
        if kind == "word":
            return ("id", value, off)
        if kind != "lpar":
            raise QueryParseError(f"expected '(' or identifier, got {value!r}" if value
                                  else "unexpected end of input", off)
        items = []
        trailing = False
        if peek()[0] == "rpar":
            raise QueryParseError("empty tuple", peek()[2])
        items.append(parse_node())
        while peek()[0] == "comma":
            take()
            if peek()[0] == "rpar":
                trailing = True
                break
            items.append(parse_node())
        t = take()
        if t[0] != "rpar":
            raise QueryParseError(f"expected ')', got {t[1]!r}" if t[1]
                                  else "unbalanced parentheses", t[2])
        return ("tuple", items, trailing, off)

    def is_relation_tuple(node):
        # strictly a singleton with trailing comma: (P1,)
        return (node[0] == "tuple" and len(node[1]) == 1 and node[2]
                and node[1][0][0] == "id" and _RELATION_TOKEN.match(node[1][0][1]))

    def to_query(node):
        if node[0] == "id":
            raise QueryParseError(f"{node[1]!r} is not a query", node[2])
        items, off = node[1], node[3]
        if len(items) != 2:
            raise QueryParseError(f"{len(items)}-tuple is not in the grammar", off)
        first, second = items
        if is_relation_tuple(second):
            rel = (second[1][0][1],)
            if first[0] == "id":
                if not _ENTITY_TOKEN.match(first[1]):
                    raise QueryParseError(f"expected entity, got {first[1]!r}", first[2])
                return LeafProjection(first[1], rel)
            return chain_query(to_query(first), rel)
        # otherwise both elements must be queries: binary intersection
        return Intersection((to_query(first), to_query(second)))

    root = parse_node()
    t = peek()
    if t[0] != "end":
        raise QueryParseError(f"trailing input {t[1]!r}", t[2])
    return to_query(root)


def convert_betae(s):
    """Legacy tuple string -> canonical DSL string."""
    return serialize_dsl(parse_betae(s))


def max_nesting_depth(s, format="dsl"):
    """Maximum parenthesis nesting of the surface string; s must parse."""
    if format == "dsl":
        parse_dsl(s)
    elif format == "betae":
        parse_betae(s)
    else:
        raise ValueError(f"unknown format {format!r}")
    depth = best = 0
    for c in s:
        if c == "(":
            depth += 1
            best = max(best, depth)
        elif c == ")":
            depth -= 1
    return best


# -- JSON form for the wire protocol ----------------------------------------

def ast_to_json(q):
    if isinstance(q, LeafProjection):
        if isinstance(q.entity, Mention):
            return {"kind": "leaf",
                    "mention": {"text": q.entity.text, "leaf_index": q.entity.leaf_index},
                    "relations": list(q.relations)}
        return {"kind": "leaf", "entity": q.entity, "relations": list(q.relations)}
    if isinstance(q, Intersection):
        return {"kind": "and", "children": [ast_to_json(c) for c in q.children]}
    return {"kind": "chain", "child": ast_to_json(q.child), "relations": list(q.relations)}


def ast_from_json(d):
    if not isinstance(d, dict):
        raise ValueError("AST node must be an object")
    kind = d.get("kind")
    if kind == "leaf":
        rels = d.get("relations")
        if (not isinstance(rels, list) or not rels
                or not all(isinstance(r, str) and _RELATION_TOKEN.match(r) for r in rels)):
            raise ValueError("leaf needs a non-empty list of P<digits>[_inv] relations")
        if "entity" in d:
            if not isinstance(d["entity"], str) or not _ENTITY_TOKEN.match(d["entity"]):
                raise ValueError(f"bad entity {d.get('entity')!r}")
            return LeafProjection(d["entity"], tuple(rels))
        m = d.get("mention")
        if not isinstance(m, dict) or not isinstance(m.get("text"), str) \
                or not isinstance(m.get("leaf_index"), int):
            raise ValueError("leaf needs an entity or a mention")
        return LeafProjection(Mention(m["text"], m["leaf_index"]), tuple(rels))
    if kind == "and":
        children = d.get("children")
        if not isinstance(children, list) or len(children) < 2:
            raise ValueError("and node needs at least 2 children")
        return Intersection(tuple(ast_from_json(c) for c in children))
    if kind == "chain":
        rels = d.get("relations")
        if (not isinstance(rels, list) or not rels
                or not all(isinstance(r, str) and _RELATION_TOKEN.match(r) for r in rels)):
            raise ValueError("chain needs a non-empty list of P<digits>[_inv] relations")
        return ChainedProjection(ast_from_json(d.get("child")), tuple(rels))
    raise ValueError(f"unknown node kind {kind!r}")
