"""Read-only SQL sandbox for user-edited queries.

Validation is allowlist-by-parse, not keyword blacklisting: the statement is
tokenized (string literals, quoted identifiers, and comments handled), must be
a single SELECT with no statement separator, and every table referenced after
FROM/JOIN must be a catalog table. Validated SQL is then executed on a
read-only connection guarded by an SQLite authorizer, so even a validator gap
cannot mutate the store.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass

from .errors import MultiStatement, MutationForbidden, NonWhitelistedTable, ParseError

MUTATION_KEYWORDS = frozenset(
    {
        "INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "CREATE", "TRUNCATE",
        "VACUUM", "REINDEX", "ATTACH", "DETACH", "PRAGMA", "GRANT", "REVOKE",
        "BEGIN", "COMMIT", "ROLLBACK", "SAVEPOINT", "RELEASE",
    }
)

# keywords that end the table list of a FROM clause
_FROM_CLAUSE_ENDERS = frozenset(
    {
        "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "WINDOW",
        "UNION", "INTERSECT", "EXCEPT", "ON", "USING",
    }
)

_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")
_NUMBER_RE = re.compile(r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class Token:
    kind: str  # word | string | ident | number | punct
    text: str


def tokenize(sql: str, comment_spans: list[tuple[int, int]] | None = None) -> list[Token]:
    """Lex SQL into tokens, dropping comments (their spans are recorded when
    a list is supplied). Raises ParseError on unterminated strings,
    identifiers, or block comments."""
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        if sql.startswith("--", i):
            end = sql.find("\n", i)
            if comment_spans is not None:
                comment_spans.append((i, n if end < 0 else end))
            i = n if end < 0 else end + 1
            continue
        if sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            if end < 0:
                raise ParseError("unterminated block comment")
            if comment_spans is not None:
                comment_spans.append((i, end + 2))
            i = end + 2
            continue
        if ch == "'":
            j = i + 1
            while True:
                j = sql.find("'", j)
                if j < 0:
                    raise ParseError("unterminated string literal")
                if j + 1 < n and sql[j + 1] == "'":
                    j += 2
                    continue
                break
            tokens.append(Token("string", sql[i : j + 1]))
            i = j + 1
            continue
        if ch in "\"`":
            j = i + 1
            while True:
                j = sql.find(ch, j)
                if j < 0:
                    raise ParseError("unterminated quoted identifier")
                if j + 1 < n and sql[j + 1] == ch:
                    j += 2
                    continue
                break
            inner = sql[i + 1 : j].replace(ch + ch, ch)
            tokens.append(Token("ident", inner))
            i = j + 1
            continue
        if ch == "[":
            j = sql.find("]", i + 1)
            if j < 0:
                raise ParseError("unterminated bracketed identifier")
            tokens.append(Token("ident", sql[i + 1 : j]))
            i = j + 1
            continue
        m = _WORD_RE.match(sql, i)
        if m:
            tokens.append(Token("word", m.group()))
            i = m.end()
            continue
        m = _NUMBER_RE.match(sql, i)
        if m:
            tokens.append(Token("number", m.group()))
            i = m.end()
            continue
        for op in ("<>", "<=", ">=", "!=", "||"):
            if sql.startswith(op, i):
                tokens.append(Token("punct", op))
                i += 2
                break
        else:
            if ch in "(),.;*=<>+-/%?:&|~":
                tokens.append(Token("punct", ch))
                i += 1
            else:
                raise ParseError(f"unexpected character {ch!r}")
    return tokens


def referenced_tables(tokens: list[Token]) -> list[str]:
    """Collect the table names referenced after FROM/JOIN, tracking clause
    boundaries and paren depth so aliases and select-list commas are ignored."""
    tables: list[str] = []
    depth = 0
    from_frames: list[tuple[int, bool]] = []  # (paren depth, still in table list)
    expecting_table = False

    def word(tok: Token) -> str | None:
        return tok.text.upper() if tok.kind == "word" else None

    for idx, tok in enumerate(tokens):
        w = word(tok)
        if tok.kind == "punct" and tok.text == "(":
            depth += 1
            expecting_table = False
            continue
        if tok.kind == "punct" and tok.text == ")":
            depth -= 1
            while from_frames and from_frames[-1][0] > depth:
                from_frames.pop()
            continue
        if w == "FROM":
            from_frames.append((depth, True))
            expecting_table = True
            continue
        if w == "JOIN":
            expecting_table = True
            continue
        if w in _FROM_CLAUSE_ENDERS:
            if from_frames and from_frames[-1][0] == depth:
                from_frames[-1] = (depth, False)
            expecting_table = False
            continue
        if tok.kind == "punct" and tok.text == ",":
            if from_frames and from_frames[-1] == (depth, True):
                expecting_table = True
            continue
        if expecting_table and (tok.kind == "ident" or (tok.kind == "word" and w not in MUTATION_KEYWORDS)):
            if w in ("SELECT", "VALUES"):
                expecting_table = False
                continue
            nxt = tokens[idx + 1] if idx + 1 < len(tokens) else None
            if nxt is not None and nxt.kind == "punct" and nxt.text == ".":
                raise NonWhitelistedTable(
                    f"schema-qualified name {tok.text!r} is not allowed"
                )
            if nxt is not None and nxt.kind == "punct" and nxt.text == "(":
                raise NonWhitelistedTable(
                    f"table-valued function {tok.text!r} is not allowed"
                )
            tables.append(tok.text)
            expecting_table = False
            continue
    return tables


def validate_sql(sql: str, whitelist: tuple[str, ...]) -> list[str]:
    """Accept exactly one comment-free SELECT over whitelisted tables; return
    the tables.

    Raises ParseError / MutationForbidden / MultiStatement /
    NonWhitelistedTable otherwise. Comments are refused outright: they are a
    classic obfuscation vector and hand-written search SQL has no need for
    them.
    """
    if not sql or not sql.strip():
        raise ParseError("empty query")
    comment_spans: list[tuple[int, int]] = []
    tokens = tokenize(sql, comment_spans)
    if not tokens:
        raise ParseError("no statement found")
    first = tokens[0]
    if first.kind != "word" or first.text.upper() != "SELECT":
        head = first.text.upper() if first.kind == "word" else first.text
        if head in MUTATION_KEYWORDS or head == "REPLACE":
            raise MutationForbidden(f"{head} statements are not allowed; the sandbox is read-only")
        raise ParseError(f"only SELECT statements are allowed, got {head!r}")
    for tok in tokens:
        if tok.kind == "punct" and tok.text == ";":
            raise MultiStatement("statement separator is not allowed")
    if comment_spans:
        raise ParseError("SQL comments are not allowed")
    for tok in tokens:
        if tok.kind == "word" and tok.text.upper() in MUTATION_KEYWORDS:
            raise MutationForbidden(
                f"keyword {tok.text.upper()} is not allowed; the sandbox is read-only"
            )
    allowed = {t.lower() for t in whitelist}
    tables = referenced_tables(tokens)
    for table in tables:
        if table.lower() not in allowed:
            raise NonWhitelistedTable(f"table {table!r} is not in the catalog whitelist")
    return tables


def readonly_authorizer(whitelist: tuple[str, ...]):
    """SQLite authorizer callback permitting only reads of whitelisted tables."""
    allowed = {t.lower() for t in whitelist}

    def callback(action, arg1, arg2, dbname, source):
        if action == sqlite3.SQLITE_SELECT:
            return sqlite3.SQLITE_OK
        if action == sqlite3.SQLITE_READ:
            return sqlite3.SQLITE_OK if (arg1 or "").lower() in allowed else sqlite3.SQLITE_DENY
        if action == sqlite3.SQLITE_FUNCTION:
            return sqlite3.SQLITE_OK
        return sqlite3.SQLITE_DENY

    return callback
