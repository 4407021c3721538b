"""Layer-2 feature extraction from raw C/C++ source.

A small lexer turns source text into a token stream; metric passes over the
tokens count branches, loops, allocation and string-API calls, source lines,
and recursive functions. No preprocessing, type checking, or full parsing is
attempted: metrics are measurement conventions over raw source, chosen to be
cheap, deterministic, and invariant under comments, whitespace, and
string-literal content.

Conventions worth knowing before reading the passes:

* Comments and string/char literals contribute no tokens at all. Their only
  trace is that surrounding tokens keep correct line numbers.
* A preprocessor line (including backslash continuations) collapses to one
  ``directive`` token on its starting line, so macro bodies never feed the
  metrics.
* ``branch_max_depth`` counts nesting of ``if`` bodies only. An ``else``
  body stays at the depth of its ``if``, which makes ``else if`` chains flat
  and gives ``else { if ... }`` the same depth as the equivalent chain. A
  braceless ``if`` body counts one level.
* A ``do``/``while`` pair counts as a single loop, attributed to the ``do``.
* "Call position" means an identifier token immediately followed by ``(``;
  calls through function pointers are therefore not seen, and declarations
  that repeat a counted name are counted (a documented coarseness).
* Function definitions are recognized as ``identifier ( ... ) {`` at brace
  depth zero, i.e. ANSI-style definitions.
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass, field

from .corpus import FeatureDictionary, FeatureVector, Layer

SOURCE_EXTENSIONS = (".c", ".h", ".cc", ".cpp", ".hpp")

KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    bool true false nullptr class namespace template typename new delete try
    catch throw public private protected virtual operator this using
    """.split()
)

ALLOC_FUNCTIONS = frozenset({"malloc", "calloc", "realloc"})
SAFE_LIB_FUNCTIONS = frozenset(
    {"strncpy", "strncat", "snprintf", "vsnprintf", "fgets", "strlcpy", "strlcat"}
)
UNSAFE_LIB_FUNCTIONS = frozenset(
    {"strcpy", "strcat", "sprintf", "vsprintf", "gets", "scanf"}
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'id' | 'kw' | 'num' | 'punct' | 'directive'
    text: str
    line: int


@dataclass
class SourceUnit:
    path: str
    tokens: list[Token] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c == "_"


def tokenize(text: str, path: str = "<memory>") -> SourceUnit:
    """Lex ``text`` into a SourceUnit.

    Never raises on malformed input: unterminated strings and char literals
    recover at end of line, an unterminated block comment recovers at end of
    file, and each recovery appends a warning.
    """
    unit = SourceUnit(path=path)
    tokens = unit.tokens
    i, n = 0, len(text)
    line = 1
    fresh_line = True  # nothing but whitespace seen on this line so far

    while i < n:
        c = text[i]

        if c == "\n":
            line += 1
            fresh_line = True
            i += 1
            continue
        if c in " \t\r\v\f":
            i += 1
            continue

        if c == "#" and fresh_line:
            # Whole logical preprocessor line -> one directive token.
            start_line = line
            i += 1
            while i < n and text[i] in " \t":
                i += 1
            j = i
            while j < n and _is_ident_char(text[j]):
                j += 1
            name = text[i:j]
            i = j
            while i < n:
                if text[i] == "\\" and i + 1 < n and text[i + 1] == "\n":
                    line += 1
                    i += 2
                elif text[i] == "\\" and i + 2 < n and text[i + 1 : i + 3] == "\r\n":
                    line += 1
                    i += 3
                elif text[i] == "\n":
                    break
                else:
                    i += 1
            tokens.append(Token("directive", "#" + name, start_line))
            fresh_line = False
            continue

        fresh_line = False

        if c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                i += 1
            continue

        if c == "/" and i + 1 < n and text[i + 1] == "*":
            i += 2
            closed = False
            while i < n:
                if text[i] == "*" and i + 1 < n and text[i + 1] == "/":
                    i += 2
                    closed = True
                    break
                if text[i] == "\n":
                    line += 1
                i += 1
            if not closed:
                unit.warnings.append(
                    f"{path}:{line}: unterminated block comment (recovered at end of file)"
                )
            continue

        if c in "\"'":
            quote = c
            start_line = line
            i += 1
            closed = False
            while i < n:
                ch = text[i]
                if ch == "\\" and i + 1 < n and text[i + 1] != "\n":
                    i += 2
                    continue
                if ch == quote:
                    i += 1
                    closed = True
                    break
                if ch == "\n":
                    break  # recover at end of line, newline handled by main loop
                i += 1
            if not closed:
                kind = "string" if quote == '"' else "char"
                unit.warnings.append(
                    f"{path}:{start_line}: unterminated {kind} literal (recovered at end of line)"
                )
            continue

        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            start = i
            i += 1
            while i < n:
                ch = text[i]
                if _is_ident_char(ch) or ch == ".":
                    i += 1
                elif ch in "+-" and text[i - 1] in "eEpP":
                    i += 1
                else:
                    break
            tokens.append(Token("num", text[start:i], line))
            continue

        if _is_ident_start(c):
            start = i
            i += 1
            while i < n and _is_ident_char(text[i]):
                i += 1
            word = text[start:i]
            tokens.append(Token("kw" if word in KEYWORDS else "id", word, line))
            continue

        tokens.append(Token("punct", c, line))
        i += 1

    return unit


def _warn(sink, unit: SourceUnit, message: str) -> None:
    if sink is not None:
        sink.append(f"{unit.path}: {message}")


def branch_metrics(unit: SourceUnit, warnings: list | None = None) -> tuple[int, int]:
    """(branch_count, branch_max_depth); see module docstring for the depth rule.

    branch_count = ``if`` tokens + ``case`` tokens + ternary ``?`` tokens.
    Unbalanced braces yield the depth reached up to the imbalance plus a
    warning, never an error.
    """
    count = 0
    cur = best = 0
    stack = []  # ('brace'|'stmt', depth this frame added)
    paren_depth = 0
    if_state = 0  # 1 = saw `if`, want `(`; 2 = inside the condition
    cond_depth = 0
    body_adds = None  # set when the next token starts an if/else body
    else_pending = False
    unbalanced = False

    for tok in unit.tokens:
        if tok.kind == "directive":
            continue
        t = tok.text

        if else_pending:
            else_pending = False
            if not (tok.kind == "kw" and t == "if"):
                body_adds = 0  # plain else body starts at this token

        if if_state == 1 and t != "(":
            if_state = 0  # `if` not followed by a condition; bail out

        if body_adds is not None:
            adds = body_adds
            body_adds = None
            if t == "{":
                stack.append(("brace", adds))
                cur += adds
                best = max(best, cur)
                continue
            if t == ";":
                best = max(best, cur + adds)  # empty body, e.g. `if (x);`
                while paren_depth == 0 and stack and stack[-1][0] == "stmt":
                    cur -= stack.pop()[1]
                continue
            stack.append(("stmt", adds))
            cur += adds
            best = max(best, cur)
            # fall through: this token is also the body's first token

        if tok.kind == "kw":
            if t == "if":
                count += 1
                if_state = 1
            elif t == "case":
                count += 1
            elif t == "else":
                else_pending = True
            continue

        if tok.kind != "punct":
            continue
        if t == "?":
            count += 1
        elif t == "(":
            if if_state == 1:
                if_state = 2
                cond_depth = paren_depth
            paren_depth += 1
        elif t == ")":
            paren_depth = max(0, paren_depth - 1)
            if if_state == 2 and paren_depth == cond_depth:
                if_state = 0
                body_adds = 1
        elif t == "{":
            stack.append(("brace", 0))
        elif t == "}":
            if not any(kind == "brace" for kind, _ in stack):
                unbalanced = True
                continue
            while stack and stack[-1][0] == "stmt":
                cur -= stack.pop()[1]
            cur -= stack.pop()[1]
            while stack and stack[-1][0] == "stmt":
                cur -= stack.pop()[1]
        elif t == ";":
            if paren_depth == 0:
                while stack and stack[-1][0] == "stmt":
                    cur -= stack.pop()[1]

    if unbalanced:
        _warn(warnings, unit, "unbalanced closing brace; depth computed up to imbalance")
    if any(kind == "brace" for kind, _ in stack):
        _warn(warnings, unit, "unclosed brace at end of file; depth computed up to imbalance")
    return count, best


def loop_count(unit: SourceUnit, warnings: list | None = None) -> int:
    """Count loops; a do-while pair counts once (the `do`).

    The trailing ``while`` of a do-while is recognized as: a ``while`` token
    preceded by ``}`` or ``;`` with a pending ``do`` at the same brace depth.
    """
    count = 0
    brace_depth = 0
    pending_do = []  # brace depth at each unmatched `do`
    prev = None

    for tok in unit.tokens:
        if tok.kind == "directive":
            continue
        t = tok.text
        if tok.kind == "kw":
            if t == "for":
                count += 1
            elif t == "do":
                count += 1
                pending_do.append(brace_depth)
            elif t == "while":
                if pending_do and pending_do[-1] == brace_depth and prev in ("}", ";"):
                    pending_do.pop()
                else:
                    count += 1
        elif tok.kind == "punct":
            if t == "{":
                brace_depth += 1
            elif t == "}":
                brace_depth = max(0, brace_depth - 1)
        prev = t

    if pending_do:
        _warn(warnings, unit, f"{len(pending_do)} do loop(s) without a matching while")
    return count


def _call_position_count(unit: SourceUnit, names) -> int:
    tokens = unit.tokens
    count = 0
    for i, tok in enumerate(tokens):
        if tok.kind == "id" and tok.text in names:
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if nxt is not None and nxt.kind == "punct" and nxt.text == "(":
                count += 1
    return count


def alloc_count(unit: SourceUnit) -> int:
    return _call_position_count(unit, ALLOC_FUNCTIONS)


def lib_safety_counts(unit: SourceUnit) -> tuple[int, int]:
    return (
        _call_position_count(unit, SAFE_LIB_FUNCTIONS),
        _call_position_count(unit, UNSAFE_LIB_FUNCTIONS),
    )


def sloc(unit: SourceUnit) -> int:
    """Lines carrying at least one token (comment-only and blank lines do not)."""
    return len({tok.line for tok in unit.tokens})


@dataclass
class CallGraph:
    nodes: set
    edges: set  # (caller, callee), both defined in the analyzed units


def build_call_graph(units) -> CallGraph:
    """Joint call graph over all units: cross-file calls resolve normally.

    Edges are kept only between functions defined somewhere in ``units``;
    calls to external names carry no recursion signal. Function-pointer
    calls are invisible to this analysis (documented undercount).
    """
    defined = set()
    raw_edges = set()

    for unit in units:
        tokens = [t for t in unit.tokens if t.kind != "directive"]
        brace_depth = 0
        paren_depth = 0
        current = None
        pending_def = None

        for i, tok in enumerate(tokens):
            t = tok.text
            if tok.kind == "punct":
                if t == "{":
                    brace_depth += 1
                    if pending_def is not None and brace_depth == 1:
                        current = pending_def
                        pending_def = None
                elif t == "}":
                    brace_depth = max(0, brace_depth - 1)
                    if brace_depth == 0:
                        current = None
                elif t == "(":
                    paren_depth += 1
                elif t == ")":
                    paren_depth = max(0, paren_depth - 1)
                continue
            if tok.kind != "id":
                continue
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if nxt is None or nxt.kind != "punct" or nxt.text != "(":
                continue
            if brace_depth == 0 and paren_depth == 0:
                # Candidate definition: identifier ( ... ) {
                j = i + 1
                depth = 0
                while j < len(tokens):
                    if tokens[j].kind == "punct":
                        if tokens[j].text == "(":
                            depth += 1
                        elif tokens[j].text == ")":
                            depth -= 1
                            if depth == 0:
                                break
                    j += 1
                after = tokens[j + 1] if j + 1 < len(tokens) else None
                if after is not None and after.kind == "punct" and after.text == "{":
                    defined.add(t)
                    pending_def = t
            elif current is not None:
                raw_edges.add((current, t))

    edges = {(a, b) for a, b in raw_edges if b in defined}
    return CallGraph(defined, edges)


def _strongly_connected_components(nodes, adjacency):
    """Iterative Tarjan; returns components as lists (order deterministic)."""
    index = {}
    low = {}
    on_stack = set()
    stack = []
    components = []
    counter = 0

    for root in sorted(nodes):
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(adjacency.get(root, ())))]
        while work:
            node, neighbors = work[-1]
            advanced = False
            for nbr in neighbors:
                if nbr not in index:
                    index[nbr] = low[nbr] = counter
                    counter += 1
                    stack.append(nbr)
                    on_stack.add(nbr)
                    work.append((nbr, iter(adjacency.get(nbr, ()))))
                    advanced = True
                    break
                if nbr in on_stack:
                    low[node] = min(low[node], index[nbr])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                component = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    component.append(w)
                    if w == node:
                        break
                components.append(component)
    return components


def recursive_count(graph: CallGraph) -> int:
    """Functions on any call-graph cycle; singleton components need a self-edge."""
    adjacency = {}
    for a, b in sorted(graph.edges):
        adjacency.setdefault(a, []).append(b)
    total = 0
    for component in _strongly_connected_components(graph.nodes, adjacency):
        if len(component) > 1:
            total += len(component)
        elif (component[0], component[0]) in graph.edges:
            total += 1
    return total


# ---------------------------------------------------------------------------
# Directory-level extraction

PER_FILE_METRICS = (
    "sloc",
    "branch_count",
    "branch_max_depth",
    "loop_count",
    "alloc_calls",
    "safe_lib_calls",
    "unsafe_lib_calls",
)


@dataclass
class FileReport:
    path: str
    metrics: dict
    warnings: list

    def as_dict(self):
        return {"path": self.path, "metrics": self.metrics, "warnings": self.warnings}


@dataclass
class Layer2Extraction:
    vector: FeatureVector
    per_file: list
    warnings: list
    call_graph: CallGraph


def analyze_unit(unit: SourceUnit) -> FileReport:
    warnings = list(unit.warnings)
    branch_count, branch_depth = branch_metrics(unit, warnings)
    loops = loop_count(unit, warnings)
    safe, unsafe = lib_safety_counts(unit)
    metrics = {
        "sloc": sloc(unit),
        "branch_count": branch_count,
        "branch_max_depth": branch_depth,
        "loop_count": loops,
        "alloc_calls": alloc_count(unit),
        "safe_lib_calls": safe,
        "unsafe_lib_calls": unsafe,
    }
    return FileReport(unit.path, metrics, warnings)


def discover_sources(root) -> list:
    """All C/C++ files under root, sorted by relative POSIX path."""
    base = pathlib.Path(root)
    found = [p for p in base.rglob("*") if p.is_file() and p.suffix in SOURCE_EXTENSIONS]
    return sorted(found, key=lambda p: p.relative_to(base).as_posix())


def extract_layer2(root, dictionary: FeatureDictionary, manifest=None) -> Layer2Extraction:
    """Aggregate layer-2 metrics over a source tree.

    Count metrics sum over files; branch_max_depth is the max over files;
    recursion is counted on the joint multi-file call graph so mutual
    recursion across translation units is seen. ``l2.is_server`` comes from
    the manifest (any object with ``is_server_app``); without one the key is
    simply absent from the returned partial vector.
    """
    units = []
    reports = []
    warnings = []
    for path in discover_sources(root):
        rel = path.relative_to(root).as_posix()
        text = path.read_text(encoding="utf-8", errors="replace")
        unit = tokenize(text, path=rel)
        units.append(unit)
        report = analyze_unit(unit)
        reports.append(report)
        warnings.extend(report.warnings)

    totals = {name: 0 for name in PER_FILE_METRICS}
    for report in reports:
        for name in PER_FILE_METRICS:
            if name == "branch_max_depth":
                totals[name] = max(totals[name], report.metrics[name])
            else:
                totals[name] += report.metrics[name]

    graph = build_call_graph(units)
    values = {
        "l2.sloc": totals["sloc"],
        "l2.branch_count": totals["branch_count"],
        "l2.branch_max_depth": totals["branch_max_depth"],
        "l2.loop_count": totals["loop_count"],
        "l2.alloc_calls": totals["alloc_calls"],
        "l2.safe_lib_calls": totals["safe_lib_calls"],
        "l2.unsafe_lib_calls": totals["unsafe_lib_calls"],
        "l2.recursive_fns": recursive_count(graph),
    }
    if manifest is not None:
        values["l2.is_server"] = int(bool(manifest.is_server_app))
    vector = FeatureVector(values, dictionary)
    return Layer2Extraction(vector, reports, warnings, graph)
