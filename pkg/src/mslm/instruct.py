"""Natural-language instructions -> restricted plan programs -> execution.

Generated navigation code is never handed to a general interpreter: it is
parsed into a small whitelisted AST (primitive calls, assignments, literal
``for i in range(n):`` loops, map products, position averages) and evaluated
against the navigation API.  The rule-based generator covers the instruction
patterns the LLM prompt examples demonstrate and is fully deterministic, so
the engine works with no language model attached.
"""

from __future__ import annotations

import importlib.resources
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ProgramParseError, UnsupportedInstructionError
from .heatmap import Heatmap, argmax_position, fuse

WHITELISTED_CALLS = {
    # spatial navigation API
    "move_to", "move_to_left", "move_to_right", "with_pos_on_left",
    "with_pos_on_right", "with_object_on_left", "with_object_on_right",
    "move_in_between", "face", "turn", "turn_absolute", "move_north",
    "move_south", "move_east", "move_west", "move_forward", "move_to_object",
    "get_pos",
    # multimodal API
    "get_map", "get_major_map", "get_max_pose_3d", "get_max_pos_3d",
    "load_image",
}


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple = ()
    kwargs: tuple = ()  # ((key, expr), ...)


@dataclass(frozen=True)
class BinOp:
    op: str  # '*', '+', '/'
    left: object
    right: object


@dataclass(frozen=True)
class Assign:
    target: str
    expr: object


@dataclass(frozen=True)
class ExprStmt:
    expr: object


@dataclass(frozen=True)
class ForRange:
    var: str
    count: int
    body: tuple


@dataclass(frozen=True)
class PlanProgram:
    statements: tuple

    def __len__(self):
        return len(self.statements)


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN_RE = re.compile(r"""
    (?P<num>-?\d+(?:\.\d+)?)
  | (?P<str>'[^']*'|"[^"]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[()*+/=.,:])
  | (?P<ws>\s+)
""", re.VERBOSE)


def _tokenize(line: str, lineno: int):
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise ProgramParseError(
                f"unexpected character {line[pos]!r}", line=lineno, column=pos + 1
            )
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return tokens


class _ExprParser:
    def __init__(self, tokens, lineno):
        self.tokens = tokens
        self.i = 0
        self.lineno = lineno

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        if tok is None:
            raise ProgramParseError("unexpected end of line", line=self.lineno)
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            raise ProgramParseError(
                f"expected {value!r}, found {tok[1]!r}", line=self.lineno,
                column=tok[2],
            )
        return tok

    def done(self) -> bool:
        return self.i >= len(self.tokens)

    def parse_expr(self):
        left = self.parse_atom()
        while True:
            tok = self.peek()
            if tok is not None and tok[1] in ("*", "+", "/"):
                self.next()
                right = self.parse_atom()
                left = BinOp(tok[1], left, right)
            else:
                return left

    def parse_atom(self):
        tok = self.next()
        kind, text, col = tok
        if kind == "num":
            return Num(float(text))
        if kind == "str":
            return Str(text[1:-1])
        if text == "(":
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if text == "-":
            raise ProgramParseError("unexpected '-'", line=self.lineno, column=col)
        if kind == "name":
            if text == "robot":
                self.expect(".")
                fn = self.next()
                if fn[0] != "name":
                    raise ProgramParseError(
                        "expected method name after 'robot.'", line=self.lineno,
                        column=fn[2],
                    )
                return self.parse_call(fn[1], fn[2])
            nxt = self.peek()
            if nxt is not None and nxt[1] == "(":
                return self.parse_call(text, col)
            return Name(text)
        raise ProgramParseError(
            f"unexpected token {text!r}", line=self.lineno, column=col
        )

    def parse_call(self, fn: str, col: int) -> Call:
        if fn not in WHITELISTED_CALLS:
            raise ProgramParseError(
                f"call to {fn!r} is not allowed", line=self.lineno, column=col
            )
        self.expect("(")
        args, kwargs = [], []
        if self.peek() is not None and self.peek()[1] != ")":
            while True:
                tok = self.peek()
                nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else None
                if tok[0] == "name" and nxt is not None and nxt[1] == "=":
                    self.next()
                    self.next()
                    kwargs.append((tok[1], self.parse_expr()))
                else:
                    args.append(self.parse_expr())
                if self.peek() is not None and self.peek()[1] == ",":
                    self.next()
                else:
                    break
        self.expect(")")
        return Call(fn, tuple(args), tuple(kwargs))


def _parse_block(lines, start: int, indent: int):
    """Parse statements at one indentation level; returns (stmts, next_index)."""
    stmts = []
    i = start
    while i < len(lines):
        lineno, raw = lines[i]
        stripped = raw.strip()
        cur_indent = len(raw) - len(raw.lstrip())
        if cur_indent < indent:
            break
        if cur_indent > indent:
            raise ProgramParseError("unexpected indentation", line=lineno)

        m = re.match(r"for\s+([A-Za-z_]\w*)\s+in\s+range\s*\(\s*(\d+)\s*\)\s*:\s*$",
                     stripped)
        if m:
            body_indent = None
            j = i + 1
            if j < len(lines):
                nxt_raw = lines[j][1]
                body_indent = len(nxt_raw) - len(nxt_raw.lstrip())
            if body_indent is None or body_indent <= indent:
                raise ProgramParseError("empty loop body", line=lineno)
            body, j = _parse_block(lines, i + 1, body_indent)
            stmts.append(ForRange(m.group(1), int(m.group(2)), tuple(body)))
            i = j
            continue

        tokens = _tokenize(stripped, lineno)
        # assignment?
        if (len(tokens) >= 2 and tokens[0][0] == "name"
                and tokens[1][1] == "="):
            parser = _ExprParser(tokens[2:], lineno)
            expr = parser.parse_expr()
            if not parser.done():
                tok = parser.peek()
                raise ProgramParseError(
                    f"trailing tokens after expression: {tok[1]!r}",
                    line=lineno, column=tok[2],
                )
            stmts.append(Assign(tokens[0][1], expr))
        else:
            if tokens and tokens[0][1] in ("import", "from", "exec", "eval"):
                raise ProgramParseError(
                    f"statement {tokens[0][1]!r} is not allowed", line=lineno,
                    column=tokens[0][2],
                )
            parser = _ExprParser(tokens, lineno)
            expr = parser.parse_expr()
            if not parser.done():
                tok = parser.peek()
                raise ProgramParseError(
                    f"trailing tokens after expression: {tok[1]!r}",
                    line=lineno, column=tok[2],
                )
            stmts.append(ExprStmt(expr))
        i += 1
    return stmts, i


def parse_program(code: str) -> PlanProgram:
    """Parse plan code into an AST, rejecting anything off the whitelist."""
    lines = []
    for lineno, raw in enumerate(code.splitlines(), start=1):
        without_comment = re.sub(r"#.*$", "", raw)
        if without_comment.strip():
            lines.append((lineno, without_comment.rstrip()))
    if not lines:
        return PlanProgram(())
    first_indent = len(lines[0][1]) - len(lines[0][1].lstrip())
    stmts, end = _parse_block(lines, 0, first_indent)
    if end != len(lines):
        raise ProgramParseError("inconsistent indentation", line=lines[end][0])
    return PlanProgram(tuple(stmts))


# ---------------------------------------------------------------------------
# Pretty printer


def _format_expr(expr) -> str:
    if isinstance(expr, Num):
        v = expr.value
        return str(int(v)) if float(v).is_integer() else repr(v)
    if isinstance(expr, Str):
        return f"'{expr.value}'"
    if isinstance(expr, Name):
        return expr.ident
    if isinstance(expr, Call):
        parts = [_format_expr(a) for a in expr.args]
        parts += [f"{k}={_format_expr(v)}" for k, v in expr.kwargs]
        return f"robot.{expr.name}({', '.join(parts)})"
    if isinstance(expr, BinOp):
        left = _format_expr(expr.left)
        right = _format_expr(expr.right)
        if expr.op == "/" and isinstance(expr.left, BinOp):
            left = f"({left})"
        return f"{left} {expr.op} {right}"
    raise TypeError(f"not an expression: {expr!r}")


def format_program(prog: PlanProgram, indent: int = 0) -> str:
    pad = " " * indent
    out = []
    for stmt in prog.statements:
        if isinstance(stmt, Assign):
            out.append(f"{pad}{stmt.target} = {_format_expr(stmt.expr)}")
        elif isinstance(stmt, ExprStmt):
            out.append(f"{pad}{_format_expr(stmt.expr)}")
        elif isinstance(stmt, ForRange):
            out.append(f"{pad}for {stmt.var} in range({stmt.count}):")
            out.append(format_program(PlanProgram(stmt.body), indent + 4))
        else:
            raise TypeError(f"not a statement: {stmt!r}")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Rule-based code generation (LLM fallback)

_NUM_WORDS = {"one": 1, "once": 1, "two": 2, "twice": 2, "three": 3,
              "four": 4, "five": 5, "six": 6, "seven": 7, "eight": 8,
              "nine": 9, "ten": 10}

_CARDINAL_HEADINGS = {"north": 0, "east": 90, "south": 180, "west": -90}


def _count(text: str) -> int:
    text = text.strip()
    if text.isdigit():
        return int(text)
    return _NUM_WORDS.get(text, 0)


def _clause_code(clause: str) -> list:
    """Code lines for one instruction clause, or None when unmatched."""
    c = clause.strip().rstrip(".").lower()
    c = re.sub(r"\s+", " ", c)

    m = re.match(r"(?:move|go) back and forth (?:to|between) (?:the )?(.+?) "
                 r"and (?:the )?(.+?) (\w+)(?: times)?$", c)
    if m and _count(m.group(3)):
        n = _count(m.group(3))
        return [
            f"pos1 = robot.get_pos('{m.group(1)}')",
            f"pos2 = robot.get_pos('{m.group(2)}')",
            f"for i in range({n}):",
            "    robot.move_to(pos1)",
            "    robot.move_to(pos2)",
        ]

    m = re.match(r"(?:move|go|navigate) (?:to )?(?:in )?between (?:the )?(.+?) "
                 r"and (?:the )?(.+)$", c) \
        or re.match(r"(?:move|go) to the middle of (?:the )?(.+?) and "
                    r"(?:the )?(.+)$", c)
    if m:
        a, b = m.group(1), m.group(2)
        if "sound of" not in a and "image" not in a \
                and "sound of" not in b and "image" not in b:
            return [f"robot.move_in_between('{a}', '{b}')"]
        return _multimodal_between(a, b)

    m = re.match(r"(?:move|go) (?:a bit )?to the (left|right)(?: side)? of "
                 r"(?:the )?(.+)$", c)
    if m and "sound" not in m.group(2):
        return [f"robot.move_to_{m.group(1)}('{m.group(2)}')"]

    m = re.match(r"face (?:the )?(.+)$", c)
    if m:
        return [f"robot.face('{m.group(1)}')"]

    m = re.match(r"turn (left|right) (\d+(?:\.\d+)?) degrees$", c)
    if m:
        angle = float(m.group(2))
        if m.group(1) == "left":
            angle = -angle
        return [f"robot.turn({_fmt_num(angle)})"]

    m = re.match(r"turn (north|south|east|west)$", c)
    if m:
        return [f"robot.turn_absolute({_CARDINAL_HEADINGS[m.group(1)]})"]

    m = re.match(r"(?:move|go) (?:to the )?(north|south|east|west)"
                 r"(?: side)?(?: of)? (?:the )?(.+)$", c)
    if m:
        return [f"robot.move_{m.group(1)}('{m.group(2)}')"]

    m = re.match(r"move forward(?: for)? (\d+(?:\.\d+)?) meters?$", c)
    if m:
        return [f"robot.move_forward({_fmt_num(float(m.group(1)))})"]

    m = re.match(r"with (?:the )?(.+?) on your (left|right)$", c)
    if m:
        return [f"robot.with_object_on_{m.group(2)}('{m.group(1)}')"]

    m = re.match(r"(?:move|go|navigate) to (?:the )?sound of (.+?)"
                 r" (?:next to|near) (?:the )?(.+)$", c)
    if m:
        return [
            f"sound_map = robot.get_major_map(sound=\"{m.group(1)}\")",
            f"obj_map = robot.get_map(obj=\"{m.group(2)}\")",
            "fuse_map = obj_map * sound_map",
            "pos = robot.get_max_pos_3d(fuse_map)",
            "robot.move_to(pos)",
        ]

    m = re.match(r"(?:move|go|navigate) to (?:the )?(.+?) (?:next to|near) "
                 r"(?:the )?sound of (.+)$", c)
    if m:
        return [
            f"obj_map = robot.get_major_map(obj=\"{m.group(1)}\")",
            f"sound_map = robot.get_map(sound=\"{m.group(2)}\")",
            "fuse_map = obj_map * sound_map",
            "pos = robot.get_max_pos_3d(fuse_map)",
            "robot.move_to(pos)",
        ]

    m = re.match(r"(?:move|go|navigate) to (?:the )?sound of (.+)$", c)
    if m:
        return [
            f"sound_map = robot.get_major_map(sound=\"{m.group(1)}\")",
            "pos = robot.get_max_pos_3d(sound_map)",
            "robot.move_to(pos)",
        ]

    m = re.match(r"(?:move|go|navigate) to (?:the )?image (\S+)$", c)
    if m:
        return [
            f"img = robot.load_image(\"{m.group(1)}\")",
            "img_map = robot.get_major_map(img=img)",
            "pos = robot.get_max_pos_3d(img_map)",
            "robot.move_to(pos)",
        ]

    m = re.match(r"(?:find any|move to any|move to|go to) (?:the )?(.+?)"
                 r"(?: in the environment)?$", c)
    if m:
        return [f"robot.move_to_object('{m.group(1)}')"]
    return None


def _mm_ref(term: str, major: bool, lines: list, tag: str) -> str:
    """Emit map+pos code for one multimodal term; returns the pos variable."""
    fn = "get_major_map" if major else "get_map"
    m = re.match(r"(?:the )?sound of (.+)$", term)
    if m:
        lines.append(f"{tag}_map = robot.{fn}(sound=\"{m.group(1)}\")")
        lines.append(f"{tag}_pos = robot.get_max_pos_3d({tag}_map)")
        return f"{tag}_pos"
    m = re.match(r"(?:the )?image:? (\S+)$", term)
    if m:
        lines.append(f"{tag}_img = robot.load_image(\"{m.group(1)}\")")
        lines.append(f"{tag}_map = robot.get_major_map(img={tag}_img)")
        lines.append(f"{tag}_pos = robot.get_max_pos_3d({tag}_map)")
        return f"{tag}_pos"
    m = re.match(r"(.+?) (?:next to|near) (?:the )?sound of (.+)$", term)
    if m:
        lines.append(f"{tag}_obj_map = robot.get_major_map(obj=\"{m.group(1)}\")")
        lines.append(f"{tag}_snd_map = robot.get_map(sound=\"{m.group(2)}\")")
        lines.append(f"{tag}_map = {tag}_obj_map * {tag}_snd_map")
        lines.append(f"{tag}_pos = robot.get_max_pos_3d({tag}_map)")
        return f"{tag}_pos"
    lines.append(f"{tag}_map = robot.{fn}(obj=\"{term}\")")
    lines.append(f"{tag}_pos = robot.get_max_pos_3d({tag}_map)")
    return f"{tag}_pos"


def _multimodal_between(a: str, b: str) -> list:
    lines = []
    pa = _mm_ref(a.strip(), True, lines, "a")
    pb = _mm_ref(b.strip(), True, lines, "b")
    lines.append(f"pos = ({pa} + {pb}) / 2")
    lines.append("robot.move_to(pos)")
    return lines


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


_CLAUSE_SPLIT = re.compile(r",?\s*\bthen\b\s*|;\s*")


def rule_based_codegen(prompt: str) -> str:
    """Deterministic template codegen from the instruction comment lines.

    The instruction is read from the trailing comment block of the prompt
    (the same place the LLM query puts it).
    """
    comment_lines = []
    for line in reversed(prompt.strip().splitlines()):
        if line.strip().startswith("#"):
            comment_lines.append(line.strip().lstrip("#").strip())
        elif comment_lines:
            break
    instruction = " ".join(reversed(comment_lines)).strip()
    if not instruction:
        raise UnsupportedInstructionError("no instruction found in prompt")

    code_lines = []
    for clause in _CLAUSE_SPLIT.split(instruction):
        clause = clause.strip()
        if not clause:
            continue
        lines = _clause_code(clause)
        if lines is None:
            raise UnsupportedInstructionError(
                f"cannot interpret instruction clause {clause!r}"
            )
        code_lines.extend(lines)
    if not code_lines:
        raise UnsupportedInstructionError("empty instruction")
    return "\n".join(code_lines)


def load_context_prompt(name: str) -> str:
    """Bundled context prompt asset: 'spatial' or 'multimodal'."""
    ref = importlib.resources.files("mslm.prompts") / f"{name}_prompt.txt"
    return ref.read_text()


def generate_plan(instruction: str, context_prompt: str, provider) -> str:
    """Ask the codegen provider (LLM or rule-based mock) for plan code."""
    if not instruction.strip():
        raise UnsupportedInstructionError("empty instruction")
    prompt = context_prompt.rstrip() + "\n\n# " + instruction.strip() + "\n"
    return provider.codegen(prompt)


# ---------------------------------------------------------------------------
# Interpreter


class _NoTarget:
    """Sentinel for failed goal resolution; absorbs arithmetic."""

    def __repr__(self):
        return "<no-target>"


NO_TARGET = _NoTarget()


def execute_program(prog: PlanProgram, robot) -> list:
    """Evaluate statements in order against the robot API.

    A no-target result fails the affected subgoal and execution continues
    with the next statement.  Returns the robot's trace.
    """
    env = {}

    def ev(expr):
        if isinstance(expr, Num):
            return expr.value
        if isinstance(expr, Str):
            return expr.value
        if isinstance(expr, Name):
            if expr.ident not in env:
                raise ProgramParseError(f"unknown name {expr.ident!r}")
            return env[expr.ident]
        if isinstance(expr, Call):
            args = [ev(a) for a in expr.args]
            kwargs = {k: ev(v) for k, v in expr.kwargs}
            if any(a is NO_TARGET for a in args) \
                    or any(v is NO_TARGET for v in kwargs.values()):
                if expr.name in ("move_to",):
                    robot.record_failure(expr.name)
                return NO_TARGET
            fn = getattr(robot, expr.name)
            out = fn(*args, **kwargs)
            return NO_TARGET if out is None and _produces_value(expr.name) else out
        if isinstance(expr, BinOp):
            left, right = ev(expr.left), ev(expr.right)
            if left is NO_TARGET or right is NO_TARGET:
                return NO_TARGET
            if expr.op == "*":
                if isinstance(left, Heatmap) and isinstance(right, Heatmap):
                    return fuse([left, right])
                return left * right
            if expr.op == "+":
                return np.asarray(left, dtype=np.float64) \
                    + np.asarray(right, dtype=np.float64)
            if expr.op == "/":
                return np.asarray(left, dtype=np.float64) / float(right)
        raise TypeError(f"cannot evaluate {expr!r}")

    def run(statements):
        for stmt in statements:
            if isinstance(stmt, Assign):
                env[stmt.target] = ev(stmt.expr)
            elif isinstance(stmt, ExprStmt):
                ev(stmt.expr)
            elif isinstance(stmt, ForRange):
                for i in range(stmt.count):
                    env[stmt.var] = i
                    run(stmt.body)
            else:
                raise TypeError(f"cannot execute {stmt!r}")

    run(prog.statements)
    return robot.trace


def _produces_value(fn: str) -> bool:
    return fn in ("get_pos", "get_map", "get_major_map", "get_max_pose_3d",
                  "get_max_pos_3d", "load_image")
