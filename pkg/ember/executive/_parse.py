"""Text format for behavior trees.

Grammar::

    Node  := Kind ['(' Arg (',' Arg)* ')'] ['{' Node* '}']
    Arg   := identifier | number | '[' number (',' number)* ']'

``#`` starts a comment that runs to the end of the line; commas between sibling nodes are optional.
"""

import re
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

from ember.exceptions import TreeParseError, TreeStructureError
from ember.executive._nodes import IDENTIFIER, Arg, BtNode, NodeKind

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<punct>[(){}\[\],])
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


class _Token(NamedTuple):
    kind: str
    text: str
    line: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    line = 1
    for match in _TOKEN.finditer(text):
        kind = match.lastgroup
        value = match.group()
        if kind == "newline":
            line += 1
        elif kind in ("ws", "comment"):
            continue
        elif kind == "bad":
            raise TreeParseError(msg=f'Unexpected character "{value}".', line=line)
        else:
            tokens.append(_Token(kind, value, line))  # pyright: ignore[reportArgumentType]
    return tokens


def _number(text: str) -> Union[int, float]:
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    return float(text)


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def line(self) -> int:
        tok = self.peek()
        if tok is not None:
            return tok.line
        return self.tokens[-1].line if self.tokens else 1

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise TreeParseError(msg="Unexpected end of input.", line=self.line())
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise TreeParseError(msg=f'Expected "{text}"; got "{tok.text}".', line=tok.line)
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.text == text:
            self.pos += 1
            return True
        return False

    def node(self) -> BtNode:
        tok = self.next()
        if tok.kind != "name":
            raise TreeParseError(msg=f'Expected a node kind; got "{tok.text}".', line=tok.line)
        try:
            kind = NodeKind(tok.text)
        except ValueError:
            raise TreeParseError(msg=f'Unknown node kind "{tok.text}".', line=tok.line) from None

        args: Tuple[Arg, ...] = ()
        if self.accept("("):
            args = self.args()
        children: List[BtNode] = []
        if self.accept("{"):
            while not self.accept("}"):
                if self.peek() is None:
                    raise TreeParseError(msg=f'Unclosed "{{" of {kind.value}.', line=self.line())
                children.append(self.node())
                self.accept(",")
        try:
            return BtNode(kind, children, args)
        except TreeStructureError as e:
            raise TreeParseError(msg=str(e), line=tok.line) from None

    def args(self) -> Tuple[Arg, ...]:
        out: List[Arg] = []
        if self.accept(")"):
            return ()
        while True:
            out.append(self.arg())
            if self.accept(")"):
                return tuple(out)
            self.expect(",")

    def arg(self) -> Arg:
        tok = self.next()
        if tok.kind == "name":
            return tok.text
        if tok.kind == "number":
            return _number(tok.text)
        if tok.text == "[":
            values = []
            while True:
                item = self.next()
                if item.kind != "number":
                    raise TreeParseError(msg=f'Vectors hold numbers; got "{item.text}".', line=item.line)
                values.append(_number(item.text))
                if self.accept("]"):
                    return tuple(values)
                self.expect(",")
        raise TreeParseError(msg=f'Unexpected "{tok.text}" in argument list.', line=tok.line)


def load_tree(text: str) -> BtNode:
    """Parse a single root node.

    Raises
    ------
    TreeParseError
        Syntax error, unknown node kind or arity violation, with the offending line number.
    """
    parser = _Parser(text)
    root = parser.node()
    extra = parser.peek()
    if extra is not None:
        raise TreeParseError(msg=f'Unexpected "{extra.text}" after the root node.', line=extra.line)
    return root


def load_tree_file(path: Union[str, Path]) -> BtNode:
    return load_tree(Path(path).read_text())


def _format_number(value: Union[int, float]) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


def _format_arg(arg: Arg) -> str:
    if isinstance(arg, str):
        if not IDENTIFIER.match(arg):
            raise TreeStructureError(msg=f'Argument "{arg}" is not an identifier and cannot be written.')
        return arg
    if isinstance(arg, tuple):
        return "[" + ", ".join(_format_number(v) for v in arg) + "]"
    return _format_number(arg)


def dump_tree(node: BtNode, indent: str = "  ") -> str:
    """Serialize ``node``; ``load_tree(dump_tree(node)) == node``."""
    lines: List[str] = []

    def _emit(n: BtNode, depth: int):
        head = indent * depth + n.kind.value
        if n.args:
            head += "(" + ", ".join(_format_arg(a) for a in n.args) + ")"
        if n.children:
            lines.append(head + " {")
            for child in n.children:
                _emit(child, depth + 1)
            lines.append(indent * depth + "}")
        else:
            lines.append(head)

    _emit(node, 0)
    return "\n".join(lines) + "\n"
