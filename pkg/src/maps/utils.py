"""
Map Definition Module

This module parses, prints and evaluates the self-maps T and S of the point set M
(and the weight functions of cone metrics, written over the grid variable t).

Grammar (whitespace insensitive):
    map    := expr (';' expr)*          one expression per coordinate of M
    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | base ('^' integer)?
    base   := number | ident | call | '(' expr ')'
    call   := ident '(' args ')'

Identifiers are x (first coordinate), x0..x{k-1}, t (grid variable), the
constants e and pi, the functions abs and exp, and the catalog entries
identity, square, half, scale(a) and constant(c).

Evaluation is vectorised over numpy arrays, so one call evaluates a map on a
whole batch of sampled points.
"""

import logging
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.common.utils import (
    COLLISION_TOL,
    DIVISION_GUARD,
    DISTINCT_TOL,
    as_box,
    check_sample_count,
    get_rng,
)
from src.maps.catalog import catalog, catalog_arity

logger = logging.getLogger(__name__)

FUNCTIONS = {"abs": np.abs, "exp": np.exp}
CONSTANTS = {"e": float(np.e), "pi": float(np.pi)}
VARIABLE_PATTERN = re.compile(r"^(x\d*|t)$")
MAX_COLLISIONS = 10

TOKEN_PATTERN = re.compile(
    r"""
    (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
    |(?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    |(?P<op>[-+*/^(),;])
    """,
    re.VERBOSE,
)

# Typographic operators accepted in sources and their ASCII equivalents
OPERATOR_ALIASES = {"−": "-", "×": "*", "÷": "/"}


class MapSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ValueError):
    def __init__(self, name: str, position: int):
        super().__init__(f"Unknown identifier '{name}' at position {position}")
        self.name = name
        self.position = position


class MapEvaluationError(ValueError):
    pass


# AST nodes
@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Pow, Call]


@dataclass(frozen=True, eq=False)
class MPoint:
    """
    Point of M: a finite vector of real coordinates.
    """

    coords: np.ndarray

    def __post_init__(self):
        coords = np.atleast_1d(np.array(self.coords, dtype=float))
        if coords.ndim != 1 or coords.size < 1:
            raise ValueError(f"MPoint needs at least one coordinate, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("MPoint coordinates must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def dimension(self) -> int:
        return self.coords.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, MPoint):
            return NotImplemented
        return bool(np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash(self.coords.tobytes())

    def to_list(self) -> list:
        return self.coords.tolist()

    def __repr__(self):
        return f"MPoint({self.coords.tolist()})"


@dataclass(frozen=True)
class MapExpr:
    """
    A parsed map: one AST per coordinate of M, plus the source it came from.
    """

    components: tuple
    source: str = ""

    @property
    def arity(self) -> int:
        return len(self.components)

    def variables(self) -> set:
        found = set()
        for component in self.components:
            _collect_variables(component, found)
        return found


@dataclass(frozen=True)
class MapCapabilities:
    """
    Analytic properties of a map declared by the user. They are hypotheses of
    the fixed-point theorems and cannot be decided by finite computation; only
    injectivity is refutable by sampling (spot_check_injective).
    """

    injective: bool = False
    continuous: bool = False
    subsequentially_convergent: bool = False
    sequentially_convergent: bool = False

    def __post_init__(self):
        if self.sequentially_convergent and not self.subsequentially_convergent:
            raise ValueError(
                "A sequentially convergent map is subsequentially convergent: "
                "declare subsequentially_convergent too"
            )

    def to_dict(self) -> dict:
        return {
            "injective": self.injective,
            "continuous": self.continuous,
            "subsequentially_convergent": self.subsequentially_convergent,
            "sequentially_convergent": self.sequentially_convergent,
        }


@dataclass
class InjectivityReport:
    refuted: bool
    samples: int
    collisions: list

    def to_dict(self) -> dict:
        return {
            "refuted": self.refuted,
            "samples": self.samples,
            "collisions": [list(pair) for pair in self.collisions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InjectivityReport":
        return cls(
            refuted=data["refuted"],
            samples=data["samples"],
            collisions=[tuple(pair) for pair in data["collisions"]],
        )


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _collect_variables(node: Node, found: set):
    if isinstance(node, Var):
        found.add(node.name)
    elif isinstance(node, Neg):
        _collect_variables(node.operand, found)
    elif isinstance(node, BinOp):
        _collect_variables(node.left, found)
        _collect_variables(node.right, found)
    elif isinstance(node, Pow):
        _collect_variables(node.base, found)
    elif isinstance(node, Call):
        _collect_variables(node.arg, found)


def tokenize(source: str) -> list:
    """
    Splits a map source into tokens, ending with an 'eof' token at len(source).

    Raises:
        MapSyntaxError: On a character no token starts with.
    """
    tokens = []
    position = 0
    while position < len(source):
        char = source[position]
        if char.isspace():
            position += 1
            continue
        if char in OPERATOR_ALIASES:
            tokens.append(_Token("op", OPERATOR_ALIASES[char], position))
            position += 1
            continue
        match = TOKEN_PATTERN.match(source, position)
        if match is None:
            raise MapSyntaxError(f"Unexpected character '{char}'", position)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), position))
        position = match.end()
    tokens.append(_Token("eof", "", len(source)))

    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = tokenize(source)
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def accept(self, text: str) -> bool:
        token = self.peek()
        if token.kind == "op" and token.text == text:
            self.index += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            token = self.peek()
            found = "end of input" if token.kind == "eof" else f"'{token.text}'"
            raise MapSyntaxError(f"Expected '{text}', found {found}", token.position)

    def parse_map(self) -> tuple:
        components = [self.parse_expr()]
        while self.accept(";"):
            components.append(self.parse_expr())
        token = self.peek()
        if token.kind != "eof":
            raise MapSyntaxError(f"Unexpected '{token.text}'", token.position)
        return tuple(components)

    def parse_expr(self) -> Node:
        node = self.parse_term()
        while True:
            if self.accept("+"):
                node = BinOp("+", node, self.parse_term())
            elif self.accept("-"):
                node = BinOp("-", node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Node:
        node = self.parse_factor()
        while True:
            if self.accept("*"):
                node = BinOp("*", node, self.parse_factor())
            elif self.accept("/"):
                node = BinOp("/", node, self.parse_factor())
            else:
                return node

    def parse_factor(self) -> Node:
        if self.accept("-"):
            return Neg(self.parse_factor())
        node = self.parse_base()
        if self.accept("^"):
            return Pow(node, self.parse_integer())
        return node

    def parse_integer(self) -> int:
        sign = -1 if self.accept("-") else 1
        token = self.peek()
        if token.kind != "number" or not token.text.isdigit():
            raise MapSyntaxError("Integer exponent expected", token.position)
        self.advance()
        return sign * int(token.text)

    def parse_signed_number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        token = self.peek()
        if token.kind != "number":
            raise MapSyntaxError("Number expected", token.position)
        self.advance()
        return sign * float(token.text)

    def parse_base(self) -> Node:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            return Num(float(token.text))
        if token.kind == "ident":
            self.advance()
            return self.parse_identifier(token)
        if self.accept("("):
            node = self.parse_expr()
            self.expect(")")
            return node
        found = "end of input" if token.kind == "eof" else f"'{token.text}'"
        raise MapSyntaxError(f"Unexpected {found}", token.position)

    def parse_identifier(self, token: _Token) -> Node:
        name = token.text
        if name in FUNCTIONS:
            self.expect("(")
            arg = self.parse_expr()
            self.expect(")")
            return Call(name, arg)
        if name in catalog:
            args = []
            if catalog_arity[name] > 0:
                self.expect("(")
                args.append(self.parse_signed_number())
                while self.accept(","):
                    args.append(self.parse_signed_number())
                self.expect(")")
            if len(args) != catalog_arity[name]:
                raise MapSyntaxError(
                    f"'{name}' takes {catalog_arity[name]} argument(s)", token.position
                )
            return catalog_entry(name, *args)
        if name in CONSTANTS:
            return Num(CONSTANTS[name])
        if VARIABLE_PATTERN.match(name):
            return Var("x0" if name == "x" else name)
        raise UnknownIdentifierError(name, token.position)


def parse_map(source: str) -> MapExpr:
    """
    Parses a map source into a MapExpr.

    Args:
        source (str): Map source, e.g. "x^2" or "x0/2; x1/3".

    Returns:
        MapExpr: The parsed map with one AST per component.

    Raises:
        ValueError: If the source is empty.
        MapSyntaxError: On a syntax error, with its 0-based position.
        UnknownIdentifierError: On an identifier outside the grammar.

    Example:
        >>> parse_map("x/2").components
        (BinOp(op='/', left=Var(name='x0'), right=Num(value=2.0)),)
    """
    if source is None or not source.strip():
        raise ValueError("Map source must be nonempty")
    return MapExpr(components=_Parser(source).parse_map(), source=source)


def catalog_entry(name: str, *args) -> Node:
    """
    Returns the AST of a one-component catalog entry.

    Args:
        name (str): identity, square, half, scale or constant.
        *args: Numeric arguments of the entry (scale factor, constant value).

    Returns:
        Node: The AST the entry expands to.
    """
    if name not in catalog:
        raise UnknownIdentifierError(name, 0)
    if len(args) != catalog_arity[name]:
        raise ValueError(f"'{name}' takes {catalog_arity[name]} argument(s), got {len(args)}")
    source = catalog[name].format(*(repr(float(a)) for a in args))
    (node,) = _Parser(source).parse_map()
    if name == "constant":
        # Keep negative constants as literals so the value is exact
        return Num(float(args[0]))
    return node


def catalog_map(name: str, *args) -> MapExpr:
    """
    Builds a MapExpr from a catalog entry, e.g. catalog_map("scale", 0.2).
    """
    arguments = ", ".join(repr(float(a)) for a in args)
    source = f"{name}({arguments})" if args else name
    return MapExpr(components=(catalog_entry(name, *args),), source=source)


def _format_node(node: Node) -> str:
    if isinstance(node, Num):
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_format_node(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_format_node(node.left)} {node.op} {_format_node(node.right)})"
    if isinstance(node, Pow):
        return f"({_format_node(node.base)}^{node.exponent})"
    if isinstance(node, Call):
        return f"{node.func}({_format_node(node.arg)})"
    raise TypeError(f"Not a map node: {node!r}")


def format_map(expr: MapExpr) -> str:
    """
    Prints a MapExpr back to fully parenthesised source that parses to an
    equivalent map.
    """
    return "; ".join(_format_node(component) for component in expr.components)


def _evaluate(node: Node, env: dict, shape: tuple) -> np.ndarray:
    if isinstance(node, Num):
        return np.full(shape, node.value)
    if isinstance(node, Var):
        if node.name not in env:
            raise MapEvaluationError(f"Variable '{node.name}' is not bound for this evaluation")
        return env[node.name]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, env, shape)
    if isinstance(node, BinOp):
        left = _evaluate(node.left, env, shape)
        right = _evaluate(node.right, env, shape)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if np.any(np.abs(right) < DIVISION_GUARD):
            raise MapEvaluationError("Division guard tripped: |denominator| < 1e-15")
        return left / right
    if isinstance(node, Pow):
        base = _evaluate(node.base, env, shape)
        if node.exponent < 0 and np.any(np.abs(base) < DIVISION_GUARD):
            raise MapEvaluationError("Division guard tripped: negative power of ~0")
        return base ** float(node.exponent)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_evaluate(node.arg, env, shape))
    raise TypeError(f"Not a map node: {node!r}")


def evaluate_rows(expr: MapExpr, rows: np.ndarray) -> np.ndarray:
    """
    Evaluates a map on a batch of points.

    Args:
        expr (MapExpr): The map, with one component per coordinate.
        rows (np.ndarray): Points of shape (N, k) with k == expr.arity.

    Returns:
        np.ndarray: Images of shape (N, k).

    Raises:
        ValueError: If the point dimension does not match the map arity.
        MapEvaluationError: If the division guard trips or a result is not finite.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != expr.arity:
        raise ValueError(
            f"Map has {expr.arity} component(s), points have shape {rows.shape}"
        )
    env = {f"x{i}": rows[:, i] for i in range(expr.arity)}
    shape = (rows.shape[0],)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        images = np.column_stack(
            [_evaluate(component, env, shape) for component in expr.components]
        )
    if not np.all(np.isfinite(images)):
        raise MapEvaluationError(f"Map '{expr.source}' produced a non-finite value")

    return images


def eval_map(expr: MapExpr, p: MPoint) -> MPoint:
    """
    Evaluates a map at one point, componentwise.

    Example:
        >>> eval_map(parse_map("x^2"), MPoint([3.0]))
        MPoint([9.0])
    """
    return MPoint(evaluate_rows(expr, p.coords[None, :])[0])


def eval_weight(expr: MapExpr, grid: np.ndarray) -> np.ndarray:
    """
    Evaluates a one-component weight expression over the grid variable t.
    """
    if expr.arity != 1:
        raise ValueError(f"A weight has one component, got {expr.arity}")
    grid = np.asarray(grid, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        values = _evaluate(expr.components[0], {"t": grid}, grid.shape)
    if not np.all(np.isfinite(values)):
        raise MapEvaluationError(f"Weight '{expr.source}' produced a non-finite value")
    return np.asarray(values, dtype=float)


def sample_box(
    domain, dimension: int, count: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """
    Deterministic grid over a domain box, plus uniform random points when a
    generator is given.

    The grid has an odd number of points per coordinate so that the midpoint
    (0 for symmetric domains) is always on it.

    Args:
        domain: Interval or box, see as_box.
        dimension (int): Point dimension.
        count (int): Approximate number of grid points (and of random points).
        rng (np.random.Generator, optional): Generator for the random part.

    Returns:
        np.ndarray: Points of shape (N, dimension).
    """
    box = as_box(domain, dimension)
    per_axis = max(3, int(round(count ** (1.0 / dimension))))
    per_axis += 1 - per_axis % 2
    axes = [np.linspace(low, high, per_axis) for low, high in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dimension)
    if rng is None:
        return grid
    random = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((count, dimension))
    return np.vstack([grid, random])


def spot_check_injective(expr: MapExpr, samples: int, domain, seed: int) -> InjectivityReport:
    """
    Searches sampled pairs x != y for T(x) == T(y).

    A collision refutes the declared injectivity; finding none is evidence,
    not proof.

    Args:
        expr (MapExpr): The map T.
        samples (int): Number of sampled points, >= 2 (half grid, half random).
        domain: Interval or box the points are drawn from.
        seed (int): Seed for the random half.

    Returns:
        InjectivityReport: Whether a collision was found, and up to 10 of them.
    """
    check_sample_count(samples, minimum=2, name="samples")
    rng = get_rng(seed)
    points = sample_box(domain, expr.arity, max(samples // 2, 1), rng)
    images = evaluate_rows(expr, points)

    collisions = []
    found = 0
    chunk = 512
    for start in range(0, len(points), chunk):
        block = slice(start, start + chunk)
        image_gap = np.max(np.abs(images[block, None, :] - images[None, :, :]), axis=-1)
        point_gap = np.max(np.abs(points[block, None, :] - points[None, :, :]), axis=-1)
        hits = np.argwhere((image_gap <= COLLISION_TOL) & (point_gap > DISTINCT_TOL))
        # Each unordered pair appears twice; keep i < j
        hits = hits[hits[:, 0] + start < hits[:, 1]]
        found += len(hits)
        for i, j in hits[: MAX_COLLISIONS - len(collisions)]:
            collisions.append((points[i + start].tolist(), points[j].tolist()))

    if found:
        logger.info("Injectivity of '%s' refuted by %d sampled collision(s)", expr.source, found)

    return InjectivityReport(refuted=found > 0, samples=len(points), collisions=collisions)
