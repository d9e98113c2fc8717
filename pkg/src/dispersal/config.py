"""Experiment configuration: strict JSON schema and the resource grammar.

A resource is one of

* a number: constant resource,
* a string: arithmetic over ``x`` (and ``y`` in 2D) with ``+ - * / ^`` and parentheses,
* ``{"kind": "constant", "value": c}``,
* ``{"kind": "bump", "tau": t, "x0": [..], "r": r}``,
* ``{"kind": "expr", "expr": "..."}``.
"""

from __future__ import annotations

import ast
import json
import operator as op
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .mesh import Grid, build_grid, ball_nodes

EXPERIMENTS = (
    "eigen",
    "steady",
    "mismatch",
    "rescaled",
    "branching",
    "invasion",
    "comparison",
    "sharmonic",
    "impossibility",
    "acceptance",
)


class ConfigError(ValueError):
    """Invalid configuration; ``detail`` is a machine-readable record."""

    def __init__(self, message: str, **detail):
        super().__init__(message)
        self.detail = {"error": message, **detail}


# expression grammar

_BINARY = {ast.Add: op.add, ast.Sub: op.sub, ast.Mult: op.mul, ast.Div: op.truediv, ast.Pow: op.pow}
_UNARY = {ast.USub: op.neg, ast.UAdd: op.pos}


def compile_expression(text: str, variables=("x",)):
    """Parse ``text`` into a callable of the named coordinate arrays."""
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}", expression=text) from None

    def check(node):
        if isinstance(node, ast.Expression):
            check(node.body)
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            check(node.operand)
        elif isinstance(node, ast.Constant) and type(node.value) in (int, float):
            pass
        elif isinstance(node, ast.Name) and node.id in variables:
            pass
        else:
            raise ConfigError(
                f"unsupported element {type(node).__name__} in expression {text!r}", expression=text
            )

    check(tree)

    def evaluate(node, env):
        if isinstance(node, ast.Expression):
            return evaluate(node.body, env)
        if isinstance(node, ast.BinOp):
            return _BINARY[type(node.op)](evaluate(node.left, env), evaluate(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](evaluate(node.operand, env))
        if isinstance(node, ast.Constant):
            return float(node.value)
        return env[node.id]

    def func(*coords):
        env = dict(zip(variables, (np.asarray(c, dtype=float) for c in coords)))
        with np.errstate(all="ignore"):
            return evaluate(tree, env)

    return func


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConstantSigma(_Strict):
    kind: Literal["constant"]
    value: float = Field(ge=0)


class BumpSigma(_Strict):
    kind: Literal["bump"]
    tau: float = Field(ge=0)
    x0: list[float]
    r: float = Field(gt=0)


class ExprSigma(_Strict):
    kind: Literal["expr"]
    expr: str


SigmaSpec = Union[float, str, Annotated[Union[ConstantSigma, BumpSigma, ExprSigma], Field(discriminator="kind")]]


class GridConfig(_Strict):
    dim: Literal[1, 2] = 1
    bounds: list = Field(default_factory=lambda: [-1.0, 1.0])
    n: int = Field(default=256, ge=8)

    def build(self) -> Grid:
        return build_grid(self.dim, self.bounds, self.n)


class Tolerances(_Strict):
    bisection: Optional[float] = Field(default=None, gt=0)
    steady: Optional[float] = Field(default=None, gt=0)


class ExperimentConfig(_Strict):
    experiment: Literal[EXPERIMENTS]
    grid: GridConfig = Field(default_factory=GridConfig)
    s: Optional[float] = Field(default=None, gt=0, le=1)
    s_prime: Optional[float] = Field(default=None, gt=0, lt=1)
    sigma: Optional[SigmaSpec] = None
    tolerances: Tolerances = Field(default_factory=Tolerances)
    seed: int = 0
    out: Optional[str] = None
    x0: Optional[list[float]] = None
    r: Optional[float] = Field(default=None, gt=0)
    levels: int = Field(default=6, ge=0, le=20)
    eps: float = Field(default=1e-4, gt=0, le=1e-2)
    T: float = Field(default=1.0, gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    pairs: int = Field(default=10, ge=1)
    radii: list[float] = Field(default_factory=lambda: [1.5, 3.0, 6.0])
    M: float = Field(default=100.0, gt=0)
    fast: bool = False

    @field_validator("radii")
    @classmethod
    def _radii(cls, value):
        if not value or any(not r > 1 for r in value):
            raise ValueError("every radius must exceed 1")
        return value

    @model_validator(mode="after")
    def _orders(self):
        if self.s_prime is not None and self.s is not None and not self.s < self.s_prime:
            raise ValueError("s_prime must exceed s")
        return self


def sigma_field(spec, grid: Grid) -> np.ndarray:
    """Evaluate a resource descriptor on ``grid`` and reject negative values."""
    if spec is None:
        raise ConfigError("no resource given")
    if isinstance(spec, (int, float)):
        values = np.full(grid.size, float(spec))
    elif isinstance(spec, str):
        values = grid.evaluate(compile_expression(spec, ("x", "y")[: grid.dim]))
    elif isinstance(spec, ConstantSigma):
        values = np.full(grid.size, spec.value)
    elif isinstance(spec, ExprSigma):
        values = grid.evaluate(compile_expression(spec.expr, ("x", "y")[: grid.dim]))
    elif isinstance(spec, BumpSigma):
        values = spec.tau * ball_nodes(grid, spec.x0, spec.r).chi
    else:
        raise ConfigError(f"unrecognised resource {spec!r}")
    if not np.all(np.isfinite(values)):
        k = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ConfigError("resource is not finite", node=grid.nodes[k].tolist())
    if np.any(values < 0):
        k = int(np.argmin(values))
        raise ConfigError(
            f"resource is negative ({values[k]:.6g}) at node {grid.nodes[k].tolist()}",
            node=grid.nodes[k].tolist(),
            value=float(values[k]),
        )
    return values


def sigma_callable(spec, dim: int = 1):
    """Resource as a function of the coordinates (numbers and expressions only)."""
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda *coords: np.full(np.shape(coords[0]), value)
    if isinstance(spec, ConstantSigma):
        return sigma_callable(spec.value, dim)
    if isinstance(spec, str):
        return compile_expression(spec, ("x", "y")[:dim])
    if isinstance(spec, ExprSigma):
        return compile_expression(spec.expr, ("x", "y")[:dim])
    raise ConfigError("this experiment needs a constant or expression resource")


def sigma_descriptor(spec):
    if spec is None or isinstance(spec, (int, float, str)):
        return spec
    return spec.model_dump()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate JSON text; unknown keys and negative resources are errors."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
            line=exc.lineno,
            column=exc.colno,
        ) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        if first["type"] == "extra_forbidden":
            msg = f"unknown key {where!r}"
        else:
            msg = f"{where}: {first['msg']}"
        raise ConfigError(msg, location=where, errors=len(exc.errors())) from None
    try:
        grid = cfg.grid.build()
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    if cfg.sigma is not None:
        try:
            sigma_field(cfg.sigma, grid)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"sigma: {exc}") from None
    return cfg
