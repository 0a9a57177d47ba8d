"""Test observables: trigonometric polynomials in x times polynomials in v.

The compact string form used in configs looks like ``"v^2"``,
``"sin(x)*v"``, ``"0.5*cos(2x)*v^3 + sin(x)"``.  Terms are summed; each term
is an optional coefficient, an optional sin/cos factor, and an optional
power of v.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = ["Observable", "Term", "parse_observable", "CONST", "SIN", "COS"]

CONST, SIN, COS = 0, 1, 2

_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_TRIG = re.compile(r"^(sin|cos)\((?:(\d+)\s*\*?\s*)?x\)$")
_VPOW = re.compile(r"^v(?:\^(\d+))?$")


@dataclass(frozen=True)
class Term:
    coef: float
    trig: int        # CONST | SIN | COS
    freq: int        # x-frequency (ignored for CONST)
    vpow: int


@dataclass(frozen=True)
class Observable:
    terms: tuple[Term, ...]
    name: str

    def __call__(self, x, v):
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros(np.broadcast_shapes(x.shape, v.shape), dtype=np.float64)
        for t in self.terms:
            if t.trig == SIN:
                part = np.sin(t.freq * x)
            elif t.trig == COS:
                part = np.cos(t.freq * x)
            else:
                part = np.ones_like(x)
            if t.vpow:
                part = part * v ** t.vpow
            out += t.coef * part
        return out

    def shifted(self, offset: float) -> "Observable":
        """This observable plus a constant."""
        extra = Term(float(offset), CONST, 0, 0)
        return Observable(self.terms + (extra,), f"({self.name})+({offset:.12g})")

    def sup_norm(self) -> float:
        """A bound on sup |psi|; infinite when any term carries a power of v."""
        if any(t.vpow > 0 for t in self.terms):
            return float("inf")
        return float(sum(abs(t.coef) for t in self.terms))


def _parse_term(raw: str) -> Term:
    coef = 1.0
    trig = CONST
    freq = 0
    vpow = 0
    seen_coef = seen_trig = seen_v = False
    for factor in (p.strip() for p in raw.split("*")):
        if not factor:
            raise ValueError(f"empty factor in term {raw!r}")
        if _FLOAT.match(factor):
            if seen_coef:
                raise ValueError(f"two numeric factors in term {raw!r}")
            coef = float(factor)
            seen_coef = True
            continue
        m = _TRIG.match(factor)
        if m:
            if seen_trig:
                raise ValueError(f"two trig factors in term {raw!r}")
            trig = SIN if m.group(1) == "sin" else COS
            freq = int(m.group(2)) if m.group(2) else 1
            seen_trig = True
            continue
        m = _VPOW.match(factor)
        if m:
            if seen_v:
                raise ValueError(f"two velocity factors in term {raw!r}")
            vpow = int(m.group(1)) if m.group(1) else 1
            seen_v = True
            continue
        raise ValueError(f"cannot parse factor {factor!r} in term {raw!r}")
    return Term(coef, trig, freq, vpow)


def parse_observable(spec: str) -> Observable:
    """Parse the compact observable string form."""
    s = spec.strip()
    if not s:
        raise ValueError("empty observable spec")
    # split into signed terms at top level (no parens carry +/-)
    chunks = re.split(r"(?<![eE*(^])([+-])", "+" + s if s[0] not in "+-" else s)
    terms: list[Term] = []
    # chunks like ['', '+', 'v^2 ', '-', '0.5*sin(x)']
    it = iter(chunks)
    first = next(it)
    if first.strip():
        raise ValueError(f"malformed observable {spec!r}")
    for sign, body in zip(it, it):
        body = body.strip()
        if not body:
            raise ValueError(f"dangling sign in observable {spec!r}")
        t = _parse_term(body)
        if sign == "-":
            t = Term(-t.coef, t.trig, t.freq, t.vpow)
        terms.append(t)
    return Observable(tuple(terms), spec.strip())
