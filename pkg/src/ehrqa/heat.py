"""Plain-text and SVG renderings of per-token data uncertainty."""

from __future__ import annotations

from html import escape
from typing import Sequence

from .surrogate import TokenRecord
from .uncertainty import ProgramUncertainty

SHOW_ABOVE = 0.01


def _display(token: str) -> str:
    return {"\n": ";", "<eos>": ""}.get(token, token)


def heat_text(records: Sequence[TokenRecord], pu: ProgramUncertainty, show_above: float = SHOW_ABOVE) -> str:
    """The greedy program with ``token[u_data]`` wherever u_data exceeds ``show_above``."""
    parts = []
    for rec, tu in zip(records, pu.tokens):
        tok = _display(rec.token)
        if tu.u_data > show_above:
            tok = f"{tok}[{tu.u_data:.2f}]"
        if tok:
            parts.append(tok)
    return " ".join(parts)


def heat_svg(records: Sequence[TokenRecord], pu: ProgramUncertainty, width: int = 900) -> str:
    """A wrapped row of token boxes shaded from white (0) to red (ln 2 and above)."""
    char_w, line_h, pad = 8, 22, 4
    x = y = pad
    cells = []
    top = max(max(pu.U), 0.6931471805599453)
    for rec, tu in zip(records, pu.tokens):
        tok = _display(rec.token)
        if not tok:
            continue
        w = char_w * len(tok) + 6
        if x + w > width - pad:
            x, y = pad, y + line_h
        shade = int(255 * (1 - min(tu.u_data / top, 1.0)))
        cells.append(
            f'<rect x="{x}" y="{y}" width="{w}" height="{line_h - 4}" fill="rgb(255,{shade},{shade})">'
            f"<title>u_data={tu.u_data:.4f}</title></rect>"
            f'<text x="{x + 3}" y="{y + line_h - 9}" font-family="monospace" font-size="13">{escape(tok)}</text>'
        )
        x += w + 2
    height = y + line_h + pad
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            + "".join(cells) + "</svg>\n")
