"""Time-series graph rendering: a small DEF/CDEF/LINE/AREA language.

A graph body is a list of instructions. DEF binds a variable name to an
archived series, CDEF derives a new series with RPN arithmetic, and LINE
and AREA plot a bound name in a solid color. Rendering produces either a
standalone SVG document or a PNG raster of exactly the requested size; for
identical inputs the SVG text is byte-identical.
"""

from __future__ import annotations

import io
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .rrd import ConsFunc, Rrd


class GraphScriptError(ValueError):
    """A graph body line does not parse or reference-check."""


class UndefinedVname(GraphScriptError):
    pass


class BadRpn(GraphScriptError):
    pass


class BadTimeSpec(ValueError):
    """A time expression is neither -N<unit> nor a decimal epoch."""


class BadRenderRequest(ValueError):
    """Requested raster dimensions are outside the supported range."""


_TIME_UNITS = {
    "s": 1.0,
    "m": 60.0,
    "h": 3600.0,
    "d": 86400.0,
    "w": 7 * 86400.0,
    "y": 365 * 86400.0,
}

_VNAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_COLOR_RE = re.compile(r"^#[0-9A-Fa-f]{6}$")
_RELATIVE_RE = re.compile(r"^-(\d+(?:\.\d+)?)([smhdwy])$")
_NUMBER_RE = re.compile(r"^-?(\d+\.?\d*|\.\d+)$")

MIN_WIDTH, MAX_WIDTH = 96, 4096
MIN_HEIGHT, MAX_HEIGHT = 64, 4096


def parse_at_time(text: str, now: float | None = None) -> float:
    """Resolve a time expression to epoch seconds.

    `-N<unit>` is relative to `now` with units s, m, h, d, w (7 days) and
    y (365 days); anything else must be an absolute decimal epoch.
    """
    if now is None:
        now = time.time()
    t = text.strip()
    if t == "now":
        return float(now)
    m = _RELATIVE_RE.match(t)
    if m:
        return float(now) - float(m.group(1)) * _TIME_UNITS[m.group(2)]
    if _NUMBER_RE.match(t) and not t.startswith("-"):
        return float(t)
    raise BadTimeSpec(f"cannot parse time {text!r}")


@dataclass(frozen=True)
class PlotElement:
    kind: str               # "LINE" or "AREA"
    vname: str
    color: str
    width: float = 1.0      # stroke width, LINE only
    legend: str | None = None


@dataclass(frozen=True)
class GraphProgram:
    defs: dict              # vname -> (mib id, ConsFunc)
    cdefs: dict             # vname -> rpn token tuple, in definition order
    elements: tuple         # PlotElements in script order

    def vnames(self):
        return list(self.defs) + list(self.cdefs)


def parse_graph_script(lines) -> GraphProgram:
    """Parse instruction lines; every reference must already be defined."""
    defs: dict = {}
    cdefs: dict = {}
    elements = []
    for raw in lines:
        line = raw.strip()
        if not line:
            raise GraphScriptError("blank instruction line")
        head, _, rest = line.partition(":")
        if head == "DEF":
            vname, mib_id, cf = _parse_def(rest, line)
            _claim(vname, defs, cdefs, line)
            defs[vname] = (mib_id, cf)
        elif head == "CDEF":
            vname, tokens = _parse_cdef(rest, line, set(defs) | set(cdefs))
            _claim(vname, defs, cdefs, line)
            cdefs[vname] = tokens
        elif head == "AREA" or re.fullmatch(r"LINE\d?", head):
            elements.append(_parse_plot(head, rest, line, set(defs) | set(cdefs)))
        else:
            raise GraphScriptError(f"unknown instruction {head!r} in {line!r}")
    return GraphProgram(defs=defs, cdefs=cdefs, elements=tuple(elements))


def _claim(vname: str, defs: dict, cdefs: dict, line: str) -> None:
    if vname in defs or vname in cdefs:
        raise GraphScriptError(f"duplicate vname {vname!r} in {line!r}")


def _parse_def(rest: str, line: str):
    # DEF:vname=mib-id:CF
    m = re.fullmatch(r"([^=]+)=([^:]+):([^:]+)", rest)
    if not m:
        raise GraphScriptError(f"bad DEF {line!r}, want DEF:vname=mib:CF")
    vname, mib_id, cf_text = m.group(1), m.group(2), m.group(3)
    if not _VNAME_RE.match(vname):
        raise GraphScriptError(f"bad vname {vname!r} in {line!r}")
    try:
        cf = ConsFunc(cf_text)
    except ValueError:
        raise GraphScriptError(f"bad consolidation {cf_text!r} in {line!r}") from None
    return vname, mib_id, cf


def _parse_cdef(rest: str, line: str, known: set):
    # CDEF:vname=tok,tok,...  with vnames, numbers and + - * /
    name, eq, expr = rest.partition("=")
    if not eq or not _VNAME_RE.match(name):
        raise GraphScriptError(f"bad CDEF {line!r}, want CDEF:vname=rpn")
    tokens = []
    depth = 0
    for tok in expr.split(","):
        tok = tok.strip()
        if tok in ("+", "-", "*", "/"):
            if depth < 2:
                raise BadRpn(f"operator {tok!r} underflows the stack in {line!r}")
            tokens.append(("op", tok))
            depth -= 1
        elif _NUMBER_RE.match(tok):
            tokens.append(("const", float(tok)))
            depth += 1
        elif _VNAME_RE.match(tok):
            if tok not in known:
                raise UndefinedVname(f"vname {tok!r} not defined before {line!r}")
            tokens.append(("var", tok))
            depth += 1
        else:
            raise BadRpn(f"bad token {tok!r} in {line!r}")
    if depth != 1:
        raise BadRpn(f"expression leaves {depth} values on the stack in {line!r}")
    return name, tuple(tokens)


def _parse_plot(head: str, rest: str, line: str, known: set) -> PlotElement:
    # LINE[w]:vname#RRGGBB[:legend]  /  AREA:vname#RRGGBB[:legend]
    body, sep, legend = rest.partition(":")
    m = re.fullmatch(r"([A-Za-z_][A-Za-z0-9_]*)(#[0-9A-Fa-f]{6})", body)
    if not m:
        raise GraphScriptError(f"bad plot target {body!r} in {line!r}, want vname#RRGGBB")
    vname, color = m.group(1), m.group(2)
    if vname not in known:
        raise UndefinedVname(f"vname {vname!r} not defined before {line!r}")
    if head == "AREA":
        kind, width = "AREA", 1.0
    else:
        kind = "LINE"
        width = float(head[4:]) if len(head) > 4 else 1.0
    return PlotElement(kind=kind, vname=vname, color=color.upper(),
                       width=width, legend=legend if sep else None)


def eval_cdef(tokens, env: dict, n: int):
    """Evaluate an RPN token tuple elementwise over arrays of length n.

    Unknown (NaN) operands propagate; division by zero is unknown, not
    infinite.
    """
    stack = []
    for kind, val in tokens:
        if kind == "const":
            stack.append(np.full(n, float(val)))
        elif kind == "var":
            stack.append(np.asarray(env[val], dtype=float))
        else:
            b = stack.pop()
            a = stack.pop()
            if val == "+":
                stack.append(a + b)
            elif val == "-":
                stack.append(a - b)
            elif val == "*":
                stack.append(a * b)
            else:
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    out = a / b
                stack.append(np.where(b == 0, np.nan, out))
    if len(stack) != 1:
        raise BadRpn(f"expression leaves {len(stack)} values on the stack")
    return stack[0]


# -- rendering ------------------------------------------------------------

_BG = "#FFFFFF"
_FRAME = "#303030"
_GRID = "#D0D0D0"
_TEXT = "#202020"
_FONT_H = 10


@dataclass
class _Plan:
    """Resolved geometry shared by the SVG writer and the PNG painter."""
    width: int
    height: int
    title: str
    px0: float = 0.0
    py0: float = 0.0
    px1: float = 0.0
    py1: float = 0.0
    grid_h: list = field(default_factory=list)   # (y, label)
    grid_v: list = field(default_factory=list)   # (x, label)
    areas: list = field(default_factory=list)    # (color, [run of (x, y)], baseline y)
    lines: list = field(default_factory=list)    # (color, width, [runs])
    legend: list = field(default_factory=list)   # (kind, color, text)


def _resample(src_times: np.ndarray, src_vals: np.ndarray, dst_times: np.ndarray,
              span: float) -> np.ndarray:
    """Map rows onto a target time grid; times are window end stamps."""
    if len(src_times) == 0:
        return np.full(len(dst_times), np.nan)
    idx = np.searchsorted(src_times, dst_times - 1e-9, side="left")
    out = np.full(len(dst_times), np.nan)
    for k, i in enumerate(idx):
        if i < len(src_times) and src_times[i] - span <= dst_times[k] + 1e-9:
            out[k] = src_vals[i]
    return out


def _series_for(program: GraphProgram, rrd: Rrd, start: float, end: float):
    """Fetch every DEF, align everything on the finest grid, run CDEFs."""
    fetched = {}
    for vname, (mib_id, cf) in program.defs.items():
        fetched[vname] = rrd.fetch(cf, start, end), mib_id
    if fetched:
        finest = min(res.granularity for res, _ in fetched.values())
        base = next(res for res, _ in fetched.values() if res.granularity == finest)
        times = base.times
    else:
        times = np.array([])
    env = {}
    for vname, (res, mib_id) in fetched.items():
        series = res.values.get(mib_id)
        if series is None:
            series = np.full(len(res.times), np.nan)
        env[vname] = _resample(res.times, series, times, res.granularity)
    for vname, tokens in program.cdefs.items():
        env[vname] = eval_cdef(tokens, env, len(times))
    return times, env


def _nice_step(span: float, target: int) -> float:
    if span <= 0 or not math.isfinite(span):
        return 1.0
    raw = span / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if mag * mult >= raw - 1e-12:
            return mag * mult
    return mag * 10.0


_X_STEPS = [60, 120, 300, 600, 1800, 3600, 7200, 14400, 43200,
            86400, 2 * 86400, 7 * 86400, 30 * 86400, 365 * 86400]


def _x_ticks(start: float, end: float, max_ticks: int):
    span = end - start
    step = next((s for s in _X_STEPS if span / s <= max_ticks), _X_STEPS[-1])
    ticks = []
    t = math.ceil(start / step) * step
    while t <= end + 1e-9:
        if step >= 86400:
            label = time.strftime("%m/%d", time.localtime(t))
        else:
            label = time.strftime("%H:%M", time.localtime(t))
        ticks.append((t, label))
        t += step
    return ticks


def _fmt_y(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e6 or abs(v) < 1e-3:
        return f"{v:.1e}"
    text = f"{v:.2f}".rstrip("0").rstrip(".")
    return text if text else "0"


def build_plan(program: GraphProgram, rrd: Rrd, *, title: str, width: int,
               height: int, start: float, end: float) -> _Plan:
    if not MIN_WIDTH <= width <= MAX_WIDTH or not MIN_HEIGHT <= height <= MAX_HEIGHT:
        raise BadRenderRequest(
            f"size {width}x{height} outside "
            f"{MIN_WIDTH}x{MIN_HEIGHT}..{MAX_WIDTH}x{MAX_HEIGHT}")
    if not end > start:
        raise BadTimeSpec(f"empty time range [{start}, {end}]")

    times, env = _series_for(program, rrd, start, end)
    plan = _Plan(width=width, height=height, title=title)
    legend_rows = sum(1 for el in program.elements if el.legend)
    plan.px0 = 64.0
    plan.py0 = 22.0
    plan.px1 = width - 12.0
    # legend rows that would squeeze the plot area away are dropped, so any
    # size within the advertised bounds stays renderable
    max_rows = int((height - 26.0 - plan.py0 - 10.0) // 13.0)
    legend_rows = min(legend_rows, max(0, max_rows))
    plan.py1 = height - 26.0 - 13.0 * legend_rows
    if plan.px1 - plan.px0 < 20 or plan.py1 - plan.py0 < 10:
        raise BadRenderRequest(f"size {width}x{height} leaves no plot area")

    plotted = [env[el.vname] for el in program.elements if el.vname in env]
    finite = np.concatenate([s[np.isfinite(s)] for s in plotted]) if plotted else np.array([])
    if finite.size:
        lo = min(0.0, float(finite.min()))
        hi = float(finite.max())
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = 0.0, 1.0
    ystep = _nice_step(hi - lo, 5)
    hi = math.ceil(hi / ystep - 1e-9) * ystep
    lo = math.floor(lo / ystep + 1e-9) * ystep
    if hi <= lo:
        hi = lo + ystep

    def xmap(t: float) -> float:
        return plan.px0 + (t - start) / (end - start) * (plan.px1 - plan.px0)

    def ymap(v: float) -> float:
        v = min(max(v, lo), hi)
        return plan.py1 - (v - lo) / (hi - lo) * (plan.py1 - plan.py0)

    tick = lo
    while tick <= hi + 1e-9 * max(1.0, abs(hi)):
        plan.grid_h.append((ymap(tick), _fmt_y(tick)))
        tick += ystep
    for t, label in _x_ticks(start, end, max(2, int((plan.px1 - plan.px0) / 60))):
        plan.grid_v.append((xmap(t), label))

    baseline = ymap(0.0)
    ordered = [el for el in program.elements if el.kind == "AREA"] + \
              [el for el in program.elements if el.kind == "LINE"]
    for el in ordered:
        series = env.get(el.vname)
        if series is None:
            continue
        runs = []
        current = []
        for t, v in zip(times, series):
            if math.isfinite(v):
                current.append((xmap(t), ymap(v)))
            elif current:
                runs.append(current)
                current = []
        if current:
            runs.append(current)
        if el.kind == "AREA":
            for run in runs:
                plan.areas.append((el.color, run, baseline))
        else:
            plan.lines.append((el.color, el.width, runs))
        if el.legend and len(plan.legend) < legend_rows:
            plan.legend.append((el.kind, el.color, el.legend))
    return plan


def _svg_from_plan(plan: _Plan) -> str:
    def pt(v: float) -> str:
        return f"{v:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{plan.width}" '
        f'height="{plan.height}" viewBox="0 0 {plan.width} {plan.height}">',
        f'<rect x="0" y="0" width="{plan.width}" height="{plan.height}" fill="{_BG}"/>',
    ]
    for y, _ in plan.grid_h:
        out.append(f'<line x1="{pt(plan.px0)}" y1="{pt(y)}" x2="{pt(plan.px1)}" '
                   f'y2="{pt(y)}" stroke="{_GRID}" stroke-width="1"/>')
    for x, _ in plan.grid_v:
        out.append(f'<line x1="{pt(x)}" y1="{pt(plan.py0)}" x2="{pt(x)}" '
                   f'y2="{pt(plan.py1)}" stroke="{_GRID}" stroke-width="1"/>')
    for color, run, baseline in plan.areas:
        pts = [f"{pt(run[0][0])},{pt(baseline)}"]
        pts += [f"{pt(x)},{pt(y)}" for x, y in run]
        pts.append(f"{pt(run[-1][0])},{pt(baseline)}")
        out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" stroke="none"/>')
    for color, width, runs in plan.lines:
        for run in runs:
            if len(run) == 1:
                x, y = run[0]
                out.append(f'<circle cx="{pt(x)}" cy="{pt(y)}" r="{pt(width)}" '
                           f'fill="{color}"/>')
                continue
            pts = " ".join(f"{pt(x)},{pt(y)}" for x, y in run)
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="{pt(width)}"/>')
    out.append(f'<rect x="{pt(plan.px0)}" y="{pt(plan.py0)}" '
               f'width="{pt(plan.px1 - plan.px0)}" height="{pt(plan.py1 - plan.py0)}" '
               f'fill="none" stroke="{_FRAME}" stroke-width="1"/>')
    for y, label in plan.grid_h:
        out.append(f'<text x="{pt(plan.px0 - 4)}" y="{pt(y + 3)}" font-family="monospace" '
                   f'font-size="{_FONT_H}" fill="{_TEXT}" text-anchor="end">{_esc(label)}</text>')
    for x, label in plan.grid_v:
        out.append(f'<text x="{pt(x)}" y="{pt(plan.py1 + 12)}" font-family="monospace" '
                   f'font-size="{_FONT_H}" fill="{_TEXT}" text-anchor="middle">{_esc(label)}</text>')
    out.append(f'<text x="{pt(plan.width / 2)}" y="14" font-family="monospace" '
               f'font-size="{_FONT_H + 1}" fill="{_TEXT}" '
               f'text-anchor="middle">{_esc(plan.title)}</text>')
    ly = plan.py1 + 24
    for kind, color, text in plan.legend:
        out.append(f'<rect x="{pt(plan.px0)}" y="{pt(ly)}" width="8" height="8" '
                   f'fill="{color}"/>')
        out.append(f'<text x="{pt(plan.px0 + 12)}" y="{pt(ly + 8)}" '
                   f'font-family="monospace" font-size="{_FONT_H}" '
                   f'fill="{_TEXT}">{_esc(text)}</text>')
        ly += 13
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _png_from_plan(plan: _Plan) -> bytes:
    img = Image.new("RGB", (plan.width, plan.height), _BG)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for y, _ in plan.grid_h:
        draw.line([(plan.px0, y), (plan.px1, y)], fill=_GRID)
    for x, _ in plan.grid_v:
        draw.line([(x, plan.py0), (x, plan.py1)], fill=_GRID)
    for color, run, baseline in plan.areas:
        pts = [(run[0][0], baseline)] + run + [(run[-1][0], baseline)]
        if len(pts) >= 3:
            draw.polygon(pts, fill=color)
    for color, width, runs in plan.lines:
        for run in runs:
            if len(run) == 1:
                x, y = run[0]
                r = max(1, int(width))
                draw.ellipse([x - r, y - r, x + r, y + r], fill=color)
            else:
                draw.line(run, fill=color, width=max(1, int(round(width))))
    draw.rectangle([plan.px0, plan.py0, plan.px1, plan.py1], outline=_FRAME)
    for y, label in plan.grid_h:
        w = draw.textlength(label, font=font)
        draw.text((plan.px0 - 4 - w, y - 5), label, fill=_TEXT, font=font)
    for x, label in plan.grid_v:
        w = draw.textlength(label, font=font)
        draw.text((x - w / 2, plan.py1 + 4), label, fill=_TEXT, font=font)
    tw = draw.textlength(plan.title, font=font)
    draw.text(((plan.width - tw) / 2, 4), plan.title, fill=_TEXT, font=font)
    ly = plan.py1 + 18
    for kind, color, text in plan.legend:
        draw.rectangle([plan.px0, ly, plan.px0 + 8, ly + 8], fill=color)
        draw.text((plan.px0 + 12, ly - 1), text, fill=_TEXT, font=font)
        ly += 13
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def render_svg(rrd: Rrd, body_lines, *, title: str, width: int, height: int,
               start: float, end: float) -> str:
    program = parse_graph_script(body_lines)
    plan = build_plan(program, rrd, title=title, width=width, height=height,
                      start=start, end=end)
    return _svg_from_plan(plan)


def render_png(rrd: Rrd, body_lines, *, title: str, width: int, height: int,
               start: float, end: float) -> bytes:
    program = parse_graph_script(body_lines)
    plan = build_plan(program, rrd, title=title, width=width, height=height,
                      start=start, end=end)
    return _png_from_plan(plan)
