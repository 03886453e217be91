"""Scene files and output emission.

Scene format: line-oriented sections; `#` starts a comment.  Example::

    [scene]
    dim = 2
    kind = sode
    chart = box(-50,50; 0.02,50)
    exclude_zero_section = false

    [sode]
    S1 = "2*y1*y2/x2"
    S2 = "(y2^2 - y1^2)/x2"

    [options]
    seed = 1234
    abs_tol = 1e-10
    rel_tol = 1e-8
    blowup = 1e8
    horizon = 50

Field sections: exactly one of [sode] (keys S1..Sn), [connection] (keys
G_<k>_<i>), [finsler] (key L).  Expression values are double-quoted.  The
[sode] section may declare `degree` and `homogeneity`; [finsler] accepts
`domain = whole` to override the zero-section-excluded default.

Emission: CSV with header t,x1..xn,y1..yn at 17 significant digits with LF
newlines; SVG for 2-d scenes (geodesics stroked dark, a-curves light); JSON
reports with sorted keys.  All files are written atomically (temp + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile

import numpy as np

from .core import (
    Box,
    ConnectionField,
    EXCLUDES_ZERO,
    Scene,
    SceneOptions,
    SodeField,
    WHOLE_BUNDLE,
)
from .errors import ExprSyntaxError, SceneError
from .expr import parse as parse_expression
from .finsler import FinslerStructure

_SECTIONS = ("scene", "sode", "connection", "finsler", "options")
_FIELD_SECTIONS = ("sode", "connection", "finsler")
_BOX_RE = re.compile(r"^box\((.*)\)$")


def _parse_box(text: str, dim: int, line: int) -> Box:
    m = _BOX_RE.match(text.strip())
    if not m:
        raise SceneError(f"chart must look like box(a1,b1; ...; an,bn), got {text!r}", line)
    pairs = [p.strip() for p in m.group(1).split(";") if p.strip()]
    if len(pairs) != dim:
        raise SceneError(f"chart box has {len(pairs)} intervals, expected {dim}", line)
    lo, hi = [], []
    for p in pairs:
        parts = p.split(",")
        if len(parts) != 2:
            raise SceneError(f"bad chart interval {p!r}", line)
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise SceneError(f"bad chart interval {p!r}: {exc}", line) from exc
        if not a < b:
            raise SceneError(f"empty chart interval {p!r}", line)
        lo.append(a)
        hi.append(b)
    return Box(np.array(lo), np.array(hi))


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def parse_scene_text(text: str, origin: str = "<scene>") -> Scene:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in _SECTIONS:
                raise SceneError(f"unknown section [{name}]", lineno)
            if name in sections:
                raise SceneError(f"duplicate section [{name}]", lineno)
            sections[name] = {}
            current = name
            continue
        if current is None:
            raise SceneError(f"key outside any section: {line!r}", lineno)
        if "=" not in line:
            raise SceneError(f"expected key = value, got {line!r}", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in sections[current]:
            raise SceneError(f"duplicate key {key!r} in [{current}]", lineno)
        sections[current][key] = (value, lineno)

    if "scene" not in sections:
        raise SceneError("missing [scene] section")
    head = sections["scene"]

    def take(section, key, default=None, required=False):
        entry = sections.get(section, {}).get(key)
        if entry is None:
            if required:
                raise SceneError(f"missing key {key!r} in [{section}]")
            return default, None
        return entry

    dim_text, dim_line = take("scene", "dim", required=True)
    try:
        dim = int(dim_text)
    except ValueError as exc:
        raise SceneError(f"dim must be an integer, got {dim_text!r}", dim_line) from exc
    if dim < 1:
        raise SceneError("dim must be positive", dim_line)

    kind, kind_line = take("scene", "kind", required=True)
    if kind not in _FIELD_SECTIONS:
        raise SceneError(f"kind must be one of {_FIELD_SECTIONS}, got {kind!r}", kind_line)

    present = [s for s in _FIELD_SECTIONS if s in sections]
    if len(present) != 1:
        raise SceneError(
            f"exactly one field section required, found {present or 'none'}"
        )
    if present[0] != kind:
        raise SceneError(f"kind = {kind} but the field section is [{present[0]}]")

    chart = None
    chart_text, chart_line = take("scene", "chart")
    if chart_text is not None:
        chart = _parse_box(chart_text, dim, chart_line)

    excl_text, excl_line = take("scene", "exclude_zero_section")
    exclude_zero = None
    if excl_text is not None:
        lowered = excl_text.lower()
        if lowered not in ("true", "false"):
            raise SceneError(f"exclude_zero_section must be true/false", excl_line)
        exclude_zero = lowered == "true"

    options = _parse_options(sections.get("options", {}))

    def expression_value(section, key):
        raw, line = sections[section][key]
        if not (raw.startswith('"') and raw.endswith('"') and len(raw) >= 2):
            raise SceneError(f"{key} must be a double-quoted expression", line)
        try:
            return parse_expression(raw[1:-1], dim=dim)
        except ExprSyntaxError as exc:
            raise SceneError(f"{key}: {exc}", line) from exc

    if kind == "sode":
        body = sections["sode"]
        exprs = []
        for k in range(1, dim + 1):
            if f"S{k}" not in body:
                raise SceneError(f"missing S{k} for dim = {dim}")
            exprs.append(expression_value("sode", f"S{k}"))
        for key, (_, line) in body.items():
            if re.fullmatch(r"S\d+", key) and not 1 <= int(key[1:]) <= dim:
                raise SceneError(f"{key} does not fit dim = {dim} (dimension mismatch)", line)
            if not re.fullmatch(r"S\d+|degree|homogeneity", key):
                raise SceneError(f"unknown key {key!r} in [sode]", line)
        degree_text, degree_line = take("sode", "degree")
        degree = None
        if degree_text is not None:
            try:
                degree = float(degree_text)
            except ValueError as exc:
                raise SceneError(f"bad degree {degree_text!r}", degree_line) from exc
        hom_kind, _ = take("sode", "homogeneity")
        domain = EXCLUDES_ZERO if exclude_zero else WHOLE_BUNDLE
        field = SodeField.from_expressions(
            exprs, domain=domain, chart=chart, degree=degree, kind=hom_kind
        )
        return Scene(n=dim, kind=kind, field=field, chart=chart, options=options)

    if kind == "connection":
        body = sections["connection"]
        rows = []
        for k in range(1, dim + 1):
            row = []
            for i in range(1, dim + 1):
                key = f"G_{k}_{i}"
                if key not in body:
                    raise SceneError(f"missing {key} for dim = {dim}")
                row.append(expression_value("connection", key))
            rows.append(row)
        for key, (_, line) in body.items():
            m = re.fullmatch(r"G_(\d+)_(\d+)", key)
            if not m:
                raise SceneError(f"unknown key {key!r} in [connection]", line)
            if not (1 <= int(m.group(1)) <= dim and 1 <= int(m.group(2)) <= dim):
                raise SceneError(f"{key} does not fit dim = {dim} (dimension mismatch)", line)
        domain = EXCLUDES_ZERO if exclude_zero else WHOLE_BUNDLE
        field = ConnectionField.from_expressions(rows, domain=domain, chart=chart)
        return Scene(n=dim, kind=kind, field=field, chart=chart, options=options)

    body = sections["finsler"]
    if "L" not in body:
        raise SceneError("missing L in [finsler]")
    for key, (_, line) in body.items():
        if key not in ("L", "domain"):
            raise SceneError(f"unknown key {key!r} in [finsler]", line)
    L = expression_value("finsler", "L")
    domain_text, domain_line = take("finsler", "domain")
    if domain_text is None:
        domain = WHOLE_BUNDLE if exclude_zero is False else EXCLUDES_ZERO
    elif domain_text in ("whole", WHOLE_BUNDLE):
        domain = WHOLE_BUNDLE
    elif domain_text in ("nozero", EXCLUDES_ZERO, "reduced"):
        domain = EXCLUDES_ZERO
    else:
        raise SceneError(f"bad finsler domain {domain_text!r}", domain_line)
    field = FinslerStructure(L, dim, domain=domain, chart=chart)
    return Scene(n=dim, kind=kind, field=field, chart=chart, options=options)


def _parse_options(body: dict) -> SceneOptions:
    defaults = SceneOptions()
    known = {
        "seed": int,
        "abs_tol": float,
        "rel_tol": float,
        "blowup": float,
        "horizon": float,
    }
    values = {}
    for key, (text, line) in body.items():
        if key not in known:
            raise SceneError(f"unknown option {key!r}", line)
        try:
            values[key] = known[key](text)
        except ValueError as exc:
            raise SceneError(f"bad option {key} = {text!r}: {exc}", line) from exc
    return SceneOptions(
        seed=values.get("seed", defaults.seed),
        abs_tol=values.get("abs_tol", defaults.abs_tol),
        rel_tol=values.get("rel_tol", defaults.rel_tol),
        blowup=values.get("blowup", defaults.blowup),
        horizon=values.get("horizon", defaults.horizon),
    )


def load_scene(path: str) -> tuple[Scene, str]:
    """Parse a scene file; returns (scene, sha256 hex digest of the bytes)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SceneError(f"cannot read scene file {path}: {exc}") from exc
    digest = hashlib.sha256(data).hexdigest()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SceneError(f"scene file {path} is not UTF-8: {exc}") from exc
    return parse_scene_text(text, origin=path), digest


def write_scene_text(scene_kind: str, dim: int, expressions: dict, *,
                     chart: Box | None = None, exclude_zero: bool | None = None,
                     options: SceneOptions | None = None) -> str:
    """Compose a scene file (used by the perturb subcommand)."""
    lines = ["[scene]", f"dim = {dim}", f"kind = {scene_kind}"]
    if chart is not None:
        pairs = "; ".join(f"{lo:.17g},{hi:.17g}" for lo, hi in zip(chart.lo, chart.hi))
        lines.append(f"chart = box({pairs})")
    if exclude_zero is not None:
        lines.append(f"exclude_zero_section = {'true' if exclude_zero else 'false'}")
    lines.append("")
    lines.append(f"[{scene_kind}]")
    for key, text in expressions.items():
        lines.append(f'{key} = "{text}"')
    if options is not None:
        lines.append("")
        lines.append("[options]")
        for key, value in options.to_dict().items():
            text = f"{value:g}" if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Emission


def write_text_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sodeflow-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def trajectory_csv(n: int, times, states) -> str:
    """CSV with header t,x1..xn,y1..yn, 17 significant digits, LF newlines."""
    header = "t," + ",".join(f"x{i+1}" for i in range(n)) + "," + ",".join(
        f"y{i+1}" for i in range(n)
    )
    rows = [header]
    for t, z in zip(times, states):
        rows.append(",".join([_fmt(t)] + [_fmt(v) for v in z]))
    return "\n".join(rows) + "\n"


def parse_trajectory_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header[0] != "t":
        raise ValueError("not a trajectory CSV (missing t column)")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return data[:, 0], data[:, 1:]


def plume_geodesics_csv(data) -> str:
    rows = ["direction,a,eps," + ",".join(f"x{i+1}" for i in range(data.p.size))]
    for iv in range(len(data.directions)):
        for ia, a in enumerate(data.a_grid):
            for ie, eps in enumerate(data.eps_grid):
                point = data.geodesics[iv, ia, ie]
                if not np.all(np.isfinite(point)):
                    continue
                rows.append(
                    ",".join([str(iv), _fmt(a), _fmt(eps)] + [_fmt(v) for v in point])
                )
    return "\n".join(rows) + "\n"


def plume_acurves_csv(data) -> str:
    rows = ["direction,eps,a," + ",".join(f"x{i+1}" for i in range(data.p.size))]
    for iv in range(len(data.directions)):
        for ie, eps in enumerate(data.eps_grid):
            for ia, a in enumerate(data.a_grid):
                point = data.acurves[iv, ie, ia]
                if not np.all(np.isfinite(point)):
                    continue
                rows.append(
                    ",".join([str(iv), _fmt(eps), _fmt(a)] + [_fmt(v) for v in point])
                )
    return "\n".join(rows) + "\n"


def _svg_path(points: np.ndarray, transform) -> str:
    cmds = []
    for i, p in enumerate(points):
        if not np.all(np.isfinite(p)):
            continue
        X, Y = transform(p)
        cmds.append(f"{'M' if not cmds else 'L'} {X:.3f} {Y:.3f}")
    return " ".join(cmds)


def plume_svg(data, width: int = 800, height: int = 600) -> str:
    """Plume figure: geodesic curves stroked dark, a-curves stroked light."""
    if data.p.size != 2:
        raise ValueError("SVG emission is for 2-d scenes only")
    pts = [data.p.reshape(1, 2)]
    for arr in (data.geodesics, data.acurves):
        flat = arr.reshape(-1, 2)
        pts.append(flat[np.all(np.isfinite(flat), axis=1)])
    cloud = np.vstack([p for p in pts if len(p)])
    lo = cloud.min(axis=0)
    hi = cloud.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 30.0

    def transform(p):
        u = (p - lo) / span
        return margin + u[0] * (width - 2 * margin), height - margin - u[1] * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for iv in range(len(data.directions)):
        for ie in range(len(data.eps_grid)):
            d = _svg_path(data.acurves[iv, ie], transform)
            if d:
                parts.append(
                    f'<path d="{d}" fill="none" stroke="#9f9f9f" stroke-width="1.0"/>'
                )
    for iv in range(len(data.directions)):
        for ia in range(len(data.a_grid)):
            d = _svg_path(data.geodesics[iv, ia], transform)
            if d:
                parts.append(
                    f'<path d="{d}" fill="none" stroke="#1a1a1a" stroke-width="1.4"/>'
                )
    X0, Y0 = transform(data.p)
    parts.append(f'<circle cx="{X0:.3f}" cy="{Y0:.3f}" r="3" fill="#c02020"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def trajectory_svg(points: np.ndarray, width: int = 800, height: int = 600) -> str:
    if points.shape[1] != 2:
        raise ValueError("SVG emission is for 2-d scenes only")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 30.0

    def transform(p):
        u = (p - lo) / span
        return margin + u[0] * (width - 2 * margin), height - margin - u[1] * (height - 2 * margin)

    d = _svg_path(points, transform)
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<path d="{d}" fill="none" stroke="#1a1a1a" stroke-width="1.4"/>',
            "</svg>",
        ]
    ) + "\n"


def json_dumps(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
