"""
    Scene files: line-oriented `#name: args` directives describing a
    common-offset GPR survey over a 2D half-space.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import pyparsing as pp

from gprforge import exceptions
from gprforge.exceptions import (
    BadArity,
    BadNumber,
    DuplicateDirective,
    MalformedDirective,
    MissingRequiredDirective,
    OutOfRangeValue,
    SceneDecodeError,
    UnknownDirective,
)
from gprforge.fdtd import AIR_CELLS
from gprforge.models import (
    BUILTIN_MATERIALS,
    HALFSPACE,
    Material,
    ObjectSpec,
    ScanGeometry,
    Scene,
    Waveform,
)

log = logging.getLogger(__name__)

# Grammar: one directive per line, '//' comments anywhere after it
identifier = pp.Word(pp.alphas + "_", pp.alphanums + "_").set_name("identifier")
argument = pp.Word(pp.printables).set_name("argument")
directive = (
    pp.Suppress("#")
    + identifier("name")
    + pp.Suppress(":")
    + pp.Group(pp.ZeroOrMore(argument))("args")
)
directive.ignore(pp.dbl_slash_comment)

# name -> (arity, repeatable)
DIRECTIVES = {
    "domain": (2, False),
    "cell": (2, False),
    "time_window": (1, False),
    "material": (3, True),
    "box": (5, True),
    "cylinder": (4, True),
    "waveform": (3, False),
    "source": (1, False),
    "rx_offset": (1, False),
    "scan": (3, False),
}
REQUIRED = ("domain", "cell", "time_window", "waveform", "source", "rx_offset", "scan")
WAVEFORMS = ("ricker",)

Directive = Tuple[str, List[str], int]


@dataclass
class Diagnostic:
    """One invariant violation. `directive`/`index` point at the directive
    occurrence responsible so parsers can report its line."""

    code: str
    field: str
    message: str
    directive: Optional[str] = None
    index: int = 0

    def to_exception(self, line=None) -> exceptions.GprForgeException:
        error_class = getattr(exceptions, self.code)
        return error_class(subject=self.field, reason=self.message, line=line)


def decode_text(data: Union[str, bytes]) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise SceneDecodeError(line=data.count(b"\n", 0, e.start) + 1)


def tokenize_directives(text: Union[str, bytes]) -> List[Directive]:
    # Split into (name, args, line) triples, skipping blanks and comments
    text = decode_text(text)
    result = []
    # Only LF and CRLF end a line
    for line_no, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        if not line.startswith("#"):
            raise MalformedDirective(subject=repr(line[:40]), line=line_no)
        try:
            parsed = directive.parse_string(line, parse_all=True)
        except pp.ParseBaseException:
            raise MalformedDirective(subject=repr(line[:40]), line=line_no)
        result.append((parsed["name"], list(parsed["args"]), line_no))

    return result


def parse_number(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise BadNumber(subject=token, line=line)
    if not math.isfinite(value):
        raise OutOfRangeValue(subject=token, reason=f"non-finite number '{token}'", line=line)
    return value


def parse_count(token: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise BadNumber(subject=token, line=line)


def group_directives(
    directives: List[Directive], known: Dict[str, Tuple[int, bool]]
) -> Dict[str, List[Tuple[List[str], int]]]:
    # Check names, arities and duplicates; keep occurrence order per name
    grouped = {}
    for name, args, line in directives:
        if name not in known:
            raise UnknownDirective(subject=name, line=line)
        arity, repeatable = known[name]
        if (arity is None and not args) or (arity is not None and len(args) != arity):
            raise BadArity(
                subject=name,
                reason=f"'#{name}' takes {arity or 'one or more'} arguments, got {len(args)}",
                line=line,
            )
        if name in grouped and not repeatable:
            raise DuplicateDirective(subject=name, line=line)
        grouped.setdefault(name, []).append((args, line))

    return grouped


def parse_scene(text: Union[str, bytes]) -> Scene:
    grouped = group_directives(tokenize_directives(text), DIRECTIVES)

    for name in REQUIRED:
        if name not in grouped:
            raise MissingRequiredDirective(subject=name)

    def numbers(name):
        args, line = grouped[name][0]
        return tuple(parse_number(a, line) for a in args)

    materials = [
        Material(args[0], parse_number(args[1], line), parse_number(args[2], line))
        for args, line in grouped.get("material", [])
    ]

    # Objects keep file order across both shapes
    shaped = [
        (line, shape, args)
        for shape in ("box", "cylinder")
        for args, line in grouped.get(shape, [])
    ]
    objects = [
        ObjectSpec(shape, args[0], tuple(parse_number(a, line) for a in args[1:]))
        for line, shape, args in sorted(shaped)
    ]

    wave_args, wave_line = grouped["waveform"][0]
    scan_args, scan_line = grouped["scan"][0]
    scene = Scene(
        domain=numbers("domain"),
        cell=numbers("cell"),
        time_window=numbers("time_window")[0],
        materials=materials,
        objects=objects,
        waveform=Waveform(
            wave_args[0],
            parse_number(wave_args[1], wave_line),
            parse_number(wave_args[2], wave_line),
        ),
        source_depth=numbers("source")[0],
        rx_offset=numbers("rx_offset")[0],
        scan=ScanGeometry(
            parse_number(scan_args[0], scan_line),
            parse_number(scan_args[1], scan_line),
            parse_count(scan_args[2], scan_line),
        ),
    )

    diagnostics = validate_scene(scene)
    if diagnostics:
        first = diagnostics[0]
        lines = grouped.get(first.directive)
        if first.directive in ("box", "cylinder"):
            line = sorted(shaped)[first.index][0]
        elif lines:
            line = lines[min(first.index, len(lines) - 1)][1]
        else:
            line = None
        raise first.to_exception(line=line)

    log.debug(
        f"Parsed scene: {len(scene.materials)} materials, "
        f"{len(scene.objects)} objects, {scene.scan.n_traces} traces"
    )
    return scene


def format_number(value: float) -> str:
    return repr(float(value))


def serialize_scene(s: Scene) -> str:
    # Canonical order; repr() floats re-parse to identical values
    f = format_number
    lines = [
        f"#domain: {f(s.domain[0])} {f(s.domain[1])}",
        f"#cell: {f(s.cell[0])} {f(s.cell[1])}",
        f"#time_window: {f(s.time_window)}",
    ]
    lines += [f"#material: {m.name} {f(m.eps_r)} {f(m.sigma)}" for m in s.materials]
    lines += [
        f"#waveform: {s.waveform.kind} {f(s.waveform.amplitude)} {f(s.waveform.center_freq)}",
        f"#source: {f(s.source_depth)}",
        f"#rx_offset: {f(s.rx_offset)}",
        f"#scan: {f(s.scan.x_start)} {f(s.scan.x_end)} {int(s.scan.n_traces)}",
    ]
    lines += [
        f"#{o.shape}: {o.material} " + " ".join(f(g) for g in o.geometry)
        for o in s.objects
    ]

    return "\n".join(lines) + "\n"


def whole_cells(length: float, cell: float) -> bool:
    n = length / cell
    return abs(n - round(n)) <= 1e-6 * max(1.0, n)


def validate_scene(s: Scene) -> List[Diagnostic]:
    # One diagnostic per violated invariant, in directive order
    diags = []

    def check(ok, code, field, message, directive_name, index=0):
        if not ok:
            diags.append(Diagnostic(code, field, message, directive_name, index))

    width, depth = s.domain
    dx, dz = s.cell
    check(width > 0 and depth > 0, "OutOfRangeValue", "domain", "domain dimensions must be > 0", "domain")
    check(dx > 0 and dz > 0, "OutOfRangeValue", "cell", "cell sizes must be > 0", "cell")
    if dx > 0 and dz > 0:
        check(dx <= width and dz <= depth, "OutOfRangeValue", "cell", "cell must fit inside the domain", "cell")
        check(
            whole_cells(width, dx) and whole_cells(depth, dz),
            "OutOfRangeValue",
            "cell",
            f"domain {width} x {depth} m is not a whole number of {dx} x {dz} m cells",
            "cell",
        )
    check(s.time_window > 0, "OutOfRangeValue", "time_window", "time window must be > 0", "time_window")

    seen = set()
    for k, m in enumerate(s.materials):
        check(m.name not in BUILTIN_MATERIALS, "OutOfRangeValue", "name", f"'{m.name}' is a reserved material name", "material", k)
        check(m.name not in seen, "DuplicateDirective", m.name, f"material '{m.name}' defined twice", "material", k)
        check(m.eps_r >= 1, "OutOfRangeValue", "eps_r", f"eps_r of '{m.name}' must be >= 1, got {m.eps_r}", "material", k)
        check(m.sigma >= 0, "OutOfRangeValue", "sigma", f"sigma of '{m.name}' must be >= 0, got {m.sigma}", "material", k)
        seen.add(m.name)
    check(HALFSPACE in seen, "MissingRequiredDirective", "material", f"no '{HALFSPACE}' background material", "material")

    w = s.waveform
    check(w.kind in WAVEFORMS, "OutOfRangeValue", "waveform", f"unsupported waveform '{w.kind}'", "waveform")
    check(math.isfinite(w.amplitude), "OutOfRangeValue", "amplitude", "amplitude must be finite", "waveform")
    check(w.center_freq > 0, "OutOfRangeValue", "center_freq", "center frequency must be > 0", "waveform")

    check(
        -AIR_CELLS * dz < s.source_depth < depth,
        "OutOfRangeValue",
        "source",
        f"source depth must lie in ({-AIR_CELLS * dz}, {depth})",
        "source",
    )

    scan = s.scan
    positions_ok = scan.n_traces >= 1 and (scan.n_traces == 1 or scan.x_end > scan.x_start)
    check(positions_ok, "OutOfRangeValue", "scan", "need n_traces >= 1 and x_end > x_start", "scan")
    if positions_ok:
        ends = (scan.x_start, scan.x_end if scan.n_traces > 1 else scan.x_start)
        inside = all(0 <= x < width and 0 <= x + s.rx_offset < width for x in ends)
        check(inside, "OutOfRangeValue", "scan", "scan positions plus rx_offset leave the domain", "scan")

    for k, o in enumerate(s.objects):
        name = o.shape
        if o.shape == "cylinder":
            check(o.geometry[2] > 0, "OutOfRangeValue", "radius", "cylinder radius must be > 0", name, k)
        elif o.shape == "box":
            x1, z1, x2, z2 = o.geometry
            check(x1 < x2 and z1 < z2, "OutOfRangeValue", "box", "box corners must satisfy x1<x2, z1<z2", name, k)
        else:
            check(False, "OutOfRangeValue", "shape", f"unknown shape '{o.shape}'", name, k)
            continue
        check(s.material(o.material) is not None, "DanglingMaterialRef", o.material, f"material '{o.material}' is not defined", name, k)
        xmin, zmin, xmax, zmax = o.bounds()
        check(
            xmin >= 0 and zmin >= 0 and xmax <= width and zmax <= depth,
            "ObjectOutsideDomain",
            f"{o.shape} #{k}",
            f"{o.shape} #{k} extends outside the {width} x {depth} m domain",
            name,
            k,
        )

    return diags
