"""CBF and SDPA-sparse writers and readers for :class:`ConicProgram`.

Both writers embed the cone sequence and builder tags as comments, so the
readers can restore the original row order.  Files without those comments
are still read, with scalar cones placed before PSD blocks.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np
import scipy.sparse as sp

from .conic import NONNEG, PSD, SOC, SQRT2, ZERO, Cone, ConicProgram, VarBlock

_CBF_CONES = {ZERO: "L=", NONNEG: "L+", SOC: "Q"}
_CBF_KINDS = {v: k for k, v in _CBF_CONES.items()}


def _num(v: float) -> str:
    """Shortest decimal that reads back to the same double."""
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v)) if v != 0 or math.copysign(1, v) > 0 else "0"
    return repr(v)


def _unscale(v: float) -> float:
    """A double a with a / sqrt(2) == v when one exists near v * sqrt(2)."""
    a = v * SQRT2
    if a / SQRT2 == v:
        return a
    up = down = a
    for _ in range(8):
        up = np.nextafter(up, math.inf)
        if up / SQRT2 == v:
            return float(up)
        down = np.nextafter(down, -math.inf)
        if down / SQRT2 == v:
            return float(down)
    return a


def _tri_positions(k: int):
    """(row, col) with row <= col in svec order."""
    return [(r, c) for c in range(k) for r in range(c + 1)]


def _meta_lines(prog: ConicProgram) -> list[str]:
    lines = [f"wassdro name {prog.name or '-'}"]
    for cone in prog.cones:
        lines.append(f"wassdro cone {cone.kind} {cone.dim} {cone.tag or '-'}")
    for v in prog.variables:
        lines.append(f"wassdro var {v.name} {v.start} {v.size}")
    return lines


def _parse_meta(comments: list[str]):
    name, cones, variables = "", [], []
    for line in comments:
        parts = line.split()
        if len(parts) < 2 or parts[0] != "wassdro":
            continue
        if parts[1] == "name":
            name = "" if parts[2] == "-" else " ".join(parts[2:])
        elif parts[1] == "cone":
            tag = " ".join(parts[4:])
            cones.append(Cone(parts[2], int(parts[3]), "" if tag == "-" else tag))
        elif parts[1] == "var":
            variables.append(VarBlock(parts[2], int(parts[3]), int(parts[4])))
    return name, cones, variables


def _split_rows(prog: ConicProgram):
    """Scalar cone rows and PSD blocks with their row ranges."""
    scalar, psd = [], []
    for cone, rows in prog.cone_rows():
        (psd if cone.kind == PSD else scalar).append((cone, rows))
    return scalar, psd


# --------------------------------------------------------------------------
# CBF


def export_cbf(prog: ConicProgram) -> str:
    scalar, psd = _split_rows(prog)
    A = prog.A.tocsr()
    out = [f"# {line}" for line in _meta_lines(prog)]
    version = 2 if psd else 1
    out += ["VER", str(version), "", "OBJSENSE", "MIN", "", "VAR", f"{prog.n} 1", f"F {prog.n}", ""]
    if psd:
        out += ["PSDCON", str(len(psd))] + [str(c.dim) for c, _ in psd] + [""]
    nscalar = sum(c.size for c, _ in scalar)
    if scalar:
        # merge consecutive blocks of the same kind as the grammar allows
        merged: list[list] = []
        for cone, _ in scalar:
            name = _CBF_CONES[cone.kind]
            if merged and name == merged[-1][0] and cone.kind != SOC:
                merged[-1][1] += cone.size
            else:
                merged.append([name, cone.size])
        out += ["CON", f"{nscalar} {len(merged)}"] + [f"{n} {s}" for n, s in merged] + [""]
    obj = [(j, v) for j, v in enumerate(prog.c) if v != 0]
    if obj:
        out += ["OBJACOORD", str(len(obj))] + [f"{j} {_num(v)}" for j, v in obj] + [""]
    if prog.objective_offset:
        out += ["OBJBCOORD", _num(prog.objective_offset), ""]
    acoord, bcoord = [], []
    row_out = 0
    for cone, rows in scalar:
        for r in range(rows.start, rows.stop):
            start, end = A.indptr[r], A.indptr[r + 1]
            for j, v in zip(A.indices[start:end], A.data[start:end]):
                if v != 0:
                    acoord.append((row_out, int(j), -v))
            if prog.b[r] != 0:
                bcoord.append((row_out, prog.b[r]))
            row_out += 1
    if acoord:
        acoord.sort()
        out += ["ACOORD", str(len(acoord))] + [f"{i} {j} {_num(v)}" for i, j, v in acoord] + [""]
    if bcoord:
        out += ["BCOORD", str(len(bcoord))] + [f"{i} {_num(v)}" for i, v in bcoord] + [""]
    hcoord, dcoord = [], []
    for kidx, (cone, rows) in enumerate(psd):
        for off, (r, c) in enumerate(_tri_positions(cone.dim)):
            row = rows.start + off
            scale = 1.0 if r == c else 1.0 / SQRT2
            start, end = A.indptr[row], A.indptr[row + 1]
            for j, v in zip(A.indices[start:end], A.data[start:end]):
                if v != 0:
                    hcoord.append((kidx, int(j), c, r, -v * scale))
            if prog.b[row] != 0:
                dcoord.append((kidx, c, r, prog.b[row] * scale))
    if hcoord:
        hcoord.sort()
        out += ["HCOORD", str(len(hcoord))] + [f"{k} {j} {r} {c} {_num(v)}" for k, j, r, c, v in hcoord] + [""]
    if dcoord:
        dcoord.sort()
        out += ["DCOORD", str(len(dcoord))] + [f"{k} {r} {c} {_num(v)}" for k, r, c, v in dcoord] + [""]
    return "\n".join(out).rstrip("\n") + "\n"


def import_cbf(text: str) -> ConicProgram:
    comments, tokens = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line:
            tokens.append(line)
    pos = 0

    def take():
        nonlocal pos
        pos += 1
        return tokens[pos - 1]

    n = 0
    psd_sides: list[int] = []
    con_blocks: list[tuple[str, int]] = []
    c = None
    offset = 0.0
    arows, acols, avals = [], [], []
    b_entries: dict[int, float] = {}
    h_entries, d_entries = [], []
    sense = "MIN"
    while pos < len(tokens):
        key = take()
        if key == "VER":
            ver = int(take())
            if ver > 3:
                raise ValueError(f"unsupported CBF version {ver}")
        elif key == "OBJSENSE":
            sense = take()
        elif key == "VAR":
            n, nblk = map(int, take().split())
            for _ in range(nblk):
                kind, size = take().split()
                if kind != "F":
                    raise ValueError("only free variables are supported")
        elif key == "PSDCON":
            psd_sides = [int(take()) for _ in range(int(take()))]
        elif key == "CON":
            _, nblk = map(int, take().split())
            for _ in range(nblk):
                kind, size = take().split()
                if kind not in _CBF_KINDS:
                    raise ValueError(f"unsupported cone {kind}")
                con_blocks.append((kind, int(size)))
        elif key == "OBJACOORD":
            c = np.zeros(n)
            for _ in range(int(take())):
                j, v = take().split()
                c[int(j)] = float(v)
        elif key == "OBJBCOORD":
            offset = float(take())
        elif key == "ACOORD":
            for _ in range(int(take())):
                i, j, v = take().split()
                arows.append(int(i))
                acols.append(int(j))
                avals.append(-float(v))
        elif key == "BCOORD":
            for _ in range(int(take())):
                i, v = take().split()
                b_entries[int(i)] = float(v)
        elif key == "HCOORD":
            for _ in range(int(take())):
                k, j, r, cc, v = take().split()
                h_entries.append((int(k), int(j), int(r), int(cc), float(v)))
        elif key == "DCOORD":
            for _ in range(int(take())):
                k, r, cc, v = take().split()
                d_entries.append((int(k), int(r), int(cc), float(v)))
        else:
            raise ValueError(f"unsupported CBF section {key}")
    if c is None:
        c = np.zeros(n)
    if sense == "MAX":
        c, offset = -c, -offset
    nscalar = sum(s for _, s in con_blocks)

    # rows in file order: scalar rows, then PSD blocks
    psd_start = []
    acc = nscalar
    for k in psd_sides:
        psd_start.append(acc)
        acc += k * (k + 1) // 2
    m = acc
    index = {}
    for kidx, k in enumerate(psd_sides):
        for off, (r, cc) in enumerate(_tri_positions(k)):
            index[(kidx, cc, r)] = psd_start[kidx] + off
    for kidx, j, r, cc, v in h_entries:
        row = index[(kidx, max(r, cc), min(r, cc))]
        val = v if r == cc else _unscale(v)
        arows.append(row)
        acols.append(j)
        avals.append(-val)
    b = np.zeros(m)
    for i, v in b_entries.items():
        b[i] = v
    for kidx, r, cc, v in d_entries:
        b[index[(kidx, max(r, cc), min(r, cc))]] = v if r == cc else _unscale(v)
    A = sp.csr_matrix((avals, (arows, acols)), shape=(m, n))

    name, meta_cones, variables = _parse_meta(comments)
    file_cones = []
    for kind, size in con_blocks:
        file_cones.append(Cone(_CBF_KINDS[kind], size))
    file_cones += [Cone(PSD, k) for k in psd_sides]
    if meta_cones and _compatible(meta_cones, con_blocks, psd_sides):
        perm = _restore_order(meta_cones, nscalar, psd_start)
        A = A[perm]
        b = b[perm]
        cones = meta_cones
    else:
        cones = file_cones
        variables = []
    return ConicProgram(c=c, A=A, b=b, cones=tuple(cones), variables=tuple(variables),
                        name=name, objective_offset=offset)


def _compatible(meta_cones, con_blocks, psd_sides) -> bool:
    scalar = [c for c in meta_cones if c.kind != PSD]
    if [c.dim for c in meta_cones if c.kind == PSD] != list(psd_sides):
        return False
    expanded = []
    for kind, size in con_blocks:
        expanded += [_CBF_KINDS[kind]] * size
    flat = []
    for c in scalar:
        flat += [c.kind] * c.size
    return flat == expanded


def _restore_order(meta_cones, nscalar: int, psd_start: list[int]) -> np.ndarray:
    perm = []
    srow = 0
    kidx = 0
    for cone in meta_cones:
        if cone.kind == PSD:
            perm += list(range(psd_start[kidx], psd_start[kidx] + cone.size))
            kidx += 1
        else:
            perm += list(range(srow, srow + cone.size))
            srow += cone.size
    return np.array(perm, dtype=int)


# --------------------------------------------------------------------------
# SDPA sparse


def export_sdpa(prog: ConicProgram) -> str:
    for cone in prog.cones:
        if cone.kind == SOC:
            raise ValueError(f"SDPA-sparse cannot represent the second-order cone block "
                             f"{cone.tag or '(untagged)'} of size {cone.dim}")
    scalar, psd = _split_rows(prog)
    A = prog.A.tocsc()
    # LP block: nonneg rows once, zero rows twice (s >= 0 and -s >= 0)
    lp_rows: list[tuple[int, float]] = []
    for cone, rows in scalar:
        for r in range(rows.start, rows.stop):
            lp_rows.append((r, 1.0))
            if cone.kind == ZERO:
                lp_rows.append((r, -1.0))
    blocks = []
    if lp_rows:
        blocks.append(("lp", -len(lp_rows)))
    blocks += [("psd", c.dim) for c, _ in psd]
    out = [f"* {line}" for line in _meta_lines(prog)]
    out.append(f"* wassdro offset {_num(prog.objective_offset)}")
    out.append(str(prog.n))
    out.append(str(len(blocks)))
    out.append(" ".join(str(s) for _, s in blocks))
    out.append(" ".join(_num(v) for v in prog.c))
    entries = []
    blk = 1
    A_csr = prog.A.tocsr()

    def row_items(r):
        start, end = A_csr.indptr[r], A_csr.indptr[r + 1]
        return zip(A_csr.indices[start:end], A_csr.data[start:end])

    if lp_rows:
        for pos, (r, sign) in enumerate(lp_rows, start=1):
            if prog.b[r] != 0:
                entries.append((0, blk, pos, pos, -sign * prog.b[r]))
            for j, v in row_items(r):
                if v != 0:
                    entries.append((int(j) + 1, blk, pos, pos, -sign * v))
        blk += 1
    for cone, rows in psd:
        for off, (r, c) in enumerate(_tri_positions(cone.dim)):
            row = rows.start + off
            scale = 1.0 if r == c else 1.0 / SQRT2
            if prog.b[row] != 0:
                entries.append((0, blk, r + 1, c + 1, -prog.b[row] * scale))
            for j, v in row_items(row):
                if v != 0:
                    entries.append((int(j) + 1, blk, r + 1, c + 1, -v * scale))
        blk += 1
    entries.sort()
    out += [f"{m} {b} {i} {j} {_num(v)}" for m, b, i, j, v in entries]
    return "\n".join(out) + "\n"


def import_sdpa(text: str) -> ConicProgram:
    comments, lines = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line[0] in '"*':
            comments.append(line[1:].strip())
        else:
            lines.append(line.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " "))
    n = int(lines[0].split()[0])
    nblocks = int(lines[1].split()[0])
    sizes = [int(v) for v in lines[2].split()[:nblocks]]
    c = np.array([float(v) for v in lines[3].split()[:n]])
    data = defaultdict(dict)  # (blk) -> {(i, j): {mat: value}}
    for line in lines[4:]:
        mat, blk, i, j, v = line.split()[:5]
        data[int(blk)].setdefault((min(int(i), int(j)), max(int(i), int(j))), {})[int(mat)] = float(v)
    offset = 0.0
    for line in comments:
        parts = line.split()
        if parts[:2] == ["wassdro", "offset"]:
            offset = float(parts[2])
    name, meta_cones, variables = _parse_meta(comments)

    # rebuild rows block by block in file order
    rows_A: list[dict] = []
    rows_b: list[float] = []
    lp_values: list[tuple[dict, float]] = []
    psd_blocks: list[tuple[int, list[tuple[dict, float]]]] = []
    for bidx, size in enumerate(sizes, start=1):
        entries = data.get(bidx, {})
        if size < 0:
            for pos in range(1, -size + 1):
                e = entries.get((pos, pos), {})
                lp_values.append(({j - 1: -v for j, v in e.items() if j > 0}, -e.get(0, 0.0)))
        else:
            vals = []
            for r, cc in _tri_positions(size):
                e = entries.get((r + 1, cc + 1), {})
                if r == cc:
                    vals.append(({j - 1: -v for j, v in e.items() if j > 0}, -e.get(0, 0.0)))
                else:
                    vals.append(({j - 1: -_unscale(v) for j, v in e.items() if j > 0},
                                 -_unscale(e.get(0, 0.0))))
            psd_blocks.append((size, vals))

    cones: list[Cone] = []
    if meta_cones and [c.dim for c in meta_cones if c.kind == PSD] == [s for s, _ in psd_blocks]:
        it = iter(lp_values)
        pit = iter(psd_blocks)
        for cone in meta_cones:
            if cone.kind == PSD:
                _, vals = next(pit)
                for a, bv in vals:
                    rows_A.append(a)
                    rows_b.append(bv)
            else:
                for _ in range(cone.size):
                    a, bv = next(it)
                    rows_A.append(a)
                    rows_b.append(bv)
                    if cone.kind == ZERO:
                        next(it)  # mirrored copy
            cones.append(cone)
    else:
        variables = []
        if lp_values:
            cones.append(Cone(NONNEG, len(lp_values)))
            for a, bv in lp_values:
                rows_A.append(a)
                rows_b.append(bv)
        for size, vals in psd_blocks:
            cones.append(Cone(PSD, size))
            for a, bv in vals:
                rows_A.append(a)
                rows_b.append(bv)
    ri, ci, vv = [], [], []
    for r, a in enumerate(rows_A):
        for j, v in a.items():
            ri.append(r)
            ci.append(j)
            vv.append(v)
    A = sp.csr_matrix((vv, (ri, ci)), shape=(len(rows_A), n))
    b = np.array(rows_b, dtype=float) + 0.0
    return ConicProgram(c=c, A=A, b=b, cones=tuple(cones), variables=tuple(variables), name=name,
                        objective_offset=offset)


def export(prog: ConicProgram, fmt: str) -> str:
    fmt = fmt.lower()
    if fmt == "cbf":
        return export_cbf(prog)
    if fmt in ("sdpa", "sdpa-sparse", "dat-s"):
        return export_sdpa(prog)
    raise ValueError(f"unknown export format {fmt!r}")


def extension(fmt: str) -> str:
    return ".cbf" if fmt.lower() == "cbf" else ".dat-s"
