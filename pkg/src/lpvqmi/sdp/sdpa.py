"""SDPA sparse text format (``.dat-s``) and a JSON dump of problems.

SDPA states problems as ``min c @ x  s.t.  sum_i x_i F_i - F_0 ⪰ 0``, so a
block ``const + sum_i x_i F_i`` is written with ``F_0 = -const``. Scalar sign
constraints go into one trailing diagonal block (negative size in the block
structure line). Labels, strict flags and the objective kind are carried in
a single ``*%`` comment line holding JSON, which other SDPA readers ignore.
"""
from __future__ import annotations

import json

import numpy as np

from .problem import LmiBlock, SdpProblem, Sign

_META = "*%"


def _fmt(v):
    return repr(float(v))


def export_sdpa(problem: SdpProblem, bake_floor=None) -> str:
    """Serialise ``problem`` to SDPA sparse text.

    With ``bake_floor`` set, strict blocks and strictly positive scalars are
    shifted by that amount so external solvers see the realised constraints;
    such output no longer parses back to the original problem.
    """
    n = problem.num_scalars
    signed = [i for i, s in enumerate(problem.scalar_signs) if s is not Sign.FREE]
    meta = {
        "objective": "feasibility" if problem.is_feasibility else "minimize",
        "blocks": [{"label": b.label, "strict": bool(b.strict)} for b in problem.blocks],
        "scalars": [{"label": lab, "sign": s.value}
                    for lab, s in zip(problem.scalar_labels, problem.scalar_signs)],
        "floor_baked": bake_floor is not None,
    }
    lines = ["* block-diagonal LMI problem", f"{_META} {json.dumps(meta, sort_keys=True)}"]
    struct = [b.dim for b in problem.blocks]
    if signed:
        struct.append(-len(signed))
    lines.append(str(n))
    lines.append(str(len(struct)))
    lines.append(" ".join(str(d) for d in struct))
    c = np.zeros(n) if problem.is_feasibility else problem.objective
    lines.append(" ".join(_fmt(v) for v in c))

    for bi, blk in enumerate(problem.blocks, start=1):
        const = blk.const
        if bake_floor is not None and blk.strict:
            const = const - bake_floor * np.eye(blk.dim)
        for var, mat in [(0, -const)] + [(int(i) + 1, F) for i, F in zip(blk.index, blk.coefs)]:
            r, cc = np.nonzero(np.triu(mat))
            for i, j in zip(r, cc):
                lines.append(f"{var} {bi} {i + 1} {j + 1} {_fmt(mat[i, j])}")
    if signed:
        bi = len(problem.blocks) + 1
        for k, i in enumerate(signed, start=1):
            if bake_floor is not None and problem.scalar_signs[i] is Sign.POSITIVE:
                lines.append(f"0 {bi} {k} {k} {_fmt(bake_floor)}")
            lines.append(f"{i + 1} {bi} {k} {k} {_fmt(1.0)}")
    return "\n".join(lines) + "\n"


def parse_sdpa(text: str) -> SdpProblem:
    """Inverse of :func:`export_sdpa` (also reads plain SDPA files)."""
    meta = None
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith(_META):
            meta = json.loads(line[len(_META):])
            continue
        if not line or line[0] in "*\"":
            continue
        body.append(line.replace(",", " ").replace("{", " ").replace("}", " ")
                    .replace("(", " ").replace(")", " "))
    if len(body) < 4:
        raise ValueError("SDPA text is truncated")
    n = int(body[0].split()[0])
    nblocks = int(body[1].split()[0])
    struct = [int(v) for v in body[2].split()[:nblocks]]
    c = np.array([float(v) for v in body[3].split()[:n]])
    if c.shape != (n,):
        raise ValueError("objective row has the wrong length")

    consts = [np.zeros((abs(d), abs(d))) for d in struct]
    coefs = [dict() for _ in struct]
    for line in body[4:]:
        var, b, i, j, val = line.split()[:5]
        var, b, i, j, val = int(var), int(b) - 1, int(i) - 1, int(j) - 1, float(val)
        if not 0 <= b < nblocks or not 0 <= var <= n:
            raise ValueError(f"entry out of range: {line!r}")
        d = abs(struct[b])
        target = consts[b] if var == 0 else coefs[b].setdefault(var - 1, np.zeros((d, d)))
        if var == 0:
            val = -val
        target[i, j] = val
        target[j, i] = val

    signs = [Sign.FREE] * n
    labels = []
    strict = [False] * nblocks
    blabels = [""] * nblocks
    if meta is not None:
        signs = [Sign(s["sign"]) for s in meta["scalars"]]
        labels = [s["label"] for s in meta["scalars"]]
        for k, bm in enumerate(meta["blocks"]):
            strict[k], blabels[k] = bm["strict"], bm["label"]

    blocks = []
    for k, d in enumerate(struct):
        if d < 0 and meta is not None:
            continue  # sign block, recovered from the metadata
        if d < 0:
            # Foreign diagonal block: split into scalar rows.
            for r in range(-d):
                idx = sorted(v for v, F in coefs[k].items() if F[r, r] != 0)
                blocks.append(LmiBlock(consts[k][r:r + 1, r:r + 1], idx,
                                       [coefs[k][v][r:r + 1, r:r + 1] for v in idx]))
            continue
        idx = sorted(coefs[k])
        blocks.append(LmiBlock(consts[k], idx, [coefs[k][v] for v in idx],
                               label=blabels[k], strict=strict[k]))
    objective = None if meta is not None and meta["objective"] == "feasibility" else c
    return SdpProblem(n, blocks, signs, objective=objective, scalar_labels=labels)


def problem_to_json(problem: SdpProblem) -> dict:
    """Dense, human-readable dump for debugging."""
    return {
        "num_scalars": problem.num_scalars,
        "scalar_signs": [s.value for s in problem.scalar_signs],
        "scalar_labels": list(problem.scalar_labels),
        "objective": None if problem.is_feasibility else problem.objective.tolist(),
        "blocks": [
            {"label": b.label, "strict": bool(b.strict), "const": b.const.tolist(),
             "index": b.index.tolist(), "coefs": b.coefs.tolist()}
            for b in problem.blocks
        ],
        "meta": {k: v for k, v in problem.meta.items() if _jsonable(v)},
    }


def problem_from_json(data: dict) -> SdpProblem:
    blocks = [LmiBlock(np.array(b["const"]), b["index"],
                       np.array(b["coefs"]).reshape(len(b["index"]), *np.shape(b["const"])),
                       label=b["label"], strict=b["strict"])
              for b in data["blocks"]]
    return SdpProblem(data["num_scalars"], blocks, data["scalar_signs"],
                      objective=data["objective"], scalar_labels=data["scalar_labels"],
                      meta=data.get("meta", {}))


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False
