"""Versioned text checkpoints for flat-parameter networks.

Layout:

    COLLUSIM-CKPT v1
    meta <key> <value>
    net <name>
    layers <s0> <s1> ...
    params <count>
    <whitespace-separated float values, 8 per line>

Values are written with shortest round-trip formatting (<= 17 significant
digits); loading verifies the parameter count against the layer manifest.
"""

from __future__ import annotations

from .errors import CheckpointError
from .nn import Mlp, param_count, zeros_mlp

CKPT_HEADER = "COLLUSIM-CKPT v1"


def save_checkpoint(path: str, nets: dict[str, Mlp], meta: dict[str, str] | None = None) -> None:
    lines = [CKPT_HEADER]
    for k in sorted(meta or {}):
        v = (meta or {})[k]
        lines.append(f"meta {k} {v}")
    for name, net in nets.items():
        lines.append(f"net {name}")
        lines.append("layers " + " ".join(str(n) for n in net.layer_sizes))
        lines.append(f"params {net.params.size}")
        vals = [repr(float(x)) for x in net.params]
        for i in range(0, len(vals), 8):
            lines.append(" ".join(vals[i : i + 8]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> tuple[dict[str, Mlp], dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not lines or lines[0] != CKPT_HEADER:
        raise CheckpointError(f"{path}: bad header, expected {CKPT_HEADER!r}")

    meta: dict[str, str] = {}
    nets: dict[str, Mlp] = {}
    i = 1
    n = len(lines)
    while i < n and lines[i].startswith("meta "):
        _, key, value = lines[i].split(" ", 2)
        meta[key] = value
        i += 1
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        if not lines[i].startswith("net "):
            raise CheckpointError(f"{path}: expected 'net <name>', got {lines[i]!r}")
        name = lines[i][4:].strip()
        if i + 2 >= n or not lines[i + 1].startswith("layers ") or not lines[i + 2].startswith("params "):
            raise CheckpointError(f"{path}: net {name!r} missing layers/params manifest")
        try:
            layers = tuple(int(x) for x in lines[i + 1].split()[1:])
            count = int(lines[i + 2].split()[1])
        except ValueError as e:
            raise CheckpointError(f"{path}: net {name!r} has a malformed manifest") from e
        if count != param_count(layers):
            raise CheckpointError(
                f"{path}: net {name!r} manifest mismatch: params {count} != "
                f"{param_count(layers)} implied by layers {layers}"
            )
        i += 3
        net = zeros_mlp(layers)
        filled = 0
        while filled < count:
            if i >= n:
                raise CheckpointError(f"{path}: net {name!r} truncated at {filled}/{count} values")
            toks = lines[i].split()
            i += 1
            if filled + len(toks) > count:
                raise CheckpointError(f"{path}: net {name!r} has extra parameter values")
            try:
                for t in toks:
                    net.params[filled] = float(t)
                    filled += 1
            except ValueError as e:
                raise CheckpointError(f"{path}: net {name!r} has a non-numeric value") from e
        nets[name] = net
    return nets, meta
