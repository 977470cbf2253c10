"""
Checkpoint files.

    SDTM <version> <header bytes>\n
    <header: key=value lines>
    <payload: little-endian float32 tensors, in manifest order>

Manifest entries read ``tensor.<name>=<shape>;<offset>;<nbytes>;<crc32>``. A
checksum mismatch does not stop the load; it is logged and recorded on the
returned state so callers can decide.
"""
import json
import logging
import os
import zlib
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from sdtm.config import config_from_json
from sdtm.errors import FormatError, IoError
from sdtm.gan import TrainState, build_state
from sdtm.optim import Adam

logger = logging.getLogger(__name__)

MAGIC = "SDTM"
VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")


def _named_arrays(state: TrainState) -> List[Tuple[str, np.ndarray]]:
    """Every persisted array with its manifest name, in payload order."""
    named = state.named_parameters()
    arrays = [(name, p.data) for name, p in named]
    groups = (("g", state.opt_g, [n for n, _ in named if n.startswith("gen.")]),
              ("d", state.opt_d, [n for n, _ in named if not n.startswith("gen.")]))
    for group, opt, names in groups:
        arrays += [(f"adam.m.{group}.{n}", m) for n, m in zip(names, opt.moments.m)]
        arrays += [(f"adam.v.{group}.{n}", v) for n, v in zip(names, opt.moments.v)]
    return arrays


def _format_shape(shape: Tuple[int, ...]) -> str:
    return ",".join(str(d) for d in shape)


def _parse_shape(text: str) -> Tuple[int, ...]:
    return tuple(int(d) for d in text.split(",")) if text else ()


def checkpoint_save(state: TrainState, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = [
        f"config={json.dumps(state.config.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))}",
        f"iteration={state.iteration}",
        f"n_classes={state.n_classes}",
        f"channels={state.channels}",
        f"rng.data={json.dumps(state.rng_data.bit_generator.state, sort_keys=True, separators=(',', ':'))}",
        f"rng.texmod={json.dumps(state.rng_texmod.bit_generator.state, sort_keys=True, separators=(',', ':'))}",
        f"adam.step.g={state.opt_g.moments.step}",
        f"adam.step.d={state.opt_d.moments.step}",
        f"skipped.g={state.opt_g.skipped}",
        f"skipped.d={state.opt_d.skipped}",
    ]
    chunks = []
    offset = 0
    for name, array in _named_arrays(state):
        raw = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
        header.append(f"tensor.{name}={_format_shape(array.shape)};{offset};{len(raw)};{zlib.crc32(raw)}")
        chunks.append(raw)
        offset += len(raw)
    header_bytes = ("\n".join(header) + "\n").encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(f"{MAGIC} {VERSION} {len(header_bytes)}\n".encode("ascii"))
            f.write(header_bytes)
            for chunk in chunks:
                f.write(chunk)
        os.replace(tmp, path)
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}")
    logger.info("saved checkpoint %s at iteration %d", path, state.iteration)
    return path


def read_header(raw: bytes) -> Tuple[Dict[str, str], int]:
    """Parse the preamble and header; returns (fields, payload offset)."""
    newline = raw.find(b"\n")
    preamble = raw[:newline].decode("ascii", errors="replace").split() if newline >= 0 else []
    if len(preamble) != 3 or preamble[0] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    if preamble[1] != str(VERSION):
        raise FormatError(f"unsupported checkpoint version {preamble[1]}, expected {VERSION}")
    try:
        header_len = int(preamble[2])
    except ValueError:
        raise FormatError(f"bad header length {preamble[2]!r}")
    start = newline + 1
    if len(raw) < start + header_len:
        raise IoError("checkpoint truncated inside the header")
    fields = {}
    for line in raw[start : start + header_len].decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed header line {line!r}")
        fields[key] = value
    return fields, start + header_len


def checkpoint_load(path: Union[str, Path]) -> TrainState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}")
    fields, payload_start = read_header(raw)
    payload = memoryview(raw)[payload_start:]

    try:
        config = config_from_json(fields["config"])
        state = build_state(config, int(fields["n_classes"]), int(fields["channels"]))
        state.iteration = int(fields["iteration"])
        state.rng_data.bit_generator.state = json.loads(fields["rng.data"])
        state.rng_texmod.bit_generator.state = json.loads(fields["rng.texmod"])
        state.opt_g.moments.step = int(fields["adam.step.g"])
        state.opt_d.moments.step = int(fields["adam.step.d"])
        state.opt_g.skipped = int(fields["skipped.g"])
        state.opt_d.skipped = int(fields["skipped.d"])
    except KeyError as e:
        raise FormatError(f"checkpoint header lacks {e.args[0]}")
    if not 0 <= state.iteration <= state.total_iters:
        raise FormatError(f"stored iteration {state.iteration} outside [0, {state.total_iters}]")

    manifest = {k[len("tensor."):]: v for k, v in fields.items() if k.startswith("tensor.")}
    expected = _named_arrays(state)
    if set(manifest) != {name for name, _ in expected}:
        missing = sorted({name for name, _ in expected} - set(manifest))
        extra = sorted(set(manifest) - {name for name, _ in expected})
        raise FormatError(f"tensor manifest mismatch (missing {missing}, unexpected {extra})")

    loaded: Dict[str, np.ndarray] = {}
    cursor = 0
    for name, template in expected:
        shape_text, offset, nbytes, crc = manifest[name].split(";")
        shape, offset, nbytes, crc = _parse_shape(shape_text), int(offset), int(nbytes), int(crc)
        if shape != template.shape:
            raise FormatError(f"{name}: stored shape {shape} does not match {template.shape}")
        if offset != cursor or nbytes != template.size * PAYLOAD_DTYPE.itemsize:
            raise FormatError(f"{name}: manifest ranges do not tile the payload")
        if offset + nbytes > len(payload):
            raise IoError(f"checkpoint {path} is truncated at tensor {name}")
        chunk = bytes(payload[offset : offset + nbytes])
        if zlib.crc32(chunk) != crc:
            state.integrity_errors.append(name)
            logger.warning("checksum mismatch for %s in %s", name, path)
        loaded[name] = np.frombuffer(chunk, dtype=PAYLOAD_DTYPE).astype(np.float32).reshape(shape)
        cursor += nbytes
    if cursor != len(payload):
        raise FormatError(f"checkpoint {path} has {len(payload) - cursor} trailing payload bytes")

    _restore(state, loaded)
    logger.info("loaded checkpoint %s at iteration %d", path, state.iteration)
    return state


def _restore(state: TrainState, loaded: Dict[str, np.ndarray]) -> None:
    named = state.named_parameters()
    for name, p in named:
        p.data = loaded[name]
    _restore_moments(state.opt_g, "g", [n for n, _ in named if n.startswith("gen.")], loaded)
    _restore_moments(state.opt_d, "d", [n for n, _ in named if not n.startswith("gen.")], loaded)


def _restore_moments(opt: Adam, group: str, names: List[str], loaded: Dict[str, np.ndarray]) -> None:
    opt.moments.m = [loaded[f"adam.m.{group}.{n}"] for n in names]
    opt.moments.v = [loaded[f"adam.v.{group}.{n}"] for n in names]

