"""AR-prior checkpoints.

Layout: one line of JSON metadata (model config plus the name and shape of
every tensor), then for each tensor a line with its name followed by a matrix
block (see :mod:`pixprior.container`) holding the tensor reshaped to
``(shape[0], -1)``.
"""
import io
import json

import numpy as np
import torch

from .. import container
from ..errors import FormatError, ShapeError
from .ar import ArPriorModel

FORMAT = "pixprior-ar-checkpoint/1"


def save_model(model, path, extra=None):
    state = model.state_dict()
    tensors = [(name, t.detach().cpu().numpy()) for name, t in state.items() if not name.endswith("mask")]
    meta = {
        "format": FORMAT,
        "config": model.config,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    if extra:
        meta["extra"] = extra
    buf = io.BytesIO()
    buf.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
    for name, arr in tensors:
        buf.write(name.encode("ascii") + b"\n")
        rows = arr.shape[0] if arr.ndim else 1
        container.write_block(buf, arr.reshape(rows, -1))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    stream = io.BytesIO(data)
    try:
        meta = json.loads(stream.readline().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from None
    if meta.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} file")
    cfg = dict(meta["config"])
    cfg.pop("levels", None)
    model = ArPriorModel(**cfg)
    state = model.state_dict()
    for entry in meta["tensors"]:
        name = stream.readline().decode("ascii").rstrip("\n")
        if name != entry["name"] or name not in state:
            raise FormatError(f"{path}: unexpected section {name!r}")
        block = container.read_block(stream)
        shape = tuple(entry["shape"])
        if block.size != int(np.prod(shape)) or tuple(state[name].shape) != shape:
            raise ShapeError(f"{path}: tensor {name} has {block.size} values, expected shape {shape}")
        state[name] = torch.as_tensor(block.reshape(shape).copy())
    if stream.tell() != len(data):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    model.load_state_dict(state)
    model.eval()
    model.metadata = meta
    return model
