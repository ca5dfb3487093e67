'''Binary model files.

Layout, all integers little-endian u32:

```
b"DCFM" | version | len | ModelConfig as UTF-8 JSON
then per parameter in named_parameters() order:
  len | name | ndim | dims... | float32 little-endian values
```

The config is written with sorted keys and every parameter is stored as
float32, so save -> load -> save reproduces the file byte for byte.
'''

import json
import logging
import struct
from typing import List, Tuple

import numpy as np
import torch

from ..errors import ConfigError, DataIOError, ModelFormatError
from ..framework.config import ModelConfig
from ..framework.dcfm_net import DCFMNet

__all__ = ['save_model', 'load_model', 'model_to_bytes', 'model_from_bytes',
           'MAGIC', 'VERSION']

logger = logging.getLogger(__name__)

MAGIC = b'DCFM'
VERSION = 1
_U32 = struct.Struct('<I')


def model_to_bytes(model: DCFMNet) -> bytes:
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode('utf-8')
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(config)), config]
    for name, param in model.named_parameters():
        raw = name.encode('utf-8')
        chunks += [_U32.pack(len(raw)), raw, _U32.pack(param.dim())]
        chunks += [_U32.pack(d) for d in param.shape]
        values = param.detach().cpu().to(torch.float32).numpy()
        chunks.append(values.astype('<f4').tobytes())
    return b''.join(chunks)


class _Reader:

    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"{self.source}: truncated while reading "
                                   f"{what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def model_from_bytes(data: bytes, source: str = '<bytes>') -> DCFMNet:
    reader = _Reader(data, source)
    magic = reader.take(4, 'magic')
    if magic != MAGIC:
        raise ModelFormatError(f"{source}: bad magic {magic!r}, expected "
                               f"{MAGIC!r}")
    version = reader.u32('version')
    if version != VERSION:
        raise ModelFormatError(f"{source}: unsupported version {version}, "
                               f"expected {VERSION}")
    try:
        config = json.loads(reader.take(reader.u32('config length'),
                                        'config').decode('utf-8'))
        config = ModelConfig.from_dict(config)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError,
            AttributeError, ConfigError) as e:
        raise ModelFormatError(f"{source}: unreadable model config: {e}") from e

    stored: List[Tuple[str, np.ndarray]] = []
    while not reader.done:
        raw_name = reader.take(reader.u32('name length'), 'name')
        try:
            name = raw_name.decode('utf-8')
        except UnicodeDecodeError as e:
            raise ModelFormatError(f"{source}: bad parameter name at byte "
                                   f"{reader.pos}") from e
        ndim = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"dims of {name}") for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(4 * count, f"values of {name}")
        stored.append((name, np.frombuffer(raw, dtype='<f4').reshape(shape)))

    model = DCFMNet(config)
    expected = [(n, tuple(p.shape)) for n, p in model.named_parameters()]
    found = [(n, a.shape) for n, a in stored]
    if found != expected:
        missing = [e for e in expected if e not in found]
        extra = [f for f in found if f not in expected]
        raise ModelFormatError(f"{source}: parameters do not match the stored "
                               f"config; missing {missing[:3]}, unexpected "
                               f"{extra[:3]}")
    with torch.no_grad():
        for (_, param), (_, values) in zip(model.named_parameters(), stored):
            param.copy_(torch.from_numpy(values.astype(np.float32)))
    return model


def save_model(path, model: DCFMNet):
    data = model_to_bytes(model)
    try:
        with open(path, 'wb') as fh:
            fh.write(data)
    except OSError as e:
        raise DataIOError(f"Cannot write model {path}: {e}") from e
    logger.info("Saved model with %d parameter tensors to %s",
                len(list(model.parameters())), path)


def load_model(path) -> DCFMNet:
    try:
        with open(path, 'rb') as fh:
            data = fh.read()
    except OSError as e:
        raise DataIOError(f"Cannot read model {path}: {e}") from e
    return model_from_bytes(data, str(path))
