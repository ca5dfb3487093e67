'''Binary netpbm images: P6 (RGB frames) and P5 (label maps), maxval 255.

Headers are parsed by the netpbm rules: whitespace-separated tokens, '#'
comments running to the end of the line, and exactly one whitespace byte
between the maxval and the raster. Writing emits the canonical header
`P6\\n<w> <h>\\n255\\n`, so write -> read -> write is byte-identical.
'''

from typing import Tuple

import numpy as np

from ..errors import DataIOError, NetpbmFormatError

__all__ = ['read_ppm', 'write_ppm', 'read_pgm', 'write_pgm', 'read_netpbm']

_CHANNELS = {b'P6': 3, b'P5': 1}
_WHITESPACE = b' \t\n\r\v\f'


def _parse_header(data: bytes, path) -> Tuple[bytes, int, int, int, int]:
    '''Returns (magic, width, height, maxval, raster offset).'''
    magic = data[:2]
    if magic not in _CHANNELS:
        raise NetpbmFormatError(f"{path}: unknown magic {magic!r}, "
                                f"expected P5 or P6")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise NetpbmFormatError(f"{path}: truncated header")
        byte = data[pos:pos + 1]
        if byte in _WHITESPACE:
            pos += 1
        elif byte == b'#':
            end = data.find(b'\n', pos)
            if end < 0:
                raise NetpbmFormatError(f"{path}: truncated header comment")
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE \
                    and data[pos:pos + 1] != b'#':
                pos += 1
            token = data[start:pos]
            if not token.isdigit():
                raise NetpbmFormatError(f"{path}: invalid header field "
                                        f"{token!r}")
            tokens.append(int(token))

    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise NetpbmFormatError(f"{path}: missing whitespace before raster")
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise NetpbmFormatError(f"{path}: invalid dimensions "
                                f"{width}x{height}")
    if maxval != 255:
        raise NetpbmFormatError(f"{path}: maxval {maxval} is not supported, "
                                f"only 255")
    return magic, width, height, maxval, pos + 1


def read_netpbm(path) -> np.ndarray:
    '''Reads a P5 or P6 file into a uint8 array, (H, W) or (H, W, 3).'''
    try:
        with open(path, 'rb') as fh:
            data = fh.read()
    except OSError as e:
        raise DataIOError(f"Cannot read {path}: {e}") from e

    magic, width, height, _, offset = _parse_header(data, path)
    channels = _CHANNELS[magic]
    size = width * height * channels
    if len(data) - offset < size:
        raise NetpbmFormatError(f"{path}: truncated raster, expected {size} "
                                f"bytes, found {len(data) - offset}")
    raster = np.frombuffer(data, dtype=np.uint8, count=size, offset=offset)
    if channels == 1:
        return raster.reshape(height, width).copy()
    return raster.reshape(height, width, channels).copy()


def _read_expecting(path, magic: bytes) -> np.ndarray:
    grid = read_netpbm(path)
    is_rgb = grid.ndim == 3
    if is_rgb != (magic == b'P6'):
        raise NetpbmFormatError(f"{path}: expected a {magic.decode()} file")
    return grid


def read_ppm(path) -> np.ndarray:
    '''RGB frame as uint8 (H, W, 3).'''
    return _read_expecting(path, b'P6')


def read_pgm(path) -> np.ndarray:
    '''Gray/label map as uint8 (H, W).'''
    return _read_expecting(path, b'P5')


def _to_bytes(grid, ndim: int, path) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.ndim != ndim or (ndim == 3 and grid.shape[2] != 3):
        raise NetpbmFormatError(f"{path}: cannot write array of shape "
                                f"{grid.shape}")
    if grid.shape[0] == 0 or grid.shape[1] == 0:
        raise NetpbmFormatError(f"{path}: cannot write an empty image")
    if grid.size and (grid.min() < 0 or grid.max() > 255):
        raise NetpbmFormatError(f"{path}: values must lie in [0, 255], got "
                                f"[{grid.min()}, {grid.max()}]")
    if not np.issubdtype(grid.dtype, np.integer):
        if not np.array_equal(grid, np.round(grid)):
            raise NetpbmFormatError(f"{path}: values must be integers")
    return np.ascontiguousarray(grid, dtype=np.uint8)


def _write(path, magic: bytes, raster: np.ndarray):
    height, width = raster.shape[:2]
    header = magic + f"\n{width} {height}\n255\n".encode('ascii')
    try:
        with open(path, 'wb') as fh:
            fh.write(header)
            fh.write(raster.tobytes())
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e


def write_ppm(path, grid):
    '''Writes an (H, W, 3) array with values in [0, 255] as binary P6.'''
    _write(path, b'P6', _to_bytes(grid, 3, path))


def write_pgm(path, grid):
    '''Writes an (H, W) array with values in [0, 255] as binary P5.'''
    _write(path, b'P5', _to_bytes(grid, 2, path))
