"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

This file contains the binary container format every array artifact is
stored in. A container is a little-endian header

    magic (4 bytes) | version u32 | ndims u32 | dims u64[ndims] | nsections u32

followed by named sections, each

    name length u16 | name (utf-8) | dtype u8 | ndim u8 | shape u64[ndim] | data

where dtype 0 is float64 and dtype 1 is complex128.
"""
# I M P O R T S ###############################################################

import struct

from collections import namedtuple

import numpy as np

from mrfrecon.exceptions import ContainerError

# C O N S T A N T S ###########################################################

VERSION = 1

# Magic numbers of the artifacts
DICTIONARY_MAGIC = "MRFD"
TRAJECTORY_MAGIC = "MRFT"
KSPACE_MAGIC = "MRFK"
MODEL_MAGIC = "MRFM"
MAPS_MAGIC = "MRFQ"

DTYPE_CODES = {
    0: np.dtype("<f8"),
    1: np.dtype("<c16"),
}

_HEADER = struct.Struct("<4sII")
_COUNT = struct.Struct("<I")
_NAME_LENGTH = struct.Struct("<H")
_SECTION = struct.Struct("<BB")

Container = namedtuple('Container', ['magic', 'version', 'dims', 'sections'])

# F U N C T I O N S ###########################################################


def encode_container(magic, dims, sections):
    """
    Serializes arrays into the container format.

    :param magic: the four character magic of the artifact
    :param dims: a sequence of non-negative integers describing the artifact
    :param sections: an ordered mapping of section name to array
    :return: the encoded bytes
    """
    if len(magic) != 4:
        raise ContainerError("magic must have 4 characters, got [{}]".format(magic))
    dims = [int(dim) for dim in dims]
    parts = [
        _HEADER.pack(magic.encode("ascii"), VERSION, len(dims)),
        struct.pack("<{}Q".format(len(dims)), *dims),
        _COUNT.pack(len(sections)),
    ]
    for name, array in sections.items():
        array = np.asarray(array)
        code = 1 if np.iscomplexobj(array) else 0
        data = np.ascontiguousarray(array, dtype=DTYPE_CODES[code])
        encoded_name = name.encode("utf-8")
        parts.append(_NAME_LENGTH.pack(len(encoded_name)))
        parts.append(encoded_name)
        parts.append(_SECTION.pack(code, data.ndim))
        parts.append(struct.pack("<{}Q".format(data.ndim), *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def decode_container(payload, magic=None):
    """
    Parses bytes produced by encode_container.

    :param payload: the encoded bytes
    :param magic: if given, the magic the payload must carry
    :return: a Container whose sections map names to arrays
    """
    reader = _Reader(payload)
    raw_magic, version, ndims = reader.unpack(_HEADER)
    found = raw_magic.decode("ascii", errors="replace")
    if magic is not None and found != magic:
        raise ContainerError("expected magic [{}], found [{}]".format(magic, found))
    if version != VERSION:
        raise ContainerError("unsupported container version {}".format(version))
    dims = reader.unpack(struct.Struct("<{}Q".format(ndims)))
    (count,) = reader.unpack(_COUNT)
    sections = dict()
    for _ in range(count):
        (length,) = reader.unpack(_NAME_LENGTH)
        name = reader.take(length).decode("utf-8")
        code, ndim = reader.unpack(_SECTION)
        if code not in DTYPE_CODES:
            raise ContainerError("section [{}] has unknown dtype code {}".format(name, code))
        shape = reader.unpack(struct.Struct("<{}Q".format(ndim)))
        dtype = DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape)
        sections[name] = data.astype(dtype.newbyteorder("="))
    if reader.remaining():
        raise ContainerError("{} trailing bytes after the last section".format(reader.remaining()))
    return Container(found, version, tuple(dims), sections)


def write_container(filename, magic, dims, sections):
    """
    Writes arrays to a container file.

    :param filename: the name of the file to write
    :param magic: the four character magic of the artifact
    :param dims: the artifact dimensions stored in the header
    :param sections: an ordered mapping of section name to array
    """
    with open(filename, "wb") as outfile:
        outfile.write(encode_container(magic, dims, sections))


def read_container(filename, magic):
    """
    Reads a container file, checking its magic.

    :param filename: the name of the file to read
    :param magic: the magic the file must carry
    :return: the decoded Container
    """
    with open(filename, "rb") as infile:
        payload = infile.read()
    try:
        return decode_container(payload, magic)
    except ContainerError as error:
        raise ContainerError("{}: {}".format(filename, error.value))


def require_sections(container, names):
    """
    Checks that a container holds all the named sections.

    :param container: the decoded Container
    :param names: the section names that must be present
    """
    missing = [name for name in names if name not in container.sections]
    if missing:
        raise ContainerError("container [{}] is missing sections {}".format(container.magic, missing))

# C L A S S E S ###############################################################


class _Reader(object):
    """
    Walks through a byte buffer, failing cleanly on truncated input.
    """
    def __init__(self, payload):
        self.payload = memoryview(payload)
        self.offset = 0

    def remaining(self):
        return len(self.payload) - self.offset

    def take(self, count):
        if count > self.remaining():
            raise ContainerError("truncated container: needed {} bytes at offset {}, {} left".format(
                count, self.offset, self.remaining()))
        chunk = self.payload[self.offset:self.offset + count].tobytes()
        self.offset += count
        return chunk

    def unpack(self, layout):
        return layout.unpack(self.take(layout.size))

# E N D   O F   F I L E #######################################################
