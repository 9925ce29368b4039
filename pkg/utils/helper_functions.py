import hashlib
import struct


def parse_range_argument(arg: str) -> list:
    """Parse a range argument which can either be a single integer, a
    comma-separated list of integers, or in a range specification with
    format start:end:step.

    Return an empty list if the argument can not be parsed."""
    if arg is None:
        return list()
    if arg.isdigit():
        return [int(arg)]
    if ',' in arg:
        values = arg.split(',')
        ret = list()
        for v in values:
            if not v.isdigit():
                return list()
            ret.append(int(v))
        return ret
    if ':' in arg:
        arg_split = arg.split(':')
        if len(arg_split) != 3:
            return list()
        for v in arg_split:
            if not v.isdigit():
                return list()
        range_spec = tuple(map(int, arg_split))
        if range_spec[2] == 0:
            return list()
        return [i for i in range(*range_spec)]
    return list()


def parse_csv(value: str) -> list:
    return [entry.strip() for entry in value.split(',') if entry.strip()]


def parse_kv_csv(option: str) -> dict:
    ret = dict()
    for pair in parse_csv(option):
        key, value = pair.split(':')
        ret[key.strip()] = value.strip()
    return ret


def length_prefixed(*fields: bytes) -> bytes:
    """Concatenate fields, each preceded by its 4-byte little-endian
    length, so that distinct field tuples never serialize equally."""
    return b''.join(struct.pack('<I', len(field)) + field for field in fields)


def sha256_fields(*fields: bytes) -> bytes:
    return hashlib.sha256(length_prefixed(*fields)).digest()


def split_length_prefixed(data: bytes) -> list:
    """Inverse of length_prefixed. Raise ValueError if the data is not a
    sequence of complete length-prefixed fields."""
    fields = list()
    offset = 0
    while offset < len(data):
        if offset + 4 > len(data):
            raise ValueError(f'truncated length prefix at offset {offset}')
        size, = struct.unpack_from('<I', data, offset)
        offset += 4
        if offset + size > len(data):
            raise ValueError(f'field at offset {offset} overruns the data')
        fields.append(data[offset:offset + size])
        offset += size
    return fields
