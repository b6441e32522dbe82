"""Wire formats for the three drone ports: AT command lines, navdata
datagrams, and the per-frame video headers.

Everything here is pure functions over byte buffers; no sockets, no shared
state. All multi-byte integers are little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

# ---- ports (client -> drone / drone -> client) ----
NAVDATA_PORT = 5554  # UDP, drone -> client after trigger
VIDEO_PORT = 5555    # TCP, drone -> client
COMMAND_PORT = 5556  # UDP, client -> drone

# AT line grammar: "AT*" NAME "=" seq ("," arg)* CR.  ASCII, CR = 0x0D, no LF.
AT_PREFIX = b"AT*"
AT_TERMINATOR = b"\r"
MAX_AT_LINE = 1024

# REF argument: constant bits {18,20,22,24,28} always set, plus the two flags.
REF_BASE_MASK = (1 << 18) | (1 << 20) | (1 << 22) | (1 << 24) | (1 << 28)  # 290717696
REF_TAKEOFF_BIT = 1 << 9
REF_EMERGENCY_BIT = 1 << 8

# Navdata datagram:
#   header  u32 = 0x55667788
#   state   u32   bitmask (see STATE_* below)
#   seq     u32
#   vision  u32
#   options: (tag u16, size u16, payload[size-4])* ending with the checksum
#   option (tag 0xFFFF, size 8, u32 sum-of-preceding-bytes mod 2^32).
NAVDATA_HEADER = 0x55667788
NAVDATA_HEADER_LEN = 16
OPTION_DEMO = 0x0000
OPTION_CHECKSUM = 0xFFFF

# DEMO option payload (36 bytes):
#   ctrl_state u32, battery u32, pitch/roll/yaw f32 milli-degrees,
#   altitude i32 millimeters, vx/vy/vz f32 mm/s
DEMO_STRUCT = struct.Struct("<IIfffifff")

STATE_FLYING = 1 << 0
STATE_BATTERY_LOW = 1 << 15
STATE_WATCHDOG = 1 << 30
STATE_EMERGENCY = 1 << 31

# Video frame header:
#   "PaVE", version u8, codec u8, header_size u16, payload_size u32,
#   display_width u16, display_height u16, frame_number u32
# header_size may exceed the fixed length; readers skip to it before payload.
VIDEO_SIGNATURE = b"PaVE"
VIDEO_HEADER_STRUCT = struct.Struct("<4sBBHIHHI")
VIDEO_HEADER_LEN = VIDEO_HEADER_STRUCT.size  # 20
CODEC_RAW_RGB24 = 0xFF

AT_COMMAND_KINDS = ("REF", "PCMD", "FTRIM", "CONFIG", "COMWDG", "CTRL")


class ProtocolError(Exception):
    """Base for every encode/parse failure in this module."""


class EncodeError(ProtocolError):
    pass


class ParseError(ProtocolError):
    """Malformed input. `field` names the offending field when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ChecksumError(ParseError):
    pass


# ---------------------------------------------------------------------------
# AT commands


@dataclass(frozen=True)
class RefBits:
    takeoff: bool = False
    emergency: bool = False

    @property
    def value(self) -> int:
        v = REF_BASE_MASK
        if self.takeoff:
            v |= REF_TAKEOFF_BIT
        if self.emergency:
            v |= REF_EMERGENCY_BIT
        return v


@dataclass(frozen=True)
class PcmdArgs:
    progressive: bool = False
    roll: float = 0.0
    pitch: float = 0.0
    gaz: float = 0.0
    yaw: float = 0.0

    def clamped(self) -> "PcmdArgs":
        c = lambda v: min(1.0, max(-1.0, v))
        return PcmdArgs(self.progressive, c(self.roll), c(self.pitch), c(self.gaz), c(self.yaw))


@dataclass(frozen=True)
class AtCommand:
    kind: str
    seq: int
    ref: RefBits | None = None
    pcmd: PcmdArgs | None = None
    config_key: str | None = None
    config_value: str | None = None

    def __post_init__(self):
        if self.kind not in AT_COMMAND_KINDS:
            raise ValueError(f"unknown AT command kind {self.kind!r}")
        if self.seq < 1:
            raise ValueError("seq must be >= 1")


def ref_command(seq: int, takeoff: bool = False, emergency: bool = False) -> AtCommand:
    return AtCommand("REF", seq, ref=RefBits(takeoff, emergency))


def pcmd_command(seq: int, progressive: bool, roll=0.0, pitch=0.0, gaz=0.0, yaw=0.0) -> AtCommand:
    return AtCommand("PCMD", seq, pcmd=PcmdArgs(progressive, roll, pitch, gaz, yaw))


def config_command(seq: int, key: str, value: str) -> AtCommand:
    return AtCommand("CONFIG", seq, config_key=key, config_value=value)


def encode_float_arg(v: float) -> int:
    """Vendor float convention: the signed 32-bit integer whose bit pattern
    equals the binary32 representation of v."""
    if v != v or v in (float("inf"), float("-inf")):
        raise EncodeError(f"non-finite float argument {v!r}")
    return struct.unpack("<i", struct.pack("<f", v))[0]


def decode_float_arg(i: int) -> float:
    return struct.unpack("<f", struct.pack("<i", i))[0]


def encode_at(cmd: AtCommand) -> bytes:
    """Encode one command as an ASCII AT line with trailing CR."""
    if cmd.kind == "REF":
        if cmd.ref is None:
            raise EncodeError("REF requires RefBits")
        args = f",{cmd.ref.value}"
    elif cmd.kind == "PCMD":
        if cmd.pcmd is None:
            raise EncodeError("PCMD requires PcmdArgs")
        p = cmd.pcmd.clamped()
        vals = (encode_float_arg(v) for v in (p.roll, p.pitch, p.gaz, p.yaw))
        args = f",{1 if p.progressive else 0}," + ",".join(str(v) for v in vals)
    elif cmd.kind == "CONFIG":
        if cmd.config_key is None or cmd.config_value is None:
            raise EncodeError("CONFIG requires key and value")
        for part, name in ((cmd.config_key, "key"), (cmd.config_value, "value")):
            if '"' in part or "\r" in part:
                raise EncodeError(f"CONFIG {name} contains a forbidden character")
        args = f',"{cmd.config_key}","{cmd.config_value}"'
    else:  # FTRIM, COMWDG, CTRL: no arguments
        args = ""
    line = f"AT*{cmd.kind}={cmd.seq}{args}\r".encode("ascii")
    if len(line) > MAX_AT_LINE:
        raise EncodeError(f"AT line is {len(line)} bytes, limit {MAX_AT_LINE}")
    return line


def _parse_int(text: str, field: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{field} is not an integer: {text!r}", field=field) from None


def parse_at(line: bytes) -> AtCommand:
    """Decode one AT line (simulator side). Total: malformed input raises
    ParseError naming the offending field, never anything else."""
    if not isinstance(line, (bytes, bytearray)):
        raise ParseError("AT line must be bytes", field="line")
    if not line.startswith(AT_PREFIX):
        raise ParseError("missing AT* prefix", field="prefix")
    if not line.endswith(AT_TERMINATOR):
        raise ParseError("missing trailing CR", field="terminator")
    try:
        body = line[len(AT_PREFIX):-1].decode("ascii")
    except UnicodeDecodeError:
        raise ParseError("AT line is not ASCII", field="line") from None
    name, eq, rest = body.partition("=")
    if not eq:
        raise ParseError("missing '=' after command name", field="name")
    if name not in AT_COMMAND_KINDS:
        raise ParseError(f"unknown command name {name!r}", field="name")
    parts = rest.split(",")
    seq = _parse_int(parts[0], "seq")
    if seq < 1:
        raise ParseError(f"seq must be >= 1, got {seq}", field="seq")
    args = parts[1:]

    if name == "REF":
        if len(args) != 1:
            raise ParseError("REF: missing argument" if not args else "REF: too many arguments",
                             field="ref")
        value = _parse_int(args[0], "ref")
        return AtCommand("REF", seq, ref=RefBits(bool(value & REF_TAKEOFF_BIT),
                                                 bool(value & REF_EMERGENCY_BIT)))
    if name == "PCMD":
        if len(args) != 5:
            raise ParseError(f"PCMD: expected 5 arguments, got {len(args)}", field="pcmd")
        flag = _parse_int(args[0], "progressive")
        if flag not in (0, 1):
            raise ParseError(f"progressive flag must be 0 or 1, got {flag}", field="progressive")
        sticks = {}
        for text, fname in zip(args[1:], ("roll", "pitch", "gaz", "yaw")):
            raw = _parse_int(text, fname)
            if not -(1 << 31) <= raw < (1 << 31):
                raise ParseError(f"{fname} outside 32-bit range", field=fname)
            value = decode_float_arg(raw)
            if not -1.0 <= value <= 1.0:
                raise ParseError(f"{fname} stick value {value} outside [-1, 1]", field=fname)
            sticks[fname] = value
        return AtCommand("PCMD", seq, pcmd=PcmdArgs(bool(flag), **sticks))
    if name == "CONFIG":
        # arguments are `"key","value"`; values may contain commas, so re-join
        joined = ",".join(args)
        pieces = joined.split('","')
        if len(pieces) != 2 or not pieces[0].startswith('"') or not pieces[1].endswith('"'):
            raise ParseError("CONFIG: expected \"key\",\"value\"", field="config")
        return AtCommand("CONFIG", seq, config_key=pieces[0][1:], config_value=pieces[1][:-1])
    # FTRIM / COMWDG / CTRL
    if args:
        raise ParseError(f"{name}: unexpected arguments", field="args")
    return AtCommand(name, seq)


# ---------------------------------------------------------------------------
# Navdata


@dataclass(frozen=True)
class NavOption:
    tag: int
    payload: bytes

    @property
    def size(self) -> int:
        return 4 + len(self.payload)


@dataclass(frozen=True)
class DemoOption:
    """Typed view of the DEMO option payload. Angles in milli-degrees,
    altitude in millimeters, velocities in mm/s (body frame)."""
    ctrl_state: int = 0
    battery_percent: int = 0
    pitch_mdeg: float = 0.0
    roll_mdeg: float = 0.0
    yaw_mdeg: float = 0.0
    altitude_mm: int = 0
    vx_mm_s: float = 0.0
    vy_mm_s: float = 0.0
    vz_mm_s: float = 0.0

    def to_option(self) -> NavOption:
        return NavOption(OPTION_DEMO, DEMO_STRUCT.pack(
            self.ctrl_state, self.battery_percent,
            self.pitch_mdeg, self.roll_mdeg, self.yaw_mdeg,
            self.altitude_mm, self.vx_mm_s, self.vy_mm_s, self.vz_mm_s))

    @classmethod
    def from_option(cls, opt: NavOption) -> "DemoOption":
        if opt.tag != OPTION_DEMO:
            raise ParseError(f"not a DEMO option (tag {opt.tag:#06x})", field="tag")
        if len(opt.payload) != DEMO_STRUCT.size:
            raise ParseError(f"DEMO payload is {len(opt.payload)} bytes, "
                             f"expected {DEMO_STRUCT.size}", field="size")
        return cls(*DEMO_STRUCT.unpack(opt.payload))


@dataclass(frozen=True)
class NavdataPacket:
    state_mask: int
    seq: int
    vision_flag: int
    options: tuple[NavOption, ...] = field(default_factory=tuple)  # checksum option last

    def demo(self) -> DemoOption | None:
        for opt in self.options:
            if opt.tag == OPTION_DEMO:
                return DemoOption.from_option(opt)
        return None


def navdata_checksum(data: bytes) -> int:
    """Sum of all byte values mod 2^32 (covers everything before the
    checksum option)."""
    return sum(data) & 0xFFFFFFFF


def build_navdata(state_mask: int, seq: int, options=(), vision_flag: int = 0) -> bytes:
    """Serialize a navdata packet; the checksum option is appended
    automatically and must not be in `options`."""
    out = bytearray(struct.pack("<IIII", NAVDATA_HEADER, state_mask & 0xFFFFFFFF,
                                seq & 0xFFFFFFFF, vision_flag & 0xFFFFFFFF))
    for opt in options:
        if opt.tag == OPTION_CHECKSUM:
            raise EncodeError("checksum option is appended automatically")
        out += struct.pack("<HH", opt.tag, opt.size)
        out += opt.payload
    cks = navdata_checksum(bytes(out))
    out += struct.pack("<HHI", OPTION_CHECKSUM, 8, cks)
    return bytes(out)


def parse_navdata(data: bytes) -> NavdataPacket:
    """Parse and validate a navdata datagram (header constant, option
    bounds, checksum)."""
    if len(data) < NAVDATA_HEADER_LEN:
        raise ParseError(f"navdata too short ({len(data)} bytes)", field="header")
    header, state, seq, vision = struct.unpack_from("<IIII", data, 0)
    if header != NAVDATA_HEADER:
        raise ParseError(f"not navdata (header {header:#010x})", field="header")
    options: list[NavOption] = []
    pos = NAVDATA_HEADER_LEN
    checksum_value = None
    checksum_start = None
    while pos < len(data):
        if pos + 4 > len(data):
            raise ParseError("truncated option header", field="options")
        tag, size = struct.unpack_from("<HH", data, pos)
        if size < 4:
            raise ParseError(f"option size {size} < 4", field="size")
        if pos + size > len(data):
            raise ParseError("option payload exceeds packet", field="size")
        payload = data[pos + 4:pos + size]
        if tag == OPTION_CHECKSUM:
            if size != 8:
                raise ParseError("checksum option must be 8 bytes", field="checksum")
            checksum_value = struct.unpack("<I", payload)[0]
            checksum_start = pos
            options.append(NavOption(tag, payload))
            pos += size
            if pos != len(data):
                raise ParseError("data after checksum option", field="checksum")
            break
        options.append(NavOption(tag, payload))
        pos += size
    if checksum_value is None:
        raise ParseError("missing checksum option", field="checksum")
    computed = navdata_checksum(data[:checksum_start])
    if computed != checksum_value:
        raise ChecksumError(f"checksum mismatch: stored {checksum_value:#010x}, "
                            f"computed {computed:#010x}", field="checksum")
    return NavdataPacket(state, seq, vision, tuple(options))


# ---------------------------------------------------------------------------
# Video frame header


@dataclass(frozen=True)
class VideoFrameHeader:
    version: int
    codec: int
    header_size: int
    payload_size: int
    display_width: int
    display_height: int
    frame_number: int


def encode_video_header(h: VideoFrameHeader) -> bytes:
    if h.header_size < VIDEO_HEADER_LEN:
        raise EncodeError(f"header_size {h.header_size} < fixed length {VIDEO_HEADER_LEN}")
    out = VIDEO_HEADER_STRUCT.pack(VIDEO_SIGNATURE, h.version, h.codec, h.header_size,
                                   h.payload_size, h.display_width, h.display_height,
                                   h.frame_number)
    return out + b"\x00" * (h.header_size - VIDEO_HEADER_LEN)


def raw_frame_header(width: int, height: int, frame_number: int) -> VideoFrameHeader:
    """Header for one codec-0xFF (raw RGB24) frame."""
    return VideoFrameHeader(version=1, codec=CODEC_RAW_RGB24, header_size=VIDEO_HEADER_LEN,
                            payload_size=width * height * 3, display_width=width,
                            display_height=height, frame_number=frame_number)


def parse_video_header(data: bytes) -> VideoFrameHeader:
    if len(data) < VIDEO_HEADER_LEN:
        raise ParseError(f"video header too short ({len(data)} bytes)", field="header")
    sig, version, codec, header_size, payload_size, width, height, frame_number = \
        VIDEO_HEADER_STRUCT.unpack_from(data, 0)
    if sig != VIDEO_SIGNATURE:
        raise ParseError("not a video frame (bad signature)", field="signature")
    if header_size < VIDEO_HEADER_LEN:
        raise ParseError(f"header_size {header_size} < fixed length", field="header_size")
    if codec == CODEC_RAW_RGB24 and payload_size != width * height * 3:
        raise ParseError(f"raw RGB24 payload_size {payload_size} != {width}x{height}x3",
                         field="payload_size")
    return VideoFrameHeader(version, codec, header_size, payload_size, width, height,
                            frame_number)
