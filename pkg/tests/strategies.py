"""Random packet generators shared by the wire tests."""

import random

from hypothesis import strategies as st

from lamp.wire import (
    ETHERTYPE_IPV4,
    LAMP_TYPE_BYTES,
    EthernetHeader,
    LampOption,
    OptionKind,
    Packet,
    finalize,
    make_packet,
)

u32 = st.integers(0, 0xFFFFFFFF)
u48 = st.integers(0, (1 << 48) - 1)

lamp_options = st.one_of(
    st.builds(LampOption.ingress, u32),
    st.builds(LampOption.alert, u32),
    st.builds(LampOption.forward, u32, u32),
)


@st.composite
def foreign_options(draw, room: int, first_may_be_lamp: bool):
    words = draw(st.integers(0, room // 4))
    data = bytearray(draw(st.binary(min_size=4 * words, max_size=4 * words)))
    if data and not first_may_be_lamp and data[0] in LAMP_TYPE_BYTES:
        data[0] = 0x07
    return bytes(data)


@st.composite
def packets(draw):
    if draw(st.integers(0, 9)) == 0:
        ethertype = draw(st.integers(0, 0xFFFF).filter(lambda e: e != ETHERTYPE_IPV4))
        return Packet(EthernetHeader(draw(u48), draw(u48), ethertype), None, payload=draw(st.binary(max_size=64)))
    opt = draw(st.none() | lamp_options)
    room = 40 - (opt.kind.padded_len if opt else 0)
    foreign = draw(foreign_options(room, opt is not None))
    return make_packet(
        draw(u32), draw(u32), draw(st.binary(max_size=256)),
        src_mac=draw(u48), dst_mac=draw(u48), lamp_option=opt, foreign_options=foreign,
        tos=draw(st.integers(0, 255)), identification=draw(st.integers(0, 0xFFFF)),
        flags=draw(st.sampled_from([0, 2])), ttl=draw(st.integers(0, 255)), protocol=draw(st.integers(0, 255)),
    )


def random_packet(rng: random.Random) -> Packet:
    """Fast non-hypothesis generator for bulk runs."""
    if rng.random() < 0.05:
        et = rng.choice([0x86DD, 0x0806, 0x88CC])
        return Packet(EthernetHeader(rng.getrandbits(48), rng.getrandbits(48), et), None,
                      payload=rng.randbytes(rng.randint(0, 64)))
    kind = rng.choice([None, *OptionKind])
    if kind is None:
        opt = None
    elif kind is OptionKind.INGRESS_SWITCH_INFO:
        opt = LampOption.ingress(rng.getrandbits(32))
    elif kind is OptionKind.ATTACK_ALERT:
        opt = LampOption.alert(rng.getrandbits(32))
    else:
        opt = LampOption.forward(rng.getrandbits(32), rng.getrandbits(32))
    room = 40 - (opt.kind.padded_len if opt else 0)
    foreign = bytearray(rng.randbytes(4 * rng.randint(0, room // 4)))
    if foreign and opt is None and foreign[0] in LAMP_TYPE_BYTES:
        foreign[0] = 0x07
    return finalize(Packet(
        EthernetHeader(rng.getrandbits(48), rng.getrandbits(48)),
        make_packet(rng.getrandbits(32), rng.getrandbits(32), ttl=rng.randint(0, 255), tos=rng.getrandbits(8),
                    identification=rng.getrandbits(16), flags=rng.choice([0, 2]),
                    protocol=rng.getrandbits(8)).ip,
        lamp_option=opt, foreign_options=bytes(foreign), payload=rng.randbytes(rng.randint(0, 512)),
    ))
