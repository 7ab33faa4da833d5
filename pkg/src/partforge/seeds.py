"""Deterministic seed derivation for independent RNG substreams."""

import numpy as np


def derive_seed(*parts):
    """Mix arbitrary ints/strings into one well-spread 63-bit seed."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.extend(ord(c) for c in p)
        else:
            ints.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1)[0])
