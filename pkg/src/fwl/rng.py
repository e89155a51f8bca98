"""Counter-keyed random streams.

Every stochastic component draws from a stream keyed by
(master_seed, module_tag, index), so replica-to-stream assignment is a
pure function of the configuration and worker scheduling cannot alter
any draw.  Python-side sampling uses numpy's counter-based Philox; the
compiled replica kernels derive per-replica xoshiro256++ states from the
same key tuple via splitmix64 (constructing a numpy Generator per
replica costs ~40us, which is too slow at 10^6 replicas).
"""

from __future__ import annotations

import numpy as np

# module tags (arbitrary distinct constants, part of the stream key)
TAG_BBM = 0xB1
TAG_BBM_INIT = 0xB2
TAG_GENEALOGY = 0xB3
TAG_SPINE = 0x51
TAG_SPINE_EULER = 0x52
TAG_CPP = 0xC0
TAG_VERIFY = 0xF0


def stream(master_seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Philox generator for (master_seed, tag, index)."""
    ss = np.random.SeedSequence((int(master_seed), int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def kernel_key(master_seed: int, tag: int) -> tuple[np.uint64, np.uint64]:
    """Two 64-bit words feeding the compiled kernels' per-replica seeding.

    Returned as numpy uint64 scalars: plain ints above 2^63 would not
    convert at the compiled-kernel boundary.
    """
    ss = np.random.SeedSequence((int(master_seed), int(tag)))
    k = ss.generate_state(2, dtype=np.uint64)
    return k[0], k[1]
