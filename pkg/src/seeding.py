"""
随机数流约定

每个副本的生成器 = Philox（计数器型）+ SeedSequence(base_seed, spawn_key=(stream, replica))。
相同 (base_seed, stream, replica) 在任何 worker 数下都得到同一条流；
增加副本数不会改变前面副本的结果。
"""

import numpy as np

U64_MAX = (1 << 64) - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(check_seed(seed)))


def replica_seed(base_seed: int, stream: int, replica: int) -> int:
    """派生出的 64 位副本种子（写入记录，便于单独复现某个副本）"""
    ss = np.random.SeedSequence(check_seed(base_seed), spawn_key=(int(stream), int(replica)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def replica_rng(base_seed: int, stream: int, replica: int) -> np.random.Generator:
    """只需要生成器、不需要记录种子时用"""
    return make_rng(replica_seed(base_seed, stream, replica))
