"""
精确计数单元测试
验证：
1. Gray 码块扫描与逐个检查的参考实现一致（含多块、切片、多进程）
2. 解列表收集与容量上限
3. 均匀解抽样与最近解搜索
"""

import sys
import unittest
from collections import Counter
from pathlib import Path
from unittest.mock import patch

import numpy as np

# 确保 src 可导入
sys.path.insert(0, str(Path(__file__).parent))

from src.counting import count_solutions, naive_count, nearest_other_solution, sample_uniform_solution
from src.errors import CapabilityError, PreconditionError
from src.model import ConstraintMatrix, ModelParams, SpinVector, sample_matrix, satisfies
from src.seeding import make_rng
from src.settings import EnumerationSection, LabSettings

MATRIX_DIR = Path(__file__).parent / "data" / "matrices"


def load_fixture(name: str):
    return ConstraintMatrix.from_fixture_text((MATRIX_DIR / name).read_text(encoding="utf-8"))


def small_blocks(block_bits: int = 4, **extra) -> LabSettings:
    """低位块很窄的配置，让小 n 也走完整的 Gray 码高位行走"""
    return LabSettings(enumeration=EnumerationSection(block_bits=block_bits, **extra))


# ────────────────────────────────────────────────────────────────────────────
#  1. 计数
# ────────────────────────────────────────────────────────────────────────────

class TestCountSolutions(unittest.TestCase):

    def test_fixture_counts(self):
        for name, expected in (("n2_single_row.sbp", 2), ("all_plus_4x1.sbp", 14)):
            with self.subTest(fixture=name):
                G, kappa = load_fixture(name)
                self.assertEqual(count_solutions(G, kappa).count, expected)

    def test_matches_naive_single_block(self):
        for seed in range(5):
            G = sample_matrix(ModelParams(kappa="1", n=10, m=8, seed=seed))
            self.assertEqual(count_solutions(G, "1").count, naive_count(G, "1"))

    def test_matches_naive_gray_walk(self):
        with patch("src.counting.get_settings", return_value=small_blocks(4)):
            for seed, kappa in ((1, "1"), (2, "0.7"), (3, "1.5")):
                with self.subTest(seed=seed, kappa=kappa):
                    G = sample_matrix(ModelParams(kappa=kappa, n=12, m=9, seed=seed))
                    self.assertEqual(count_solutions(G, kappa).count, naive_count(G, kappa))

    def test_matches_naive_random_instances(self):
        # 200 个随机实例：n ≤ 14，κ、α 混合；一半走窄块 Gray 码路径
        rng = make_rng(2024)
        kappas = ("0.5", "0.7", "1", "1.5", "2")
        narrow = small_blocks(4)
        for i in range(200):
            n = int(rng.integers(2, 15))
            kappa = kappas[int(rng.integers(len(kappas)))]
            m = int(rng.integers(0, int(1.5 * n) + 1))
            G = sample_matrix(ModelParams(kappa=kappa, n=n, m=m), rng)
            with self.subTest(instance=i, n=n, m=m, kappa=kappa):
                if i % 2:
                    with patch("src.counting.get_settings", return_value=narrow):
                        count = count_solutions(G, kappa).count
                else:
                    count = count_solutions(G, kappa).count
                self.assertEqual(count, naive_count(G, kappa))
                # X 与 −X 同时为解
                self.assertEqual(count % 2, 0)

    def test_zero_rows_counts_everything(self):
        G = ConstraintMatrix.from_bits(np.zeros((0, 7), dtype=np.uint8))
        self.assertEqual(count_solutions(G, "1").count, 128)

    def test_prefix_split_is_invariant(self):
        G = sample_matrix(ModelParams(kappa="1", n=12, m=10, seed=5))
        with patch("src.counting.get_settings", return_value=small_blocks(4)):
            base = count_solutions(G, "1", collect=True)
            for prefix in (1, 3, 8):
                with self.subTest(prefix_bits=prefix):
                    split = count_solutions(G, "1", collect=True, prefix_bits=prefix)
                    self.assertEqual(split.count, base.count)
                    self.assertEqual(split.solution_ints, base.solution_ints)

    def test_worker_count_does_not_change_result(self):
        G = sample_matrix(ModelParams(kappa="1", n=16, m=12, seed=9))
        self.assertEqual(count_solutions(G, "1", workers=2).count, count_solutions(G, "1").count)

    def test_collect_lists_exact_solutions(self):
        G, kappa = load_fixture("mixed_6x5.sbp")
        result = count_solutions(G, kappa, collect=True)
        expected = tuple(x for x in range(1 << 6) if satisfies(G, SpinVector.from_int(x, 6), kappa))
        self.assertEqual(result.solution_ints, expected)
        self.assertEqual(result.count, len(expected))
        for x in result.solutions:
            self.assertTrue(satisfies(G, x, kappa))

    def test_collect_respects_count_cap(self):
        G = ConstraintMatrix.from_bits(np.zeros((0, 8), dtype=np.uint8))
        with patch("src.counting.get_settings", return_value=small_blocks(4, list_max_count=10)):
            result = count_solutions(G, "1", collect=True)
        self.assertEqual(result.count, 256)
        self.assertIsNone(result.solution_ints)

    def test_capacity_limit(self):
        G = sample_matrix(ModelParams(kappa="1", n=10, m=2, seed=0))
        with patch("src.counting.get_settings", return_value=small_blocks(4, n_max=8)):
            with self.assertRaises(CapabilityError):
                count_solutions(G, "1")


# ────────────────────────────────────────────────────────────────────────────
#  2. 均匀抽样
# ────────────────────────────────────────────────────────────────────────────

class TestUniformSolution(unittest.TestCase):

    def test_returns_solution_and_count(self):
        G = sample_matrix(ModelParams(kappa="1", n=12, m=8, seed=21))
        x, z = sample_uniform_solution(G, "1", make_rng(1))
        self.assertEqual(z, naive_count(G, "1"))
        self.assertTrue(satisfies(G, x, "1"))

    def test_no_solution(self):
        # 奇数 n 且带宽为 0：没有解
        G = ConstraintMatrix.from_signs(np.array([[1, 1, 1]]))
        x, z = sample_uniform_solution(G, "0.1", make_rng(0))
        self.assertIsNone(x)
        self.assertEqual(z, 0)

    def test_uniform_across_blocks(self):
        G, kappa = load_fixture("mixed_6x5.sbp")
        solutions = count_solutions(G, kappa, collect=True).solution_ints
        self.assertGreater(len(solutions), 1)
        rng = make_rng(2024)
        draws = 400 * len(solutions)
        with patch("src.counting.get_settings", return_value=small_blocks(2)):
            freq = Counter(sample_uniform_solution(G, kappa, rng)[0].to_int() for _ in range(draws))
        self.assertEqual(set(freq), set(solutions))
        for x in solutions:
            # 期望 400，标准差 < 20
            self.assertLess(abs(freq[x] - 400), 120, f"解 {x} 的频率 {freq[x]} 偏离均匀")


# ────────────────────────────────────────────────────────────────────────────
#  3. 最近解
# ────────────────────────────────────────────────────────────────────────────

class TestNearestOtherSolution(unittest.TestCase):

    def test_single_flip_neighbour(self):
        G, kappa = load_fixture("all_plus_4x1.sbp")
        x = SpinVector.from_signs([1, -1, 1, -1])
        self.assertEqual(nearest_other_solution(G, x, kappa, 3), 1)

    def test_isolated_within_radius(self):
        G, kappa = load_fixture("n2_single_row.sbp")
        x = SpinVector.from_signs([1, 1])
        self.assertIsNone(nearest_other_solution(G, x, kappa, 1))
        self.assertEqual(nearest_other_solution(G, x, kappa, 2), 2)

    def test_zero_radius(self):
        G, kappa = load_fixture("n2_single_row.sbp")
        self.assertIsNone(nearest_other_solution(G, SpinVector.from_signs([1, 1]), kappa, 0))

    def test_matches_brute_force(self):
        G = sample_matrix(ModelParams(kappa="1", n=10, m=6, seed=8))
        sols = count_solutions(G, "1", collect=True).solutions
        if not sols:
            self.skipTest("sampled matrix has no solutions")
        x = sols[0]
        others = [x.hamming(y) for y in sols[1:]]
        expected = min(others) if others else None
        if expected is not None and expected > 5:
            expected = None
        self.assertEqual(nearest_other_solution(G, x, "1", 5), expected)

    def test_requires_solution(self):
        G, kappa = load_fixture("n2_single_row.sbp")
        with self.assertRaises(PreconditionError):
            nearest_other_solution(G, SpinVector.from_signs([1, -1]), kappa, 1)

    def test_budget(self):
        G, kappa = load_fixture("all_plus_4x1.sbp")
        x = SpinVector.from_signs([1, -1, 1, -1])
        with self.assertRaises(CapabilityError):
            nearest_other_solution(G, x, kappa, 3, budget=5)


# ────────────────────────────────────────────────────────────────────────────
#  主入口
# ────────────────────────────────────────────────────────────────────────────

if __name__ == "__main__":
    unittest.main(verbosity=2)
