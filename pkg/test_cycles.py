"""
环统计单元测试
验证：
1. 容斥快速路径与字面求和给出相同的整数分子
2. C_2 闭式、全 1 矩阵、对称不变性
3. 平移环统计的 k = 2 展开
4. Y_{M1} 的组装与缺失 C_k 的处理
"""

import math
import sys
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

# 确保 src 可导入
sys.path.insert(0, str(Path(__file__).parent))

from src.cycles import (
    CycleStats,
    PlantInfo,
    correction_from_stats,
    correction_Y,
    cycle_stat_bruteforce,
    cycle_stat_fast,
    cycle_stat_shifted,
    cycle_stats,
    cycle_sum_bruteforce,
    cycle_sum_fast,
    normalize_cycle_sum,
)
from src.errors import CapabilityError, DomainError
from src.model import ConstraintMatrix, ModelParams, sample_matrix
from src.seeding import make_rng
from src.settings import CyclesSection, LabSettings

MATRIX_DIR = Path(__file__).parent / "data" / "matrices"


def falling(x: int, k: int) -> int:
    return math.perm(x, k) if k <= x else 0


def c2_closed_form(G: ConstraintMatrix) -> int:
    """‖GᵀG‖_F² − n·m² − m·n(n−1)"""
    g = G.signs()
    gram = g.T @ g
    return int(np.sum(gram * gram)) - G.n * G.m ** 2 - G.m * G.n * (G.n - 1)


# ────────────────────────────────────────────────────────────────────────────
#  1. 快速路径 vs 字面求和
# ────────────────────────────────────────────────────────────────────────────

class TestCycleSums(unittest.TestCase):

    def test_all_ones_fixture(self):
        G, _ = ConstraintMatrix.from_fixture_text((MATRIX_DIR / "all_ones_3x3.sbp").read_text(encoding="utf-8"))
        self.assertEqual(cycle_sum_fast(G, 2), 36)
        self.assertEqual(cycle_sum_bruteforce(G, 2), 36)
        self.assertAlmostEqual(cycle_stat_fast(G, 2), 4.0, delta=1e-12)
        self.assertAlmostEqual(cycle_stat_bruteforce(G, 3), 36 / 27, delta=1e-12)

    def test_all_ones_falling_factorials(self):
        G = ConstraintMatrix.from_signs(np.ones((6, 7), dtype=np.int64))
        for k in (2, 3, 4):
            with self.subTest(k=k):
                self.assertEqual(cycle_sum_fast(G, k), falling(7, k) * falling(6, k))

    def test_fast_matches_bruteforce(self):
        for seed, (n, m) in enumerate(((7, 6), (5, 8), (9, 9))):
            G = sample_matrix(ModelParams(kappa="1", n=n, m=m, seed=seed))
            for k in (2, 3, 4):
                with self.subTest(n=n, m=m, k=k):
                    self.assertEqual(cycle_sum_fast(G, k), cycle_sum_bruteforce(G, k))

    def test_fast_matches_bruteforce_random_k23(self):
        # 500 个随机实例，n, m ≤ 8
        rng = make_rng(500)
        for i in range(500):
            n, m = (int(v) for v in rng.integers(1, 9, size=2))
            G = sample_matrix(ModelParams(kappa="1", n=n, m=m), rng)
            for k in (2, 3):
                with self.subTest(instance=i, n=n, m=m, k=k):
                    self.assertEqual(cycle_sum_fast(G, k), cycle_sum_bruteforce(G, k))

    def test_fast_matches_bruteforce_random_k4(self):
        # 50 个随机实例，n, m ≤ 10
        rng = make_rng(50)
        for i in range(50):
            n, m = (int(v) for v in rng.integers(1, 11, size=2))
            G = sample_matrix(ModelParams(kappa="1", n=n, m=m), rng)
            with self.subTest(instance=i, n=n, m=m):
                self.assertEqual(cycle_sum_fast(G, 4), cycle_sum_bruteforce(G, 4))

    def test_fast_matches_bruteforce_k5(self):
        G = sample_matrix(ModelParams(kappa="1", n=6, m=6, seed=31))
        with patch("src.cycles.get_settings", return_value=LabSettings(cycles=CyclesSection(k_fast=5))):
            self.assertEqual(cycle_sum_fast(G, 5), cycle_sum_bruteforce(G, 5))

    def test_c2_closed_form(self):
        for seed in range(3):
            G = sample_matrix(ModelParams(kappa="1", n=30, m=25, seed=seed))
            self.assertEqual(cycle_sum_fast(G, 2), c2_closed_form(G))

    def test_k_larger_than_dimensions(self):
        G = sample_matrix(ModelParams(kappa="1", n=3, m=5, seed=2))
        self.assertEqual(cycle_sum_bruteforce(G, 4), 0)
        self.assertEqual(cycle_sum_fast(G, 4), 0)

    def test_zero_rows(self):
        self.assertEqual(normalize_cycle_sum(0, 5, 0, 2), 0.0)

    def test_invariances(self):
        G = sample_matrix(ModelParams(kappa="1", n=8, m=7, seed=5))
        transposed = ConstraintMatrix.from_signs(G.signs().T)
        rows_permuted = ConstraintMatrix.from_signs(G.signs()[::-1])
        for k in (2, 3, 4):
            base = cycle_sum_fast(G, k)
            with self.subTest(k=k):
                self.assertEqual(cycle_sum_fast(G.negate_column(2), k), base)
                self.assertEqual(cycle_sum_fast(G.negate_row(4), k), base)
                self.assertEqual(cycle_sum_fast(G.permute_columns([3, 1, 0, 2, 7, 6, 5, 4]), k), base)
                self.assertEqual(cycle_sum_fast(rows_permuted, k), base)
                self.assertEqual(cycle_sum_fast(transposed, k), base)


# ────────────────────────────────────────────────────────────────────────────
#  2. 容量上限
# ────────────────────────────────────────────────────────────────────────────

class TestCapabilities(unittest.TestCase):

    def test_k_beyond_fast_path(self):
        G = sample_matrix(ModelParams(kappa="1", n=6, m=6, seed=0))
        with self.assertRaises(CapabilityError):
            cycle_sum_fast(G, 5)

    def test_exact_range_overflow(self):
        G = sample_matrix(ModelParams(kappa="1", n=240, m=240, seed=0))
        with self.assertRaises(CapabilityError):
            cycle_sum_fast(G, 4)

    def test_bruteforce_budget(self):
        G = sample_matrix(ModelParams(kappa="1", n=12, m=12, seed=0))
        self.assertIsInstance(cycle_sum_bruteforce(G, 3), int)
        with self.assertRaises(CapabilityError):
            cycle_sum_bruteforce(G, 4)

    def test_k_must_be_at_least_two(self):
        G = sample_matrix(ModelParams(kappa="1", n=4, m=4, seed=0))
        with self.assertRaises(DomainError):
            cycle_sum_fast(G, 1)

    def test_cycle_stats_reports_missing(self):
        G = sample_matrix(ModelParams(kappa="1", n=12, m=12, seed=0))
        with self.assertRaises(CapabilityError) as ctx:
            cycle_stats(G, 5)
        self.assertIn("5", str(ctx.exception))

    def test_cycle_stats_method_labels(self):
        G = sample_matrix(ModelParams(kappa="1", n=6, m=6, seed=1))
        self.assertEqual(cycle_stats(G, 4).method, "fast")
        self.assertEqual(cycle_stats(G, 3, method="bruteforce").method, "bruteforce")
        mixed = cycle_stats(G, 5)
        self.assertEqual(mixed.method, "mixed")
        self.assertEqual(mixed.ks, [2, 3, 4, 5])
        self.assertEqual(list(mixed.to_columns()), ["c2", "c3", "c4", "c5"])
        with self.assertRaises(CapabilityError):
            mixed.c(6)


# ────────────────────────────────────────────────────────────────────────────
#  3. 平移环统计
# ────────────────────────────────────────────────────────────────────────────

class TestShiftedCycles(unittest.TestCase):

    def setUp(self):
        self.G = sample_matrix(ModelParams(kappa="1", n=6, m=5, seed=17))

    def test_zero_shift_is_plain(self):
        for k in (2, 3):
            shifted = cycle_stat_shifted(self.G, k, PlantInfo(kind="single", beta_n=0.0))
            self.assertAlmostEqual(shifted, cycle_stat_bruteforce(self.G, k), delta=1e-12)

    def test_k2_expansion(self):
        n, m = self.G.n, self.G.m
        b = -0.3
        s = 2 * b / math.sqrt(m * n)
        r = self.G.signs().sum(axis=1)
        expected = (cycle_stat_bruteforce(self.G, 2)
                    - s * 2 * (m - 1) * float(np.sum(r * r - n)) / (n * m)
                    + s * s * n * (n - 1) * m * (m - 1) / (n * m))
        got = cycle_stat_shifted(self.G, 2, PlantInfo(kind="single", beta_n=b))
        self.assertAlmostEqual(got, expected, delta=1e-12)

    def test_pair_full_block_doubles_single(self):
        b = -0.2
        pair = cycle_stat_shifted(self.G, 3, PlantInfo(kind="pair", beta_n=b, q_block=self.G.n))
        single = cycle_stat_shifted(self.G, 3, PlantInfo(kind="single", beta_n=2 * b))
        self.assertAlmostEqual(pair, single, delta=1e-12)

    def test_pair_empty_block_is_plain(self):
        pair = cycle_stat_shifted(self.G, 2, PlantInfo(kind="pair", beta_n=-0.2, q_block=0))
        self.assertAlmostEqual(pair, cycle_stat_bruteforce(self.G, 2), delta=1e-12)

    def test_plant_info_validation(self):
        with self.assertRaises(DomainError):
            PlantInfo(kind="triple", beta_n=0.1)
        with self.assertRaises(DomainError):
            PlantInfo(kind="pair", beta_n=0.1)


# ────────────────────────────────────────────────────────────────────────────
#  4. Y_{M1}
# ────────────────────────────────────────────────────────────────────────────

class TestCorrection(unittest.TestCase):

    def test_hand_assembly(self):
        stats = CycleStats(n=10, m=10, method="fast", values={2: 1.5, 3: -0.5})
        b = -0.25
        x = 2 * b
        expected = (2 * x ** 2 * 1.5 - x ** 4) / 8 + (2 * x ** 3 * -0.5 - x ** 6) / 12
        term = correction_from_stats(stats, b, 3)
        self.assertAlmostEqual(term.y, expected, delta=1e-15)
        self.assertEqual(term.m1, 3)
        self.assertEqual(term.beta_convention, "beta_n")

    def test_default_m1_uses_all_values(self):
        stats = CycleStats(n=10, m=10, method="fast", values={2: 0.0, 3: 0.0})
        self.assertEqual(correction_from_stats(stats, -0.1).m1, 3)

    def test_missing_order(self):
        stats = CycleStats(n=10, m=10, method="fast", values={2: 0.0})
        with self.assertRaises(CapabilityError):
            correction_from_stats(stats, -0.1, 4)

    def test_zero_beta_gives_zero(self):
        G = sample_matrix(ModelParams(kappa="1", n=8, m=8, seed=2))
        self.assertEqual(correction_Y(G, 4, 0.0).y, 0.0)

    def test_correction_from_matrix(self):
        G = sample_matrix(ModelParams(kappa="1", n=8, m=8, seed=3))
        term = correction_Y(G, 3, -0.3, convention="beta")
        stats = cycle_stats(G, 3)
        self.assertAlmostEqual(term.y, correction_from_stats(stats, -0.3, 3).y, delta=1e-15)
        self.assertEqual(term.beta_convention, "beta")


# ────────────────────────────────────────────────────────────────────────────
#  主入口
# ────────────────────────────────────────────────────────────────────────────

if __name__ == "__main__":
    unittest.main(verbosity=2)
