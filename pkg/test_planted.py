"""
种植模型单元测试
验证：
1. P* 采样：种植解满足约束、规范化、夹具
2. P*²_t 采样：重叠、一致块规范化、不可行的 t
3. 种植行相关的蒙特卡洛诊断
4. 采样分布：接受率、n = 2 的行分布、P*(G) ∝ Z(G)、规范变换恒等式
"""

import math
import sys
import unittest
from collections import Counter
from pathlib import Path
from unittest.mock import patch

import numpy as np
from scipy import stats

# 确保 src 可导入
sys.path.insert(0, str(Path(__file__).parent))

from src.counting import naive_count
from src.errors import DomainError, SamplingError
from src.model import ConstraintMatrix, ModelParams, SpinVector, pair_prob, satisfies
from src.planted import (
    CorrelationEstimate,
    PlantedInstance,
    feasible_overlaps,
    planted_row_correlation,
    planted_row_exact,
    planted_row_target,
    sample_planted,
    sample_planted_pair,
)
from src.seeding import make_rng
from src.settings import LabSettings, PlantedSection
from src.theory import discrete_constants

MATRIX_DIR = Path(__file__).parent / "data" / "matrices"


# ────────────────────────────────────────────────────────────────────────────
#  1. 单种植
# ────────────────────────────────────────────────────────────────────────────

class TestSamplePlanted(unittest.TestCase):

    def setUp(self):
        self.params = ModelParams(kappa="1", n=20, m=15)

    def test_planted_satisfies(self):
        inst = sample_planted(self.params, make_rng(0))
        self.assertEqual((inst.matrix.m, inst.matrix.n), (15, 20))
        self.assertTrue(satisfies(inst.matrix, inst.planted, "1"))
        self.assertTrue(np.all(inst.rejections >= 0))
        self.assertTrue(0.0 < inst.acceptance_rate <= 1.0)

    def test_deterministic(self):
        a = sample_planted(self.params, make_rng(42))
        b = sample_planted(self.params, make_rng(42))
        self.assertEqual(a.matrix, b.matrix)
        self.assertEqual(a.planted, b.planted)

    def test_gauged_planted_is_ones(self):
        inst = sample_planted(self.params, make_rng(1)).gauged()
        self.assertEqual(inst.planted, SpinVector.ones(20))
        self.assertTrue(satisfies(inst.matrix, inst.planted, "1"))

    def test_zero_rows(self):
        inst = sample_planted(ModelParams(kappa="1", n=6, m=0), make_rng(0))
        self.assertEqual(inst.matrix.m, 0)

    def test_rejection_budget(self):
        # 带宽 0：每行的接受率约 0.18，预算 1 时几乎立刻耗尽
        params = ModelParams(kappa="0.01", n=20, m=50)
        with patch("src.planted.get_settings", return_value=LabSettings(planted=PlantedSection(rejection_budget=1))):
            with self.assertRaises(SamplingError):
                sample_planted(params, make_rng(0))

    def test_fixture_roundtrip(self):
        text = (MATRIX_DIR / "planted_4x2.sbp").read_text(encoding="utf-8")
        inst, kappa = PlantedInstance.from_fixture_text(text)
        self.assertEqual(kappa, "1")
        self.assertEqual(inst.planted.to_text(), "+-+-")
        self.assertTrue(satisfies(inst.matrix, inst.planted, kappa))
        self.assertEqual(inst.to_fixture_text(kappa), text)

    def test_fixture_needs_x_line(self):
        with self.assertRaises(DomainError):
            PlantedInstance.from_fixture_text("SBP v1 2 1 1\n+-\n")


# ────────────────────────────────────────────────────────────────────────────
#  2. 双种植
# ────────────────────────────────────────────────────────────────────────────

class TestSamplePlantedPair(unittest.TestCase):

    def setUp(self):
        self.params = ModelParams(kappa="1", n=16, m=12)

    def test_overlap_and_both_satisfy(self):
        inst = sample_planted_pair(self.params, 1.0, make_rng(3))
        self.assertEqual(inst.agreements, 10)
        self.assertEqual(inst.x1.inner(inst.x2), 4)
        self.assertTrue(satisfies(inst.matrix, inst.x1, "1"))
        self.assertTrue(satisfies(inst.matrix, inst.x2, "1"))

    def test_gauged_block_form(self):
        inst = sample_planted_pair(self.params, 1.0, make_rng(4)).gauged()
        self.assertEqual(inst.x1, SpinVector.ones(16))
        self.assertEqual(inst.q_block, 10)
        self.assertEqual(list(inst.x2.signs()), [1] * 10 + [-1] * 6)
        self.assertTrue(satisfies(inst.matrix, inst.x1, "1"))
        self.assertTrue(satisfies(inst.matrix, inst.x2, "1"))

    def test_infeasible_overlap(self):
        with self.assertRaises(DomainError):
            sample_planted_pair(self.params, 0.3, make_rng(0))

    def test_overlap_without_joint_rows(self):
        # n = 4，带宽 1：a = 3 时两个行和不能同时为 0
        with self.assertRaises(DomainError):
            sample_planted_pair(ModelParams(kappa="0.5", n=4, m=2), 1.0, make_rng(0))

    def test_feasible_overlaps(self):
        self.assertEqual(feasible_overlaps(4), [-2.0, -1.0, 0.0, 1.0, 2.0])


# ────────────────────────────────────────────────────────────────────────────
#  3. 行相关诊断
# ────────────────────────────────────────────────────────────────────────────

class TestPlantedRowCorrelation(unittest.TestCase):

    def setUp(self):
        self.params = ModelParams(kappa="1", n=50, m=40, seed=7)

    def test_target_values(self):
        dc = discrete_constants("1", 50, 40)
        self.assertAlmostEqual(planted_row_target(self.params), 2 * dc.beta_n / math.sqrt(2000), delta=1e-15)
        self.assertAlmostEqual(planted_row_exact(self.params), (dc.mu2_kappa_n - 1) / 49, delta=1e-15)
        # 两者相差一个 n/(n−1) 因子
        self.assertAlmostEqual(planted_row_exact(self.params) / planted_row_target(self.params), 50 / 49, delta=1e-12)

    def test_pair_average_estimator(self):
        est = planted_row_correlation(self.params, make_rng(11), rows=200_000)
        self.assertEqual(est.count, 200_000)
        self.assertLess(est.mean, 0.0)
        self.assertLess(abs(est.z_score), 4.0)
        self.assertAlmostEqual(est.leading, planted_row_target(self.params), delta=1e-15)

    def test_triple_product_vanishes(self):
        est = planted_row_correlation(self.params, make_rng(12), rows=200_000, order=3)
        self.assertEqual(est.target, 0.0)
        self.assertLess(abs(est.z_score), 4.0)

    def test_fixed_columns(self):
        params = ModelParams(kappa="1", n=20, m=20, seed=1)
        est = planted_row_correlation(params, make_rng(13), rows=40_000, columns=(0, 1))
        self.assertEqual(est.count, 40_000)
        self.assertLess(abs(est.z_score), 4.0)

    def test_from_samples(self):
        params = ModelParams(kappa="1", n=20, m=15)
        rng = make_rng(14)
        samples = [sample_planted(params, rng) for _ in range(3)]
        est = planted_row_correlation(params, samples=samples)
        self.assertEqual(est.count, 45)

    def test_argument_checks(self):
        with self.assertRaises(DomainError):
            planted_row_correlation(self.params, make_rng(0), rows=10, order=4)
        with self.assertRaises(DomainError):
            planted_row_correlation(self.params, make_rng(0), rows=10, columns=(1, 1))


# ────────────────────────────────────────────────────────────────────────────
#  4. 采样分布
# ────────────────────────────────────────────────────────────────────────────

def _acceptance(rejections: np.ndarray) -> tuple:
    """(接受率, 标准误)：每行尝试次数服从几何分布"""
    m = rejections.size
    p = m / (m + float(rejections.sum()))
    return p, p * math.sqrt((1.0 - p) / m)


class TestPlantedLaws(unittest.TestCase):

    def test_acceptance_matches_row_probability(self):
        params = ModelParams(kappa="1", n=20, m=4000)
        inst = sample_planted(params, make_rng(21))
        p, se = _acceptance(inst.rejections)
        target = discrete_constants("1", 20, 1).p_kappa_n
        self.assertLess(abs(p - target), 3 * se, (p, target, se))

    def test_pair_acceptance_matches_pair_probability(self):
        params = ModelParams(kappa="1", n=16, m=4000)
        inst = sample_planted_pair(params, 1.0, make_rng(22))
        p, se = _acceptance(inst.rejections)
        target = math.exp(pair_prob(ModelParams(kappa="1", n=16, m=1), 1.0))
        self.assertLess(abs(p - target), 3 * se, (p, target, se))

    def test_single_row_law_n2(self):
        # n = 2，带宽 1：给定 X，合法行恰好是与 X 正交的两行，(X, 行) 共 8 个等概率格子
        params = ModelParams(kappa="1", n=2, m=1)
        rng = make_rng(23)
        draws = 4000
        cells = Counter()
        for _ in range(draws):
            inst = sample_planted(params, rng)
            x = tuple(int(v) for v in inst.planted.signs())
            row = tuple(int(v) for v in inst.matrix.signs()[0])
            self.assertEqual(row[0] * x[0] + row[1] * x[1], 0)
            cells[(x, row)] += 1
        self.assertEqual(len(cells), 8)
        observed = np.array(list(cells.values()), dtype=float)
        self.assertGreater(stats.chisquare(observed, np.full(8, draws / 8)).pvalue, 1e-3)

    def test_planted_law_is_count_weighted(self):
        # P*(G) = Z(G)·P(G)/E[Z]；n = 2, m = 2 时 16 个矩阵的 Z 之和为 16
        params = ModelParams(kappa="1", n=2, m=2)
        weights = {}
        for code in range(16):
            bits = np.array([(code >> b) & 1 for b in range(4)], dtype=np.uint8).reshape(2, 2)
            G = ConstraintMatrix.from_bits(bits)
            weights[G] = naive_count(G, "1")
        total = sum(weights.values())
        self.assertEqual(total, 16)

        rng = make_rng(24)
        draws = 8000
        seen = Counter(sample_planted(params, rng).matrix for _ in range(draws))
        self.assertFalse([G for G in seen if weights[G] == 0])
        support = [G for G, z in weights.items() if z > 0]
        observed = np.array([seen[G] for G in support], dtype=float)
        expected = np.array([draws * weights[G] / total for G in support])
        self.assertGreater(stats.chisquare(observed, expected).pvalue, 1e-3)

    def test_gauge_identity(self):
        inst = sample_planted(ModelParams(kappa="1", n=12, m=9), make_rng(25))
        g = inst.gauged()
        np.testing.assert_array_equal(g.matrix.signs(), inst.matrix.signs() * inst.planted.signs())
        np.testing.assert_array_equal(g.matrix.signs().sum(axis=1), inst.matrix.signs() @ inst.planted.signs())
        self.assertEqual(naive_count(g.matrix, "1"), naive_count(inst.matrix, "1"))
        np.testing.assert_array_equal(g.rejections, inst.rejections)

    def test_pair_gauge_identity(self):
        inst = sample_planted_pair(ModelParams(kappa="1", n=12, m=9), 2 / math.sqrt(12), make_rng(26))
        g = inst.gauged()
        G, H = inst.matrix.signs(), g.matrix.signs()
        # 两个约束的行和逐行不变
        np.testing.assert_array_equal(H @ g.x1.signs(), G @ inst.x1.signs())
        np.testing.assert_array_equal(H @ g.x2.signs(), G @ inst.x2.signs())
        # 规范化只翻列、重排列：按首元素定号后列的多重集合不变
        def columns(M):
            return sorted(tuple(int(v) for v in c * c[0]) for c in M.T)

        self.assertEqual(columns(H), columns(G))
        self.assertEqual(naive_count(g.matrix, "1"), naive_count(inst.matrix, "1"))
        self.assertEqual(g.agreements, inst.agreements)


class TestCorrelationEstimate(unittest.TestCase):

    def test_both_z_scores(self):
        est = CorrelationEstimate(order=2, mean=0.1, se=0.01, count=100, target=0.08, leading=0.05)
        self.assertAlmostEqual(est.z_score, 2.0, delta=1e-12)
        self.assertAlmostEqual(est.z_leading, 5.0, delta=1e-12)

    def test_zero_se(self):
        est = CorrelationEstimate(order=3, mean=0.0, se=0.0, count=10, target=0.0)
        self.assertEqual(est.z_score, 0.0)
        self.assertEqual(est.z_leading, 0.0)


# ────────────────────────────────────────────────────────────────────────────
#  主入口
# ────────────────────────────────────────────────────────────────────────────

if __name__ == "__main__":
    unittest.main(verbosity=2)
