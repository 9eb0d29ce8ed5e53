"""
统一异常层级

所有实验室代码抛出的异常都继承 SBPLabError，CLI 根据类型映射退出码：
ConfigError → 2，OSError → 3，其余 SBPLabError → 4。
"""


class SBPLabError(Exception):
    """实验室异常基类"""


class DomainError(SBPLabError, ValueError):
    """参数超出数学定义域（κ ≤ 0、x ∉ [0,1]、不可行的 t ...）"""


class BoundaryError(DomainError):
    """在定义域边界上调用（big_F 的 x ∈ {0, 1}）"""


class CapabilityError(SBPLabError):
    """超出计算预算：n > N_MAX、k > K_FAST、暴力枚举预算、缺失的 c_k ..."""


class PreconditionError(SBPLabError, ValueError):
    """操作前置条件不成立"""


class SamplingError(SBPLabError):
    """拒绝采样预算耗尽，或重试后仍无解"""


class NumericError(SBPLabError, ArithmeticError):
    """数值积分失败或结果非有限"""


class ConfigError(SBPLabError):
    """配置文件错误（带行号 / 字段名诊断）"""


class SchemaError(SBPLabError):
    """记录文件 schema 版本未知"""
