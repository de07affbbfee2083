"""
UA-HMP 统一异常处理体系

设计原则：
1. 分层异常：基础异常 → 模块异常 → 具体异常
2. 包含上下文信息：error_code、context、cause
3. CLI 可直接序列化为机器可读的错误 JSON
"""
from typing import Optional, Dict, Any


class UAHMPError(Exception):
    """UA-HMP 基础异常类

    所有模块异常的基类，包含通用的错误信息和上下文
    """

    def __init__(
        self,
        message: str,
        *,
        error_code: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
        cause: Optional[Exception] = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.context = context or {}
        self.cause = cause

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典，便于日志记录和 CLI 错误输出"""
        return {
            "error_type": self.__class__.__name__,
            "error_code": self.error_code,
            "message": self.message,
            "context": self.context,
            "cause": str(self.cause) if self.cause else None,
        }

    def __str__(self) -> str:
        parts = [self.message]
        if self.context:
            parts.append(", ".join(f"{k}={v}" for k, v in self.context.items()))
        return f"{self.__class__.__name__}: {' | '.join(parts)}"


class ConfigurationError(UAHMPError):
    """配置错误"""
    pass


class ArgumentError(UAHMPError):
    """参数不合法（窗口长度、形状、horizon 等）"""
    pass


class SkeletonDataError(UAHMPError):
    """骨架序列数据相关异常"""
    pass


class ParseError(SkeletonDataError):
    """文件无法解析 - 携带出错行号"""

    def __init__(self, message: str, *, line: Optional[int] = None, **kwargs: Any):
        context = dict(kwargs.pop("context", None) or {})
        if line is not None:
            context["line"] = line
        super().__init__(message, context=context, **kwargs)
        self.line = line


class SchemaError(SkeletonDataError):
    """记录结构不一致（关节数、坐标维度）"""
    pass


class DataError(SkeletonDataError):
    """数值非法（NaN / inf）"""
    pass


class LossDomainError(UAHMPError):
    """损失函数定义域错误（方差非正）"""
    pass


class PredictorError(UAHMPError):
    """预测网络异常"""
    pass


class NumericError(PredictorError):
    """前向传播中出现非有限激活值"""

    def __init__(self, message: str, *, layer: Optional[int] = None, **kwargs: Any):
        context = dict(kwargs.pop("context", None) or {})
        if layer is not None:
            context["layer"] = layer
        super().__init__(message, context=context, **kwargs)
        self.layer = layer


class ShapeError(PredictorError, ArgumentError):
    """缓存或梯度形状不匹配"""
    pass


class TrainingError(UAHMPError):
    """训练流程异常"""
    pass


class TrainingDivergedError(TrainingError):
    """损失或梯度发散 - 携带最后一个有效检查点"""

    def __init__(self, message: str, *, checkpoint: Any = None, **kwargs: Any):
        super().__init__(message, **kwargs)
        self.checkpoint = checkpoint


class CheckpointFormatError(UAHMPError):
    """检查点文件格式错误（magic 不符、截断）"""
    pass


class ArtifactIOError(UAHMPError):
    """产物读写失败"""
    pass


# 错误代码映射（便于 CLI 给出提示）
ERROR_MESSAGES = {
    "ConfigurationError": "check the run config file and --set overrides",
    "ArgumentError": "an argument is outside its valid range",
    "ParseError": "the pose file could not be parsed",
    "SchemaError": "pose records disagree on joint or coordinate count",
    "DataError": "the pose file contains non-finite values",
    "LossDomainError": "variances must be strictly positive",
    "NumericError": "the network produced non-finite activations",
    "ShapeError": "array shapes do not match the model configuration",
    "TrainingDivergedError": "training diverged; lower the learning rate or enable clipping",
    "CheckpointFormatError": "the checkpoint file is corrupt or not a UA-HMP checkpoint",
    "ArtifactIOError": "an output or input file could not be accessed",
}


def get_user_friendly_message(error: UAHMPError) -> str:
    """获取错误提示

    Args:
        error: UA-HMP 异常实例

    Returns:
        简短的处理建议
    """
    hint = ERROR_MESSAGES.get(error.__class__.__name__, "unexpected failure")
    if isinstance(error, ParseError) and error.line is not None:
        return f"{hint} (line {error.line})"
    if isinstance(error, NumericError) and error.layer is not None:
        return f"{hint} (layer {error.layer})"
    return hint


def create_error_context(**kwargs: Any) -> Dict[str, Any]:
    """创建错误上下文信息，丢弃值为 None 的键"""
    return {k: v for k, v in kwargs.items() if v is not None}
