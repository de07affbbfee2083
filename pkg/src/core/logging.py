"""
结构化日志

日志一律写 stderr（stdout 只留给 CLI 的单行 JSON 结果）；设置 LOG_DIR 时额外写滚动文件。
每条 CLI 命令通过 bind_run_context 绑定 command / config_hash，之后所有日志自动携带。
"""
import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Optional

import structlog
from structlog.processors import CallsiteParameter, CallsiteParameterAdder
from structlog.stdlib import LoggerFactory

from .config import settings

# 第三方库的 DEBUG 输出（字体查找、PNG 插件等）对训练日志没有价值
_NOISY_LOGGERS = ("matplotlib", "PIL")
_MAX_LOG_BYTES = 20 * 1024 * 1024


def _file_handler(path: Path, level: int) -> logging.Handler:
    handler = logging.handlers.RotatingFileHandler(path, maxBytes=_MAX_LOG_BYTES, backupCount=5, encoding="utf-8")
    handler.setLevel(level)
    return handler


def setup_logging(level: Optional[str] = None) -> None:
    """配置 stdlib handlers + structlog processors；可重复调用（每次重建 handlers）"""
    log_level = getattr(logging, (level or settings.LOG_LEVEL).upper())

    root_logger = logging.getLogger()
    root_logger.handlers.clear()

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setLevel(log_level)
    root_logger.addHandler(stream_handler)

    if settings.LOG_DIR:
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)
        root_logger.addHandler(_file_handler(log_dir / "uahmp.log", log_level))
        root_logger.addHandler(_file_handler(log_dir / "uahmp-error.log", logging.ERROR))

    root_logger.setLevel(log_level)
    for name in _NOISY_LOGGERS:
        logging.getLogger(name).setLevel(max(log_level, logging.WARNING))

    processors = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        CallsiteParameterAdder(
            parameters=[
                CallsiteParameter.FILENAME,
                CallsiteParameter.LINENO,
                CallsiteParameter.FUNC_NAME,
            ]
        ),
        structlog.stdlib.PositionalArgumentsFormatter(),
        structlog.processors.TimeStamper(fmt="iso", utc=False),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
        structlog.processors.UnicodeDecoder(),
        # DEBUG：彩色控制台；其余：JSON 行
        structlog.dev.ConsoleRenderer() if settings.DEBUG else structlog.processors.JSONRenderer(),
    ]

    structlog.configure(
        processors=processors,
        context_class=dict,
        logger_factory=LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def bind_run_context(command: str, config_hash: str) -> None:
    """把当前命令与配置哈希绑定到后续所有日志"""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(command=command, config_hash=config_hash)
