"""
日志配置模块
"""
import sys
from datetime import datetime
from pathlib import Path

from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <blue>{elapsed}</blue> | "
    "<level>{level.icon} {level: <8}</level> | <cyan>{name}:{function}:{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {elapsed} | {level.icon} {level: <8} | {name}:{function}:{line} - {message}"


def setup_logger(
    app_name="nsmpc",
    project_root=None,
    console_output=True,
    file_output=True,
    level="INFO",
):
    """配置 Loguru 日志系统

    Args:
        app_name: 应用名称，用于日志目录
        project_root: 日志根目录，默认为包所在目录的上一级
        console_output: 是否输出到控制台
        file_output: 是否写入按时间分目录的日志文件（DEBUG 级别）
        level: 控制台日志级别

    Returns:
        tuple: (logger, config_info)
            - logger: 配置好的 logger 实例
            - config_info: 包含日志文件路径的字典（未写文件时为 None）
    """
    if project_root is None:
        project_root = Path(__file__).parent.parent.resolve()

    logger.remove()

    if console_output:
        logger.add(sys.stderr, level=level, format=CONSOLE_FORMAT)

    log_file = None
    if file_output:
        now = datetime.now()
        log_dir = Path(project_root) / "logs" / app_name / now.strftime("%Y-%m-%d") / now.strftime("%H")
        log_dir.mkdir(parents=True, exist_ok=True)
        log_file = log_dir / f"{now.strftime('%M%S')}.log"
        logger.add(
            log_file,
            level="DEBUG",
            rotation="10 MB",
            retention="30 days",
            compression="zip",
            encoding="utf-8",
            format=FILE_FORMAT,
            enqueue=True,
        )

    config_info = {"log_file": str(log_file) if log_file else None}
    logger.debug(f"日志系统已初始化，应用名称: {app_name}")
    return logger, config_info
