"""Tests for logger setup"""
from pathlib import Path

from loguru import logger

from nsmpc.utils.logger_config import setup_logger


def test_log_file_created(tmp_path):
    """测试在项目根目录下按应用名创建日志文件"""
    _, info = setup_logger("nsmpc-test", project_root=tmp_path, console_output=False)
    logger.info("写入一条日志")
    logger.complete()
    log_file = Path(info["log_file"])
    assert log_file.exists()
    assert tmp_path / "logs" / "nsmpc-test" in log_file.parents
    logger.remove()
    assert "写入一条日志" in log_file.read_text(encoding="utf-8")


def test_no_file_output(tmp_path):
    """测试关闭文件输出"""
    _, info = setup_logger("nsmpc-test", project_root=tmp_path, console_output=False, file_output=False)
    assert info["log_file"] is None
    assert not (tmp_path / "logs").exists()
