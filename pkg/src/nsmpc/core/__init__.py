"""nsmpc 核心模块"""
