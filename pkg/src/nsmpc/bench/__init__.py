"""nsmpc 基准测试：问题生成、闭环仿真、计时扫描与性能曲线"""
