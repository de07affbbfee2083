"""
UA-HMP 集成测试

- test_cli_pipeline: 命令行端到端（synth → train → eval → predict → visualize）、退出码与错误 JSON
- test_training_behaviour: 合成数据上的训练效果（slow）

运行方式：
    pytest tests/integration
    pytest -m "not slow"
"""
