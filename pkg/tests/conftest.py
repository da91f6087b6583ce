def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running statistical or end-to-end checks"
    )
    config.addinivalue_line(
        "markers", "acceptance: numbered acceptance criteria with pinned tolerances"
    )
