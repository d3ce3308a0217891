# Ensures the tests directory (oracles, helper scripts) is importable.
