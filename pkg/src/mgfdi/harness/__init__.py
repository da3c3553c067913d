"""Scenario execution, training data, metrics and trace files."""
