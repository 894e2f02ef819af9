"""
Experiment Presets
Partial configurations reproducing the two-mode benchmarks and the field cooling runs
"""
