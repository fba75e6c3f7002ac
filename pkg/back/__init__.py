"""
Backend Module - Data containers, calibration kernels and the artifact pipeline
"""
