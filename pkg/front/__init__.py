"""
Frontend Module - Command-line surface
"""
