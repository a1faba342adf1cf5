"""
Test package for Iso-Dream Lab
Contains all test files and testing utilities
"""
