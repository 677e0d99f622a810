"""Test suite for amv-lab."""
