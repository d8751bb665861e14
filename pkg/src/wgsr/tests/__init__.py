"""Test package for wgsr."""
