"""Tests for itr-eval."""
