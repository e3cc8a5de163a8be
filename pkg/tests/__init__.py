"""Tests for the edgeselect package."""
