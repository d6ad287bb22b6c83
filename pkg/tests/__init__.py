"""Test suite for escapedim."""
