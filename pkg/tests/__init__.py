"""Tests for allweather."""
