"""Tests for causalfuse."""
