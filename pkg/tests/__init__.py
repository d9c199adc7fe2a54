"""Tests for overlap-registration package"""
