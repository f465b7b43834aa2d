"""Headtrack: head pose and facial feature tracking."""
