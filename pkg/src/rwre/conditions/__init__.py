"""Checkable conditions and the scalar machinery around them."""
