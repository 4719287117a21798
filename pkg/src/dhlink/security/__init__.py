"""Access control, key custody and the payload cipher."""
