"""Documentation package marker for static analysis tools."""
