"""Export-basket complexity indicators for firm panels."""
__version__ = "0.1.0"
