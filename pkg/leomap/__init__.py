"""IPv6 measurement toolkit for mapping a LEO satellite ISP's users, PoPs and backbone."""

__all__ = ["__version__"]
__version__ = "0.1.0"
