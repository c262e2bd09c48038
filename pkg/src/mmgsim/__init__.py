"""Multi-microgrid energy management with multi-agent soft actor-critic, WoLF-PHC
bidding for shared storage, and neural part-load curve surrogates."""

__version__ = "0.1.0"
