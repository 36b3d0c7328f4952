"""Satellite brightness-temperature nowcasting and rainfall post-processing."""

__version__ = "0.1.0"
