"""AES key recovery from memory images and ransomware file repair."""

__version__ = "0.1.0"
